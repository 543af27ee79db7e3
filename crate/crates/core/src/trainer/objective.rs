use crate::autograd::Tape;
use crate::corpus::Utterance;
use crate::encoder::ReferenceEncoder;
use crate::heads::{self, HeadError, LinearHead, LossOutput, ReorderScorer, SlotProjectionBank};
use crate::taskgen::{CoherenceExample, EntityCountExample, MaskedExample, MatchExample, ReorderExample, SpeakerExample};

/// Training and validation examples of one objective.
#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
}

impl<T> Splits<T> {
    pub fn new(train: Vec<T>, valid: Vec<T>) -> Self {
        Self { train, valid }
    }

    fn get(&self, valid: bool) -> &[T] {
        if valid {
            &self.valid
        } else {
            &self.train
        }
    }
}

/// A dialogue history with target indices (acts or per-pair values).
pub type IndexedDialogue = (Vec<Utterance>, Vec<usize>);

#[derive(Debug, Clone)]
pub(crate) enum Kind {
    Mlm(LinearHead, Splits<MaskedExample>),
    Dsp(LinearHead, Splits<SpeakerExample>),
    Crm(f64, Splits<MatchExample>),
    Dcv(LinearHead, Splits<CoherenceExample>),
    Enp(LinearHead, Splits<EntityCountExample>),
    Dur(ReorderScorer, Splits<ReorderExample>),
    Int(LinearHead, Splits<(String, usize)>),
    Da(LinearHead, f64, Splits<IndexedDialogue>),
    Rs(f64, Splits<MatchExample>),
    Dst(SlotProjectionBank, Splits<IndexedDialogue>),
}

/// One weighted loss term with its examples and head.
#[derive(Debug, Clone)]
pub struct Objective {
    pub name: String,
    pub weight: f64,
    /// Examples the generator dropped while building this objective.
    pub skipped: usize,
    pub(crate) kind: Kind,
}

macro_rules! len_of {
    ($kind:expr, $valid:expr) => {
        match $kind {
            Kind::Mlm(_, s) => s.get($valid).len(),
            Kind::Dsp(_, s) => s.get($valid).len(),
            Kind::Crm(_, s) => s.get($valid).len(),
            Kind::Dcv(_, s) => s.get($valid).len(),
            Kind::Enp(_, s) => s.get($valid).len(),
            Kind::Dur(_, s) => s.get($valid).len(),
            Kind::Int(_, s) => s.get($valid).len(),
            Kind::Da(_, _, s) => s.get($valid).len(),
            Kind::Rs(_, s) => s.get($valid).len(),
            Kind::Dst(_, s) => s.get($valid).len(),
        }
    };
}

impl Objective {
    fn new(name: &str, kind: Kind) -> Self {
        Self {
            name: name.to_string(),
            weight: 1.0,
            skipped: 0,
            kind,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_skipped(mut self, skipped: usize) -> Self {
        self.skipped = skipped;
        self
    }

    pub fn mlm(head: LinearHead, ex: Splits<MaskedExample>) -> Self {
        Self::new("MLM", Kind::Mlm(head, ex))
    }

    pub fn dsp(head: LinearHead, ex: Splits<SpeakerExample>) -> Self {
        Self::new("DSP", Kind::Dsp(head, ex))
    }

    pub fn crm(temperature: f64, ex: Splits<MatchExample>) -> Self {
        Self::new("CRM", Kind::Crm(temperature, ex))
    }

    pub fn dcv(head: LinearHead, ex: Splits<CoherenceExample>) -> Self {
        Self::new("DCV", Kind::Dcv(head, ex))
    }

    pub fn enp(head: LinearHead, ex: Splits<EntityCountExample>) -> Self {
        Self::new("ENP", Kind::Enp(head, ex))
    }

    pub fn dur(scorer: ReorderScorer, ex: Splits<ReorderExample>) -> Self {
        Self::new("DUR", Kind::Dur(scorer, ex))
    }

    pub fn int(head: LinearHead, ex: Splits<(String, usize)>) -> Self {
        Self::new("INT", Kind::Int(head, ex))
    }

    pub fn da(head: LinearHead, threshold: f64, ex: Splits<IndexedDialogue>) -> Self {
        Self::new("DA", Kind::Da(head, threshold, ex))
    }

    pub fn rs(temperature: f64, ex: Splits<MatchExample>) -> Self {
        Self::new("RS", Kind::Rs(temperature, ex))
    }

    pub fn dst(bank: SlotProjectionBank, ex: Splits<IndexedDialogue>) -> Self {
        Self::new("DST", Kind::Dst(bank, ex))
    }

    pub fn train_len(&self) -> usize {
        len_of!(&self.kind, false)
    }

    pub fn valid_len(&self) -> usize {
        len_of!(&self.kind, true)
    }

    /// Loss of example `i` of the chosen split; `None` when the example has
    /// to be skipped (a reordering window lost to truncation).
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        enc: &ReferenceEncoder,
        valid: bool,
        i: usize,
    ) -> Result<Option<LossOutput>, HeadError> {
        let out = match &self.kind {
            Kind::Mlm(h, s) => heads::mlm_forward(tape, enc, h, &s.get(valid)[i])?,
            Kind::Dsp(h, s) => heads::dsp_forward(tape, enc, h, &s.get(valid)[i])?,
            Kind::Crm(t, s) => heads::crm_forward(tape, enc, &s.get(valid)[i], *t)?,
            Kind::Dcv(h, s) => heads::dcv_forward(tape, enc, h, &s.get(valid)[i])?,
            Kind::Enp(h, s) => heads::enp_forward(tape, enc, h, &s.get(valid)[i])?,
            Kind::Dur(h, s) => return heads::dur_forward(tape, enc, h, &s.get(valid)[i]),
            Kind::Int(h, s) => {
                let (text, label) = &s.get(valid)[i];
                heads::int_forward(tape, enc, h, text, *label)?
            }
            Kind::Da(h, threshold, s) => {
                let (turns, acts) = &s.get(valid)[i];
                heads::da_forward(tape, enc, h, turns, acts, *threshold)?
            }
            Kind::Rs(t, s) => heads::crm_forward(tape, enc, &s.get(valid)[i], *t)?,
            Kind::Dst(bank, s) => {
                let (turns, gold) = &s.get(valid)[i];
                heads::dst_forward(tape, enc, bank, turns, gold)?
            }
        };
        Ok(Some(out))
    }
}
