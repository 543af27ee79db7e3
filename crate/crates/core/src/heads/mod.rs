//! Task heads and their losses.
//!
//! Every `*_forward` function records the encoder pass and the head on a
//! caller-owned [`Tape`] and returns the scalar loss node plus diagnostics,
//! so the trainer can sum several task losses before one backward sweep.
//! [`evaluate_loss`] runs one forward function on a fresh tape.
//!
//! | task | input | head | loss |
//! |------|-------|------|------|
//! | DSP, ENP, INT | utterance summary | linear | cross-entropy |
//! | DCV | dialogue summary | linear | cross-entropy |
//! | DA | dialogue summary | linear | summed binary cross-entropy |
//! | CRM, RS | context and candidate summaries | cosine | (1+K)-way cross-entropy |
//! | DUR | window marker vectors | GELU scorer | soft cross-entropy |
//! | MLM | masked token vectors | linear over vocabulary | mean cross-entropy |
//! | DST | dialogue summary | per-pair projection + cosine | summed cross-entropy |

mod layers;

use thiserror::Error;

use crate::autograd::{ParamStore, Tape, Var};
use crate::corpus::Utterance;
use crate::encoder::{EncoderError, SequenceEncoder, TokenSequence};
use crate::kernels;
use crate::taskgen::{CoherenceExample, EntityCountExample, MaskedExample, MatchExample, ReorderExample, SpeakerExample};

pub use layers::{LinearHead, ReorderScorer, SlotPair, SlotProjectionBank, HEAD_INIT_STD};

/// Added inside the logarithm of the reordering loss.
pub const DUR_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("invalid head: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("zero-norm vector in {0}; cosine similarity is undefined")]
    ZeroNorm(&'static str),
    #[error("invalid example: {0}")]
    Example(String),
}

pub type Result<T> = std::result::Result<T, HeadError>;

/// Loss node with per-example diagnostics.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: Var,
    /// Whether the example is predicted correctly under the task's notion
    /// of correctness.
    pub correct: bool,
    /// Task-specific scores (logits, similarities, per-slot scores).
    pub scores: Vec<f64>,
}

/// Materialized loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub correct: bool,
    pub scores: Vec<f64>,
}

fn checked(tape: &Tape<'_>, v: Var, what: &'static str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(HeadError::NonFinite(what))
    }
}

fn finish(tape: &Tape<'_>, loss: Var, correct: bool, scores: Vec<f64>, what: &'static str) -> Result<LossOutput> {
    checked(tape, loss, what)?;
    Ok(LossOutput { loss, correct, scores })
}

/// Evaluates `f` on a fresh tape and returns the loss value.
pub fn evaluate_loss<F>(store: &ParamStore, f: F) -> Result<LossValue>
where
    F: FnOnce(&mut Tape<'_>) -> Result<LossOutput>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    Ok(LossValue {
        loss: tape.scalar(out.loss),
        correct: out.correct,
        scores: out.scores,
    })
}

fn check_label(label: usize, head: &LinearHead) -> Result<()> {
    if label >= head.classes {
        return Err(HeadError::Label {
            label,
            classes: head.classes,
        });
    }
    Ok(())
}

/// Softmax classification over the summary vector of `seq`.
pub fn classify_forward(
    tape: &mut Tape<'_>,
    enc: &dyn SequenceEncoder,
    head: &LinearHead,
    seq: &TokenSequence,
    label: usize,
) -> Result<LossOutput> {
    check_label(label, head)?;
    let out = enc.forward(tape, seq)?;
    let logits = head.forward(tape, out.cls);
    checked(tape, logits, "classifier logits")?;
    let scores = tape.value(logits).data().to_vec();
    let loss = tape.cross_entropy(logits, &[label]);
    finish(tape, loss, kernels::argmax(&scores) == label, scores, "classification loss")
}

/// Logits of a linear head over the summary vector, without a loss.
pub fn classify_logits(store: &ParamStore, enc: &dyn SequenceEncoder, head: &LinearHead, seq: &TokenSequence) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let out = enc.forward(&mut tape, seq)?;
    let logits = head.forward(&mut tape, out.cls);
    checked(&tape, logits, "classifier logits")?;
    Ok(tape.value(logits).data().to_vec())
}

pub fn dsp_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, head: &LinearHead, ex: &SpeakerExample) -> Result<LossOutput> {
    if ex.label != ex.utterance.speaker.label() {
        return Err(HeadError::Example("speaker label disagrees with utterance".into()));
    }
    let seq = enc.tokenize_utterance(&ex.utterance);
    classify_forward(tape, enc, head, &seq, ex.label)
}

pub fn dcv_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, head: &LinearHead, ex: &CoherenceExample) -> Result<LossOutput> {
    if (ex.label == 0) == ex.replaced_indices.is_empty() {
        return Err(HeadError::Example(format!(
            "dialogue {}: label {} inconsistent with {} replacements",
            ex.dialogue.id,
            ex.label,
            ex.replaced_indices.len()
        )));
    }
    let seq = enc.tokenize_dialogue(&ex.dialogue.utterances)?;
    classify_forward(tape, enc, head, &seq, ex.label)
}

pub fn enp_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, head: &LinearHead, ex: &EntityCountExample) -> Result<LossOutput> {
    let seq = enc.tokenize_utterance(&ex.utterance);
    classify_forward(tape, enc, head, &seq, ex.count_class)
}

pub fn int_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, head: &LinearHead, text: &str, label: usize) -> Result<LossOutput> {
    let seq = enc.tokenize_text(text);
    classify_forward(tape, enc, head, &seq, label)
}

pub fn int_predict(store: &ParamStore, enc: &dyn SequenceEncoder, head: &LinearHead, text: &str) -> Result<usize> {
    let logits = classify_logits(store, enc, head, &enc.tokenize_text(text))?;
    Ok(kernels::argmax(&logits))
}

/// Multi-label acts: summed binary cross-entropy over every act, with a
/// prediction counted correct when the thresholded set equals the gold set.
pub fn da_forward(
    tape: &mut Tape<'_>,
    enc: &dyn SequenceEncoder,
    head: &LinearHead,
    turns: &[Utterance],
    gold: &[usize],
    threshold: f64,
) -> Result<LossOutput> {
    let mut targets = vec![0.0; head.classes];
    for &g in gold {
        check_label(g, head)?;
        targets[g] = 1.0;
    }
    let seq = enc.tokenize_dialogue(turns)?;
    let out = enc.forward(tape, &seq)?;
    let logits = head.forward(tape, out.cls);
    checked(tape, logits, "act logits")?;
    let scores = tape.value(logits).data().to_vec();
    let predicted = threshold_acts(&scores, threshold);
    let mut gold_sorted = gold.to_vec();
    gold_sorted.sort_unstable();
    gold_sorted.dedup();
    let loss = tape.bce_with_logits(logits, &targets);
    finish(tape, loss, predicted == gold_sorted, scores, "act loss")
}

/// Indices whose sigmoid exceeds `threshold`, ascending.
pub fn threshold_acts(logits: &[f64], threshold: f64) -> Vec<usize> {
    logits
        .iter()
        .enumerate()
        .filter(|(_, &z)| kernels::sigmoid(z) > threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn da_predict(
    store: &ParamStore,
    enc: &dyn SequenceEncoder,
    head: &LinearHead,
    turns: &[Utterance],
    threshold: f64,
) -> Result<Vec<usize>> {
    let logits = classify_logits(store, enc, head, &enc.tokenize_dialogue(turns)?)?;
    Ok(threshold_acts(&logits, threshold))
}

/// The similarity shared by context-response matching and response
/// selection.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    kernels::cosine(a, b).ok_or(HeadError::ZeroNorm("similarity"))
}

/// Siamese contrastive loss: the context and each candidate are encoded
/// separately, scored by cosine similarity divided by `temperature`, and the
/// gold candidate (index 0) is the cross-entropy target.
pub fn contrastive_forward(
    tape: &mut Tape<'_>,
    enc: &dyn SequenceEncoder,
    context: &[Utterance],
    gold: &Utterance,
    negatives: &[Utterance],
    temperature: f64,
) -> Result<LossOutput> {
    if negatives.is_empty() {
        return Err(HeadError::Example("contrastive loss needs at least one negative".into()));
    }
    if !(temperature > 0.0) {
        return Err(HeadError::Config("temperature must be positive".into()));
    }
    let ctx = enc.forward(tape, &enc.tokenize_dialogue(context)?)?;
    let mut cands = Vec::with_capacity(negatives.len() + 1);
    for u in std::iter::once(gold).chain(negatives) {
        cands.push(enc.forward(tape, &enc.tokenize_utterance(u))?.cls);
    }
    let cand_matrix = tape.concat_rows(&cands);
    let q = tape.value(ctx.cls).data();
    let cm = tape.value(cand_matrix);
    for r in 0..cm.rows() {
        similarity(q, cm.row(r))?;
    }
    let sims = tape.cosine_rows(ctx.cls, cand_matrix);
    let logits = tape.scale(sims, 1.0 / temperature);
    checked(tape, logits, "similarities")?;
    let scores = tape.value(sims).data().to_vec();
    let correct = scores[1..].iter().all(|&s| scores[0] > s);
    let loss = tape.cross_entropy(logits, &[0]);
    finish(tape, loss, correct, scores, "contrastive loss")
}

pub fn crm_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, ex: &MatchExample, temperature: f64) -> Result<LossOutput> {
    contrastive_forward(tape, enc, &ex.context, &ex.gold_response, &ex.negatives, temperature)
}

/// Similarity between a dialogue history and a candidate system response,
/// encoded the same way as during training.
pub fn rs_score(store: &ParamStore, enc: &dyn SequenceEncoder, history: &[Utterance], candidate: &str) -> Result<f64> {
    let h = enc.encode(store, &enc.tokenize_dialogue(history)?)?;
    let c = enc.encode(store, &enc.tokenize_utterance(&Utterance::system(candidate)))?;
    similarity(&h.cls_vector, &c.cls_vector)
}

/// Scores every candidate against one history, encoding the history once.
pub fn rs_scores(store: &ParamStore, enc: &dyn SequenceEncoder, history: &[Utterance], candidates: &[String]) -> Result<Vec<f64>> {
    let h = enc.encode(store, &enc.tokenize_dialogue(history)?)?;
    candidates
        .iter()
        .map(|c| {
            let v = enc.encode(store, &enc.tokenize_utterance(&Utterance::system(c.as_str())))?;
            similarity(&h.cls_vector, &v.cls_vector)
        })
        .collect()
}

/// Soft cross-entropy between the scorer's distribution over the shuffled
/// window and the example's target. `None` when truncation removed part of
/// the window.
pub fn dur_forward(
    tape: &mut Tape<'_>,
    enc: &dyn SequenceEncoder,
    scorer: &ReorderScorer,
    ex: &ReorderExample,
) -> Result<Option<LossOutput>> {
    let w = ex.permutation.len();
    if w != ex.target_distribution.len() || ex.window_start + w > ex.dialogue.utterances.len() {
        return Err(HeadError::Example("window does not fit the dialogue".into()));
    }
    let seq = enc.tokenize_dialogue(&ex.dialogue.utterances)?;
    let mut positions = Vec::with_capacity(w);
    for slot in 0..w {
        match seq.markers.iter().find(|m| m.turn == ex.window_start + slot) {
            Some(m) => positions.push(m.position),
            None => return Ok(None),
        }
    }
    let out = enc.forward(tape, &seq)?;
    let markers = tape.gather_rows(out.tokens, &positions);
    let scores_var = scorer.forward(tape, markers);
    checked(tape, scores_var, "reorder scores")?;
    let scores = tape.value(scores_var).data().to_vec();
    let loss = tape.soft_cross_entropy(scores_var, &ex.target_distribution, DUR_EPS);
    let correct = ranking(&scores) == ranking(&ex.target_distribution);
    finish(tape, loss, correct, scores, "reorder loss").map(Some)
}

/// Indices sorted by descending value, ties by index.
fn ranking(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Mean cross-entropy over the masked positions only.
pub fn mlm_forward(tape: &mut Tape<'_>, enc: &dyn SequenceEncoder, lm: &LinearHead, ex: &MaskedExample) -> Result<LossOutput> {
    if ex.masked_positions.is_empty() || ex.masked_positions.len() != ex.original_ids.len() {
        return Err(HeadError::Example("masked example needs aligned, non-empty positions".into()));
    }
    if let Some(&p) = ex.masked_positions.iter().find(|&&p| p >= ex.tokens.len()) {
        return Err(HeadError::Example(format!("masked position {p} out of range")));
    }
    let seq = TokenSequence {
        ids: ex.tokens.clone(),
        markers: Vec::new(),
    };
    let targets: Vec<usize> = ex.original_ids.iter().map(|&t| t as usize).collect();
    for &t in &targets {
        check_label(t, lm)?;
    }
    let out = enc.forward(tape, &seq)?;
    let picked = tape.gather_rows(out.tokens, &ex.masked_positions);
    let logits = lm.forward(tape, picked);
    checked(tape, logits, "vocabulary logits")?;
    let lv = tape.value(logits);
    let correct = (0..lv.rows()).all(|r| kernels::argmax(lv.row(r)) == targets[r]);
    let scores = (0..lv.rows()).map(|r| lv.row(r)[targets[r]]).collect();
    let loss = tape.cross_entropy(logits, &targets);
    finish(tape, loss, correct, scores, "MLM loss")
}

/// Per-pair softmax over cosine similarities between the projected
/// dialogue summary and each cached value vector; the loss sums the
/// per-pair cross-entropies.
pub fn dst_forward(
    tape: &mut Tape<'_>,
    enc: &dyn SequenceEncoder,
    bank: &SlotProjectionBank,
    turns: &[Utterance],
    gold: &[usize],
) -> Result<LossOutput> {
    if gold.len() != bank.len() {
        return Err(HeadError::Example(format!(
            "{} gold values for {} pairs",
            gold.len(),
            bank.len()
        )));
    }
    let out = enc.forward(tape, &enc.tokenize_dialogue(turns)?)?;
    let mut losses = Vec::with_capacity(bank.len());
    let mut correct = true;
    let mut predictions = Vec::with_capacity(bank.len());
    for (j, pair) in bank.pairs.iter().enumerate() {
        if gold[j] >= pair.values.len() {
            return Err(HeadError::Label {
                label: gold[j],
                classes: pair.values.len(),
            });
        }
        let proj = bank.project(tape, j, out.cls);
        let values = tape.param(pair.value_vectors());
        let sims = pair_similarities(tape, proj, values)?;
        let s = tape.value(sims).data();
        let pred = kernels::argmax(s);
        correct &= pred == gold[j];
        predictions.push(pred as f64);
        losses.push(tape.cross_entropy(sims, &[gold[j]]));
    }
    let loss = tape.add_all(&losses);
    finish(tape, loss, correct, predictions, "DST loss")
}

fn pair_similarities(tape: &mut Tape<'_>, proj: Var, values: Var) -> Result<Var> {
    let q = tape.value(proj).data();
    let vm = tape.value(values);
    for r in 0..vm.rows() {
        similarity(q, vm.row(r))?;
    }
    let sims = tape.cosine_rows(proj, values);
    checked(tape, sims, "slot similarities")?;
    Ok(sims)
}

/// Predicted value index per pair.
pub fn dst_predict(store: &ParamStore, enc: &dyn SequenceEncoder, bank: &SlotProjectionBank, turns: &[Utterance]) -> Result<Vec<usize>> {
    let mut tape = Tape::new(store);
    let out = enc.forward(&mut tape, &enc.tokenize_dialogue(turns)?)?;
    let mut preds = Vec::with_capacity(bank.len());
    for (j, pair) in bank.pairs.iter().enumerate() {
        let proj = bank.project(&mut tape, j, out.cls);
        let values = tape.param(pair.value_vectors());
        let sims = pair_similarities(&mut tape, proj, values)?;
        preds.push(kernels::argmax(tape.value(sims).data()));
    }
    Ok(preds)
}

/// Cross-entropy of `(1+K)`-way cosine logits when the gold similarity and
/// negative similarities are given directly. Used by property tests and as a
/// closed-form reference.
pub fn contrastive_from_similarities(gold: f64, negatives: &[f64], temperature: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(gold)
        .chain(negatives.iter().copied())
        .map(|s| s / temperature)
        .collect();
    kernels::cross_entropy(&logits, 0)
}
