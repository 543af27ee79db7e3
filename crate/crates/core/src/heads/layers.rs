use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HeadError, Result};
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::corpus::downstream::Ontology;
use crate::encoder::SequenceEncoder;
use crate::seed::rng_for;
use crate::tensor::Matrix;

pub const HEAD_INIT_STD: f64 = 0.02;

pub(crate) fn init_matrix(rows: usize, cols: usize, seed: u64, key: &str) -> Matrix {
    let mut rng = rng_for(seed, key);
    let normal = Normal::new(0.0, HEAD_INIT_STD).expect("valid std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
}

fn lookup(store: &ParamStore, name: &str, shape: (usize, usize)) -> Result<ParamId> {
    let id = store.id(name).ok_or_else(|| HeadError::MissingParam(name.to_string()))?;
    let found = store.get(id).shape();
    if found != shape {
        return Err(HeadError::Config(format!(
            "parameter {name} has shape {found:?}, expected {shape:?}"
        )));
    }
    Ok(id)
}

/// Affine map `d -> c` applied to summary vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub name: String,
    pub input: usize,
    pub classes: usize,
    #[serde(skip)]
    ids: Option<(ParamId, ParamId)>,
}

impl LinearHead {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(HeadError::Config(format!("head {name} needs at least 2 classes")));
        }
        store.insert(format!("{name}.weight"), init_matrix(input, classes, seed, name));
        store.insert(format!("{name}.bias"), Matrix::zeros(1, classes));
        Self::attach(store, name, input, classes)
    }

    pub fn attach(store: &ParamStore, name: &str, input: usize, classes: usize) -> Result<Self> {
        let w = lookup(store, &format!("{name}.weight"), (input, classes))?;
        let b = lookup(store, &format!("{name}.bias"), (1, classes))?;
        Ok(Self {
            name: name.to_string(),
            input,
            classes,
            ids: Some((w, b)),
        })
    }

    pub fn weight(&self) -> ParamId {
        self.ids.expect("attached head").0
    }

    /// `x · W + b` for `n x d` inputs.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let (w, b) = self.ids.expect("attached head");
        let w = tape.param(w);
        let b = tape.param(b);
        tape.affine(x, w, b)
    }
}

/// One-hidden-layer GELU network mapping each marker vector to a score.
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderScorer {
    hidden: LinearHead,
    out: (ParamId, ParamId),
}

impl ReorderScorer {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, seed: u64) -> Result<Self> {
        store.insert(format!("{name}.hidden.weight"), init_matrix(d, d, seed, name));
        store.insert(format!("{name}.hidden.bias"), Matrix::zeros(1, d));
        store.insert(format!("{name}.out.weight"), init_matrix(d, 1, seed, &format!("{name}.out")));
        store.insert(format!("{name}.out.bias"), Matrix::zeros(1, 1));
        Self::attach(store, name, d)
    }

    pub fn attach(store: &ParamStore, name: &str, d: usize) -> Result<Self> {
        let hidden = LinearHead {
            name: format!("{name}.hidden"),
            input: d,
            classes: d,
            ids: Some((
                lookup(store, &format!("{name}.hidden.weight"), (d, d))?,
                lookup(store, &format!("{name}.hidden.bias"), (1, d))?,
            )),
        };
        let out = (
            lookup(store, &format!("{name}.out.weight"), (d, 1))?,
            lookup(store, &format!("{name}.out.bias"), (1, 1))?,
        );
        Ok(Self { hidden, out })
    }

    /// Scores for `n x d` inputs as a `1 x n` row.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.gelu(h);
        let w = tape.param(self.out.0);
        let b = tape.param(self.out.1);
        let s = tape.affine(h, w, b);
        tape.transpose(s)
    }
}

/// One (domain, slot) pair of a [`SlotProjectionBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPair {
    pub name: String,
    pub values: Vec<String>,
    projection: LinearHead,
    /// Frozen `n_values x d` encodings of the candidate values.
    value_vectors: ParamId,
}

impl SlotPair {
    pub fn value_vectors(&self) -> ParamId {
        self.value_vectors
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Per-pair projections `G_j` plus cached, frozen encodings of every
/// candidate value.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotProjectionBank {
    pub pairs: Vec<SlotPair>,
}

fn pair_key(name: &str) -> String {
    format!("dst.{name}")
}

impl SlotProjectionBank {
    /// Creates projections and encodes each value with the current encoder.
    pub fn build(
        store: &mut ParamStore,
        enc: &dyn SequenceEncoder,
        ontology: &Ontology,
        seed: u64,
    ) -> Result<Self> {
        let d = enc.hidden_size();
        if ontology.is_empty() {
            return Err(HeadError::Config("ontology has no (domain, slot) pairs".into()));
        }
        for (pair, values) in ontology {
            if values.len() < 2 {
                return Err(HeadError::Config(format!(
                    "pair {pair} has {} value(s); at least 2 are required",
                    values.len()
                )));
            }
        }
        for (pair, values) in ontology {
            let key = pair_key(pair);
            let mut rows = Vec::with_capacity(values.len());
            for v in values {
                let out = enc.encode(store, &enc.tokenize_text(v))?;
                rows.push(out.cls_vector);
            }
            store.insert_frozen(format!("{key}.values"), Matrix::from_rows(&rows));
            store.insert(format!("{key}.proj.weight"), init_matrix(d, d, seed, &key));
            store.insert(format!("{key}.proj.bias"), Matrix::zeros(1, d));
        }
        Self::attach(store, ontology, d)
    }

    pub fn attach(store: &ParamStore, ontology: &Ontology, d: usize) -> Result<Self> {
        let pairs = ontology
            .iter()
            .map(|(pair, values)| {
                let key = pair_key(pair);
                let values_id = lookup(store, &format!("{key}.values"), (values.len(), d))?;
                if !store.is_frozen(values_id) {
                    return Err(HeadError::Config(format!("value cache of {pair} must be frozen")));
                }
                Ok(SlotPair {
                    name: pair.clone(),
                    values: values.clone(),
                    projection: LinearHead::attach(store, &format!("{key}.proj"), d, d)?,
                    value_vectors: values_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn project(&self, tape: &mut Tape<'_>, j: usize, x: Var) -> Var {
        self.pairs[j].projection.forward(tape, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_head_rejects_single_class() {
        let mut store = ParamStore::new();
        assert!(LinearHead::init(&mut store, "h", 4, 1, 0).is_err());
        let h = LinearHead::init(&mut store, "h", 4, 3, 0).unwrap();
        assert_eq!(store.get(h.weight()).shape(), (4, 3));
        assert!(LinearHead::attach(&store, "h", 4, 5).is_err());
    }

    #[test]
    fn scorer_shape() {
        let mut store = ParamStore::new();
        let s = ReorderScorer::init(&mut store, "dur", 4, 1).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_vec(3, 4, (0..12).map(f64::from).collect()));
        let y = s.forward(&mut tape, x);
        assert_eq!(tape.value(y).shape(), (1, 3));
    }
}
