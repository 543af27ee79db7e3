use rand_distr::{Distribution, Normal};

use super::{
    Encoded, EncoderConfig, EncoderError, Result, SequenceEncoder, TokenSequence, Vocabulary,
};
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::seed::rng_for;
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct Params {
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerParams>,
}

/// Post-LN transformer encoder with learned positions, GELU feed-forward
/// and dense bidirectional attention. Parameters live in a shared
/// [`ParamStore`] under the `encoder.` prefix.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    config: EncoderConfig,
    vocab: Vocabulary,
    params: Params,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every tensor the encoder owns: name, shape, initializer.
fn layout(config: &EncoderConfig, vocab_size: usize) -> Vec<(String, (usize, usize), Init)> {
    let d = config.d_model;
    let f = config.ffn_dim;
    let mut out = vec![
        ("encoder.tok_emb".to_string(), (vocab_size, d), Init::Normal),
        ("encoder.pos_emb".to_string(), (config.max_len, d), Init::Normal),
        ("encoder.emb_ln.gamma".to_string(), (1, d), Init::Ones),
        ("encoder.emb_ln.beta".to_string(), (1, d), Init::Zeros),
    ];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("encoder.layer{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.{proj}.weight")), (d, d), Init::Normal));
            out.push((p(&format!("attn.{proj}.bias")), (1, d), Init::Zeros));
        }
        out.push((p("ln1.gamma"), (1, d), Init::Ones));
        out.push((p("ln1.beta"), (1, d), Init::Zeros));
        out.push((p("ffn.in.weight"), (d, f), Init::Normal));
        out.push((p("ffn.in.bias"), (1, f), Init::Zeros));
        out.push((p("ffn.out.weight"), (f, d), Init::Normal));
        out.push((p("ffn.out.bias"), (1, d), Init::Zeros));
        out.push((p("ln2.gamma"), (1, d), Init::Ones));
        out.push((p("ln2.beta"), (1, d), Init::Zeros));
    }
    out
}

impl ReferenceEncoder {
    /// Creates freshly initialized encoder parameters in `store`.
    pub fn init(
        config: EncoderConfig,
        vocab: Vocabulary,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "encoder.init");
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| EncoderError::Config(e.to_string()))?;
        for (name, (r, c), init) in layout(&config, vocab.len()) {
            let m = match init {
                Init::Normal => {
                    Matrix::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
                }
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::from_vec(r, c, vec![1.0; r * c]),
            };
            store.insert(name, m);
        }
        Self::attach(config, vocab, store)
    }

    /// Binds to encoder parameters already present in `store`, checking
    /// every name and shape.
    pub fn attach(config: EncoderConfig, vocab: Vocabulary, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, vocab.len());
        let mut ids = Vec::with_capacity(expected.len());
        for (name, shape, _) in &expected {
            let id = store
                .id(name)
                .ok_or_else(|| EncoderError::MissingParam(name.clone()))?;
            let found = store.get(id).shape();
            if found != *shape {
                return Err(EncoderError::ParamShape {
                    name: name.clone(),
                    found,
                    expected: *shape,
                });
            }
            ids.push(id);
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("layout length");
        let tok_emb = next();
        let pos_emb = next();
        let emb_ln_g = next();
        let emb_ln_b = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_g: next(),
                ln1_b: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2_g: next(),
                ln2_b: next(),
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            params: Params {
                tok_emb,
                pos_emb,
                emb_ln_g,
                emb_ln_b,
                layers,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Every parameter the encoder reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let p = &self.params;
        let mut ids = vec![p.tok_emb, p.pos_emb, p.emb_ln_g, p.emb_ln_b];
        for l in &p.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_g, l.ln1_b, l.w1, l.b1,
                l.w2, l.b2, l.ln2_g, l.ln2_b,
            ]);
        }
        ids
    }

    pub fn position_embedding(&self) -> ParamId {
        self.params.pos_emb
    }

    fn attention(&self, tape: &mut Tape<'_>, x: Var, l: &LayerParams) -> Var {
        let wq = tape.param(l.wq);
        let bq = tape.param(l.bq);
        let wk = tape.param(l.wk);
        let bk = tape.param(l.bk);
        let wv = tape.param(l.wv);
        let bv = tape.param(l.bv);
        let q = tape.affine(x, wq, bq);
        let k = tape.affine(x, wk, bk);
        let v = tape.affine(x, wv, bv);
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt);
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax_rows(scores);
                tape.matmul(weights, vh)
            })
            .collect();
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        let wo = tape.param(l.wo);
        let bo = tape.param(l.bo);
        tape.affine(joined, wo, bo)
    }
}

impl SequenceEncoder for ReferenceEncoder {
    fn hidden_size(&self) -> usize {
        self.config.d_model
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Encoded> {
        let n = seq.len();
        if n < 2 || n > self.config.max_len {
            return Err(EncoderError::SequenceLength {
                len: n,
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(EncoderError::TokenId {
                id,
                size: self.vocab.len(),
            });
        }
        let store = tape.store();
        if let Some(id) = self.param_ids().into_iter().find(|&id| !store.get(id).is_finite()) {
            return Err(EncoderError::NonFinite(store.name(id).to_string()));
        }

        let eps = self.config.layer_norm_eps;
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let tok_table = tape.param(self.params.tok_emb);
        let pos_table = tape.param(self.params.pos_emb);
        let tok = tape.gather_rows(tok_table, &ids);
        let pos = tape.gather_rows(pos_table, &positions);
        let sum = tape.add(tok, pos);
        let g = tape.param(self.params.emb_ln_g);
        let b = tape.param(self.params.emb_ln_b);
        let mut x = tape.layer_norm(sum, g, b, eps);

        for l in &self.params.layers {
            let attn = self.attention(tape, x, l);
            let res = tape.add(x, attn);
            let g1 = tape.param(l.ln1_g);
            let b1 = tape.param(l.ln1_b);
            x = tape.layer_norm(res, g1, b1, eps);

            let w1 = tape.param(l.w1);
            let bias1 = tape.param(l.b1);
            let w2 = tape.param(l.w2);
            let bias2 = tape.param(l.b2);
            let hidden = tape.affine(x, w1, bias1);
            let hidden = tape.gelu(hidden);
            let ffn = tape.affine(hidden, w2, bias2);
            let res = tape.add(x, ffn);
            let g2 = tape.param(l.ln2_g);
            let b2 = tape.param(l.ln2_b);
            x = tape.layer_norm(res, g2, b2, eps);
        }
        let cls = tape.row(x, 0);
        Ok(Encoded { tokens: x, cls })
    }
}
