//! Neural building blocks: LSTM encoders, attentive pooling, Adam, and
//! the training/eval runtime switches.
//!
//! These are thin compositions of tensor ops. Parameters live in a
//! [`ParamStore`](crate::params::ParamStore) and are fetched through a
//! binding at the start of each pass; the structs here just group the
//! leaves and implement the recurrences.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::params::{Binding, ParamError, ParamStore};
use crate::tensor::{dropout_mask, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient for parameter {0:?}; step aborted")]
    NonFiniteGrad(String),
    #[error("gradient for {name:?} has {got} values, parameter has {expected}")]
    GradSizeMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("optimizer update for frozen parameter {0:?}")]
    FrozenUpdate(String),
    #[error("embedding file line {line}: {reason}")]
    Embedding { line: usize, reason: String },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

// ---- runtime switches ------------------------------------------------------------

/// Per-pass mode flags: whether dropout applies and from which RNG masks
/// are drawn. Evaluation passes never touch randomness, so repeated eval of
/// the same inputs is bit-identical.
pub struct Runtime {
    train: bool,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl Runtime {
    pub fn eval() -> Runtime {
        Runtime {
            train: false,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(dropout: f64, rng: ChaCha8Rng) -> Runtime {
        Runtime {
            train: true,
            dropout,
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Applies inverted dropout in training mode; otherwise returns the
    /// input tensor unchanged (the same graph node, not a copy).
    pub fn apply_dropout(&mut self, t: &Tensor) -> Result<Tensor> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(t.clone());
        }
        let rng = self.rng.as_mut().expect("training runtime has an RNG");
        let mask = dropout_mask(t.numel(), self.dropout, rng);
        Ok(t.dropout(&mask)?)
    }
}

// ---- initialization --------------------------------------------------------------

/// Uniform Glorot initialization for a `[rows, cols]` weight matrix.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect()
}

pub fn uniform_init(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---- LSTM ------------------------------------------------------------------------

/// One LSTM's weights: `w_ih [4h, in]`, `w_hh [4h, h]`, `bias [4h]`, with
/// gates packed in input/forget/candidate/output order.
pub struct LstmWeights {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Registers LSTM parameters under `{prefix}.w_ih`, `{prefix}.w_hh`,
/// `{prefix}.bias`.
pub fn register_lstm(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.register(
        &format!("{prefix}.w_ih"),
        vec![4 * hidden, in_dim],
        glorot_uniform(rng, 4 * hidden, in_dim),
        false,
    )?;
    store.register(
        &format!("{prefix}.w_hh"),
        vec![4 * hidden, hidden],
        glorot_uniform(rng, 4 * hidden, hidden),
        false,
    )?;
    store.register(&format!("{prefix}.bias"), vec![4 * hidden], vec![0.0; 4 * hidden], false)?;
    Ok(())
}

impl LstmWeights {
    pub fn from_binding(b: &Binding, prefix: &str) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w_ih: b.get(&format!("{prefix}.w_ih"))?,
            w_hh: b.get(&format!("{prefix}.w_hh"))?,
            bias: b.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[1]
    }

    /// One recurrence step; returns the next `(hidden, cell)` pair.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.hidden_dim();
        let gates = self
            .w_ih
            .matvec(x)?
            .add(&self.w_hh.matvec(h)?)?
            .add(&self.bias)?;
        let i = gates.slice(0, 0, d)?.sigmoid();
        let f = gates.slice(0, d, 2 * d)?.sigmoid();
        let g = gates.slice(0, 2 * d, 3 * d)?.tanh();
        let o = gates.slice(0, 3 * d, 4 * d)?.sigmoid();
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh())?;
        Ok((h_next, c_next))
    }

    /// Runs the recurrence over the rows of `inputs` (`[len, in_dim]`) from a
    /// zero initial state; returns the hidden state at every position.
    pub fn encode(&self, inputs: &Tensor) -> Result<Vec<Tensor>> {
        let len = inputs.shape().first().copied().unwrap_or(0);
        let d = self.hidden_dim();
        let mut h = Tensor::zeros(vec![d]);
        let mut c = Tensor::zeros(vec![d]);
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let x = inputs.row(t)?;
            let (h2, c2) = self.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            states.push(h.clone());
        }
        Ok(states)
    }
}

/// Two LSTMs read the sequence in opposite directions; each position's
/// representation concatenates the forward and backward hidden states.
pub struct BiLstm {
    pub fw: LstmWeights,
    pub bw: LstmWeights,
}

pub fn register_bilstm(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden_each: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    register_lstm(store, &format!("{prefix}.fw"), in_dim, hidden_each, rng)?;
    register_lstm(store, &format!("{prefix}.bw"), in_dim, hidden_each, rng)?;
    Ok(())
}

impl BiLstm {
    pub fn from_binding(b: &Binding, prefix: &str) -> Result<BiLstm> {
        Ok(BiLstm {
            fw: LstmWeights::from_binding(b, &format!("{prefix}.fw"))?,
            bw: LstmWeights::from_binding(b, &format!("{prefix}.bw"))?,
        })
    }

    /// Encodes `[len, in_dim]` rows into a `[len, 2 * hidden_each]` matrix.
    pub fn encode(&self, inputs: &Tensor) -> Result<Tensor> {
        let len = inputs.shape().first().copied().unwrap_or(0);
        let fw = self.fw.encode(inputs)?;
        let rows: Vec<Tensor> = (0..len).rev().map(|t| inputs.row(t)).collect::<std::result::Result<_, _>>()?;
        let reversed = Tensor::stack_rows(&rows)?;
        let mut bw = self.bw.encode(&reversed)?;
        bw.reverse();
        let combined: Vec<Tensor> = fw
            .iter()
            .zip(&bw)
            .map(|(f, b)| Tensor::concat(&[f.clone(), b.clone()], 0))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::stack_rows(&combined)?)
    }
}

/// Truncates a token id sequence to `max_len`, warning once per offender.
pub fn truncate_ids(ids: &[usize], max_len: usize, what: &str) -> Vec<usize> {
    if ids.len() > max_len {
        log::warn!("{what}: truncating {} tokens to {max_len}", ids.len());
        ids[..max_len].to_vec()
    } else {
        ids.to_vec()
    }
}

// ---- attention pooling -----------------------------------------------------------

pub struct Pooled {
    pub pooled: Tensor,
    /// Attention distribution over positions; sums to 1.
    pub weights: Tensor,
}

/// Self-attentive pooling of `[len, d]` states with a learned scoring
/// vector `w [d]`: weights = softmax(H w), pooled = H^T weights.
pub fn self_attentive_pool(states: &Tensor, w: &Tensor) -> Result<Pooled> {
    let scores = states.matvec(w)?;
    let weights = scores.softmax(0)?;
    let pooled = states.transpose()?.matvec(&weights)?;
    Ok(Pooled { pooled, weights })
}

// ---- loss ------------------------------------------------------------------------

/// Binary cross-entropy against a label-smoothed target: a hard label `y`
/// becomes `y * (1 - eps) + eps / 2`.
pub fn smoothed_bce(score: &Tensor, label: f64, eps: f64) -> Result<Tensor> {
    let target = label * (1.0 - eps) + eps / 2.0;
    Ok(score.bce(target)?)
}

// ---- optimization ----------------------------------------------------------------

/// Scales all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(String, Vec<f64>)], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.iter() {
        for v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// created lazily on first update.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update. Validates every gradient before mutating anything,
    /// so a non-finite gradient leaves both store and optimizer untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(String, Vec<f64>)]) -> Result<()> {
        for (name, g) in grads {
            let entry = store.get(name)?;
            if entry.frozen {
                return Err(NnError::FrozenUpdate(name.clone()));
            }
            if entry.data.len() != g.len() {
                return Err(NnError::GradSizeMismatch {
                    name: name.clone(),
                    expected: entry.data.len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGrad(name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let data = store.data_mut(name)?;
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

// ---- pretrained embeddings ---------------------------------------------------------

/// Parses a text embedding file (one `word v1 .. vd` entry per line).
/// Every vector must have exactly `dim` values.
pub fn load_word_vectors(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| NnError::Embedding {
                line: lineno + 1,
                reason: "empty entry".into(),
            })?
            .to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse().map_err(|_| NnError::Embedding {
                    line: lineno + 1,
                    reason: format!("bad value {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(NnError::Embedding {
                line: lineno + 1,
                reason: format!("expected {dim} values, found {}", values.len()),
            });
        }
        out.push((word, values));
    }
    Ok(out)
}
