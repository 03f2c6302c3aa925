//! Text reader: reformulates the query with topic-entity knowledge, fuses
//! graph knowledge into document tokens through a question-conditioned gate,
//! encodes documents with a biLSTM, and pools per-entity text evidence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self_attentive_pool, BiLstm, NnError, Runtime};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot encode an empty document")]
    EmptyDocument,
    #[error("the scalar-dot gate variant has no question-free form")]
    DotGateWithoutQuery,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// How the token gate combines the query with entity knowledge and token
/// features. The gate input differs; the fusion `γ e' + (1-γ) f` does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateVariant {
    /// Scalar γ from the elementwise products: σ(w · [q⊙e'; q⊙f]), w: 2d.
    ScalarEw,
    /// Vector γ, one value per dimension: σ(W [q⊙e'; q⊙f]), W: d×2d.
    VectorEw,
    /// Scalar γ from the two dot products: σ(w · [q·e', q·f]), w: 2.
    ScalarDot,
}

impl GateVariant {
    /// Shape of the gate parameter for hidden size `d`.
    pub fn gate_shape(self, d: usize) -> Vec<usize> {
        match self {
            GateVariant::ScalarEw => vec![2 * d],
            GateVariant::VectorEw => vec![d, 2 * d],
            GateVariant::ScalarDot => vec![2],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateVariant::ScalarEw => "scalar-ew",
            GateVariant::VectorEw => "vector-ew",
            GateVariant::ScalarDot => "scalar-dot",
        }
    }
}

impl std::str::FromStr for GateVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<GateVariant, String> {
        match s {
            "scalar-ew" => Ok(GateVariant::ScalarEw),
            "vector-ew" => Ok(GateVariant::VectorEw),
            "scalar-dot" => Ok(GateVariant::ScalarDot),
            other => Err(format!(
                "unknown gate variant {other:?} (expected scalar-ew, vector-ew, or scalar-dot)"
            )),
        }
    }
}

impl std::fmt::Display for GateVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean of same-length vectors; an empty slice yields zeros so downstream
/// concatenations degrade gracefully.
pub fn mean_vectors(vectors: &[Tensor], dim: usize) -> Result<Tensor> {
    if vectors.is_empty() {
        return Ok(Tensor::zeros(vec![dim]));
    }
    Ok(Tensor::stack_rows(vectors)?.mean_axis(0)?)
}

pub struct ReformOut {
    /// Self-attentively pooled query q.
    pub query: Tensor,
    /// Reformulated query q'.
    pub q_prime: Tensor,
    /// Reformulation gate γ.
    pub gate: f64,
    /// Attention over question tokens from the pooling step.
    pub attention: Vec<f64>,
}

/// Pools the question states into q, averages the topic entities' knowledge
/// into e_q, and blends q with a learned update:
/// `q' = γ q + (1-γ) tanh(W [q; e_q; q-e_q])`, `γ = σ(w · [q; e_q; q-e_q])`.
/// No topic knowledge → e_q is zero.
pub fn reformulate_query(
    question_states: &Tensor,
    topic_knowledge: &[Tensor],
    attn_w: &Tensor,
    transform: &Tensor,
    gate_w: &Tensor,
) -> Result<ReformOut> {
    let pooled = self_attentive_pool(question_states, attn_w)?;
    let q = pooled.pooled;
    let d = q.numel();
    let e_q = mean_vectors(topic_knowledge, d)?;
    let cat = Tensor::concat(&[q.clone(), e_q.clone(), q.sub(&e_q)?], 0)?;
    let gamma = gate_w.dot(&cat)?.sigmoid();
    let update = transform.matvec(&cat)?.tanh();
    let residual = Tensor::scalar(1.0).sub(&gamma)?;
    let q_prime = q.scale_by(&gamma)?.add(&update.scale_by(&residual)?)?;
    Ok(ReformOut {
        query: q,
        q_prime,
        gate: gamma.data()[0],
        attention: pooled.weights.data().to_vec(),
    })
}

pub struct GateOut {
    /// Fused token input `γ e' + (1-γ) f`.
    pub fused: Tensor,
    /// Gate value(s): one entry for scalar variants, d for the vector one.
    pub gate: Vec<f64>,
}

/// Blends a token's entity knowledge e' with its projected features f.
/// When `conditional` the gate sees the query (variant-dependent input);
/// otherwise it sees `[e'; f]` alone, so changing the question cannot move
/// any gate value.
pub fn conditional_gate(
    query: &Tensor,
    knowledge: &Tensor,
    feature: &Tensor,
    gate_w: &Tensor,
    variant: GateVariant,
    conditional: bool,
) -> Result<GateOut> {
    let gate_in = if conditional {
        match variant {
            GateVariant::ScalarEw | GateVariant::VectorEw => Tensor::concat(
                &[query.mul(knowledge)?, query.mul(feature)?],
                0,
            )?,
            GateVariant::ScalarDot => {
                Tensor::concat(&[query.dot(knowledge)?, query.dot(feature)?], 0)?
            }
        }
    } else {
        match variant {
            GateVariant::ScalarEw | GateVariant::VectorEw => {
                Tensor::concat(&[knowledge.clone(), feature.clone()], 0)?
            }
            GateVariant::ScalarDot => return Err(TextError::DotGateWithoutQuery),
        }
    };
    match variant {
        GateVariant::ScalarEw | GateVariant::ScalarDot => {
            let gamma = gate_w.dot(&gate_in)?.sigmoid();
            let residual = Tensor::scalar(1.0).sub(&gamma)?;
            let fused = knowledge
                .scale_by(&gamma)?
                .add(&feature.scale_by(&residual)?)?;
            Ok(GateOut {
                fused,
                gate: gamma.data().to_vec(),
            })
        }
        GateVariant::VectorEw => {
            let gamma = gate_w.matvec(&gate_in)?.sigmoid();
            let ones = Tensor::from_vec(vec![gamma.numel()], vec![1.0; gamma.numel()])?;
            let fused = knowledge
                .mul(&gamma)?
                .add(&feature.mul(&ones.sub(&gamma)?)?)?;
            Ok(GateOut {
                fused,
                gate: gamma.data().to_vec(),
            })
        }
    }
}

/// One document token as the encoder sees it: projected features plus the
/// token's entity knowledge when it is linked to a subgraph entity.
pub struct DocToken {
    pub feature: Tensor,
    pub knowledge: Option<Tensor>,
}

pub struct DocOut {
    /// Attention-pooled document vector.
    pub vector: Tensor,
    /// Attention over token states (λ).
    pub attention: Vec<f64>,
    /// Gate values per token; `None` for tokens that were not gated.
    pub token_gates: Vec<Option<Vec<f64>>>,
    /// The fused per-token inputs i^d, for inspecting ablation behavior.
    pub fused: Vec<Tensor>,
}

/// Encodes one document: gate each entity-linked token (plain tokens keep
/// their projected features), run the biLSTM, then pool the token states
/// with attention against the reformulated query:
/// `λ = softmax(h q')`, `d = Σ λ_i h_i`.
///
/// `knowledge_enhancement: false` skips the gate entirely so every token
/// feeds its features alone.
#[allow(clippy::too_many_arguments)]
pub fn encode_document(
    tokens: &[DocToken],
    query: &Tensor,
    q_prime: &Tensor,
    bilstm: &BiLstm,
    gate_w: &Tensor,
    variant: GateVariant,
    conditional: bool,
    knowledge_enhancement: bool,
    rt: &mut Runtime,
) -> Result<DocOut> {
    if tokens.is_empty() {
        return Err(TextError::EmptyDocument);
    }
    let mut fused = Vec::with_capacity(tokens.len());
    let mut token_gates = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match &tok.knowledge {
            Some(e_prime) if knowledge_enhancement => {
                let out = conditional_gate(query, e_prime, &tok.feature, gate_w, variant, conditional)?;
                fused.push(out.fused);
                token_gates.push(Some(out.gate));
            }
            _ => {
                fused.push(tok.feature.clone());
                token_gates.push(None);
            }
        }
    }
    let states = bilstm.encode(&Tensor::stack_rows(&fused)?)?;
    let states = rt.apply_dropout(&states)?;
    let attention = states.matvec(q_prime)?.softmax(0)?;
    let vector = states.transpose()?.matvec(&attention)?;
    Ok(DocOut {
        vector,
        attention: attention.data().to_vec(),
        token_gates,
        fused,
    })
}
