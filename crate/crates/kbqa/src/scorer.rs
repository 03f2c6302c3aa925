//! Answer scoring, loss, and evaluation metrics.
//!
//! Every candidate entity gets `s = σ(q'ᵀ W [e'; e_d])` — its graph
//! knowledge and text evidence matched against the reformulated query. The
//! graph-only variant scores `σ(q'ᵀ W' e')` with its own square map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{smoothed_bce, NnError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("cannot score an empty candidate set")]
    EmptyCandidates,
    #[error("no gold answers among the candidates")]
    EmptyGold,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

/// Scores candidates with both evidence sources: `σ(q'ᵀ W [e'; e_d])`.
/// `pairs` holds (knowledge e', text e_d) per candidate; `w` is d×2d.
pub fn score_answers(q_prime: &Tensor, pairs: &[(Tensor, Tensor)], w: &Tensor) -> Result<Vec<Tensor>> {
    if pairs.is_empty() {
        return Err(ScorerError::EmptyCandidates);
    }
    pairs
        .iter()
        .map(|(knowledge, text)| {
            let cat = Tensor::concat(&[knowledge.clone(), text.clone()], 0)?;
            Ok(q_prime.dot(&w.matvec(&cat)?)?.sigmoid())
        })
        .collect()
}

/// Graph-only scoring head: `σ(q'ᵀ W e')` with a d×d map.
pub fn score_answers_kb(q_prime: &Tensor, knowledge: &[Tensor], w: &Tensor) -> Result<Vec<Tensor>> {
    if knowledge.is_empty() {
        return Err(ScorerError::EmptyCandidates);
    }
    knowledge
        .iter()
        .map(|e_prime| Ok(q_prime.dot(&w.matvec(e_prime)?)?.sigmoid()))
        .collect()
}

/// Mean label-smoothed binary cross-entropy over the candidates. Gold
/// candidates get target `1-ε/2`, the rest `ε/2`.
pub fn qa_loss(scores: &[Tensor], is_gold: &[bool], eps: f64) -> Result<Tensor> {
    if scores.is_empty() {
        return Err(ScorerError::EmptyCandidates);
    }
    if scores.len() != is_gold.len() {
        return Err(ScorerError::LengthMismatch {
            scores: scores.len(),
            labels: is_gold.len(),
        });
    }
    if !is_gold.iter().any(|&g| g) {
        return Err(ScorerError::EmptyGold);
    }
    let losses: Vec<Tensor> = scores
        .iter()
        .zip(is_gold)
        .map(|(s, &g)| Ok(smoothed_bce(s, if g { 1.0 } else { 0.0 }, eps)?))
        .collect::<Result<_>>()?;
    Ok(Tensor::concat(&losses, 0)?.mean_axis(0)?)
}

/// Ranked candidates with the thresholded answer set.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// (entity id, score), best first; ties broken by entity id.
    pub ranked: Vec<(usize, f64)>,
    /// Entities scoring above the threshold.
    pub answers: BTreeSet<usize>,
    pub threshold: f64,
}

impl Prediction {
    pub fn new(entities: &[usize], scores: &[f64], threshold: f64) -> Prediction {
        let mut ranked: Vec<(usize, f64)> = entities.iter().copied().zip(scores.iter().copied()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let answers = ranked
            .iter()
            .filter(|(_, s)| *s > threshold)
            .map(|(e, _)| *e)
            .collect();
        Prediction {
            ranked,
            answers,
            threshold,
        }
    }

    pub fn top(&self) -> Option<usize> {
        self.ranked.first().map(|(e, _)| *e)
    }

    pub fn hit_at_1(&self, gold: &BTreeSet<usize>) -> bool {
        self.top().is_some_and(|e| gold.contains(&e))
    }
}

/// Precision, recall, F1 between a predicted set and the gold set. Two
/// empty sets count as a perfect match; an empty prediction against a
/// nonempty gold set scores zero.
pub fn set_metrics(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> (f64, f64, f64) {
    if pred.is_empty() && gold.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    if pred.is_empty() || gold.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let hits = pred.intersection(gold).count() as f64;
    let p = hits / pred.len() as f64;
    let r = hits / gold.len() as f64;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Per-question evaluation record, one line of the report file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub hit_at_1: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1 when the prediction set is just the top-ranked entity.
    pub f1_top1: f64,
    /// Top candidates (best first) with their scores.
    pub top: Vec<(String, f64)>,
}

/// Corpus-level means over the per-question records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub hit_at_1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_top1: f64,
}

pub fn summarize(records: &[EvalRecord]) -> EvalSummary {
    let n = records.len().max(1) as f64;
    EvalSummary {
        count: records.len(),
        hit_at_1: records.iter().filter(|r| r.hit_at_1).count() as f64 / n,
        precision: records.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: records.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: records.iter().map(|r| r.f1).sum::<f64>() / n,
        f1_top1: records.iter().map(|r| r.f1_top1).sum::<f64>() / n,
    }
}
