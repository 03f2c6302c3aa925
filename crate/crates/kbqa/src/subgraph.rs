//! Graph reader: accumulates knowledge into per-entity vectors with one hop
//! of attention-weighted neighbor propagation.
//!
//! For a question with token states `h_q` and a subgraph around its topic
//! entities, the reader
//!
//! 1. encodes each distinct relation into a vector `r` by self-attentive
//!    pooling over the relation's token states,
//! 2. scores how well `r` matches the question: `s_r = r · Σ_j β_j h_q[j]`
//!    with `β = softmax(h_q r)`,
//! 3. attends over each entity's neighbors with `softmax(topic_indicator +
//!    s_r)`, and
//! 4. gates the aggregated neighbor message into the entity embedding:
//!    `e' = γ e + (1-γ) Σ_i s̃_i tanh(W [r_i; e_i])`, `γ = σ(w · [e; agg])`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::nn::self_attentive_pool;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum SubgraphError {
    #[error("no encoding for relation id {0}")]
    MissingRelation(usize),
    #[error("neighbor arrays disagree: {scores} scores, {neighbors} neighbors")]
    NeighborMismatch { scores: usize, neighbors: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SubgraphError>;

/// One edge as seen from an entity: the relation and the entity on the
/// other side (in entity-vocabulary ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborRef {
    pub relation: usize,
    pub entity: usize,
}

/// Model-side view of a retrieved subgraph: entities, per-entity neighbor
/// lists (both edge directions), the topic set, and the distinct relations
/// that appear.
#[derive(Debug, Clone)]
pub struct SubgraphInput {
    pub entities: Vec<usize>,
    /// Parallel to `entities`; capped at `max_neighbors`, keeping data order.
    pub neighbors: Vec<Vec<NeighborRef>>,
    pub topics: BTreeSet<usize>,
    /// Sorted distinct relation ids across all neighbor lists.
    pub relations: Vec<usize>,
}

impl SubgraphInput {
    pub fn build(
        entities: &[usize],
        triples: &[(usize, usize, usize)],
        topics: &BTreeSet<usize>,
        max_neighbors: usize,
    ) -> SubgraphInput {
        let index: BTreeMap<usize, usize> = entities
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, i))
            .collect();
        let mut neighbors: Vec<Vec<NeighborRef>> = vec![Vec::new(); entities.len()];
        for &(h, r, t) in triples {
            if let Some(&hi) = index.get(&h) {
                neighbors[hi].push(NeighborRef {
                    relation: r,
                    entity: t,
                });
            }
            if let Some(&ti) = index.get(&t) {
                neighbors[ti].push(NeighborRef {
                    relation: r,
                    entity: h,
                });
            }
        }
        for (i, list) in neighbors.iter_mut().enumerate() {
            if list.len() > max_neighbors {
                log::warn!(
                    "entity {}: keeping {max_neighbors} of {} neighbors",
                    entities[i],
                    list.len()
                );
                list.truncate(max_neighbors);
            }
        }
        let relations: Vec<usize> = neighbors
            .iter()
            .flatten()
            .map(|n| n.relation)
            .collect::<BTreeSet<usize>>()
            .into_iter()
            .collect();
        SubgraphInput {
            entities: entities.to_vec(),
            neighbors,
            topics: topics.clone(),
            relations,
        }
    }
}

/// A relation's encoding and its match against the question.
pub struct RelationScore {
    /// Pooled relation vector r.
    pub vector: Tensor,
    /// Scalar match score s_r (stays in the autodiff graph).
    pub score: Tensor,
    /// Attention over relation tokens (α).
    pub token_attention: Vec<f64>,
    /// Attention over question tokens (β).
    pub match_attention: Vec<f64>,
}

/// Scores a relation against the question: the relation vector is pooled
/// from its token states with `w_r`, then dotted with the relation-attended
/// question summary.
pub fn relation_match_score(
    question_states: &Tensor,
    relation_states: &Tensor,
    w_r: &Tensor,
) -> Result<RelationScore> {
    let pooled = self_attentive_pool(relation_states, w_r).map_err(|e| match e {
        crate::nn::NnError::Tensor(t) => SubgraphError::Tensor(t),
        other => SubgraphError::Tensor(TensorError::NonFinite(other.to_string())),
    })?;
    let r = pooled.pooled;
    let beta = question_states.matvec(&r)?.softmax(0)?;
    let summary = question_states.transpose()?.matvec(&beta)?;
    let score = r.dot(&summary)?;
    Ok(RelationScore {
        vector: r,
        score,
        token_attention: pooled.weights.data().to_vec(),
        match_attention: beta.data().to_vec(),
    })
}

/// Attention over an entity's neighbors: softmax of the relation match
/// score plus a unit bonus for neighbors that are topic entities.
pub fn neighbor_attention(match_scores: &[Tensor], is_topic: &[bool]) -> Result<Tensor> {
    if match_scores.len() != is_topic.len() {
        return Err(SubgraphError::NeighborMismatch {
            scores: match_scores.len(),
            neighbors: is_topic.len(),
        });
    }
    let stacked = Tensor::concat(match_scores, 0)?;
    let indicator = Tensor::vector(
        is_topic
            .iter()
            .map(|&t| if t { 1.0 } else { 0.0 })
            .collect(),
    );
    Ok(stacked.add(&indicator)?.softmax(0)?)
}

pub struct PropagateOut {
    pub e_prime: Tensor,
    /// γ for this entity; `None` when there were no neighbors to gate.
    pub gate: Option<f64>,
    /// Neighbor attention weights, when neighbors exist.
    pub attention: Option<Vec<f64>>,
}

/// One propagation step for one entity. With no neighbors the entity vector
/// passes through unchanged (the same graph node).
pub fn propagate(
    entity: &Tensor,
    neighbors: &[(Tensor, Tensor)],
    match_scores: &[Tensor],
    is_topic: &[bool],
    transform: &Tensor,
    gate_weights: &Tensor,
) -> Result<PropagateOut> {
    if neighbors.is_empty() {
        return Ok(PropagateOut {
            e_prime: entity.clone(),
            gate: None,
            attention: None,
        });
    }
    if neighbors.len() != match_scores.len() {
        return Err(SubgraphError::NeighborMismatch {
            scores: match_scores.len(),
            neighbors: neighbors.len(),
        });
    }
    let attention = neighbor_attention(match_scores, is_topic)?;
    let messages: Vec<Tensor> = neighbors
        .iter()
        .map(|(r_vec, e_vec)| {
            Ok(transform
                .matvec(&Tensor::concat(&[r_vec.clone(), e_vec.clone()], 0)?)?
                .tanh())
        })
        .collect::<Result<_>>()?;
    let aggregate = Tensor::stack_rows(&messages)?
        .transpose()?
        .matvec(&attention)?;
    let gamma = gate_weights
        .dot(&Tensor::concat(&[entity.clone(), aggregate.clone()], 0)?)?
        .sigmoid();
    let residual = Tensor::scalar(1.0).sub(&gamma)?;
    let e_prime = entity
        .scale_by(&gamma)?
        .add(&aggregate.scale_by(&residual)?)?;
    Ok(PropagateOut {
        e_prime,
        gate: Some(gamma.data()[0]),
        attention: Some(attention.data().to_vec()),
    })
}

/// Per-entity knowledge plus the attention/gate values observed on the way.
pub struct SgOutputs {
    /// Entity id → e'.
    pub knowledge: BTreeMap<usize, Tensor>,
    /// Neighbor attention per entity with ≥1 neighbor, in entity order.
    pub neighbor_attention: Vec<Vec<f64>>,
    /// γ per entity with ≥1 neighbor, in entity order.
    pub gates: Vec<f64>,
}

/// Runs one propagation hop over every subgraph entity. Relation encodings
/// are computed by the caller once per distinct relation and shared here by
/// all edges carrying that relation.
pub fn read_subgraph(
    sg: &SubgraphInput,
    relation_scores: &BTreeMap<usize, RelationScore>,
    entity_vec: &mut dyn FnMut(usize) -> crate::tensor::Result<Tensor>,
    transform: &Tensor,
    gate_weights: &Tensor,
) -> Result<SgOutputs> {
    let mut knowledge = BTreeMap::new();
    let mut neighbor_attention = Vec::new();
    let mut gates = Vec::new();
    for (i, &e) in sg.entities.iter().enumerate() {
        let e_emb = entity_vec(e)?;
        let mut pairs = Vec::with_capacity(sg.neighbors[i].len());
        let mut scores = Vec::with_capacity(sg.neighbors[i].len());
        let mut topics = Vec::with_capacity(sg.neighbors[i].len());
        for n in &sg.neighbors[i] {
            let rel = relation_scores
                .get(&n.relation)
                .ok_or(SubgraphError::MissingRelation(n.relation))?;
            pairs.push((rel.vector.clone(), entity_vec(n.entity)?));
            scores.push(rel.score.clone());
            topics.push(sg.topics.contains(&n.entity));
        }
        let out = propagate(&e_emb, &pairs, &scores, &topics, transform, gate_weights)?;
        if let (Some(g), Some(a)) = (out.gate, out.attention) {
            gates.push(g);
            neighbor_attention.push(a);
        }
        knowledge.insert(e, out.e_prime);
    }
    Ok(SgOutputs {
        knowledge,
        neighbor_attention,
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn single_question_token_gives_direct_dot() {
        // With one question state, β = [1] and s_r = r · h_1.
        let q = Tensor::from_vec(vec![1, 3], vec![0.2, -0.5, 1.0]).unwrap();
        let rel = Tensor::from_vec(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let w_r = Tensor::zeros(vec![3]);
        let out = relation_match_score(&q, &rel, &w_r).unwrap();
        // Zero scoring vector → α uniform → r = (0.5, 0.5, 0).
        let want = 0.5 * 0.2 + 0.5 * -0.5;
        assert!(close(out.score.data()[0], want, 1e-12));
        assert_eq!(out.match_attention, vec![1.0]);
    }

    #[test]
    fn orthogonal_relation_scores_zero() {
        let q = Tensor::from_vec(
            vec![2, 4],
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let rel = Tensor::from_vec(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let w_r = Tensor::zeros(vec![4]);
        let out = relation_match_score(&q, &rel, &w_r).unwrap();
        assert!(close(out.score.data()[0], 0.0, 1e-12));
    }

    #[test]
    fn match_score_follows_two_stage_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 4;
        let qv = uniform_init(&mut rng, 3 * d, -1.0, 1.0);
        let rv = uniform_init(&mut rng, 2 * d, -1.0, 1.0);
        let wv = uniform_init(&mut rng, d, -1.0, 1.0);
        let q = Tensor::from_vec(vec![3, d], qv.clone()).unwrap();
        let rel = Tensor::from_vec(vec![2, d], rv.clone()).unwrap();
        let w_r = Tensor::vector(wv.clone());
        let got = relation_match_score(&q, &rel, &w_r).unwrap();

        // Plain-f64 reference, no tensor ops.
        let softmax = |xs: &[f64]| {
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let es: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = es.iter().sum();
            es.iter().map(|e| e / s).collect::<Vec<f64>>()
        };
        let alpha = softmax(
            &(0..2)
                .map(|i| (0..d).map(|k| wv[k] * rv[i * d + k]).sum())
                .collect::<Vec<f64>>(),
        );
        let r: Vec<f64> = (0..d)
            .map(|k| alpha[0] * rv[k] + alpha[1] * rv[d + k])
            .collect();
        let beta = softmax(
            &(0..3)
                .map(|j| (0..d).map(|k| r[k] * qv[j * d + k]).sum())
                .collect::<Vec<f64>>(),
        );
        let mut want = 0.0;
        for j in 0..3 {
            for k in 0..d {
                want += beta[j] * r[k] * qv[j * d + k];
            }
        }
        assert!(close(got.score.data()[0], want, 1e-12));
    }

    #[test]
    fn neighbor_attention_basics() {
        let one = neighbor_attention(&[Tensor::scalar(2.7)], &[false]).unwrap();
        assert_eq!(one.data(), &[1.0]);

        let scores: Vec<Tensor> = (0..4).map(|_| Tensor::scalar(0.3)).collect();
        let uniform = neighbor_attention(&scores, &[false; 4]).unwrap();
        for &w in uniform.data() {
            assert!(close(w, 0.25, 1e-12));
        }

        // Equal scores, one topic neighbor: softmax([s+1, s]).
        let pair: Vec<Tensor> = (0..2).map(|_| Tensor::scalar(0.3)).collect();
        let w = neighbor_attention(&pair, &[true, false]).unwrap();
        let e = 1.0_f64.exp();
        assert!(close(w.data()[0], e / (e + 1.0), 1e-9));
        assert!(close(w.data()[1], 1.0 / (e + 1.0), 1e-9));
    }

    #[test]
    fn topic_indicator_strictly_raises_weight() {
        let scores: Vec<Tensor> = [0.4, -0.2, 0.9].iter().map(|&s| Tensor::scalar(s)).collect();
        let without = neighbor_attention(&scores, &[false, false, false]).unwrap();
        let with = neighbor_attention(&scores, &[false, true, false]).unwrap();
        assert!(with.data()[1] > without.data()[1]);
    }

    #[test]
    fn neighbor_attention_is_permutation_equivariant() {
        let raw = [0.7, -0.4, 0.1, 1.2];
        let topic = [true, false, false, true];
        let scores: Vec<Tensor> = raw.iter().map(|&s| Tensor::scalar(s)).collect();
        let base = neighbor_attention(&scores, &topic).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pscores: Vec<Tensor> = perm.iter().map(|&i| Tensor::scalar(raw[i])).collect();
        let ptopic: Vec<bool> = perm.iter().map(|&i| topic[i]).collect();
        let permuted = neighbor_attention(&pscores, &ptopic).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            assert!(close(permuted.data()[slot], base.data()[src], 1e-12));
        }
    }

    #[test]
    fn propagate_without_neighbors_is_identity() {
        let e = Tensor::vector(vec![0.4, -0.7]);
        let out = propagate(
            &e,
            &[],
            &[],
            &[],
            &Tensor::zeros(vec![2, 4]),
            &Tensor::zeros(vec![4]),
        )
        .unwrap();
        assert_eq!(out.e_prime.node_id(), e.node_id());
        assert!(out.gate.is_none());
    }

    #[test]
    fn zero_gate_weights_mix_evenly() {
        let d = 2;
        let e = Tensor::vector(vec![1.0, -1.0]);
        let r = Tensor::vector(vec![0.5, 0.0]);
        let nb = Tensor::vector(vec![0.0, 0.5]);
        let transform = Tensor::from_vec(vec![d, 2 * d], vec![0.1; 8]).unwrap();
        let out = propagate(
            &e,
            &[(r.clone(), nb.clone())],
            &[Tensor::scalar(0.0)],
            &[false],
            &transform,
            &Tensor::zeros(vec![2 * d]),
        )
        .unwrap();
        assert!(close(out.gate.unwrap(), 0.5, 1e-12));
        // Single neighbor → attention 1 → aggregate = tanh(W [r; nb]).
        let agg = (0.1_f64 * (0.5 + 0.5)).tanh();
        assert!(close(out.e_prime.data()[0], 0.5 * 1.0 + 0.5 * agg, 1e-12));
        assert!(close(out.e_prime.data()[1], -0.5 + 0.5 * agg, 1e-12));
    }

    #[test]
    fn propagate_matches_scalar_unroll() {
        // Two neighbors, all values hand-propagated with plain f64.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = 3;
        let ev = uniform_init(&mut rng, d, -1.0, 1.0);
        let r1 = uniform_init(&mut rng, d, -1.0, 1.0);
        let n1 = uniform_init(&mut rng, d, -1.0, 1.0);
        let r2 = uniform_init(&mut rng, d, -1.0, 1.0);
        let n2 = uniform_init(&mut rng, d, -1.0, 1.0);
        let wv = uniform_init(&mut rng, d * 2 * d, -0.5, 0.5);
        let gv = uniform_init(&mut rng, 2 * d, -0.5, 0.5);
        let (s1, s2) = (0.8, -0.3);

        let out = propagate(
            &Tensor::vector(ev.clone()),
            &[
                (Tensor::vector(r1.clone()), Tensor::vector(n1.clone())),
                (Tensor::vector(r2.clone()), Tensor::vector(n2.clone())),
            ],
            &[Tensor::scalar(s1), Tensor::scalar(s2)],
            &[false, true],
            &Tensor::from_vec(vec![d, 2 * d], wv.clone()).unwrap(),
            &Tensor::vector(gv.clone()),
        )
        .unwrap();

        // Reference.
        let (a1, a2) = {
            let x1 = s1;
            let x2 = s2 + 1.0;
            let m = x1.max(x2);
            let (e1, e2) = ((x1 - m).exp(), (x2 - m).exp());
            (e1 / (e1 + e2), e2 / (e1 + e2))
        };
        let msg = |r: &[f64], n: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|i| {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += wv[i * 2 * d + k] * r[k];
                        acc += wv[i * 2 * d + d + k] * n[k];
                    }
                    acc.tanh()
                })
                .collect()
        };
        let (m1, m2) = (msg(&r1, &n1), msg(&r2, &n2));
        let agg: Vec<f64> = (0..d).map(|i| a1 * m1[i] + a2 * m2[i]).collect();
        let mut z = 0.0;
        for k in 0..d {
            z += gv[k] * ev[k] + gv[d + k] * agg[k];
        }
        let gamma = 1.0 / (1.0 + (-z).exp());
        for i in 0..d {
            let want = gamma * ev[i] + (1.0 - gamma) * agg[i];
            assert!(close(out.e_prime.data()[i], want, 1e-12));
        }
        assert!(close(out.gate.unwrap(), gamma, 1e-12));
    }

    #[test]
    fn propagate_stays_in_convex_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = 3;
            let e = Tensor::vector(uniform_init(&mut rng, d, -2.0, 2.0));
            let pairs = vec![(
                Tensor::vector(uniform_init(&mut rng, d, -2.0, 2.0)),
                Tensor::vector(uniform_init(&mut rng, d, -2.0, 2.0)),
            )];
            let out = propagate(
                &e,
                &pairs,
                &[Tensor::scalar(0.3)],
                &[false],
                &Tensor::from_vec(vec![d, 2 * d], uniform_init(&mut rng, 2 * d * d, -1.0, 1.0))
                    .unwrap(),
                &Tensor::vector(uniform_init(&mut rng, 2 * d, -1.0, 1.0)),
            )
            .unwrap();
            let g = out.gate.unwrap();
            assert!(g > 0.0 && g < 1.0);
            // The aggregate is tanh-bounded, so |e'|∞ ≤ max(|e|∞, 1).
            let e_max = e.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for v in out.e_prime.data() {
                assert!(v.abs() <= e_max.max(1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn read_subgraph_covers_every_entity() {
        // Entities 0-3; edges 0-1 (rel 0), 1-2 (rel 1); entity 3 isolated.
        let sg = SubgraphInput::build(
            &[0, 1, 2, 3],
            &[(0, 0, 1), (1, 1, 2)],
            &BTreeSet::from([0]),
            50,
        );
        assert_eq!(sg.relations, vec![0, 1]);

        let d = 2;
        let q = Tensor::from_vec(vec![2, d], vec![0.3, -0.1, 0.6, 0.2]).unwrap();
        let w_r = Tensor::vector(vec![0.2, -0.4]);
        let mut rels = BTreeMap::new();
        for rid in [0usize, 1] {
            let states =
                Tensor::from_vec(vec![1, d], vec![0.1 * (rid as f64 + 1.0), -0.2]).unwrap();
            rels.insert(rid, relation_match_score(&q, &states, &w_r).unwrap());
        }
        let transform = Tensor::from_vec(vec![d, 2 * d], vec![0.05; 8]).unwrap();
        let gate = Tensor::vector(vec![0.1, 0.2, -0.1, 0.3]);
        let mut embeds: BTreeMap<usize, Tensor> = BTreeMap::new();
        let mut lookup = |e: usize| -> crate::tensor::Result<Tensor> {
            Ok(embeds
                .entry(e)
                .or_insert_with(|| Tensor::vector(vec![e as f64 * 0.1, 0.5]))
                .clone())
        };
        let out = read_subgraph(&sg, &rels, &mut lookup, &transform, &gate).unwrap();
        assert_eq!(out.knowledge.len(), 4);
        // Isolated entity passes through bitwise.
        assert_eq!(out.knowledge[&3].data(), &[3.0 * 0.1, 0.5]);
        // Three entities have neighbors (0, 1, 2), so three gates.
        assert_eq!(out.gates.len(), 3);
        for g in &out.gates {
            assert!(*g > 0.0 && *g < 1.0);
        }
        for a in &out.neighbor_attention {
            let s: f64 = a.iter().sum();
            assert!(close(s, 1.0, 1e-9));
        }
    }

    #[test]
    fn shared_relations_reuse_one_score_node() {
        // Two edges with the same relation: both neighbor slots must point
        // at the same score tensor, not recomputed copies.
        let sg = SubgraphInput::build(
            &[0, 1, 2],
            &[(0, 0, 1), (0, 0, 2)],
            &BTreeSet::new(),
            50,
        );
        assert_eq!(sg.relations, vec![0]);
        assert_eq!(sg.neighbors[0].len(), 2);

        let q = Tensor::from_vec(vec![1, 2], vec![0.4, 0.1]).unwrap();
        let states = Tensor::from_vec(vec![1, 2], vec![0.2, -0.3]).unwrap();
        let mut rels = BTreeMap::new();
        rels.insert(0usize, relation_match_score(&q, &states, &Tensor::zeros(vec![2])).unwrap());
        let score_id = rels[&0].score.node_id();
        // The clone shares the node.
        assert_eq!(rels[&0].score.clone().node_id(), score_id);
    }

    #[test]
    fn neighbor_lists_are_capped_with_data_order() {
        let triples: Vec<(usize, usize, usize)> = (1..=6).map(|t| (0, 0, t)).collect();
        let sg = SubgraphInput::build(
            &[0, 1, 2, 3, 4, 5, 6],
            &triples,
            &BTreeSet::new(),
            4,
        );
        assert_eq!(sg.neighbors[0].len(), 4);
        let kept: Vec<usize> = sg.neighbors[0].iter().map(|n| n.entity).collect();
        assert_eq!(kept, vec![1, 2, 3, 4]);
    }

    #[test]
    fn missing_relation_encoding_is_reported() {
        let sg = SubgraphInput::build(&[0, 1], &[(0, 7, 1)], &BTreeSet::new(), 50);
        let rels = BTreeMap::new();
        let mut lookup = |_e: usize| Ok(Tensor::vector(vec![0.0, 0.0]));
        let err = read_subgraph(
            &sg,
            &rels,
            &mut lookup,
            &Tensor::zeros(vec![2, 4]),
            &Tensor::zeros(vec![4]),
        )
        .err()
        .unwrap();
        assert!(matches!(err, SubgraphError::MissingRelation(7)));
    }

    #[test]
    fn propagate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let d = 3;
        let wv = uniform_init(&mut rng, 2 * d * d, -0.5, 0.5);
        let gv = uniform_init(&mut rng, 2 * d, -0.5, 0.5);
        let ev = uniform_init(&mut rng, d, -1.0, 1.0);
        let r1 = uniform_init(&mut rng, d, -1.0, 1.0);
        let n1 = uniform_init(&mut rng, d, -1.0, 1.0);

        let eval = |wv: &[f64], gv: &[f64], grad: bool| -> (f64, Vec<Vec<f64>>) {
            let w = Tensor::param(vec![d, 2 * d], wv.to_vec()).unwrap();
            let g = Tensor::param(vec![2 * d], gv.to_vec()).unwrap();
            let out = propagate(
                &Tensor::vector(ev.clone()),
                &[(Tensor::vector(r1.clone()), Tensor::vector(n1.clone()))],
                &[Tensor::scalar(0.4)],
                &[true],
                &w,
                &g,
            )
            .unwrap();
            let loss = out.e_prime.tanh().sum_all();
            let v = loss.item().unwrap();
            if grad {
                loss.backward().unwrap();
                (v, vec![w.grad().unwrap(), g.grad().unwrap()])
            } else {
                (v, vec![])
            }
        };
        let (_, analytic) = eval(&wv, &gv, true);
        let h = 1e-5;
        let mut wv2 = wv.clone();
        for i in 0..wv.len() {
            let orig = wv2[i];
            wv2[i] = orig + h;
            let up = eval(&wv2, &gv, false).0;
            wv2[i] = orig - h;
            let down = eval(&wv2, &gv, false).0;
            wv2[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[0][i] - numeric).abs()
                / 1.0_f64.max(analytic[0][i].abs() + numeric.abs());
            assert!(rel < 1e-6, "transform[{i}]");
        }
        let mut gv2 = gv.clone();
        for i in 0..gv.len() {
            let orig = gv2[i];
            gv2[i] = orig + h;
            let up = eval(&wv, &gv2, false).0;
            gv2[i] = orig - h;
            let down = eval(&wv, &gv2, false).0;
            gv2[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[1][i] - numeric).abs()
                / 1.0_f64.max(analytic[1][i].abs() + numeric.abs());
            assert!(rel < 1e-6, "gate[{i}]");
        }
    }
}
