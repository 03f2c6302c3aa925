//! Translation-based knowledge graph embeddings.
//!
//! Trains entity and relation vectors on a graph so that head + relation ≈
//! tail, with margin ranking against corrupted triples. The generator runs
//! this on the graph retrieval sees and ships the entity vectors with the
//! dataset; the model can then start from structure-aware entity features
//! instead of random ones, the way large-scale QA systems consume
//! embeddings precomputed on their knowledge base. Edges absent from the
//! given graph never influence the vectors, so downsampled worlds stay
//! honest: dropped facts are not smuggled in through geometry.
//!
//! Entity norms are clamped to `norm_clamp` during training rather than
//! projected onto the unit sphere: translations need room, and a hard unit
//! norm erases most of the structure a translation-consistent graph offers.
//! The finished table is rescaled so the largest entity norm is 1.0, which
//! keeps the downstream feature scale predictable without touching the
//! relative geometry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, KnowledgeGraph, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgeOptions {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Corrupted samples drawn per triple per epoch.
    pub negatives: usize,
    /// Entity norms are clamped here during training.
    pub norm_clamp: f64,
    pub seed: u64,
}

impl Default for KgeOptions {
    fn default() -> Self {
        KgeOptions {
            dim: 100,
            epochs: 2000,
            learning_rate: 0.03,
            margin: 1.0,
            negatives: 2,
            norm_clamp: 3.0,
            seed: 7,
        }
    }
}

/// Entity vectors indexed like the graph's entities, rescaled so the
/// largest norm is 1.0. Entities with no triples keep their random
/// initialization, which is all the graph knows about them.
pub fn train_kg_embeddings(graph: &KnowledgeGraph, opts: &KgeOptions) -> Result<Vec<Vec<f64>>> {
    Ok(train_translations(graph, opts)?.0)
}

/// Full training output: entity vectors plus the relation translations
/// learned alongside them. The public entry point discards the relations
/// because downstream consumers only embed entities, but ranking checks
/// need both halves of the model.
fn train_translations(
    graph: &KnowledgeGraph,
    opts: &KgeOptions,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if opts.dim == 0 {
        return Err(DataError::EmptyWorld { what: "kge dim" });
    }
    if !(opts.norm_clamp > 0.0) {
        return Err(DataError::BadNormClamp(opts.norm_clamp));
    }
    let n = graph.num_entities();
    let r = graph.relations().len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let bound = 6.0 / (opts.dim as f64).sqrt();
    let mut init = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..opts.dim).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect()
    };
    let mut entities = init(n);
    let mut relations = init(r);
    if n == 0 || graph.triples().is_empty() {
        rescale_to_unit_max(&mut entities, &mut relations);
        return Ok((entities, relations));
    }

    let mut order: Vec<usize> = (0..graph.triples().len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for &ti in &order {
            let (h, rel, t) = graph.triples()[ti];
            for _ in 0..opts.negatives {
                // Corrupt one endpoint uniformly.
                let (ch, ct) = if rng.gen_bool(0.5) {
                    (rng.gen_range(0..n), t)
                } else {
                    (h, rng.gen_range(0..n))
                };
                let pos = score(&entities[h], &relations[rel], &entities[t]);
                let neg = score(&entities[ch], &relations[rel], &entities[ct]);
                if pos + opts.margin <= neg {
                    continue;
                }
                // d(h,r,t) = ||h + r - t||²; descend the margin loss.
                let lr = opts.learning_rate;
                for i in 0..opts.dim {
                    let gp = 2.0 * (entities[h][i] + relations[rel][i] - entities[t][i]);
                    let gn = 2.0 * (entities[ch][i] + relations[rel][i] - entities[ct][i]);
                    entities[h][i] -= lr * gp;
                    entities[t][i] += lr * gp;
                    relations[rel][i] -= lr * (gp - gn);
                    entities[ch][i] += lr * gn;
                    entities[ct][i] -= lr * gn;
                }
                for e in [h, t, ch, ct] {
                    clamp_norm(&mut entities[e], opts.norm_clamp);
                }
            }
        }
    }
    rescale_to_unit_max(&mut entities, &mut relations);
    Ok((entities, relations))
}

fn score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clamp_norm(v: &mut [f64], max: f64) {
    let n = norm(v);
    if n > max {
        let s = max / n;
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

/// Divide both tables by the largest entity norm so the biggest entity
/// vector lands on the unit sphere. One shared factor keeps every
/// `h + r - t` residual proportional, so rankings are unchanged.
fn rescale_to_unit_max(entities: &mut [Vec<f64>], relations: &mut [Vec<f64>]) {
    let max = entities.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if max > 0.0 {
        for v in entities.iter_mut().chain(relations.iter_mut()) {
            for x in v.iter_mut() {
                *x /= max;
            }
        }
    }
}
