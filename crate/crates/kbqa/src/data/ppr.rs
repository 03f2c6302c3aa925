//! Personalized PageRank over the undirected view of a knowledge graph.
//!
//! The walk treats every triple as a bidirectional edge (parallel edges
//! count separately) and restarts at a uniform distribution over the seed
//! entities. Mass sitting on degree-zero entities cannot move along edges,
//! so it is redirected to the restart distribution, keeping total mass at 1.

use super::{DataError, KnowledgeGraph, Result};

#[derive(Debug, Clone)]
pub struct PprOptions {
    /// Probability of jumping back to the seeds at each step.
    pub restart: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the L1 change between iterations.
    pub tolerance: f64,
}

impl Default for PprOptions {
    fn default() -> Self {
        // The L1 error contracts by roughly (1 - restart) per iteration,
        // so 0.85^500 leaves plenty of headroom below the tolerance.
        PprOptions {
            restart: 0.15,
            max_iterations: 500,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PprResult {
    /// Stationary probability per entity id; sums to 1.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from a uniform distribution over `seeds` until the L1
/// change drops below tolerance or the iteration budget runs out.
pub fn personalized_pagerank(
    graph: &KnowledgeGraph,
    seeds: &[usize],
    opts: &PprOptions,
) -> Result<PprResult> {
    let n = graph.num_entities();
    if seeds.is_empty() {
        return Err(DataError::EmptySeeds);
    }
    for &s in seeds {
        if s >= n {
            return Err(DataError::EntityOutOfBounds { id: s, entities: n });
        }
    }

    let mut restart_dist = vec![0.0; n];
    for &s in seeds {
        restart_dist[s] += 1.0 / seeds.len() as f64;
    }

    let mut p = restart_dist.clone();
    let mut next = vec![0.0; n];
    for iter in 1..=opts.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut dangling = 0.0;
        for (u, &mass) in p.iter().enumerate() {
            let deg = graph.degree(u);
            if deg == 0 {
                dangling += mass;
                continue;
            }
            let share = mass / deg as f64;
            for nb in graph.neighbors(u) {
                next[nb.other] += share;
            }
        }
        let mut diff = 0.0;
        for v in 0..n {
            let value =
                opts.restart * restart_dist[v] + (1.0 - opts.restart) * (next[v] + dangling * restart_dist[v]);
            diff += (value - p[v]).abs();
            next[v] = value;
        }
        std::mem::swap(&mut p, &mut next);
        if diff < opts.tolerance {
            return Ok(PprResult {
                scores: p,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(PprResult {
        scores: p,
        iterations: opts.max_iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_entity("a");
        g.add_entity("b");
        let r = g.add_relation("linked_to");
        g.add_triple(0, r, 1).unwrap();
        g
    }

    #[test]
    fn two_node_fixed_point_matches_closed_form() {
        // p_a = r + (1-r) p_b and p_b = (1-r) p_a give
        // p_a = r / (1 - (1-r)^2).
        let g = pair();
        let res = personalized_pagerank(&g, &[0], &PprOptions::default()).unwrap();
        assert!(res.converged);
        let r = 0.15;
        let pa = r / (1.0 - (1.0 - r) * (1.0 - r));
        let pb = (1.0 - r) * pa;
        assert!((res.scores[0] - pa).abs() < 1e-8, "{} vs {pa}", res.scores[0]);
        assert!((res.scores[1] - pb).abs() < 1e-8);
    }

    #[test]
    fn mass_is_conserved() {
        let mut g = KnowledgeGraph::new();
        for i in 0..6 {
            g.add_entity(&format!("e{i}"));
        }
        let r = g.add_relation("linked_to");
        for (h, t) in [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4)] {
            g.add_triple(h, r, t).unwrap();
        }
        // Entity 5 is isolated; seeds include it so dangling mass recycles.
        let res = personalized_pagerank(&g, &[0, 5], &PprOptions::default()).unwrap();
        let total: f64 = res.scores.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
        assert!(res.converged);
    }

    #[test]
    fn symmetric_graph_gives_symmetric_scores() {
        // Path e0 - e1 - e2 seeded at the middle.
        let mut g = KnowledgeGraph::new();
        for i in 0..3 {
            g.add_entity(&format!("e{i}"));
        }
        let r = g.add_relation("linked_to");
        g.add_triple(0, r, 1).unwrap();
        g.add_triple(1, r, 2).unwrap();
        let res = personalized_pagerank(&g, &[1], &PprOptions::default()).unwrap();
        assert!((res.scores[0] - res.scores[2]).abs() < 1e-12);
        assert!(res.scores[1] > res.scores[0]);
    }

    #[test]
    fn isolated_seed_keeps_all_mass() {
        let mut g = KnowledgeGraph::new();
        g.add_entity("alone");
        g.add_entity("other");
        let res = personalized_pagerank(&g, &[0], &PprOptions::default()).unwrap();
        assert_eq!(res.scores[0], 1.0);
        assert_eq!(res.scores[1], 0.0);
        assert!(res.converged);
    }

    #[test]
    fn iteration_budget_is_reported() {
        let g = pair();
        let opts = PprOptions {
            tolerance: 0.0,
            max_iterations: 3,
            ..PprOptions::default()
        };
        let res = personalized_pagerank(&g, &[0], &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
    }

    #[test]
    fn seed_validation() {
        let g = pair();
        assert!(matches!(
            personalized_pagerank(&g, &[], &PprOptions::default()),
            Err(DataError::EmptySeeds)
        ));
        assert!(matches!(
            personalized_pagerank(&g, &[9], &PprOptions::default()),
            Err(DataError::EntityOutOfBounds { .. })
        ));
    }
}
