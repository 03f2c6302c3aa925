//! Knowledge graph storage and question-specific subgraph selection.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

/// An edge incident to an entity, as seen from that entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub relation: usize,
    pub other: usize,
    /// True when this entity is the head of the underlying triple.
    pub outgoing: bool,
}

/// Entities, relations, and (head, relation, tail) triples with integer ids.
/// Ids are assigned in insertion order and triples keep insertion order, so
/// identical build sequences produce identical graphs.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, usize>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    triples: Vec<(usize, usize, usize)>,
    triple_set: HashSet<(usize, usize, usize)>,
    adjacency: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    pub fn new() -> KnowledgeGraph {
        KnowledgeGraph::default()
    }

    /// Returns the id of `name`, creating the entity if needed.
    pub fn add_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        self.adjacency.push(Vec::new());
        id
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entities[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn contains_triple(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.triple_set.contains(&(head, relation, tail))
    }

    /// Adds a triple by id. Duplicates are rejected so edge multiplicity
    /// stays meaningful for the random walk.
    pub fn add_triple(&mut self, head: usize, relation: usize, tail: usize) -> Result<()> {
        let n = self.entities.len();
        for id in [head, tail] {
            if id >= n {
                return Err(DataError::EntityOutOfBounds { id, entities: n });
            }
        }
        if relation >= self.relations.len() {
            return Err(DataError::UnknownRelation(format!("#{relation}")));
        }
        if !self.triple_set.insert((head, relation, tail)) {
            return Err(DataError::DuplicateTriple {
                head: self.entities[head].clone(),
                relation: self.relations[relation].clone(),
                tail: self.entities[tail].clone(),
            });
        }
        self.triples.push((head, relation, tail));
        self.adjacency[head].push(Neighbor {
            relation,
            other: tail,
            outgoing: true,
        });
        self.adjacency[tail].push(Neighbor {
            relation,
            other: head,
            outgoing: false,
        });
        Ok(())
    }

    /// Edges incident to `entity` (both directions), in insertion order.
    pub fn neighbors(&self, entity: usize) -> &[Neighbor] {
        &self.adjacency[entity]
    }

    /// Undirected degree (each incident triple counts once per endpoint).
    pub fn degree(&self, entity: usize) -> usize {
        self.adjacency[entity].len()
    }

    /// A copy of this graph keeping a random `fraction` of the triples
    /// (rounded down) and the full entity/relation vocabulary. Surviving
    /// triples keep their original relative order.
    pub fn downsample(&self, fraction: f64, rng: &mut ChaCha8Rng) -> Result<KnowledgeGraph> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DataError::BadKbFraction(fraction));
        }
        let keep = (fraction * self.triples.len() as f64).floor() as usize;
        let mut indices: Vec<usize> = (0..self.triples.len()).collect();
        indices.shuffle(rng);
        indices.truncate(keep);
        indices.sort_unstable();

        let mut out = KnowledgeGraph::new();
        for name in &self.entities {
            out.add_entity(name);
        }
        for name in &self.relations {
            out.add_relation(name);
        }
        for i in indices {
            let (h, r, t) = self.triples[i];
            out.add_triple(h, r, t).expect("source triples are distinct");
        }
        Ok(out)
    }
}

/// A question-specific slice of the graph: the retained entity ids and the
/// triples they induce, all in global id space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub entities: Vec<usize>,
    pub triples: Vec<(usize, usize, usize)>,
}

/// Keeps the seed entities plus the highest-scoring others (score descending,
/// id ascending on ties), up to `top_k` total; entities the walk never
/// reached are left out. The subgraph contains every triple of `graph` whose
/// endpoints both survive, in original order.
pub fn extract_subgraph(
    graph: &KnowledgeGraph,
    scores: &[f64],
    seeds: &[usize],
    top_k: usize,
) -> Result<Subgraph> {
    if top_k < seeds.len() {
        return Err(DataError::SubgraphTooSmall {
            top_k,
            seeds: seeds.len(),
        });
    }
    let seed_set: HashSet<usize> = seeds.iter().copied().collect();
    for &s in seeds {
        if s >= graph.num_entities() {
            return Err(DataError::EntityOutOfBounds {
                id: s,
                entities: graph.num_entities(),
            });
        }
    }

    let mut ranked: Vec<usize> = (0..graph.num_entities())
        .filter(|e| scores[*e] > 0.0 && !seed_set.contains(e))
        .collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });

    let mut entities: Vec<usize> = seed_set.iter().copied().collect();
    entities.sort_unstable();
    for e in ranked {
        if entities.len() >= top_k {
            break;
        }
        entities.push(e);
    }
    let kept: HashSet<usize> = entities.iter().copied().collect();
    let triples: Vec<(usize, usize, usize)> = graph
        .triples()
        .iter()
        .copied()
        .filter(|(h, _, t)| kept.contains(h) && kept.contains(t))
        .collect();
    Ok(Subgraph { entities, triples })
}
