//! Synthetic corpus generation.
//!
//! Builds a knowledge graph over a closed entity set, phrases one question
//! per sampled (subject, relation) pair, and writes one short document per
//! triple so every answer is recoverable from text even when the graph
//! given to retrieval is heavily downsampled. Gold answers come from the
//! full graph, so they stay correct at every downsampling level.
//!
//! The graph is not uniform noise: entities sit on distinct cells of a
//! small integer lattice and each relation acts as a fixed lattice offset,
//! with triples sampled from the pairs that geometry admits. Real
//! knowledge bases have exactly this kind of regularity (types, hierarchies,
//! communities) — it is what makes precomputed graph embeddings informative
//! — and a uniformly random graph would deny the embeddings anything to
//! learn.
//!
//! Two generation runs with the same options are identical. Downsampling
//! draws from its own RNG stream, so changing only `kb_fraction` keeps the
//! questions and documents fixed and changes nothing but the subgraphs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Document, RawExample};
use super::graph::extract_subgraph;
use super::kge::{train_kg_embeddings, KgeOptions};
use super::ppr::{personalized_pagerank, PprOptions};
use super::{DataError, KnowledgeGraph, Result};

/// Base relation inventory. Names double as surface text: the underscores
/// are split into words when a relation is verbalized.
pub const RELATIONS: [&str; 24] = [
    "born_in",
    "located_in",
    "works_for",
    "married_to",
    "founded_by",
    "plays_for",
    "member_of",
    "author_of",
    "capital_of",
    "part_of",
    "lives_in",
    "studied_at",
    "directed_by",
    "composed_by",
    "discovered_by",
    "named_after",
    "borders_on",
    "flows_through",
    "produced_by",
    "owned_by",
    "reports_to",
    "derived_from",
    "belongs_to",
    "traded_with",
];

/// Qualifiers prepended to base names once the inventory above runs out,
/// e.g. `formerly_born_in`.
const QUALIFIERS: [&str; 10] = [
    "formerly",
    "currently",
    "reportedly",
    "officially",
    "historically",
    "originally",
    "locally",
    "briefly",
    "primarily",
    "jointly",
];

/// All cells of a `side`^`dim` integer lattice, coordinates `0..side`.
fn lattice_cells(side: i64, dim: u32) -> Vec<Vec<i64>> {
    let mut cells: Vec<Vec<i64>> = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(cells.len() * side as usize);
        for cell in &cells {
            for x in 0..side {
                let mut c = cell.clone();
                c.push(x);
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

/// The `count` distinct relation names the generator can hand out.
pub fn relation_names(count: usize) -> Result<Vec<String>> {
    let available = RELATIONS.len() * (1 + QUALIFIERS.len());
    if count == 0 {
        return Err(DataError::EmptyWorld { what: "relations" });
    }
    if count > available {
        return Err(DataError::TooManyRelations { count, available });
    }
    Ok((0..count)
        .map(|i| {
            let base = RELATIONS[i % RELATIONS.len()];
            match i / RELATIONS.len() {
                0 => base.to_string(),
                q => format!("{}_{base}", QUALIFIERS[q - 1]),
            }
        })
        .collect())
}

/// Words of a relation's surface form.
pub fn relation_tokens(name: &str) -> Vec<String> {
    name.split('_').map(str::to_string).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldOptions {
    pub entities: usize,
    pub triples: usize,
    /// Distinct relations. Sparser relations make subgraph evidence
    /// sharper: fewer same-relation edges compete inside each subgraph.
    pub relations: usize,
    pub questions: usize,
    /// Fraction of triples retrieval sees (gold answers use all of them).
    pub kb_fraction: f64,
    /// Retrieval keeps at most this many entities per question.
    pub subgraph_size: usize,
    /// Distractor documents added per question.
    pub extra_docs: usize,
    /// Document budget per question; answer-bearing documents survive first.
    pub max_docs: usize,
    /// Width of the entity vectors precomputed on the retrieval graph.
    pub entity_dim: usize,
    pub seed: u64,
}

impl Default for WorldOptions {
    fn default() -> Self {
        WorldOptions {
            entities: 150,
            triples: 600,
            relations: 40,
            questions: 300,
            kb_fraction: 0.3,
            subgraph_size: 50,
            extra_docs: 2,
            max_docs: 12,
            entity_dim: 100,
            seed: 7,
        }
    }
}

#[derive(Debug)]
pub struct GeneratedWorld {
    /// Ground-truth graph the questions are asked about.
    pub full: KnowledgeGraph,
    /// What retrieval sees: the full graph minus dropped triples.
    pub kb: KnowledgeGraph,
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub test: Vec<RawExample>,
    /// Translation-based vectors trained on `kb` only — dropped triples
    /// leave no trace in them. Indexed like the graph's entities.
    pub entity_vectors: Vec<Vec<f64>>,
    /// Questions dropped because no candidate pool covered their answers.
    pub discarded: usize,
}

pub fn generate_world(opts: &WorldOptions) -> Result<GeneratedWorld> {
    if opts.entities < 2 {
        return Err(DataError::EmptyWorld { what: "entities" });
    }
    for (value, what) in [
        (opts.triples, "triples"),
        (opts.questions, "questions"),
        (opts.subgraph_size, "subgraph_size"),
        (opts.max_docs, "max_docs"),
    ] {
        if value == 0 {
            return Err(DataError::EmptyWorld { what });
        }
    }
    if !(opts.kb_fraction > 0.0 && opts.kb_fraction <= 1.0) {
        return Err(DataError::BadKbFraction(opts.kb_fraction));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Ground-truth graph. Entities occupy distinct cells of an integer
    // lattice and every relation is a fixed offset on it; a triple
    // (h, r, t) is admissible exactly when t's cell is h's cell shifted by
    // r's offset. The requested number of triples is sampled from the
    // admissible set.
    let mut full = KnowledgeGraph::new();
    for i in 0..opts.entities {
        full.add_entity(&format!("ent{i:03}"));
    }
    let relation_pool = relation_names(opts.relations)?;
    for r in &relation_pool {
        full.add_relation(r);
    }

    let lattice_dim: u32 = if opts.entities <= 100 { 3 } else { 4 };
    let offset_pool = 5usize.pow(lattice_dim) - 1;
    if relation_pool.len() > offset_pool {
        return Err(DataError::TooManyRelationOffsets {
            count: relation_pool.len(),
            dims: lattice_dim,
            available: offset_pool,
        });
    }
    // Smallest side that leaves at least 30% of cells empty, so offsets
    // still land on vacancies and the geometry stays irregular.
    let mut side: i64 = 2;
    while (side.pow(lattice_dim) as usize) * 7 < opts.entities * 10 {
        side += 1;
    }
    let mut cells: Vec<Vec<i64>> = lattice_cells(side, lattice_dim);
    cells.shuffle(&mut rng);
    cells.truncate(opts.entities);
    let occupied: BTreeMap<Vec<i64>, usize> =
        cells.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();

    let mut offsets: Vec<Vec<i64>> = lattice_cells(5, lattice_dim)
        .into_iter()
        .map(|c| c.into_iter().map(|x| x - 2).collect::<Vec<i64>>())
        .filter(|c| c.iter().any(|&x| x != 0))
        .collect();
    offsets.shuffle(&mut rng);
    offsets.truncate(relation_pool.len());

    let mut admissible: Vec<(usize, usize, usize)> = Vec::new();
    for (h, cell) in cells.iter().enumerate() {
        for (r, offset) in offsets.iter().enumerate() {
            let target: Vec<i64> = cell.iter().zip(offset).map(|(c, o)| c + o).collect();
            if let Some(&t) = occupied.get(&target) {
                admissible.push((h, r, t));
            }
        }
    }
    if admissible.len() < opts.triples {
        return Err(DataError::TriplesDoNotFit {
            requested: opts.triples,
            placed: admissible.len(),
        });
    }
    admissible.shuffle(&mut rng);
    admissible.truncate(opts.triples);
    admissible.sort_unstable();
    for &(h, r, t) in &admissible {
        full.add_triple(h, r, t)?;
    }

    // One document per ground-truth triple: "<head> <relation words> <tail>".
    let documents: Vec<Document> = full
        .triples()
        .iter()
        .enumerate()
        .map(|(i, &(h, r, t))| {
            let mut tokens = vec![full.entity_name(h).to_string()];
            tokens.extend(relation_tokens(full.relation_name(r)));
            tokens.push(full.entity_name(t).to_string());
            let last = tokens.len();
            Document {
                id: i,
                tokens,
                entity_spans: vec![
                    (0, 1, full.entity_name(h).to_string()),
                    (last - 1, last, full.entity_name(t).to_string()),
                ],
            }
        })
        .collect();

    // Question pool: every (subject, relation) pair with at least one object.
    let mut pool: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for &(h, r, t) in full.triples() {
        pool.entry((h, r)).or_default().push(t);
    }
    if pool.len() < opts.questions {
        return Err(DataError::NotEnoughQuestions {
            requested: opts.questions,
            available: pool.len(),
        });
    }
    let mut keys: Vec<(usize, usize)> = pool.keys().copied().collect();
    keys.shuffle(&mut rng);
    keys.truncate(opts.questions);

    // Downsampling uses its own stream so only the subgraphs change when
    // kb_fraction does.
    let mut kb_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let kb = full.downsample(opts.kb_fraction, &mut kb_rng)?;

    let ppr_opts = PprOptions::default();
    let mut kept: Vec<RawExample> = Vec::with_capacity(keys.len());
    let mut discarded = 0;
    for &(subject, relation) in &keys {
        let mut answers: Vec<usize> = pool[&(subject, relation)].clone();
        answers.sort_unstable();

        let walk = personalized_pagerank(&kb, &[subject], &ppr_opts)?;
        let sg = extract_subgraph(&kb, &walk.scores, &[subject], opts.subgraph_size)?;

        // Documents: answer-bearing first, then other subject mentions, then
        // random distractors; the budget cuts from the back.
        let mut chosen: Vec<usize> = Vec::new();
        let mut in_chosen: HashSet<usize> = HashSet::new();
        for (i, &(h, r, _)) in full.triples().iter().enumerate() {
            if h == subject && r == relation {
                chosen.push(i);
                in_chosen.insert(i);
            }
        }
        for (i, &(h, _, _)) in full.triples().iter().enumerate() {
            if h == subject && !in_chosen.contains(&i) {
                chosen.push(i);
                in_chosen.insert(i);
            }
        }
        let mut extras = 0;
        let mut extra_attempts = 0;
        while extras < opts.extra_docs && extra_attempts < 50 * (opts.extra_docs + 1) {
            extra_attempts += 1;
            let i = rng.gen_range(0..documents.len());
            if in_chosen.insert(i) {
                chosen.push(i);
                extras += 1;
            }
        }
        chosen.truncate(opts.max_docs);
        let docs: Vec<Document> = chosen.iter().map(|&i| documents[i].clone()).collect();

        let mut candidate_ids: BTreeSet<usize> = sg.entities.iter().copied().collect();
        for d in &docs {
            for (_, _, name) in &d.entity_spans {
                candidate_ids.insert(full.entity_id(name).expect("documents use known entities"));
            }
        }
        if !answers.iter().all(|a| candidate_ids.contains(a)) {
            discarded += 1;
            continue;
        }

        let mut question = relation_tokens(full.relation_name(relation));
        question.push("of".to_string());
        question.push(full.entity_name(subject).to_string());
        question.push("?".to_string());

        kept.push(RawExample {
            id: format!("q{:04}", kept.len()),
            question,
            topic_entities: vec![full.entity_name(subject).to_string()],
            answers: answers.iter().map(|&a| full.entity_name(a).to_string()).collect(),
            subgraph_entities: sg
                .entities
                .iter()
                .map(|&e| full.entity_name(e).to_string())
                .collect(),
            subgraph_triples: sg
                .triples
                .iter()
                .map(|&(h, r, t)| {
                    (
                        full.entity_name(h).to_string(),
                        full.relation_name(r).to_string(),
                        full.entity_name(t).to_string(),
                    )
                })
                .collect(),
            documents: docs,
            candidates: candidate_ids
                .iter()
                .map(|&c| full.entity_name(c).to_string())
                .collect(),
        });
    }

    // Position split: the question order is already shuffled.
    let n = kept.len();
    let n_train = n * 70 / 100;
    let n_dev = n * 15 / 100;
    let test = kept.split_off(n_train + n_dev);
    let dev = kept.split_off(n_train);

    let entity_vectors = train_kg_embeddings(
        &kb,
        &KgeOptions {
            dim: opts.entity_dim,
            seed: opts.seed.wrapping_add(2),
            ..KgeOptions::default()
        },
    )?;

    Ok(GeneratedWorld {
        full,
        kb,
        train: kept,
        dev,
        test,
        entity_vectors,
        discarded,
    })
}
