//! The full question-answering model: a graph reader that builds per-entity
//! knowledge from the retrieved subgraph, a text reader that folds that
//! knowledge into document encodings through a question-conditioned gate,
//! and a scoring head matching every candidate against the reformulated
//! query. One `Model` owns the parameter store; each forward pass runs
//! against a `Binding` so batched examples accumulate gradients together.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Ablation, ConfigError, ModelConfig};
use crate::data::{Document, KnowledgeGraph, RawExample};
use crate::nn::{
    self_attentive_pool, register_bilstm, register_lstm, truncate_ids, uniform_init, BiLstm,
    LstmWeights, NnError, Runtime,
};
use crate::params::{Binding, ParamError, ParamStore};
use crate::scorer::{score_answers, score_answers_kb, ScorerError};
use crate::subgraph::{read_subgraph, relation_match_score, RelationScore, SubgraphError, SubgraphInput};
use crate::tensor::{Tensor, TensorError};
use crate::text::{
    encode_document, mean_vectors, reformulate_query, DocToken, TextError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("example {example}: unknown entity {name:?}")]
    UnknownEntity { example: String, name: String },
    #[error("example {example}: unknown relation {name:?}")]
    UnknownRelation { example: String, name: String },
    #[error("example {example}: empty question")]
    EmptyQuestion { example: String },
    #[error("example {example}: document {doc} has no tokens")]
    EmptyDocument { example: String, doc: usize },
    #[error("{table} vector for {name:?} has {got} values; the table holds rows of {want}")]
    VectorDim {
        table: &'static str,
        name: String,
        got: usize,
        want: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Subgraph(#[from] SubgraphError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Word vocabulary with id 0 reserved for unknown tokens. Built from a
/// sorted set of distinct words, so identical corpora give identical ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: usize = 0;

impl Vocab {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Vocab {
        let distinct: BTreeSet<&str> = tokens.into_iter().collect();
        let mut words = vec!["<unk>".to_string()];
        words.extend(distinct.into_iter().filter(|w| *w != "<unk>").map(String::from));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    /// Every word in the dataset: question and document tokens from all
    /// splits plus the relation-name words.
    pub fn from_dataset(splits: &[&[RawExample]], graph: &KnowledgeGraph) -> Vocab {
        let mut tokens: BTreeSet<&str> = BTreeSet::new();
        for split in splits {
            for ex in *split {
                tokens.extend(ex.question.iter().map(String::as_str));
                for doc in &ex.documents {
                    tokens.extend(doc.tokens.iter().map(String::as_str));
                }
            }
        }
        let rel_words: Vec<String> = graph
            .relations()
            .iter()
            .flat_map(|r| tokenize_relation(r))
            .collect();
        tokens.extend(rel_words.iter().map(String::as_str));
        Vocab::build(tokens)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Splits a relation name into its word tokens on non-alphanumeric
/// separators ("born_in" → ["born", "in"]).
pub fn tokenize_relation(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// A document after id resolution and truncation: per-token word ids,
/// entity links, and the two scalar features (exact match, term frequency).
#[derive(Debug, Clone)]
pub struct PreparedDoc {
    pub id: usize,
    pub word_ids: Vec<usize>,
    pub entity_link: Vec<Option<usize>>,
    pub exact_match: Vec<f64>,
    pub term_freq: Vec<f64>,
    /// Distinct entities linked anywhere in the kept window.
    pub entities: BTreeSet<usize>,
}

/// An example with every name resolved to ids and inputs capped to the
/// configured lengths, ready for the forward pass.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub id: String,
    pub question_ids: Vec<usize>,
    pub topics: BTreeSet<usize>,
    pub gold: BTreeSet<usize>,
    pub sg: SubgraphInput,
    /// Sorted by document id.
    pub docs: Vec<PreparedDoc>,
    /// Sorted candidate entity ids.
    pub candidates: Vec<usize>,
}

fn prepare_doc(
    doc: &Document,
    question_words: &BTreeSet<&str>,
    vocab: &Vocab,
    graph: &KnowledgeGraph,
    max_len: usize,
    example: &str,
) -> Result<PreparedDoc> {
    if doc.tokens.is_empty() {
        return Err(ModelError::EmptyDocument {
            example: example.to_string(),
            doc: doc.id,
        });
    }
    let kept = doc.tokens.len().min(max_len);
    if kept < doc.tokens.len() {
        log::warn!(
            "example {example}: document {} truncated from {} to {kept} tokens",
            doc.id,
            doc.tokens.len()
        );
    }
    let tokens = &doc.tokens[..kept];
    let word_ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let exact_match: Vec<f64> = tokens
        .iter()
        .map(|t| if question_words.contains(t.as_str()) { 1.0 } else { 0.0 })
        .collect();
    let term_freq: Vec<f64> = tokens
        .iter()
        .map(|t| counts[t.as_str()] as f64 / kept as f64)
        .collect();
    let mut entity_link = vec![None; kept];
    let mut entities = BTreeSet::new();
    for (start, end, name) in &doc.entity_spans {
        let id = graph.entity_id(name).ok_or_else(|| ModelError::UnknownEntity {
            example: example.to_string(),
            name: name.clone(),
        })?;
        for slot in entity_link.iter_mut().take((*end).min(kept)).skip(*start) {
            if slot.is_none() {
                *slot = Some(id);
            }
        }
        if *start < kept {
            entities.insert(id);
        }
    }
    Ok(PreparedDoc {
        id: doc.id,
        word_ids,
        entity_link,
        exact_match,
        term_freq,
        entities,
    })
}

/// Resolves names against the graph vocabularies, truncates the question
/// and documents, and assembles the subgraph's neighbor lists.
pub fn prepare_example(
    raw: &RawExample,
    vocab: &Vocab,
    graph: &KnowledgeGraph,
    config: &ModelConfig,
) -> Result<PreparedExample> {
    let example = raw.id.clone();
    let entity = |name: &str| -> Result<usize> {
        graph.entity_id(name).ok_or_else(|| ModelError::UnknownEntity {
            example: example.clone(),
            name: name.to_string(),
        })
    };
    if raw.question.is_empty() {
        return Err(ModelError::EmptyQuestion { example });
    }
    let all_ids: Vec<usize> = raw.question.iter().map(|t| vocab.id(t)).collect();
    let question_ids = truncate_ids(&all_ids, config.max_question_len, &format!("question {example}"));

    let topics: BTreeSet<usize> = raw
        .topic_entities
        .iter()
        .map(|n| entity(n))
        .collect::<Result<_>>()?;
    let gold: BTreeSet<usize> = raw.answers.iter().map(|n| entity(n)).collect::<Result<_>>()?;
    let sg_entities: Vec<usize> = raw
        .subgraph_entities
        .iter()
        .map(|n| entity(n))
        .collect::<Result<_>>()?;
    let mut sg_triples = Vec::with_capacity(raw.subgraph_triples.len());
    for (h, r, t) in &raw.subgraph_triples {
        let rid = graph
            .relation_id(r)
            .ok_or_else(|| ModelError::UnknownRelation {
                example: example.clone(),
                name: r.clone(),
            })?;
        sg_triples.push((entity(h)?, rid, entity(t)?));
    }
    let sg = SubgraphInput::build(&sg_entities, &sg_triples, &topics, config.max_neighbors);

    let question_words: BTreeSet<&str> = raw.question.iter().map(String::as_str).collect();
    let mut docs = raw
        .documents
        .iter()
        .map(|d| prepare_doc(d, &question_words, vocab, graph, config.max_doc_len, &example))
        .collect::<Result<Vec<_>>>()?;
    docs.sort_by_key(|d| d.id);

    let candidates: BTreeSet<usize> = raw
        .candidates
        .iter()
        .map(|n| entity(n))
        .collect::<Result<_>>()?;

    Ok(PreparedExample {
        id: raw.id.clone(),
        question_ids,
        topics,
        gold,
        sg,
        docs,
        candidates: candidates.into_iter().collect(),
    })
}

/// Attention weights, gate values, and intermediate vectors from one
/// forward pass, for inspection and for the behavioral checks on the
/// ablation switches.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub query: Vec<f64>,
    pub q_prime: Vec<f64>,
    /// Reformulation gate; `None` when reformulation is ablated away.
    pub reform_gate: Option<f64>,
    pub question_attention: Vec<f64>,
    /// Relation id → attention over the relation's tokens.
    pub relation_token_attention: BTreeMap<usize, Vec<f64>>,
    /// Relation id → attention over question tokens while matching.
    pub relation_match_attention: BTreeMap<usize, Vec<f64>>,
    /// Relation id → match score.
    pub relation_scores: BTreeMap<usize, f64>,
    /// Per entity with ≥1 neighbor: attention over its neighbors.
    pub neighbor_attention: Vec<Vec<f64>>,
    /// Per entity with ≥1 neighbor: the knowledge gate.
    pub entity_gates: Vec<f64>,
    /// Per document: attention over token states.
    pub doc_attention: Vec<Vec<f64>>,
    /// Per document, per token: the token gate values (None when ungated).
    pub token_gates: Vec<Vec<Option<Vec<f64>>>>,
    /// Per document, per token: the fused input that fed the encoder.
    pub doc_fused: Vec<Vec<Vec<f64>>>,
    /// Per document, per token: the projected features alone.
    pub doc_features: Vec<Vec<Vec<f64>>>,
    pub scores: Vec<f64>,
}

/// Scores for one example, with candidates in sorted-id order.
pub struct Forward {
    pub entities: Vec<usize>,
    pub scores: Vec<Tensor>,
    /// How many documents went through the text encoder.
    pub doc_encode_calls: usize,
    pub diagnostics: Option<Diagnostics>,
}

pub struct Model {
    pub store: ParamStore,
    pub config: ModelConfig,
    relation_word_ids: Vec<Vec<usize>>,
}

/// Overwrites row `i` of a `width`-wide table with `vector`.
fn copy_row(
    table: &mut [f64],
    i: usize,
    width: usize,
    vector: &[f64],
    kind: &'static str,
    name: &str,
) -> Result<()> {
    if vector.len() != width {
        return Err(ModelError::VectorDim {
            table: kind,
            name: name.to_string(),
            got: vector.len(),
            want: width,
        });
    }
    table[i * width..(i + 1) * width].copy_from_slice(vector);
    Ok(())
}

impl Model {
    /// Registers every parameter with seeded initialization. Word and entity
    /// vectors, when supplied, seed the matching embedding rows by name and
    /// freeze that table; otherwise the table trains from scratch. Entity
    /// vectors must be `hidden_dim` wide.
    pub fn new(
        config: ModelConfig,
        vocab: &Vocab,
        graph: &KnowledgeGraph,
        seed: u64,
        word_vectors: Option<&[(String, Vec<f64>)]>,
        entity_vectors: Option<&[(String, Vec<f64>)]>,
    ) -> Result<Model> {
        config.validate()?;
        let d = config.hidden_dim;
        let wd = config.word_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let mut word_table = uniform_init(&mut rng, vocab.len() * wd, -0.1, 0.1);
        let mut frozen_words = false;
        if let Some(vectors) = word_vectors {
            let by_name: HashMap<&str, &Vec<f64>> =
                vectors.iter().map(|(w, v)| (w.as_str(), v)).collect();
            let mut found = 0usize;
            for (i, w) in vocab.words.iter().enumerate() {
                if let Some(v) = by_name.get(w.as_str()) {
                    copy_row(&mut word_table, i, wd, v, "word", w)?;
                    found += 1;
                }
            }
            log::info!("word vectors: {found}/{} vocabulary words covered", vocab.len());
            frozen_words = true;
        }
        store.register("embed.word", vec![vocab.len(), wd], word_table, frozen_words)?;

        let mut entity_table = uniform_init(&mut rng, graph.num_entities() * d, -0.1, 0.1);
        let mut frozen_entities = false;
        if let Some(vectors) = entity_vectors {
            let by_name: HashMap<&str, &Vec<f64>> =
                vectors.iter().map(|(w, v)| (w.as_str(), v)).collect();
            let mut found = 0usize;
            for (i, name) in graph.entities().iter().enumerate() {
                if let Some(v) = by_name.get(name.as_str()) {
                    copy_row(&mut entity_table, i, d, v, "entity", name)?;
                    found += 1;
                }
            }
            log::info!(
                "entity vectors: {found}/{} entities covered",
                graph.num_entities()
            );
            frozen_entities = true;
        }
        store.register(
            "embed.entity",
            vec![graph.num_entities(), d],
            entity_table,
            frozen_entities,
        )?;
        register_lstm(&mut store, "encoder.lstm", wd, d, &mut rng)?;
        store.register(
            "sg.relation_attn",
            vec![d],
            uniform_init(&mut rng, d, -0.1, 0.1),
            false,
        )?;
        store.register(
            "sg.neighbor_transform",
            vec![d, 2 * d],
            crate::nn::glorot_uniform(&mut rng, d, 2 * d),
            false,
        )?;
        store.register(
            "sg.entity_gate",
            vec![2 * d],
            uniform_init(&mut rng, 2 * d, -0.1, 0.1),
            false,
        )?;
        store.register(
            "ka.question_attn",
            vec![d],
            uniform_init(&mut rng, d, -0.1, 0.1),
            false,
        )?;
        store.register(
            "ka.reform.transform",
            vec![d, 3 * d],
            crate::nn::glorot_uniform(&mut rng, d, 3 * d),
            false,
        )?;
        store.register(
            "ka.reform.gate",
            vec![3 * d],
            uniform_init(&mut rng, 3 * d, -0.1, 0.1),
            false,
        )?;
        store.register(
            "ka.feature_proj",
            vec![d, wd + 2],
            crate::nn::glorot_uniform(&mut rng, d, wd + 2),
            false,
        )?;
        let gate_shape = config.gate_variant.gate_shape(d);
        let gate_len: usize = gate_shape.iter().product();
        store.register(
            "ka.token_gate",
            gate_shape,
            uniform_init(&mut rng, gate_len, -0.1, 0.1),
            false,
        )?;
        register_bilstm(&mut store, "ka.bilstm", d, d / 2, &mut rng)?;
        store.register(
            "scorer.fuse",
            vec![d, 2 * d],
            crate::nn::glorot_uniform(&mut rng, d, 2 * d),
            false,
        )?;
        store.register(
            "scorer.kb_only",
            vec![d, d],
            crate::nn::glorot_uniform(&mut rng, d, d),
            false,
        )?;

        let relation_word_ids = graph
            .relations()
            .iter()
            .map(|r| {
                let toks = tokenize_relation(r);
                if toks.is_empty() {
                    vec![UNK]
                } else {
                    toks.iter().map(|t| vocab.id(t)).collect()
                }
            })
            .collect();

        Ok(Model {
            store,
            config,
            relation_word_ids,
        })
    }

    /// One pass over one example. Parameters are read from `binding` alone
    /// (never from `self.store`), so callers may hand the store to an
    /// optimizer or checker while driving passes through a model whose own
    /// store is empty. `collect` gathers diagnostics (attention weights,
    /// gates, intermediates).
    pub fn forward(
        &self,
        binding: &Binding,
        ex: &PreparedExample,
        rt: &mut Runtime,
        collect: bool,
    ) -> Result<Forward> {
        let d = self.config.hidden_dim;
        let word_emb = binding.get("embed.word")?;
        let entity_emb = binding.get("embed.entity")?;
        let lstm = LstmWeights::from_binding(binding, "encoder.lstm")?;

        // Question tokens → shared LSTM → h_q.
        if ex.question_ids.is_empty() {
            return Err(ModelError::EmptyQuestion {
                example: ex.id.clone(),
            });
        }
        let q_inputs = rt.apply_dropout(&word_emb.lookup_rows(&ex.question_ids)?)?;
        let h_q = rt.apply_dropout(&Tensor::stack_rows(&lstm.encode(&q_inputs)?)?)?;

        // Each distinct relation: encode its name once, score it against
        // the question; every edge with that relation shares the result.
        let w_r = binding.get("sg.relation_attn")?;
        let mut relation_scores: BTreeMap<usize, RelationScore> = BTreeMap::new();
        for &rid in &ex.sg.relations {
            let ids = &self.relation_word_ids[rid];
            let inputs = rt.apply_dropout(&word_emb.lookup_rows(ids)?)?;
            let states = rt.apply_dropout(&Tensor::stack_rows(&lstm.encode(&inputs)?)?)?;
            relation_scores.insert(rid, relation_match_score(&h_q, &states, &w_r)?);
        }

        // One propagation hop over the subgraph.
        let transform = binding.get("sg.neighbor_transform")?;
        let entity_gate = binding.get("sg.entity_gate")?;
        let mut entity_cache: BTreeMap<usize, Tensor> = BTreeMap::new();
        let sg_out = {
            let mut entity_vec = |e: usize| -> crate::tensor::Result<Tensor> {
                if let Some(t) = entity_cache.get(&e) {
                    return Ok(t.clone());
                }
                let t = entity_emb.lookup_row(e)?;
                entity_cache.insert(e, t.clone());
                Ok(t)
            };
            read_subgraph(&ex.sg, &relation_scores, &mut entity_vec, &transform, &entity_gate)?
        };
        let mut knowledge_of = |e: usize| -> crate::tensor::Result<Tensor> {
            if let Some(t) = sg_out.knowledge.get(&e) {
                return Ok(t.clone());
            }
            if let Some(t) = entity_cache.get(&e) {
                return Ok(t.clone());
            }
            let t = entity_emb.lookup_row(e)?;
            entity_cache.insert(e, t.clone());
            Ok(t)
        };

        // Query reformulation (or, ablated, the plain pooled question).
        let attn_w = binding.get("ka.question_attn")?;
        let (query, q_prime, reform_gate, question_attention) =
            if self.config.ablation == Ablation::NoReform {
                let pooled = self_attentive_pool(&h_q, &attn_w)?;
                let q = pooled.pooled;
                (q.clone(), q, None, pooled.weights.data().to_vec())
            } else {
                let topic_knowledge: Vec<Tensor> = ex
                    .topics
                    .iter()
                    .map(|&t| knowledge_of(t))
                    .collect::<crate::tensor::Result<_>>()?;
                let transform = binding.get("ka.reform.transform")?;
                let gate_w = binding.get("ka.reform.gate")?;
                let out = reformulate_query(&h_q, &topic_knowledge, &attn_w, &transform, &gate_w)?;
                (out.query, out.q_prime, Some(out.gate), out.attention)
            };

        let mut diag = collect.then(|| Diagnostics {
            query: query.data().to_vec(),
            q_prime: q_prime.data().to_vec(),
            reform_gate,
            question_attention,
            neighbor_attention: sg_out.neighbor_attention.clone(),
            entity_gates: sg_out.gates.clone(),
            ..Diagnostics::default()
        });
        if let Some(diag) = diag.as_mut() {
            for (rid, rs) in &relation_scores {
                diag.relation_token_attention.insert(*rid, rs.token_attention.clone());
                diag.relation_match_attention.insert(*rid, rs.match_attention.clone());
                diag.relation_scores.insert(*rid, rs.score.data()[0]);
            }
        }

        // Graph-only scoring skips the text encoder entirely.
        if self.config.ablation == Ablation::KbOnly {
            let knowledge: Vec<Tensor> = ex
                .candidates
                .iter()
                .map(|&c| knowledge_of(c))
                .collect::<crate::tensor::Result<_>>()?;
            let w_kb = binding.get("scorer.kb_only")?;
            let scores = score_answers_kb(&q_prime, &knowledge, &w_kb)?;
            if let Some(diag) = diag.as_mut() {
                diag.scores = scores.iter().map(|s| s.data()[0]).collect();
            }
            return Ok(Forward {
                entities: ex.candidates.clone(),
                scores,
                doc_encode_calls: 0,
                diagnostics: diag,
            });
        }

        // Documents: project token features, gate in entity knowledge, and
        // encode; then average per entity over the documents that mention it.
        let feature_proj = binding.get("ka.feature_proj")?;
        let token_gate = binding.get("ka.token_gate")?;
        let bilstm = BiLstm::from_binding(binding, "ka.bilstm")?;
        let mut doc_vectors = Vec::with_capacity(ex.docs.len());
        let mut doc_encode_calls = 0usize;
        for doc in &ex.docs {
            let emb = rt.apply_dropout(&word_emb.lookup_rows(&doc.word_ids)?)?;
            let n = doc.word_ids.len();
            let mut extra = Vec::with_capacity(2 * n);
            for t in 0..n {
                extra.push(doc.exact_match[t]);
                extra.push(doc.term_freq[t]);
            }
            let features = Tensor::concat(&[emb, Tensor::from_vec(vec![n, 2], extra)?], 1)?
                .matmul(&feature_proj.transpose()?)?;
            let tokens: Vec<DocToken> = (0..n)
                .map(|t| {
                    Ok(DocToken {
                        feature: features.row(t)?,
                        knowledge: doc.entity_link[t].map(&mut knowledge_of).transpose()?,
                    })
                })
                .collect::<crate::tensor::Result<_>>()?;
            let out = encode_document(
                &tokens,
                &query,
                &q_prime,
                &bilstm,
                &token_gate,
                self.config.gate_variant,
                self.config.ablation != Ablation::StdGate,
                self.config.ablation != Ablation::NoKnow,
                rt,
            )?;
            doc_encode_calls += 1;
            if let Some(diag) = diag.as_mut() {
                diag.doc_attention.push(out.attention.clone());
                diag.token_gates.push(out.token_gates.clone());
                diag.doc_fused
                    .push(out.fused.iter().map(|t| t.data().to_vec()).collect());
                diag.doc_features
                    .push(tokens.iter().map(|t| t.feature.data().to_vec()).collect());
            }
            doc_vectors.push(out.vector);
        }

        let mut text_of: BTreeMap<usize, Tensor> = BTreeMap::new();
        let w_fuse = binding.get("scorer.fuse")?;
        let mut pairs = Vec::with_capacity(ex.candidates.len());
        for &c in &ex.candidates {
            let text = match text_of.get(&c) {
                Some(t) => t.clone(),
                None => {
                    let vecs: Vec<Tensor> = ex
                        .docs
                        .iter()
                        .zip(&doc_vectors)
                        .filter(|(doc, _)| doc.entities.contains(&c))
                        .map(|(_, v)| v.clone())
                        .collect();
                    let t = mean_vectors(&vecs, d)?;
                    text_of.insert(c, t.clone());
                    t
                }
            };
            pairs.push((knowledge_of(c)?, text));
        }
        let scores = score_answers(&q_prime, &pairs, &w_fuse)?;
        if let Some(diag) = diag.as_mut() {
            diag.scores = scores.iter().map(|s| s.data()[0]).collect();
        }
        Ok(Forward {
            entities: ex.candidates.clone(),
            scores,
            doc_encode_calls,
            diagnostics: diag,
        })
    }

    /// Mean smoothed binary cross-entropy for one example's scores.
    pub fn loss(&self, fwd: &Forward, gold: &BTreeSet<usize>, smoothing: f64) -> Result<Tensor> {
        let flags: Vec<bool> = fwd.entities.iter().map(|e| gold.contains(e)).collect();
        Ok(crate::scorer::qa_loss(&fwd.scores, &flags, smoothing)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::gradcheck::{grad_check, GradCheckOptions};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            word_dim: 6,
            hidden_dim: 4,
            max_question_len: 10,
            max_doc_len: 12,
            max_neighbors: 8,
            ..ModelConfig::default()
        }
    }

    /// A five-entity world with two documents, small enough to inspect.
    fn tiny_world() -> (KnowledgeGraph, RawExample) {
        let mut g = KnowledgeGraph::new();
        for name in ["alice", "acme", "bob", "paris", "carol"] {
            g.add_entity(name);
        }
        for rel in ["works_for", "lives_in"] {
            g.add_relation(rel);
        }
        g.add_triple(0, 0, 1).unwrap(); // alice works_for acme
        g.add_triple(2, 0, 1).unwrap(); // bob works_for acme
        g.add_triple(0, 1, 3).unwrap(); // alice lives_in paris
        let raw = RawExample {
            id: "t0".into(),
            question: ["works", "for", "of", "alice", "?"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            topic_entities: vec!["alice".into()],
            answers: vec!["acme".into()],
            subgraph_entities: vec!["alice".into(), "acme".into(), "bob".into(), "paris".into()],
            subgraph_triples: vec![
                ("alice".into(), "works_for".into(), "acme".into()),
                ("bob".into(), "works_for".into(), "acme".into()),
                ("alice".into(), "lives_in".into(), "paris".into()),
            ],
            documents: vec![
                Document {
                    id: 0,
                    tokens: ["alice", "works", "for", "acme"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    entity_spans: vec![(0, 1, "alice".into()), (3, 4, "acme".into())],
                },
                Document {
                    id: 1,
                    tokens: ["alice", "lives", "in", "paris"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    entity_spans: vec![(0, 1, "alice".into()), (3, 4, "paris".into())],
                },
            ],
            candidates: vec!["alice".into(), "acme".into(), "bob".into(), "paris".into()],
        };
        (g, raw)
    }

    fn tiny_model(config: ModelConfig) -> (Model, PreparedExample, Vocab, KnowledgeGraph) {
        let (graph, raw) = tiny_world();
        let splits = [std::slice::from_ref(&raw)];
        let vocab = Vocab::from_dataset(&splits, &graph);
        let ex = prepare_example(&raw, &vocab, &graph, &config).unwrap();
        let model = Model::new(config, &vocab, &graph, 11, None, None).unwrap();
        (model, ex, vocab, graph)
    }

    #[test]
    fn vocabulary_is_sorted_and_reserves_unknown() {
        let v = Vocab::build(["b", "a", "b", "c"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.word(0), "<unk>");
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(tokenize_relation("born_in"), vec!["born", "in"]);
        assert_eq!(tokenize_relation("a.b-c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn preparation_resolves_and_caps() {
        let config = tiny_config();
        let (model, ex, vocab, graph) = tiny_model(config);
        let _ = model;
        assert_eq!(ex.candidates, vec![0, 1, 2, 3]);
        assert_eq!(ex.gold, BTreeSet::from([1]));
        assert_eq!(ex.topics, BTreeSet::from([0]));
        assert_eq!(ex.sg.entities, vec![0, 1, 2, 3]);
        // alice heads two triples, so she has two neighbor slots.
        assert_eq!(ex.sg.neighbors[0].len(), 2);
        // acme is the object of two triples.
        assert_eq!(ex.sg.neighbors[1].len(), 2);
        assert_eq!(ex.docs.len(), 2);
        let d0 = &ex.docs[0];
        assert_eq!(d0.entity_link[0], Some(0));
        assert_eq!(d0.entity_link[1], None);
        assert_eq!(d0.entity_link[3], Some(1));
        // "works" and "for" appear in the question; "alice" does too.
        assert_eq!(d0.exact_match, vec![1.0, 1.0, 1.0, 0.0]);
        for &tf in &d0.term_freq {
            assert!(close(tf, 0.25, 1e-12));
        }
        assert_eq!(d0.entities, BTreeSet::from([0, 1]));
        let _ = (vocab, graph);
    }

    #[test]
    fn unknown_names_are_rejected_with_context() {
        let config = tiny_config();
        let (graph, mut raw) = tiny_world();
        let splits = [std::slice::from_ref(&raw)];
        let vocab = Vocab::from_dataset(&splits, &graph);
        raw.answers = vec!["nowhere".into()];
        let err = prepare_example(&raw, &vocab, &graph, &config).err().unwrap();
        match err {
            ModelError::UnknownEntity { example, name } => {
                assert_eq!(example, "t0");
                assert_eq!(name, "nowhere");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn long_documents_are_truncated() {
        let mut config = tiny_config();
        config.max_doc_len = 2;
        let (graph, raw) = tiny_world();
        let splits = [std::slice::from_ref(&raw)];
        let vocab = Vocab::from_dataset(&splits, &graph);
        let ex = prepare_example(&raw, &vocab, &graph, &config).unwrap();
        assert_eq!(ex.docs[0].word_ids.len(), 2);
        // The acme span (tokens 3..4) fell off; only alice remains linked.
        assert_eq!(ex.docs[0].entities, BTreeSet::from([0]));
        // Term frequency renormalizes over the kept window.
        assert!(close(ex.docs[0].term_freq[0], 0.5, 1e-12));
    }

    #[test]
    fn registration_covers_expected_parameters() {
        let (model, _, vocab, graph) = tiny_model(tiny_config());
        let names: Vec<&str> = model.store.entries().iter().map(|e| e.name.as_str()).collect();
        let want = [
            "embed.word",
            "embed.entity",
            "encoder.lstm.w_ih",
            "encoder.lstm.w_hh",
            "encoder.lstm.bias",
            "sg.relation_attn",
            "sg.neighbor_transform",
            "sg.entity_gate",
            "ka.question_attn",
            "ka.reform.transform",
            "ka.reform.gate",
            "ka.feature_proj",
            "ka.token_gate",
            "ka.bilstm.fw.w_ih",
            "ka.bilstm.fw.w_hh",
            "ka.bilstm.fw.bias",
            "ka.bilstm.bw.w_ih",
            "ka.bilstm.bw.w_hh",
            "ka.bilstm.bw.bias",
            "scorer.fuse",
            "scorer.kb_only",
        ];
        assert_eq!(names, want);
        let d = model.config.hidden_dim;
        assert_eq!(model.store.get("embed.word").unwrap().shape, vec![vocab.len(), 6]);
        assert_eq!(
            model.store.get("embed.entity").unwrap().shape,
            vec![graph.num_entities(), d]
        );
        assert_eq!(model.store.get("ka.feature_proj").unwrap().shape, vec![d, 8]);
        assert_eq!(model.store.get("ka.token_gate").unwrap().shape, vec![2 * d]);
        assert_eq!(model.store.get("scorer.kb_only").unwrap().shape, vec![d, d]);
    }

    #[test]
    fn forward_scores_every_candidate_in_open_interval() {
        let (model, ex, _, _) = tiny_model(tiny_config());
        let binding = model.store.bind();
        let fwd = model
            .forward(&binding, &ex, &mut Runtime::eval(), true)
            .unwrap();
        assert_eq!(fwd.entities, ex.candidates);
        assert_eq!(fwd.scores.len(), 4);
        for s in &fwd.scores {
            let v = s.data()[0];
            assert!(v > 0.0 && v < 1.0);
        }
        assert_eq!(fwd.doc_encode_calls, 2);
        let diag = fwd.diagnostics.unwrap();
        let sum: f64 = diag.question_attention.iter().sum();
        assert!(close(sum, 1.0, 1e-9));
        for a in &diag.doc_attention {
            assert!(close(a.iter().sum::<f64>(), 1.0, 1e-9));
        }
        for a in &diag.neighbor_attention {
            assert!(close(a.iter().sum::<f64>(), 1.0, 1e-9));
        }
        for g in &diag.entity_gates {
            assert!(*g > 0.0 && *g < 1.0);
        }
        assert!(diag.reform_gate.unwrap() > 0.0 && diag.reform_gate.unwrap() < 1.0);
        // Both relations were encoded and scored.
        assert_eq!(diag.relation_scores.len(), 2);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let (model, ex, _, _) = tiny_model(tiny_config());
        let binding = model.store.bind();
        let a = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        let b = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn train_mode_dropout_is_seed_reproducible() {
        let (model, ex, _, _) = tiny_model(tiny_config());
        let binding = model.store.bind();
        let run = |seed: u64| {
            let mut rt = Runtime::train(0.4, ChaCha8Rng::seed_from_u64(seed));
            let fwd = model.forward(&binding, &ex, &mut rt, false).unwrap();
            fwd.scores.iter().map(|s| s.data()[0]).collect::<Vec<f64>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn no_reform_keeps_the_pooled_question() {
        let mut config = tiny_config();
        config.ablation = Ablation::NoReform;
        let (model, ex, _, _) = tiny_model(config);
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), true).unwrap();
        let diag = fwd.diagnostics.unwrap();
        assert_eq!(diag.query, diag.q_prime);
        assert!(diag.reform_gate.is_none());
    }

    #[test]
    fn no_know_feeds_features_untouched() {
        let mut config = tiny_config();
        config.ablation = Ablation::NoKnow;
        let (model, ex, _, _) = tiny_model(config);
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), true).unwrap();
        let diag = fwd.diagnostics.unwrap();
        assert_eq!(diag.doc_fused, diag.doc_features);
        for doc in &diag.token_gates {
            assert!(doc.iter().all(|g| g.is_none()));
        }
    }

    #[test]
    fn std_gate_ignores_question_change() {
        // The standard gate reads [e'; f] only, so once those are pinned
        // down the question cannot move any gate value. A single-relation
        // graph keeps e' question-independent (all neighbor scores tie),
        // and permuting the question keeps the exact-match feature fixed
        // while changing the encoded query.
        let mut config = tiny_config();
        config.ablation = Ablation::StdGate;
        let mut graph = KnowledgeGraph::new();
        for name in ["alice", "acme", "bob"] {
            graph.add_entity(name);
        }
        graph.add_relation("works_for");
        graph.add_triple(0, 0, 1).unwrap();
        graph.add_triple(2, 0, 1).unwrap();
        let raw = RawExample {
            id: "s0".into(),
            question: ["works", "for", "of", "alice", "?"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            topic_entities: vec!["alice".into()],
            answers: vec!["acme".into()],
            subgraph_entities: vec!["alice".into(), "acme".into(), "bob".into()],
            subgraph_triples: vec![
                ("alice".into(), "works_for".into(), "acme".into()),
                ("bob".into(), "works_for".into(), "acme".into()),
            ],
            documents: vec![Document {
                id: 0,
                tokens: ["alice", "works", "for", "acme"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                entity_spans: vec![(0, 1, "alice".into()), (3, 4, "acme".into())],
            }],
            candidates: vec!["alice".into(), "acme".into(), "bob".into()],
        };
        let mut other = raw.clone();
        other.question = ["alice", "of", "for", "works", "?"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let splits = [std::slice::from_ref(&raw), std::slice::from_ref(&other)];
        let vocab = Vocab::from_dataset(&splits, &graph);
        let model = Model::new(config.clone(), &vocab, &graph, 11, None, None).unwrap();
        let ex_a = prepare_example(&raw, &vocab, &graph, &config).unwrap();
        let ex_b = prepare_example(&other, &vocab, &graph, &config).unwrap();
        assert_eq!(ex_a.docs[0].exact_match, ex_b.docs[0].exact_match);
        let binding = model.store.bind();
        let a = model.forward(&binding, &ex_a, &mut Runtime::eval(), true).unwrap();
        let b = model.forward(&binding, &ex_b, &mut Runtime::eval(), true).unwrap();
        let da = a.diagnostics.unwrap();
        let db = b.diagnostics.unwrap();
        // The encoded query genuinely moved...
        assert_ne!(da.query, db.query);
        // ...but every token gate held still.
        assert_eq!(da.token_gates, db.token_gates);
        assert!(da.token_gates.iter().flatten().any(|g| g.is_some()));
    }

    #[test]
    fn kb_only_never_touches_documents() {
        let mut config = tiny_config();
        config.ablation = Ablation::KbOnly;
        let (model, ex, _, _) = tiny_model(config);
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), true).unwrap();
        assert_eq!(fwd.doc_encode_calls, 0);
        assert_eq!(fwd.scores.len(), 4);
        let diag = fwd.diagnostics.unwrap();
        assert!(diag.doc_attention.is_empty());
        // Query reformulation still runs in graph-only mode.
        assert!(diag.reform_gate.is_some());
    }

    #[test]
    fn loss_backward_reaches_the_parameters() {
        let (model, ex, _, _) = tiny_model(tiny_config());
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        let loss = model.loss(&fwd, &ex.gold, 0.1).unwrap();
        assert!(loss.item().unwrap().is_finite());
        loss.backward().unwrap();
        let grads = binding.grads();
        assert_eq!(grads.len(), model.store.entries().len());
        let nonzero = |name: &str| {
            grads
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, g)| g.iter().any(|v| *v != 0.0))
                .unwrap()
        };
        for name in [
            "embed.word",
            "embed.entity",
            "encoder.lstm.w_ih",
            "sg.relation_attn",
            "sg.neighbor_transform",
            "sg.entity_gate",
            "ka.question_attn",
            "ka.reform.transform",
            "ka.feature_proj",
            "ka.token_gate",
            "ka.bilstm.fw.w_ih",
            "scorer.fuse",
        ] {
            assert!(nonzero(name), "no gradient reached {name}");
        }
        // The graph-only head is unused by the full model.
        assert!(!nonzero("scorer.kb_only"));
    }

    #[test]
    fn spot_gradient_check_on_the_tiny_model() {
        // Forward passes read parameters from the binding alone, so the
        // store can be lent to the checker while the model drives the graph.
        let (mut model, ex, _, _) = tiny_model(tiny_config());
        let mut store = std::mem::replace(&mut model.store, ParamStore::new());
        let opts = GradCheckOptions {
            max_elements_per_param: Some(2),
            seed: 5,
            ..GradCheckOptions::default()
        };
        let report = grad_check(
            &mut store,
            |binding| -> Result<Tensor> {
                let fwd = model.forward(binding, &ex, &mut Runtime::eval(), false)?;
                model.loss(&fwd, &ex.gold, 0.1)
            },
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_the_forward_pass() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (model, ex, vocab, graph) = tiny_model(tiny_config());
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        let want: Vec<f64> = fwd.scores.iter().map(|s| s.data()[0]).collect();
        drop(binding);
        model.store.save(&path).unwrap();

        let mut fresh = Model::new(model.config.clone(), &vocab, &graph, 999, None, None).unwrap();
        fresh.store.load_into(&path).unwrap();
        let binding = fresh.store.bind();
        let fwd2 = fresh.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        let got: Vec<f64> = fwd2.scores.iter().map(|s| s.data()[0]).collect();
        assert_eq!(want, got);
    }

    #[test]
    fn supplied_word_vectors_freeze_the_table() {
        let (graph, raw) = tiny_world();
        let splits = [std::slice::from_ref(&raw)];
        let vocab = Vocab::from_dataset(&splits, &graph);
        let config = tiny_config();
        let vectors = vec![
            ("alice".to_string(), vec![1.0; 6]),
            ("acme".to_string(), vec![2.0; 6]),
        ];
        let model = Model::new(config, &vocab, &graph, 11, Some(&vectors), None).unwrap();
        let entry = model.store.get("embed.word").unwrap();
        assert!(entry.frozen);
        let row = vocab.id("alice") * 6;
        assert_eq!(&entry.data[row..row + 6], &[1.0; 6]);
    }

    #[test]
    fn overfits_one_example_quickly() {
        // A dozen optimizer steps on a single example should push the gold
        // candidate to the top.
        use crate::nn::{clip_grad_norm, AdamState};
        let (mut model, ex, _, _) = tiny_model(tiny_config());
        let tc = TrainConfig::default();
        let mut adam = AdamState::new(0.05);
        for _ in 0..30 {
            let binding = model.store.bind();
            let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
            let loss = model.loss(&fwd, &ex.gold, tc.label_smoothing).unwrap();
            loss.backward().unwrap();
            let mut grads = binding.grads();
            drop(binding);
            clip_grad_norm(&mut grads, tc.grad_clip);
            adam.step(&mut model.store, &grads).unwrap();
        }
        let binding = model.store.bind();
        let fwd = model.forward(&binding, &ex, &mut Runtime::eval(), false).unwrap();
        let scores: Vec<f64> = fwd.scores.iter().map(|s| s.data()[0]).collect();
        let pred = crate::scorer::Prediction::new(&fwd.entities, &scores, 0.5);
        assert!(pred.hit_at_1(&ex.gold), "scores {scores:?}");
    }
}
