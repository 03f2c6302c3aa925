//! On-disk dataset formats.
//!
//! A dataset directory contains:
//!
//! - `entities.txt`, `relations.txt` — one name per line; line number is the id
//! - `kb_full.tsv` — every triple of the generating world, `head\trelation\ttail`
//! - `kb.tsv` — the (possibly downsampled) triples retrieval actually sees
//! - `train.jsonl`, `dev.jsonl`, `test.jsonl` — one example per line
//! - `world.json` — generation options and corpus counts
//!
//! Examples are self-contained: they carry their retrieved subgraph, their
//! documents, and the candidate pool, so training never re-runs retrieval.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::{GeneratedWorld, WorldOptions};
use super::{DataError, KnowledgeGraph, Result};

/// A text snippet with the entity mentions it contains. Span `(start, end,
/// name)` means `tokens[start..end]` refers to entity `name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    pub tokens: Vec<String>,
    pub entity_spans: Vec<(usize, usize, String)>,
}

/// One question with everything needed to answer it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub question: Vec<String>,
    pub topic_entities: Vec<String>,
    pub answers: Vec<String>,
    pub subgraph_entities: Vec<String>,
    pub subgraph_triples: Vec<(String, String, String)>,
    pub documents: Vec<Document>,
    pub candidates: Vec<String>,
}

/// Generation record stored alongside the splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldMeta {
    pub options: WorldOptions,
    pub relations: usize,
    pub triples_full: usize,
    pub triples_kept: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub discarded: usize,
}

fn validate_example(ex: &RawExample) -> std::result::Result<(), (&'static str, String)> {
    if ex.question.is_empty() {
        return Err(("question", "no tokens".into()));
    }
    if ex.answers.is_empty() {
        return Err(("answers", "no gold answers".into()));
    }
    if ex.candidates.is_empty() {
        return Err(("candidates", "empty candidate pool".into()));
    }
    let subgraph: HashSet<&str> = ex.subgraph_entities.iter().map(String::as_str).collect();
    if ex.topic_entities.is_empty() {
        return Err(("topic_entities", "no topic entities".into()));
    }
    for t in &ex.topic_entities {
        if !subgraph.contains(t.as_str()) {
            return Err(("topic_entities", format!("{t:?} not in subgraph")));
        }
    }
    let candidates: HashSet<&str> = ex.candidates.iter().map(String::as_str).collect();
    for a in &ex.answers {
        if !candidates.contains(a.as_str()) {
            return Err(("answers", format!("gold {a:?} not in candidates")));
        }
    }
    for (h, _, t) in &ex.subgraph_triples {
        if !subgraph.contains(h.as_str()) || !subgraph.contains(t.as_str()) {
            return Err(("subgraph_triples", format!("({h}, ..., {t}) endpoint not in subgraph")));
        }
    }
    let mut doc_ids = HashSet::new();
    let mut mentioned: HashSet<&str> = HashSet::new();
    for d in &ex.documents {
        if !doc_ids.insert(d.id) {
            return Err(("documents", format!("duplicate document id {}", d.id)));
        }
        if d.tokens.is_empty() {
            return Err(("documents", format!("document {} has no tokens", d.id)));
        }
        for (start, end, name) in &d.entity_spans {
            if start >= end || *end > d.tokens.len() {
                return Err((
                    "entity_spans",
                    format!("document {}: span ({start}, {end}) out of range", d.id),
                ));
            }
            if name.is_empty() {
                return Err(("entity_spans", format!("document {}: empty entity name", d.id)));
            }
            mentioned.insert(name.as_str());
        }
    }
    for c in &ex.candidates {
        if !subgraph.contains(c.as_str()) && !mentioned.contains(c.as_str()) {
            return Err((
                "candidates",
                format!("{c:?} appears in neither subgraph nor documents"),
            ));
        }
    }
    Ok(())
}

/// Reads one split, validating every example. Errors carry the offending
/// line number and field.
pub fn load_split(path: &Path) -> Result<Vec<RawExample>> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: display.clone(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        validate_example(&ex).map_err(|(field, reason)| DataError::Validation {
            path: display.clone(),
            line: i + 1,
            field,
            reason,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_split(path: &Path, examples: &[RawExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn save_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn load_lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

/// Writes `name v1 v2 ...` lines, one per entity. `f64` round-trips through
/// its `Display` form exactly, so a saved file reloads bit-for-bit.
fn save_vectors(path: &Path, names: &[String], vectors: &[Vec<f64>]) -> Result<()> {
    save_lines(
        path,
        names.iter().zip(vectors).map(|(name, vector)| {
            let mut line = name.clone();
            for v in vector {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line
        }),
    )
}

fn save_kb(path: &Path, graph: &KnowledgeGraph) -> Result<()> {
    save_lines(
        path,
        graph.triples().iter().map(|&(h, r, t)| {
            format!(
                "{}\t{}\t{}",
                graph.entity_name(h),
                graph.relation_name(r),
                graph.entity_name(t)
            )
        }),
    )
}

/// Loads `file` (a TSV of `head\trelation\ttail`) against the directory's
/// entity and relation vocabularies.
pub fn load_kb(dir: &Path, file: &str) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::new();
    for name in load_lines(&dir.join("entities.txt"))? {
        graph.add_entity(&name);
    }
    for name in load_lines(&dir.join("relations.txt"))? {
        graph.add_relation(&name);
    }
    let path = dir.join(file);
    let display = path.display().to_string();
    for (i, line) in load_lines(&path)?.into_iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [h, r, t] = fields[..] else {
            return Err(DataError::Parse {
                path: display,
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let h = graph
            .entity_id(h)
            .ok_or_else(|| DataError::UnknownEntity(h.to_string()))?;
        let t = graph
            .entity_id(t)
            .ok_or_else(|| DataError::UnknownEntity(t.to_string()))?;
        let r = graph
            .relation_id(r)
            .ok_or_else(|| DataError::UnknownRelation(r.to_string()))?;
        graph.add_triple(h, r, t)?;
    }
    Ok(graph)
}

/// Writes a generated world as a complete dataset directory.
pub fn save_world(dir: &Path, world: &GeneratedWorld, options: &WorldOptions) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_lines(
        &dir.join("entities.txt"),
        world.full.entities().iter().cloned(),
    )?;
    save_lines(
        &dir.join("relations.txt"),
        world.full.relations().iter().cloned(),
    )?;
    save_kb(&dir.join("kb_full.tsv"), &world.full)?;
    save_kb(&dir.join("kb.tsv"), &world.kb)?;
    save_vectors(
        &dir.join("entity_vectors.txt"),
        world.full.entities(),
        &world.entity_vectors,
    )?;
    save_split(&dir.join("train.jsonl"), &world.train)?;
    save_split(&dir.join("dev.jsonl"), &world.dev)?;
    save_split(&dir.join("test.jsonl"), &world.test)?;
    let meta = WorldMeta {
        options: options.clone(),
        relations: world.full.relations().len(),
        triples_full: world.full.triples().len(),
        triples_kept: world.kb.triples().len(),
        train: world.train.len(),
        dev: world.dev.len(),
        test: world.test.len(),
        discarded: world.discarded,
    };
    let mut w = BufWriter::new(File::create(dir.join("world.json"))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<WorldMeta> {
    let reader = BufReader::new(File::open(dir.join("world.json"))?);
    Ok(serde_json::from_reader(reader)?)
}
