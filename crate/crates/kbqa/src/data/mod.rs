//! Data layer: knowledge graphs, subgraph retrieval, synthetic corpus
//! generation, and on-disk dataset formats.

pub mod dataset;
pub mod graph;
pub mod kge;
pub mod ppr;
pub mod synthetic;

pub use dataset::{load_kb, load_meta, load_split, save_world, Document, RawExample, WorldMeta};
pub use graph::{extract_subgraph, KnowledgeGraph, Subgraph};
pub use kge::{train_kg_embeddings, KgeOptions};
pub use ppr::{personalized_pagerank, PprOptions, PprResult};
pub use synthetic::{generate_world, GeneratedWorld, WorldOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("duplicate triple ({head}, {relation}, {tail})")]
    DuplicateTriple {
        head: String,
        relation: String,
        tail: String,
    },
    #[error("entity id {id} out of bounds ({entities} entities)")]
    EntityOutOfBounds { id: usize, entities: usize },
    #[error("personalized PageRank needs at least one seed entity")]
    EmptySeeds,
    #[error("subgraph budget {top_k} cannot hold {seeds} seed entities")]
    SubgraphTooSmall { top_k: usize, seeds: usize },
    #[error("{what} must be positive")]
    EmptyWorld { what: &'static str },
    #[error("{count} relations requested but the name inventory holds {available}")]
    TooManyRelations { count: usize, available: usize },
    #[error("{count} relations requested but a {dims}-dimensional lattice offers {available} distinct offsets")]
    TooManyRelationOffsets { count: usize, dims: u32, available: usize },
    #[error("kb fraction {0} outside (0, 1]")]
    BadKbFraction(f64),
    #[error("knowledge-embedding norm clamp must be positive, got {0}")]
    BadNormClamp(f64),
    #[error("requested {requested} questions but only {available} subject-relation pairs exist")]
    NotEnoughQuestions { requested: usize, available: usize },
    #[error("could not place {requested} distinct triples (managed {placed})")]
    TriplesDoNotFit { requested: usize, placed: usize },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: invalid {field}: {reason}")]
    Validation {
        path: String,
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
