//! Attribute schema, tuple catalog, pattern matching over an inverted index,
//! and Maximal Uncovered Pattern (MUP) detection.
//!
//! A pattern is a length-`d` string where each cell is either a value of the
//! corresponding attribute or the wildcard `X`. A pattern is *uncovered* at
//! threshold `τ` when fewer than `τ` tuples match it; a MUP is an uncovered
//! pattern all of whose parents (one cell less specified) are covered.

mod dataset;
mod index;
mod mups;
mod pattern;
mod schema;

use thiserror::Error;

pub use dataset::{
    load_schema, parse_tuples, read_tuples, write_tuples, Dataset, TupleRecord, SCHEMA_FILE,
    TUPLES_FILE,
};
pub use index::{InvertedIndex, Representation, BITSET_MAX_TUPLES};
pub use mups::{find_mups, min_level_mups, MupSet};
pub use pattern::{parse_pattern, Combination, Pattern};
pub use schema::{template_placeholders, Attribute, AttributeSchema, WILDCARD};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid tuple on line {line}: {message}")]
    Tuple { line: usize, message: String },
    #[error("pattern has {found} cells, schema has {expected} attributes")]
    WrongArity { expected: usize, found: usize },
    #[error("unknown value `{token}` at position {position}")]
    UnknownValue { position: usize, token: String },
    #[error("MUP set is empty")]
    EmptyMupSet,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Full-scan count, used as the reference for the index.
pub fn naive_count(dataset: &Dataset, p: &Pattern) -> usize {
    dataset.tuples.iter().filter(|t| p.matches(t)).count()
}
