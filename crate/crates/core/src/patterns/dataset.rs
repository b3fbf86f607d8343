use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttributeSchema, PatternError};

/// One multi-modal tuple: attribute values, embedding, and optional payload/mask files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub id: String,
    pub values: Vec<usize>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: bool,
}

impl TupleRecord {
    pub fn new(id: impl Into<String>, values: Vec<usize>, embedding: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            values,
            embedding,
            payload_path: None,
            mask_path: None,
            synthetic: false,
        }
    }
}

/// A schema plus its tuples. Tuple position in `tuples` is the id used by the index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub tuples: Vec<TupleRecord>,
}

impl Dataset {
    pub fn new(schema: AttributeSchema, tuples: Vec<TupleRecord>) -> Result<Self, PatternError> {
        let ds = Self { schema, tuples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(schema: AttributeSchema) -> Self {
        Self {
            schema,
            tuples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Embedding dimension `k`, if any tuple is present.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.tuples.first().map(|t| t.embedding.len())
    }

    pub fn validate(&self) -> Result<(), PatternError> {
        self.schema.validate()?;
        let cards = self.schema.cardinalities();
        let dim = self.embedding_dim();
        let mut seen = std::collections::HashSet::new();
        for (line, t) in self.tuples.iter().enumerate() {
            check_tuple(t, &cards, dim).map_err(|msg| PatternError::Tuple {
                line: line + 1,
                message: msg,
            })?;
            if !seen.insert(t.id.as_str()) {
                return Err(PatternError::Tuple {
                    line: line + 1,
                    message: format!("duplicate tuple id `{}`", t.id),
                });
            }
        }
        Ok(())
    }

    /// Append tuples after validating them against the schema and embedding dimension.
    pub fn extend(
        &mut self,
        tuples: impl IntoIterator<Item = TupleRecord>,
    ) -> Result<(), PatternError> {
        let cards = self.schema.cardinalities();
        for t in tuples {
            let dim = self.embedding_dim();
            check_tuple(&t, &cards, dim).map_err(|message| PatternError::Tuple {
                line: self.tuples.len() + 1,
                message,
            })?;
            self.tuples.push(t);
        }
        Ok(())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.tuples.iter().position(|t| t.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&TupleRecord> {
        self.tuples.iter().find(|t| t.id == id)
    }

    /// Tuples with `synthetic == false`.
    pub fn real_only(&self) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            tuples: self
                .tuples
                .iter()
                .filter(|t| !t.synthetic)
                .cloned()
                .collect(),
        }
    }

    /// Load `schema.json` and a line-delimited tuple file.
    pub fn load(schema_path: &Path, tuples_path: &Path) -> Result<Self, PatternError> {
        let schema = load_schema(schema_path)?;
        let tuples = read_tuples(tuples_path)?;
        Dataset::new(schema, tuples)
    }

    /// Load a dataset directory containing `schema.json` and `tuples.jsonl`.
    pub fn load_dir(dir: &Path) -> Result<Self, PatternError> {
        Self::load(&dir.join(SCHEMA_FILE), &dir.join(TUPLES_FILE))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), PatternError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let schema = serde_json::to_string_pretty(&self.schema).expect("schema serializes");
        std::fs::write(dir.join(SCHEMA_FILE), schema + "\n").map_err(|e| io_err(dir, e))?;
        write_tuples(&dir.join(TUPLES_FILE), &self.tuples)
    }
}

pub const SCHEMA_FILE: &str = "schema.json";
pub const TUPLES_FILE: &str = "tuples.jsonl";

fn check_tuple(t: &TupleRecord, cards: &[usize], dim: Option<usize>) -> Result<(), String> {
    if t.values.len() != cards.len() {
        return Err(format!(
            "tuple `{}` has {} values, schema has {} attributes",
            t.id,
            t.values.len(),
            cards.len()
        ));
    }
    for (i, (&v, &card)) in t.values.iter().zip(cards).enumerate() {
        if v >= card {
            return Err(format!(
                "tuple `{}` value {v} out of domain for attribute {i}",
                t.id
            ));
        }
    }
    if let Some(k) = dim {
        if t.embedding.len() != k {
            return Err(format!(
                "tuple `{}` embedding has dimension {}, expected {k}",
                t.id,
                t.embedding.len()
            ));
        }
    }
    if t.embedding.iter().any(|x| !x.is_finite()) {
        return Err(format!("tuple `{}` embedding has a non-finite entry", t.id));
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> PatternError {
    PatternError::Io(format!("{}: {e}", path.display()))
}

pub fn load_schema(path: &Path) -> Result<AttributeSchema, PatternError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let schema: AttributeSchema = serde_json::from_str(&text)
        .map_err(|e| PatternError::Schema(format!("{}: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}

/// Read one JSON tuple per line; blank lines are skipped.
pub fn read_tuples(path: &Path) -> Result<Vec<TupleRecord>, PatternError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_tuples(BufReader::new(file))
}

pub fn parse_tuples(reader: impl BufRead) -> Result<Vec<TupleRecord>, PatternError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PatternError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TupleRecord = serde_json::from_str(&line).map_err(|e| PatternError::Tuple {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_tuples(path: &Path, tuples: &[TupleRecord]) -> Result<(), PatternError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for t in tuples {
        serde_json::to_writer(&mut w, t).map_err(|e| PatternError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
