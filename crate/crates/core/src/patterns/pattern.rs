use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::schema::{AttributeSchema, WILDCARD};
use super::{PatternError, TupleRecord};

/// A length-`d` string over attribute values and the wildcard.
///
/// `None` cells are unspecified. Ordering is by `(cells)` with unspecified
/// sorting before every value; [`Pattern::report_order`] adds the level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    cells: Vec<Option<usize>>,
}

/// A fully specified pattern.
pub type Combination = Pattern;

impl Pattern {
    pub fn new(cells: Vec<Option<usize>>) -> Self {
        Self { cells }
    }

    /// The level-0 pattern of arity `d`.
    pub fn root(d: usize) -> Self {
        Self {
            cells: vec![None; d],
        }
    }

    pub fn combination(values: &[usize]) -> Self {
        Self {
            cells: values.iter().copied().map(Some).collect(),
        }
    }

    pub fn cells(&self) -> &[Option<usize>] {
        &self.cells
    }

    pub fn arity(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, attr: usize) -> Option<usize> {
        self.cells[attr]
    }

    /// Number of specified cells.
    pub fn level(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_combination(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    /// Values of a fully specified pattern.
    pub fn values(&self) -> Option<Vec<usize>> {
        self.cells.iter().copied().collect()
    }

    pub fn with(&self, attr: usize, value: Option<usize>) -> Self {
        let mut cells = self.cells.clone();
        cells[attr] = value;
        Self { cells }
    }

    pub fn matches_values(&self, values: &[usize]) -> bool {
        self.cells
            .iter()
            .zip(values)
            .all(|(cell, v)| cell.is_none_or(|c| c == *v))
    }

    /// True iff every specified cell equals the tuple's value at that position.
    pub fn matches(&self, tuple: &TupleRecord) -> bool {
        self.matches_values(&tuple.values)
    }

    /// True iff `self` is a (weak) refinement of `general`: every cell specified in
    /// `general` is specified identically here.
    pub fn refines(&self, general: &Pattern) -> bool {
        general
            .cells
            .iter()
            .zip(&self.cells)
            .all(|(g, s)| g.is_none() || g == s)
    }

    /// Two patterns admit a common refinement iff they agree on every cell both specify.
    pub fn compatible(&self, other: &Pattern) -> bool {
        self.cells
            .iter()
            .zip(&other.cells)
            .all(|(a, b)| a.is_none() || b.is_none() || a == b)
    }

    /// The most general common refinement of two compatible patterns.
    pub fn meet(&self, other: &Pattern) -> Option<Pattern> {
        if !self.compatible(other) {
            return None;
        }
        Some(Pattern {
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| a.or(*b))
                .collect(),
        })
    }

    /// Patterns one level more general (one specified cell dropped).
    pub fn parents(&self) -> impl Iterator<Item = Pattern> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(i, _)| self.with(i, None))
    }

    /// Sort key used for deterministic reporting: level first, then cells.
    pub fn report_order(&self) -> (usize, &[Option<usize>]) {
        (self.level(), &self.cells)
    }

    /// Render with the schema's value labels.
    pub fn render(&self, schema: &AttributeSchema) -> String {
        let tokens: Vec<String> = self
            .cells
            .iter()
            .zip(&schema.attributes)
            .map(|(c, a)| match c {
                Some(v) => a.domain[*v].clone(),
                None => WILDCARD.to_string(),
            })
            .collect();
        if schema.compact_labels() {
            tokens.concat()
        } else {
            tokens.join(",")
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let compact = self.cells.iter().all(|c| c.is_none_or(|v| v < 10));
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 && !compact {
                f.write_str(",")?;
            }
            match c {
                Some(v) => write!(f, "{v}")?,
                None => f.write_str(WILDCARD)?,
            }
        }
        Ok(())
    }
}

/// Parse a schema-independent rendering (indices and `X`), as produced by `Display`.
impl std::str::FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens = tokenize(s, None);
        let cells = tokens
            .iter()
            .map(|t| {
                if *t == WILDCARD {
                    Ok(None)
                } else {
                    t.parse::<usize>()
                        .map(Some)
                        .map_err(|_| PatternError::UnknownValue {
                            position: 0,
                            token: t.to_string(),
                        })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Pattern { cells })
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn tokenize(text: &str, arity: Option<usize>) -> Vec<&str> {
    let text = text.trim();
    let separated = text.contains([',', '|', '·']) || text.contains(char::is_whitespace);
    if separated {
        return text
            .split(|c: char| c == ',' || c == '|' || c == '·' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
    }
    // Compact form: one character per cell.
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    if arity != Some(1) {
        return chars
            .iter()
            .map(|&(i, ch)| &text[i..i + ch.len_utf8()])
            .collect();
    }
    vec![text]
}

/// Parse pattern text against a schema.
///
/// Tokens are separated by `,`, `|`, `·` or whitespace, or written one character per
/// cell when every label is a single character. Each token is `X`, a value label, or
/// a value index.
pub fn parse_pattern(text: &str, schema: &AttributeSchema) -> Result<Pattern, PatternError> {
    let d = schema.arity();
    let tokens = tokenize(text, Some(d));
    if tokens.len() != d {
        return Err(PatternError::WrongArity {
            expected: d,
            found: tokens.len(),
        });
    }
    let cells = tokens
        .iter()
        .zip(&schema.attributes)
        .enumerate()
        .map(|(position, (token, attr))| {
            if *token == WILDCARD {
                Ok(None)
            } else {
                attr.resolve(token)
                    .map(Some)
                    .ok_or_else(|| PatternError::UnknownValue {
                        position,
                        token: token.to_string(),
                    })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pattern { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Attribute;

    fn three_binary() -> AttributeSchema {
        AttributeSchema::with_default_template(vec![
            Attribute::new("x1", false, &["0", "1"]),
            Attribute::new("x2", false, &["0", "1"]),
            Attribute::new("x3", false, &["0", "1"]),
        ])
        .unwrap()
    }

    fn tuple(values: &[usize]) -> TupleRecord {
        TupleRecord::new("t", values.to_vec(), vec![0.0])
    }

    #[test]
    fn parse_compact_pattern() {
        let p = parse_pattern("X01", &three_binary()).unwrap();
        assert_eq!(p.cells(), &[None, Some(0), Some(1)]);
        assert_eq!(p.level(), 2);
    }

    #[test]
    fn parse_all_unspecified() {
        let p = parse_pattern("XXX", &three_binary()).unwrap();
        assert_eq!(p.level(), 0);
        assert_eq!(p, Pattern::root(3));
    }

    #[test]
    fn parse_out_of_domain() {
        let err = parse_pattern("X09", &three_binary()).unwrap_err();
        assert!(matches!(
            err,
            PatternError::UnknownValue { position: 2, .. }
        ));
    }

    #[test]
    fn parse_wrong_arity() {
        let err = parse_pattern("X0", &three_binary()).unwrap_err();
        assert!(matches!(
            err,
            PatternError::WrongArity {
                expected: 3,
                found: 2
            }
        ));
    }

    #[test]
    fn parse_labels_with_separators() {
        let schema = AttributeSchema::with_default_template(vec![
            Attribute::new("race", false, &["White", "Black"]),
            Attribute::new("gender", false, &["Male", "Female"]),
        ])
        .unwrap();
        let p = parse_pattern("Black·X", &schema).unwrap();
        assert_eq!(p.cells(), &[Some(1), None]);
        assert_eq!(
            parse_pattern("Black, Female", &schema)
                .unwrap()
                .render(&schema),
            "Black,Female"
        );
        assert_eq!(p.render(&schema), "Black,X");
    }

    #[test]
    fn matching_semantics() {
        let p = parse_pattern("X01", &three_binary()).unwrap();
        assert!(p.matches(&tuple(&[1, 0, 1])));
        assert!(!p.matches(&tuple(&[0, 1, 1])));
        assert!(Pattern::root(3).matches(&tuple(&[0, 1, 1])));
    }

    #[test]
    fn display_round_trip() {
        let p = Pattern::new(vec![None, Some(0), Some(12)]);
        assert_eq!(p.to_string(), "X,0,12");
        assert_eq!(p.to_string().parse::<Pattern>().unwrap(), p);
        let q = Pattern::new(vec![Some(1), None]);
        assert_eq!(q.to_string(), "1X");
        assert_eq!("1X".parse::<Pattern>().unwrap(), q);
    }

    #[test]
    fn compatibility_and_meet() {
        let a: Pattern = "1XX".parse().unwrap();
        let b: Pattern = "X1X".parse().unwrap();
        let c: Pattern = "0XX".parse().unwrap();
        assert!(a.compatible(&b));
        assert!(!a.compatible(&c));
        assert_eq!(a.meet(&b).unwrap(), "11X".parse().unwrap());
        assert!("110".parse::<Pattern>().unwrap().refines(&a));
        assert!(!"010".parse::<Pattern>().unwrap().refines(&a));
    }

    #[test]
    fn parents_drop_one_cell() {
        let p: Pattern = "1X0".parse().unwrap();
        let parents: Vec<String> = p.parents().map(|q| q.to_string()).collect();
        assert_eq!(parents, vec!["XX0", "1XX"]);
    }
}
