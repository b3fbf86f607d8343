use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::PatternError;

/// Token reserved for an unspecified pattern cell.
pub const WILDCARD: &str = "X";

/// One categorical attribute of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(default)]
    pub ordinal: bool,
    pub domain: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, ordinal: bool, domain: &[&str]) -> Self {
        Self {
            name: name.into(),
            ordinal,
            domain: domain.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.domain.len()
    }

    /// Resolve a token to a value index: exact label first, then a numeric index.
    pub fn resolve(&self, token: &str) -> Option<usize> {
        if let Some(i) = self.domain.iter().position(|v| v == token) {
            return Some(i);
        }
        token
            .parse::<usize>()
            .ok()
            .filter(|&i| i < self.domain.len())
    }
}

/// The attributes of interest plus the prompt template used to describe a combination.
///
/// The template carries one `{name}` placeholder per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub prompt_template: String,
}

impl AttributeSchema {
    /// Build and validate a schema.
    pub fn new(
        attributes: Vec<Attribute>,
        prompt_template: impl Into<String>,
    ) -> Result<Self, PatternError> {
        let schema = Self {
            attributes,
            prompt_template: prompt_template.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Schema with a template generated from the attribute names, one placeholder each.
    pub fn with_default_template(attributes: Vec<Attribute>) -> Result<Self, PatternError> {
        let template = attributes
            .iter()
            .map(|a| format!("{{{}}}", a.name))
            .collect::<Vec<_>>()
            .join(" ");
        Self::new(attributes, format!("A realistic photo of a {template}"))
    }

    pub fn validate(&self) -> Result<(), PatternError> {
        if self.attributes.is_empty() {
            return Err(PatternError::Schema("schema has no attributes".into()));
        }
        let mut names = BTreeSet::new();
        for attr in &self.attributes {
            if attr.domain.len() < 2 {
                return Err(PatternError::Schema(format!(
                    "attribute `{}` has cardinality {} (need at least 2)",
                    attr.name,
                    attr.domain.len()
                )));
            }
            if !names.insert(attr.name.as_str()) {
                return Err(PatternError::Schema(format!(
                    "duplicate attribute name `{}`",
                    attr.name
                )));
            }
            let mut labels = BTreeSet::new();
            for label in &attr.domain {
                if label == WILDCARD {
                    return Err(PatternError::Schema(format!(
                        "attribute `{}` uses the reserved label `{WILDCARD}`",
                        attr.name
                    )));
                }
                if label.is_empty()
                    || label.contains([',', '|', '·'])
                    || label.chars().any(char::is_whitespace)
                {
                    return Err(PatternError::Schema(format!(
                        "attribute `{}` has label `{label}` containing a separator character",
                        attr.name
                    )));
                }
                if !labels.insert(label.as_str()) {
                    return Err(PatternError::Schema(format!(
                        "attribute `{}` repeats label `{label}`",
                        attr.name
                    )));
                }
            }
        }
        let placeholders = template_placeholders(&self.prompt_template);
        let expected: BTreeSet<String> = self.attributes.iter().map(|a| a.name.clone()).collect();
        if placeholders != expected {
            return Err(PatternError::Schema(format!(
                "prompt template placeholders {placeholders:?} do not match attribute names {expected:?}"
            )));
        }
        Ok(())
    }

    /// Number of attributes, `d`.
    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::cardinality).collect()
    }

    /// Size of the full combination product.
    pub fn combination_count(&self) -> usize {
        self.attributes.iter().map(Attribute::cardinality).product()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// True when every label in every domain is a single character, so patterns
    /// render without separators ("X01").
    pub fn compact_labels(&self) -> bool {
        self.attributes
            .iter()
            .all(|a| a.domain.iter().all(|l| l.chars().count() == 1))
    }
}

/// The `{name}` placeholders appearing in a template.
pub fn template_placeholders(template: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                out.insert(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}
