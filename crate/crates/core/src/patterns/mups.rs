use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AttributeSchema, InvertedIndex, Pattern, PatternError};

/// Maximal uncovered patterns at a coverage threshold.
///
/// Members are uncovered, every parent of every member is covered, and members
/// are sorted by `(level, cells)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MupSet {
    pub tau: usize,
    pub mups: Vec<Pattern>,
}

impl MupSet {
    pub fn new(tau: usize, mut mups: Vec<Pattern>) -> Self {
        mups.sort_by(|a, b| a.report_order().cmp(&b.report_order()));
        mups.dedup();
        Self { tau, mups }
    }

    pub fn len(&self) -> usize {
        self.mups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pattern> {
        self.mups.iter()
    }

    pub fn min_level(&self) -> Option<usize> {
        self.mups.iter().map(Pattern::level).min()
    }
}

/// Memoized coverage counts over one index.
struct Counter<'a> {
    index: &'a InvertedIndex,
    memo: HashMap<Pattern, usize>,
}

impl Counter<'_> {
    fn count(&mut self, p: &Pattern) -> usize {
        if let Some(&c) = self.memo.get(p) {
            return c;
        }
        let c = self.index.coverage_count(p);
        self.memo.insert(p.clone(), c);
        c
    }
}

/// Level-wise traversal of the pattern lattice.
///
/// Each pattern is generated once, from the parent obtained by dropping its
/// right-most specified cell, and only when that parent is covered. A generated
/// pattern that is uncovered is a MUP iff all of its other parents are covered.
/// The generation chain of any MUP is covered (counts are monotone), so the
/// search is complete.
pub fn find_mups(index: &InvertedIndex, schema: &AttributeSchema, tau: usize) -> MupSet {
    assert!(tau >= 1, "coverage threshold must be positive");
    let d = schema.arity();
    let cards = schema.cardinalities();
    let mut counter = Counter {
        index,
        memo: HashMap::new(),
    };
    let root = Pattern::root(d);
    if counter.count(&root) < tau {
        return MupSet::new(tau, vec![root]);
    }

    let mut mups = Vec::new();
    let mut frontier = vec![root];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for parent in &frontier {
            let start = parent
                .cells()
                .iter()
                .rposition(Option::is_some)
                .map_or(0, |i| i + 1);
            for attr in start..d {
                for value in 0..cards[attr] {
                    let child = parent.with(attr, Some(value));
                    if counter.count(&child) >= tau {
                        next.push(child);
                    } else {
                        let maximal = child.parents().all(|q| counter.count(&q) >= tau);
                        if maximal {
                            mups.push(child);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    MupSet::new(tau, mups)
}

/// The members of `m` at the minimum level (the set resolved first).
pub fn min_level_mups(m: &MupSet) -> Result<MupSet, PatternError> {
    let level = m.min_level().ok_or(PatternError::EmptyMupSet)?;
    Ok(MupSet::new(
        m.tau,
        m.mups
            .iter()
            .filter(|p| p.level() == level)
            .cloned()
            .collect(),
    ))
}
