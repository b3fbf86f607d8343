use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GuideError;
use crate::patterns::{AttributeSchema, Combination, InvertedIndex};

/// Siblings that differ in one attribute, by exactly one step when that attribute is ordinal.
pub fn similar(c1: &Combination, c2: &Combination, schema: &AttributeSchema) -> bool {
    let diffs: Vec<usize> = (0..schema.arity())
        .filter(|&i| c1.get(i) != c2.get(i))
        .collect();
    let [attr] = diffs[..] else {
        return false;
    };
    match (c1.get(attr), c2.get(attr)) {
        (Some(a), Some(b)) => !schema.attributes[attr].ordinal || a.abs_diff(b) == 1,
        _ => false,
    }
}

/// Every combination similar to `c` obtained by changing attribute `attr`.
pub fn similar_on(c: &Combination, attr: usize, schema: &AttributeSchema) -> Vec<Combination> {
    let Some(current) = c.get(attr) else {
        return Vec::new();
    };
    let a = &schema.attributes[attr];
    (0..a.cardinality())
        .filter(|&v| v != current && (!a.ordinal || v.abs_diff(current) == 1))
        .map(|v| c.with(attr, Some(v)))
        .collect()
}

/// Every combination similar to `c`, in attribute then value order.
pub fn similar_candidates(c: &Combination, schema: &AttributeSchema) -> Vec<Combination> {
    (0..schema.arity())
        .flat_map(|attr| similar_on(c, attr, schema))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub combination: Combination,
    pub count: usize,
    pub weight: f64,
}

/// Similar combinations with at least one tuple, weighted by their size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarPool {
    pub entries: Vec<PoolEntry>,
}

impl SimilarPool {
    /// Pool over `candidates` weighted by dataset count; zero-count combinations are dropped.
    pub fn from_candidates(
        candidates: Vec<Combination>,
        index: &InvertedIndex,
    ) -> Result<Self, GuideError> {
        let counted: Vec<(Combination, usize)> = candidates
            .into_iter()
            .map(|c| {
                let n = index.coverage_count(&c);
                (c, n)
            })
            .filter(|(_, n)| *n > 0)
            .collect();
        let total: usize = counted.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return Err(GuideError::EmptyPool);
        }
        Ok(Self {
            entries: counted
                .into_iter()
                .map(|(combination, count)| PoolEntry {
                    combination,
                    count,
                    weight: count as f64 / total as f64,
                })
                .collect(),
        })
    }

    /// Draw a combination with probability `w_i`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Combination {
        let dist = WeightedIndex::new(self.entries.iter().map(|e| e.count))
            .expect("pool has positive total weight");
        &self.entries[dist.sample(rng)].combination
    }
}

pub fn build_similar_pool(
    c: &Combination,
    schema: &AttributeSchema,
    index: &InvertedIndex,
) -> Result<SimilarPool, GuideError> {
    SimilarPool::from_candidates(similar_candidates(c, schema), index)
}
