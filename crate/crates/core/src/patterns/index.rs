use super::{Dataset, Pattern};

/// Datasets up to this size use fixed-width bit-sets; larger ones use sorted id lists.
pub const BITSET_MAX_TUPLES: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Auto,
    Bits,
    Sorted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum IdSet {
    Bits(Vec<u64>),
    Sorted(Vec<u32>),
}

impl IdSet {
    fn len(&self) -> usize {
        match self {
            IdSet::Bits(words) => words.iter().map(|w| w.count_ones() as usize).sum(),
            IdSet::Sorted(ids) => ids.len(),
        }
    }
}

/// Per (attribute, value) sets of tuple positions.
///
/// For each attribute the per-value sets partition `0..n`.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    n: usize,
    sets: Vec<Vec<IdSet>>,
}

impl InvertedIndex {
    pub fn build(dataset: &Dataset) -> Self {
        Self::build_with(dataset, Representation::Auto)
    }

    pub fn build_with(dataset: &Dataset, repr: Representation) -> Self {
        let n = dataset.len();
        let bits = match repr {
            Representation::Auto => n <= BITSET_MAX_TUPLES,
            Representation::Bits => true,
            Representation::Sorted => false,
        };
        let words = n.div_ceil(64);
        let sets = dataset
            .schema
            .attributes
            .iter()
            .enumerate()
            .map(|(attr, a)| {
                (0..a.cardinality())
                    .map(|value| {
                        let ids = dataset
                            .tuples
                            .iter()
                            .enumerate()
                            .filter(|(_, t)| t.values[attr] == value)
                            .map(|(i, _)| i);
                        if bits {
                            let mut w = vec![0u64; words];
                            for i in ids {
                                w[i / 64] |= 1 << (i % 64);
                            }
                            IdSet::Bits(w)
                        } else {
                            IdSet::Sorted(ids.map(|i| i as u32).collect())
                        }
                    })
                    .collect()
            })
            .collect();
        Self { n, sets }
    }

    /// Number of indexed tuples, `|D|`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn arity(&self) -> usize {
        self.sets.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    fn specified<'a>(&'a self, p: &'a Pattern) -> impl Iterator<Item = &'a IdSet> + 'a {
        p.cells()
            .iter()
            .enumerate()
            .filter_map(move |(attr, c)| c.map(|v| &self.sets[attr][v]))
    }

    /// `|{t ∈ D : p matches t}|`, by intersecting the sets of the specified cells.
    pub fn coverage_count(&self, p: &Pattern) -> usize {
        let mut sets: Vec<&IdSet> = self.specified(p).collect();
        match sets.len() {
            0 => self.n,
            1 => sets[0].len(),
            _ => match sets[0] {
                IdSet::Bits(_) => {
                    let words = self.n.div_ceil(64);
                    (0..words)
                        .map(|w| {
                            sets.iter()
                                .fold(u64::MAX, |acc, s| match s {
                                    IdSet::Bits(b) => acc & b[w],
                                    IdSet::Sorted(_) => unreachable!("mixed representations"),
                                })
                                .count_ones() as usize
                        })
                        .sum()
                }
                IdSet::Sorted(_) => {
                    sets.sort_by_key(|s| s.len());
                    sorted_intersection(&sets).len()
                }
            },
        }
    }

    /// Tuple positions matching `p`, ascending.
    pub fn matching(&self, p: &Pattern) -> Vec<usize> {
        let mut sets: Vec<&IdSet> = self.specified(p).collect();
        if sets.is_empty() {
            return (0..self.n).collect();
        }
        match sets[0] {
            IdSet::Bits(_) => {
                let words = self.n.div_ceil(64);
                let mut out = Vec::new();
                for w in 0..words {
                    let mut word = sets.iter().fold(u64::MAX, |acc, s| match s {
                        IdSet::Bits(b) => acc & b[w],
                        IdSet::Sorted(_) => unreachable!("mixed representations"),
                    });
                    while word != 0 {
                        let bit = word.trailing_zeros() as usize;
                        out.push(w * 64 + bit);
                        word &= word - 1;
                    }
                }
                out
            }
            IdSet::Sorted(_) => {
                sets.sort_by_key(|s| s.len());
                sorted_intersection(&sets)
                    .into_iter()
                    .map(|i| i as usize)
                    .collect()
            }
        }
    }
}

fn sorted_intersection(sets: &[&IdSet]) -> Vec<u32> {
    let as_slice = |s: &IdSet| match s {
        IdSet::Sorted(v) => v.clone(),
        IdSet::Bits(_) => unreachable!("mixed representations"),
    };
    let mut acc = as_slice(sets[0]);
    for s in &sets[1..] {
        let IdSet::Sorted(other) = s else {
            unreachable!("mixed representations")
        };
        acc.retain(|id| other.binary_search(id).is_ok());
        if acc.is_empty() {
            break;
        }
    }
    acc
}
