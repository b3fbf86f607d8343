use crate::patterns::Pattern;

/// Largest MUP count for which cliques are enumerated exactly (one `u64` bitmask).
pub const CLIQUE_EXACT_MAX: usize = 64;

/// Cliques of the pairwise-compatibility graph over `mups`.
///
/// Two patterns admit a common refinement iff they agree on every commonly
/// specified cell, and pairwise compatibility implies joint compatibility, so a
/// set of MUPs is matched by one combination iff it is a clique.
///
/// With `maximum_only`, returns every clique of maximum size; otherwise every
/// maximal clique. Cliques are index lists in ascending order, returned sorted.
/// Requires `mups.len() <= CLIQUE_EXACT_MAX`.
pub fn compatibility_cliques(mups: &[Pattern], maximum_only: bool) -> Vec<Vec<usize>> {
    assert!(
        mups.len() <= CLIQUE_EXACT_MAX,
        "exact clique search limited to 64 patterns"
    );
    if mups.is_empty() {
        return Vec::new();
    }
    let adj = adjacency(mups);
    let mut search = BronKerbosch {
        adj: &adj,
        maximum_only,
        best: 0,
        out: Vec::new(),
    };
    let all = if mups.len() == 64 {
        u64::MAX
    } else {
        (1u64 << mups.len()) - 1
    };
    search.run(0, all, 0);
    let mut cliques: Vec<Vec<usize>> = search.out.into_iter().map(bits_to_indices).collect();
    cliques.sort();
    cliques
}

/// A large clique built greedily by descending degree (used above the exact limit).
pub(crate) fn greedy_clique(mups: &[Pattern]) -> Vec<usize> {
    let n = mups.len();
    let degree: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && mups[i].compatible(&mups[j]))
                .count()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        if chosen.iter().all(|&j| mups[i].compatible(&mups[j])) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn adjacency(mups: &[Pattern]) -> Vec<u64> {
    (0..mups.len())
        .map(|i| {
            (0..mups.len())
                .filter(|&j| j != i && mups[i].compatible(&mups[j]))
                .fold(0u64, |acc, j| acc | (1 << j))
        })
        .collect()
}

fn bits_to_indices(mut bits: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(bits.count_ones() as usize);
    while bits != 0 {
        out.push(bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
    out
}

struct BronKerbosch<'a> {
    adj: &'a [u64],
    maximum_only: bool,
    best: u32,
    out: Vec<u64>,
}

impl BronKerbosch<'_> {
    fn run(&mut self, r: u64, mut p: u64, mut x: u64) {
        if p == 0 && x == 0 {
            let size = r.count_ones();
            if self.maximum_only {
                if size > self.best {
                    self.best = size;
                    self.out.clear();
                }
                if size == self.best {
                    self.out.push(r);
                }
            } else {
                self.out.push(r);
            }
            return;
        }
        if self.maximum_only && r.count_ones() + p.count_ones() < self.best {
            return;
        }
        // Tomita pivot: the vertex of P ∪ X with most neighbours in P.
        let pivot = bits_to_indices(p | x)
            .into_iter()
            .max_by_key(|&u| ((p & self.adj[u]).count_ones(), std::cmp::Reverse(u)))
            .expect("p | x nonempty");
        let mut candidates = p & !self.adj[pivot];
        while candidates != 0 {
            let v = candidates.trailing_zeros() as usize;
            let bit = 1u64 << v;
            candidates &= candidates - 1;
            self.run(r | bit, p & self.adj[v], x & self.adj[v]);
            p &= !bit;
            x |= bit;
        }
    }
}
