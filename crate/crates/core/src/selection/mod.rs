//! Combination selection: how many synthetic tuples of which combinations to
//! generate so that every target MUP reaches the coverage threshold.
//!
//! For each target MUP `M` the gap is `δ(M) = τ − |D ∩ M|`. A plan assigns a
//! count `σ[c]` to full combinations; it is feasible when, for every `M`,
//! `Σ_{c refines M} σ[c] ≥ δ(M)`. Minimizing `Σ σ` is NP-hard (vertex cover
//! reduces to it, see [`vc_reduce`]); [`greedy_plan`] is the `H_η`-approximation
//! and [`optimal_plan_bruteforce`] is the exact oracle for small instances.

mod baselines;
mod clique;
mod exact;
mod greedy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::{AttributeSchema, InvertedIndex, MupSet, Pattern};

pub use baselines::{min_gap_plan, random_plan};
pub use clique::{compatibility_cliques, CLIQUE_EXACT_MAX};
pub use exact::{
    optimal_plan_bruteforce, optimal_plan_over, vc_reduce, Graph, VcInstance,
    BRUTEFORCE_MAX_COMBINATIONS, BRUTEFORCE_MAX_ETA,
};
pub use greedy::{fill_combination, greedy_plan, max_matching_combination};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("pattern {pattern} has count {count} >= tau {tau}; it is not uncovered")]
    NotUncovered {
        pattern: String,
        count: usize,
        tau: usize,
    },
    #[error("instance too large for exhaustive search: {0}")]
    SizeLimit(String),
    #[error("no candidate combination matches MUP {0}")]
    Infeasible(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// `δ(M)` for each target MUP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapTable {
    pub tau: usize,
    pub entries: BTreeMap<Pattern, u64>,
}

impl GapTable {
    pub fn new(tau: usize, entries: BTreeMap<Pattern, u64>) -> Self {
        Self { tau, entries }
    }

    /// `η = Σ δ(M)`.
    pub fn eta(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn get(&self, p: &Pattern) -> Option<u64> {
        self.entries.get(p).copied()
    }

    /// Gaps restricted to the members of `m`.
    pub fn restricted_to(&self, m: &MupSet) -> GapTable {
        GapTable {
            tau: self.tau,
            entries: m
                .iter()
                .filter_map(|p| self.entries.get(p).map(|&g| (p.clone(), g)))
                .collect(),
        }
    }
}

/// `δ(M) = τ − |D ∩ M|` for every member of `mups`.
pub fn compute_gaps(
    mups: &MupSet,
    index: &InvertedIndex,
    tau: usize,
) -> Result<GapTable, SelectionError> {
    let mut entries = BTreeMap::new();
    for m in mups.iter() {
        let count = index.coverage_count(m);
        if count >= tau {
            return Err(SelectionError::NotUncovered {
                pattern: m.to_string(),
                count,
                tau,
            });
        }
        entries.insert(m.clone(), (tau - count) as u64);
    }
    Ok(GapTable { tau, entries })
}

/// Number of synthetic tuples to generate per combination.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub sigma: BTreeMap<Pattern, u64>,
    pub total: u64,
    /// Set when a step fell back to the greedy clique heuristic (more than
    /// [`CLIQUE_EXACT_MAX`] remaining MUPs).
    #[serde(default)]
    pub approximate_clique: bool,
}

impl AugmentationPlan {
    pub fn add(&mut self, c: Pattern, count: u64) {
        debug_assert!(c.is_combination());
        if count == 0 {
            return;
        }
        *self.sigma.entry(c).or_insert(0) += count;
        self.total += count;
    }

    /// Synthetic tuples in the plan that match `m`.
    pub fn supply(&self, m: &Pattern) -> u64 {
        self.sigma
            .iter()
            .filter(|(c, _)| c.refines(m))
            .map(|(_, &s)| s)
            .sum()
    }

    /// Every MUP in `gaps` receives at least its gap.
    pub fn is_feasible(&self, gaps: &GapTable) -> bool {
        gaps.entries.iter().all(|(m, &g)| self.supply(m) >= g)
    }
}

/// Remaining gaps during a solver loop, in deterministic order.
#[derive(Debug, Clone)]
pub(crate) struct Residual {
    pub mups: Vec<Pattern>,
    pub gaps: Vec<u64>,
}

impl Residual {
    pub fn from_table(table: &GapTable) -> Self {
        let (mups, gaps) = table
            .entries
            .iter()
            .filter(|(_, &g)| g > 0)
            .map(|(m, &g)| (m.clone(), g))
            .unzip();
        Self { mups, gaps }
    }

    pub fn is_empty(&self) -> bool {
        self.mups.is_empty()
    }

    /// Subtract `amount` from every remaining MUP matched by `c` (clamping at
    /// zero) and drop the ones that reach zero.
    pub fn serve(&mut self, c: &Pattern, amount: u64) {
        for (m, g) in self.mups.iter().zip(self.gaps.iter_mut()) {
            if c.refines(m) {
                *g = g.saturating_sub(amount);
            }
        }
        let mut i = 0;
        while i < self.mups.len() {
            if self.gaps[i] == 0 {
                self.mups.remove(i);
                self.gaps.remove(i);
            } else {
                i += 1;
            }
        }
    }
}

/// Plan export document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub solver: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tau: usize,
    pub eta: u64,
    pub total: u64,
    pub approximate_clique: bool,
    pub gaps: BTreeMap<String, u64>,
    pub combinations: BTreeMap<String, u64>,
}

impl PlanDocument {
    pub fn new(
        solver: &str,
        seed: Option<u64>,
        gaps: &GapTable,
        plan: &AugmentationPlan,
        schema: &AttributeSchema,
    ) -> Self {
        Self {
            solver: solver.to_string(),
            seed,
            tau: gaps.tau,
            eta: gaps.eta(),
            total: plan.total,
            approximate_clique: plan.approximate_clique,
            gaps: gaps
                .entries
                .iter()
                .map(|(m, &g)| (m.render(schema), g))
                .collect(),
            combinations: plan
                .sigma
                .iter()
                .map(|(c, &s)| (c.render(schema), s))
                .collect(),
        }
    }
}

/// Plan selector names accepted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Greedy,
    MinGap,
    Random,
    Optimal,
}

impl std::str::FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Solver::Greedy),
            "min-gap" | "min_gap" => Ok(Solver::MinGap),
            "random" => Ok(Solver::Random),
            "optimal" | "bruteforce" => Ok(Solver::Optimal),
            other => Err(format!("unknown solver `{other}`")),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Greedy => "greedy",
            Solver::MinGap => "min-gap",
            Solver::Random => "random",
            Solver::Optimal => "optimal",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{Attribute, Dataset, TupleRecord};

    #[test]
    fn gap_boundary_is_one() {
        let schema =
            AttributeSchema::with_default_template(vec![Attribute::new("a", false, &["0", "1"])])
                .unwrap();
        let tuples = (0..4)
            .map(|i| TupleRecord::new(format!("t{i}"), vec![0], vec![0.0]))
            .collect();
        let ds = Dataset::new(schema, tuples).unwrap();
        let idx = InvertedIndex::build(&ds);
        let m = MupSet::new(5, vec!["0".parse().unwrap()]);
        let gaps = compute_gaps(&m, &idx, 5).unwrap();
        assert_eq!(gaps.get(&"0".parse().unwrap()), Some(1));
        let err = compute_gaps(&m, &idx, 4).unwrap_err();
        assert!(matches!(err, SelectionError::NotUncovered { count: 4, .. }));
    }

    #[test]
    fn residual_clamps_and_drops() {
        let table = GapTable::new(
            3,
            [("1X".parse().unwrap(), 2), ("X1".parse().unwrap(), 3)]
                .into_iter()
                .collect(),
        );
        let mut r = Residual::from_table(&table);
        r.serve(&"11".parse().unwrap(), 2);
        assert_eq!(r.mups, vec!["X1".parse::<Pattern>().unwrap()]);
        assert_eq!(r.gaps, vec![1]);
        r.serve(&"01".parse().unwrap(), 5);
        assert!(r.is_empty());
    }
}
