use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::clique::compatibility_cliques;
use super::{AugmentationPlan, GapTable, SelectionError};
use crate::patterns::{Attribute, AttributeSchema, MupSet, Pattern};

/// Largest `η` accepted by [`optimal_plan_bruteforce`].
pub const BRUTEFORCE_MAX_ETA: u64 = 12;
/// Largest number of relevant combinations accepted by [`optimal_plan_bruteforce`].
pub const BRUTEFORCE_MAX_COMBINATIONS: usize = 10;

const OVER_MAX_CANDIDATES: usize = 20;
const OVER_MAX_ETA: u64 = 64;

/// Exact minimum-total plan for a small instance.
///
/// A combination's usefulness is determined by the set of MUPs it matches, and
/// every such set lies inside a maximal clique of the compatibility graph, so one
/// representative combination per maximal clique is enough.
pub fn optimal_plan_bruteforce(
    mstar: &MupSet,
    gaps: &GapTable,
    schema: &AttributeSchema,
) -> Result<AugmentationPlan, SelectionError> {
    let gaps = gaps.restricted_to(mstar);
    if gaps.eta() > BRUTEFORCE_MAX_ETA {
        return Err(SelectionError::SizeLimit(format!(
            "eta = {} exceeds {BRUTEFORCE_MAX_ETA}",
            gaps.eta()
        )));
    }
    if mstar.len() > super::CLIQUE_EXACT_MAX {
        return Err(SelectionError::SizeLimit(format!("{} MUPs", mstar.len())));
    }
    let cliques = compatibility_cliques(&mstar.mups, false);
    if cliques.len() > BRUTEFORCE_MAX_COMBINATIONS {
        return Err(SelectionError::SizeLimit(format!(
            "{} relevant combinations exceed {BRUTEFORCE_MAX_COMBINATIONS}",
            cliques.len()
        )));
    }
    let d = schema.arity();
    let candidates: Vec<Pattern> = cliques
        .iter()
        .map(|cl| {
            let meet = cl
                .iter()
                .try_fold(Pattern::root(d), |acc, &i| acc.meet(&mstar.mups[i]))
                .expect("clique is jointly compatible");
            let values: Vec<usize> = meet.cells().iter().map(|c| c.unwrap_or(0)).collect();
            Pattern::combination(&values)
        })
        .collect();
    search(&candidates, mstar, &gaps)
}

/// Exact minimum-total plan restricted to an explicit list of candidate combinations.
pub fn optimal_plan_over(
    candidates: &[Pattern],
    mstar: &MupSet,
    gaps: &GapTable,
) -> Result<AugmentationPlan, SelectionError> {
    let gaps = gaps.restricted_to(mstar);
    if candidates.len() > OVER_MAX_CANDIDATES || gaps.eta() > OVER_MAX_ETA {
        return Err(SelectionError::SizeLimit(format!(
            "{} candidates, eta = {}",
            candidates.len(),
            gaps.eta()
        )));
    }
    search(candidates, mstar, &gaps)
}

/// Memoized search over residual-gap states: the first open MUP must be served
/// by some candidate that matches it, so branching on that candidate enumerates
/// every count vector up to reordering.
fn search(
    candidates: &[Pattern],
    mstar: &MupSet,
    gaps: &GapTable,
) -> Result<AugmentationPlan, SelectionError> {
    let mups: Vec<&Pattern> = gaps.entries.keys().collect();
    let start: Vec<u64> = gaps.entries.values().copied().collect();
    let matches: Vec<Vec<usize>> = candidates
        .iter()
        .map(|c| (0..mups.len()).filter(|&i| c.refines(mups[i])).collect())
        .collect();
    for (i, m) in mups.iter().enumerate() {
        if start[i] > 0 && !matches.iter().any(|ms| ms.contains(&i)) {
            return Err(SelectionError::Infeasible(m.to_string()));
        }
    }
    debug_assert!(mups.iter().all(|m| mstar.mups.contains(m)));

    let mut memo: HashMap<Vec<u64>, (u64, Option<usize>)> = HashMap::new();
    solve(&start, &matches, &mut memo);

    let mut plan = AugmentationPlan::default();
    let mut state = start;
    while let Some(&(_, Some(j))) = memo.get(&state) {
        plan.add(candidates[j].clone(), 1);
        state = apply(&state, &matches[j]);
    }
    Ok(plan)
}

fn apply(state: &[u64], matched: &[usize]) -> Vec<u64> {
    let mut next = state.to_vec();
    for &i in matched {
        next[i] = next[i].saturating_sub(1);
    }
    next
}

fn solve(
    state: &[u64],
    matches: &[Vec<usize>],
    memo: &mut HashMap<Vec<u64>, (u64, Option<usize>)>,
) -> u64 {
    if let Some(&(v, _)) = memo.get(state) {
        return v;
    }
    let Some(first) = state.iter().position(|&g| g > 0) else {
        memo.insert(state.to_vec(), (0, None));
        return 0;
    };
    let mut best = (u64::MAX, None);
    for (j, matched) in matches.iter().enumerate() {
        if !matched.contains(&first) {
            continue;
        }
        let cost = 1 + solve(&apply(state, matched), matches, memo);
        if cost < best.0 {
            best = (cost, Some(j));
        }
    }
    memo.insert(state.to_vec(), best);
    best.0
}

/// A simple undirected graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

/// A combination-selection instance derived from a vertex-cover instance.
///
/// One binary attribute per edge; one candidate combination per vertex with 1s
/// exactly at its incident edges; one level-1 MUP per edge (its cell set to 1)
/// with gap 1. A vertex cover of size `k` exists iff a plan of total `k` exists.
#[derive(Debug, Clone)]
pub struct VcInstance {
    pub graph: Graph,
    pub k: usize,
    pub candidates: Vec<Pattern>,
    pub mups: MupSet,
    pub gaps: GapTable,
}

impl VcInstance {
    /// Binary schema with one attribute per edge; `None` for an edgeless graph.
    pub fn schema(&self) -> Option<AttributeSchema> {
        let attrs: Vec<Attribute> = (0..self.graph.edges.len())
            .map(|i| Attribute::new(format!("e{i}"), false, &["0", "1"]))
            .collect();
        AttributeSchema::with_default_template(attrs).ok()
    }

    /// Minimum plan total over the vertex combinations.
    pub fn optimal_total(&self) -> Result<u64, SelectionError> {
        Ok(optimal_plan_over(&self.candidates, &self.mups, &self.gaps)?.total)
    }

    /// Decision version: does a plan of total at most `k` exist?
    pub fn decide(&self) -> Result<bool, SelectionError> {
        Ok(self.optimal_total()? <= self.k as u64)
    }
}

pub fn vc_reduce(graph: &Graph, k: usize) -> Result<VcInstance, SelectionError> {
    let mut seen = BTreeSet::new();
    for &(u, v) in &graph.edges {
        if u == v {
            return Err(SelectionError::InvalidGraph(format!("self loop at {u}")));
        }
        if u >= graph.vertices || v >= graph.vertices {
            return Err(SelectionError::InvalidGraph(format!(
                "edge ({u}, {v}) out of range"
            )));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(SelectionError::InvalidGraph(format!(
                "duplicate edge ({u}, {v})"
            )));
        }
    }
    let m = graph.edges.len();
    let candidates = (0..graph.vertices)
        .map(|vertex| {
            let row: Vec<usize> = graph
                .edges
                .iter()
                .map(|&(a, b)| usize::from(a == vertex || b == vertex))
                .collect();
            Pattern::combination(&row)
        })
        .collect();
    let mups: Vec<Pattern> = (0..m).map(|i| Pattern::root(m).with(i, Some(1))).collect();
    let gaps = GapTable::new(1, mups.iter().map(|p| (p.clone(), 1)).collect());
    Ok(VcInstance {
        graph: graph.clone(),
        k,
        candidates,
        mups: MupSet::new(1, mups),
        gaps,
    })
}
