use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::{CombinationProgress, Outcome, Phase, RunState};
use super::OrchestratorError;
use crate::generator_client::Money;
use crate::guide_selection::Strategy;
use crate::patterns::{AttributeSchema, InvertedIndex};

/// `max(0, 1 − ρ_g / ρ_all)`.
pub fn disparity(overall: f64, group: f64) -> Result<f64, OrchestratorError> {
    if !(overall > 0.0) {
        return Err(OrchestratorError::ZeroOverallMetric);
    }
    Ok((1.0 - group / overall).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRate {
    pub evaluated: u64,
    pub passed: u64,
    pub rate: Option<f64>,
}

impl GateRate {
    fn new(evaluated: u64, passed: u64) -> Self {
        Self {
            evaluated,
            passed,
            rate: (evaluated > 0).then(|| passed as f64 / evaluated as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageLine {
    pub tau: usize,
    pub before: usize,
    pub after: usize,
    pub covered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityLine {
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub phase: Phase,
    pub strategy: Strategy,
    pub rounds: usize,
    pub mups_targeted: usize,
    pub eta: u64,
    pub planned: u64,
    pub queries: u64,
    pub accepted: u64,
    pub distribution_rejected: u64,
    pub quality_rejected: u64,
    pub backend_errors: u64,
    pub pending_evaluation: u64,
    pub distribution_gate: GateRate,
    pub quality_gate: GateRate,
    pub joint_pass_rate: Option<f64>,
    pub cost_total: Money,
    pub cost_display: String,
    pub p_real: f64,
    pub coverage: BTreeMap<String, CoverageLine>,
    pub combinations: BTreeMap<String, CombinationProgress>,
    pub unresolved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<BTreeMap<String, DisparityLine>>,
    /// `queries = accepted + distribution-rejected + quality-rejected + backend errors + pending`.
    pub conservation_holds: bool,
}

/// Build the report; `augmented` indexes real plus accepted tuples.
pub fn build_report(
    state: &RunState,
    schema: &AttributeSchema,
    augmented: &InvertedIndex,
) -> Result<RunReport, OrchestratorError> {
    let count = |o: Outcome| state.records.iter().filter(|r| r.outcome == o).count() as u64;
    let accepted = count(Outcome::Accepted);
    let distribution_rejected = count(Outcome::DistributionRejected);
    let quality_rejected = count(Outcome::QualityRejected);
    let backend_errors = count(Outcome::BackendError);
    let pending_evaluation = count(Outcome::AwaitingEvaluation);
    let queries = state.ledger.queries;
    let dist_evaluated = state
        .records
        .iter()
        .filter(|r| r.distribution.is_some())
        .count() as u64;
    let quality_evaluated = state.records.iter().filter(|r| r.quality.is_some()).count() as u64;

    let mut coverage = BTreeMap::new();
    let mut combinations = BTreeMap::new();
    let (mut eta, mut planned, mut mups_targeted) = (0, 0, 0);
    for (i, round) in state.rounds.iter().enumerate() {
        eta += round.gaps.eta();
        planned += round.plan.total;
        mups_targeted += round.mups.len();
        for m in round.mups.iter() {
            let after = augmented.coverage_count(m);
            coverage.insert(
                m.render(schema),
                CoverageLine {
                    tau: round.gaps.tau,
                    before: round.coverage_before.get(m).copied().unwrap_or(0),
                    after,
                    covered: after >= round.gaps.tau,
                },
            );
        }
        for (c, p) in &round.progress {
            let key = if state.rounds.len() > 1 {
                format!("{}#{}", c.render(schema), i + 1)
            } else {
                c.render(schema)
            };
            combinations.insert(key, *p);
        }
    }

    let disparity = match &state.config.metrics {
        None => None,
        Some(m) => {
            let mut lines = BTreeMap::new();
            for (g, v) in &m.groups {
                let before = disparity(m.overall_before, v.before)?;
                let after = disparity(m.overall_after, v.after)?;
                lines.insert(
                    g.clone(),
                    DisparityLine {
                        before,
                        after,
                        delta: after - before,
                    },
                );
            }
            Some(lines)
        }
    };

    let total = state.ledger.total();
    Ok(RunReport {
        run_id: state.run_id.clone(),
        phase: state.phase,
        strategy: state.config.strategy,
        rounds: state.rounds.len(),
        mups_targeted,
        eta,
        planned,
        queries,
        accepted,
        distribution_rejected,
        quality_rejected,
        backend_errors,
        pending_evaluation,
        distribution_gate: GateRate::new(dist_evaluated, dist_evaluated - distribution_rejected),
        quality_gate: GateRate::new(quality_evaluated, quality_evaluated - quality_rejected),
        joint_pass_rate: (queries > 0).then(|| accepted as f64 / queries as f64),
        cost_total: total,
        cost_display: total.to_string(),
        p_real: state.p_real,
        coverage,
        combinations,
        unresolved: state.unresolved.iter().map(|c| c.render(schema)).collect(),
        disparity,
        conservation_holds: queries
            == accepted
                + distribution_rejected
                + quality_rejected
                + backend_errors
                + pending_evaluation,
    })
}
