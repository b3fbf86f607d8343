use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::distribution_test::{KernelSpec, DEFAULT_NU, DEFAULT_TOL};
use crate::generator_client::{MockScenario, Money};
use crate::guide_selection::{MaskLevel, Strategy, DEFAULT_ALPHA_UCB};
use crate::quality_test::{
    CalibrationSample, DEFAULT_ALPHA, DEFAULT_N_EVAL, MIN_CALIBRATION_LABELS,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
    Linear,
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "linear" => Ok(KernelKind::Linear),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Backend::Mock),
            "live" => Ok(Backend::Live),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorMode {
    #[default]
    Simulated,
    Human,
}

impl std::str::FromStr for EvaluatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulated" => Ok(EvaluatorMode::Simulated),
            "human" => Ok(EvaluatorMode::Human),
            other => Err(format!("unknown evaluator mode `{other}`")),
        }
    }
}

/// What counts as a success for the bandit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Both gates passed.
    #[default]
    Joint,
    /// The quality gate passed; candidates rejected by the distribution gate are not rewarded either way.
    QualityOnly,
}

/// Realism labels for real tuples, given as counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationCounts {
    pub positives: usize,
    pub total: usize,
}

impl Default for CalibrationCounts {
    fn default() -> Self {
        Self {
            positives: 86,
            total: 100,
        }
    }
}

impl CalibrationCounts {
    pub fn sample(&self) -> CalibrationSample {
        CalibrationSample::from_counts(self.positives, self.total)
    }
}

/// Downstream-model metric of one group before and after repair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub before: f64,
    pub after: f64,
}

/// Externally measured metrics used for the disparity section of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityInputs {
    pub overall_before: f64,
    pub overall_after: f64,
    pub groups: BTreeMap<String, GroupMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tau: usize,
    pub alpha_quality: f64,
    pub n_eval: usize,
    pub nu: f64,
    pub kernel: KernelKind,
    /// RBF width; `None` uses the variance heuristic.
    pub gamma: Option<f64>,
    pub svm_tol: f64,
    pub strategy: Strategy,
    pub mask_level: MaskLevel,
    pub alpha_ucb: f64,
    pub seed: u64,
    pub max_attempts_per_tuple: u32,
    pub backend: Backend,
    pub evaluator: EvaluatorMode,
    pub unit_cost: Money,
    pub iterate_levels: bool,
    pub reward: RewardMode,
    pub calibration: CalibrationCounts,
    pub min_calibration_labels: usize,
    /// Realism probability used by simulated evaluators when the backend reports none.
    pub default_realism: f64,
    pub require_masks: bool,
    /// File holding bandit state shared by runs on the same dataset.
    pub bandit_file: Option<String>,
    pub reset_bandit: bool,
    pub mock: MockScenario,
    pub metrics: Option<DisparityInputs>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: 100,
            alpha_quality: DEFAULT_ALPHA,
            n_eval: DEFAULT_N_EVAL,
            nu: DEFAULT_NU,
            kernel: KernelKind::Rbf,
            gamma: None,
            svm_tol: DEFAULT_TOL,
            strategy: Strategy::LinUcb,
            mask_level: MaskLevel::Moderate,
            alpha_ucb: DEFAULT_ALPHA_UCB,
            seed: 0,
            max_attempts_per_tuple: 20,
            backend: Backend::Mock,
            evaluator: EvaluatorMode::Simulated,
            unit_cost: "0.016".parse().expect("valid literal"),
            iterate_levels: false,
            reward: RewardMode::Joint,
            calibration: CalibrationCounts::default(),
            min_calibration_labels: MIN_CALIBRATION_LABELS,
            default_realism: 0.86,
            require_masks: false,
            bandit_file: None,
            reset_bandit: false,
            mock: MockScenario::default(),
            metrics: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if !(self.alpha_quality > 0.0 && self.alpha_quality <= 0.5) {
            return bad(format!(
                "alpha_quality must be in (0, 0.5], got {}",
                self.alpha_quality
            ));
        }
        if self.n_eval < 2 {
            return bad(format!("n_eval must be at least 2, got {}", self.n_eval));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu must be in (0, 1], got {}", self.nu));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if !(self.svm_tol > 0.0) {
            return bad(format!("svm_tol must be positive, got {}", self.svm_tol));
        }
        if !(self.alpha_ucb > 0.0 && self.alpha_ucb.is_finite()) {
            return bad(format!(
                "alpha_ucb must be positive, got {}",
                self.alpha_ucb
            ));
        }
        if self.max_attempts_per_tuple == 0 {
            return bad("max_attempts_per_tuple must be at least 1".into());
        }
        if self.unit_cost < Money::ZERO {
            return bad("unit_cost must be nonnegative".into());
        }
        if self.calibration.positives > self.calibration.total {
            return bad("calibration positives exceed total".into());
        }
        if !(0.0..=1.0).contains(&self.default_realism) {
            return bad("default_realism must be in [0, 1]".into());
        }
        self.mock
            .validate()
            .map_err(OrchestratorError::InvalidConfig)
    }

    pub fn kernel_spec(&self, embeddings: &[Vec<f64>]) -> KernelSpec {
        match self.kernel {
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Rbf => KernelSpec::Rbf {
                gamma: self
                    .gamma
                    .unwrap_or_else(|| crate::distribution_test::default_gamma(embeddings)),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| OrchestratorError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(c.n_eval, 5);
        assert_eq!(c.max_attempts_per_tuple, 20);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"tau": 7, "strategy": "similar-tuple"}"#).unwrap();
        assert_eq!(c.tau, 7);
        assert_eq!(c.strategy, Strategy::SimilarTuple);
        assert_eq!(c.nu, 0.3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"tua": 7}"#).is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        for c in [
            RunConfig {
                alpha_quality: 0.6,
                ..Default::default()
            },
            RunConfig {
                n_eval: 1,
                ..Default::default()
            },
            RunConfig {
                nu: 0.0,
                ..Default::default()
            },
            RunConfig {
                tau: 0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
