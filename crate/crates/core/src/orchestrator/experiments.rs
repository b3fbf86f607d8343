//! Guide-strategy trials: generate candidates for uncovered combinations and
//! run both gates on every candidate, so each strategy gets a quality and a
//! distribution acceptance rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::distribution_test::{distribution_test, OcsvmModel};
use crate::generator_client::{
    build_prompt, CostLedger, GenerationRequest, Generator, MockGenerator, MockScenario,
};
use crate::guide_selection::{
    combination_index, select_guide, BanditState, GuideContext, MaskLevel, Strategy,
};
use crate::patterns::{find_mups, min_level_mups, Dataset, InvertedIndex, Pattern};
use crate::quality_test::{quality_test, simulate_labels, EvaluationBatch};
use crate::selection::{compute_gaps, greedy_plan};
use crate::Decision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub tau: usize,
    pub trials: usize,
    pub alpha_quality: f64,
    pub n_eval: usize,
    pub p_real: f64,
    pub mask_level: MaskLevel,
    pub alpha_ucb: f64,
    pub seed: u64,
    pub scenario: MockScenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyRates {
    pub strategy: Strategy,
    pub trials: usize,
    pub quality_passed: usize,
    pub distribution_passed: usize,
    pub joint_passed: usize,
}

impl StrategyRates {
    /// Quality-test acceptance rate.
    pub fn qtar(&self) -> f64 {
        self.quality_passed as f64 / self.trials.max(1) as f64
    }

    /// Distribution-test acceptance rate.
    pub fn ddtar(&self) -> f64 {
        self.distribution_passed as f64 / self.trials.max(1) as f64
    }
}

/// Combinations of the greedy plan for the minimum-level MUPs, in plan order.
pub fn trial_targets(
    dataset: &Dataset,
    index: &InvertedIndex,
    tau: usize,
) -> Result<Vec<Pattern>, OrchestratorError> {
    let mups = find_mups(index, &dataset.schema, tau);
    if mups.is_empty() {
        return Ok(Vec::new());
    }
    let targets = min_level_mups(&mups)?;
    let gaps = compute_gaps(&targets, index, tau)?;
    Ok(greedy_plan(&targets, &gaps, &dataset.schema, index)
        .sigma
        .into_keys()
        .collect())
}

/// Run `cfg.trials` candidates with one strategy. LinUCB is rewarded on the joint verdict.
pub fn strategy_trials(
    dataset: &Dataset,
    model: &OcsvmModel,
    strategy: Strategy,
    cfg: &TrialConfig,
) -> Result<StrategyRates, OrchestratorError> {
    let index = InvertedIndex::build(dataset);
    let targets = trial_targets(dataset, &index, cfg.tau)?;
    let mut rates = StrategyRates {
        strategy,
        trials: 0,
        quality_passed: 0,
        distribution_passed: 0,
        joint_passed: 0,
    };
    if targets.is_empty() {
        return Ok(rates);
    }
    let ctx = GuideContext {
        dataset,
        index: &index,
        mask_level: cfg.mask_level,
        base_dir: None,
        require_masks: false,
    };
    let cards = dataset.schema.cardinalities();
    let mut bandit = (strategy == Strategy::LinUcb)
        .then(|| BanditState::for_schema(&dataset.schema, cfg.alpha_ucb));
    let mut generator = MockGenerator::new(dataset, cfg.scenario.clone(), cfg.seed);
    let mut ledger = CostLedger::new(crate::generator_client::Money::ZERO);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for t in 0..cfg.trials {
        let target = &targets[t % targets.len()];
        let guide = select_guide(strategy, target, bandit.as_ref(), &mut rng, &ctx)?;
        let request = GenerationRequest {
            request_id: format!("trial-{t}"),
            sequence: t as u64,
            prompt: build_prompt(target, &dataset.schema)?,
            guide,
            target: target.clone(),
        };
        let candidate = generator.generate(&request, &mut ledger)?;
        let realism = generator.realism(&request);
        let labels = simulate_labels(&mut rng, realism, cfg.n_eval);
        let quality = quality_test(
            &EvaluationBatch::new(request.request_id.clone(), labels),
            cfg.p_real,
            cfg.alpha_quality,
        )?;
        let dist = distribution_test(model, &candidate.embedding)?;
        let q = quality.decision == Decision::Accept;
        let d = dist.decision == Decision::Accept;
        rates.trials += 1;
        rates.quality_passed += q as usize;
        rates.distribution_passed += d as usize;
        rates.joint_passed += (q && d) as usize;
        if let (Some(b), Some(arm)) = (bandit.as_mut(), request.guide.arm) {
            b.update(arm, combination_index(target, &cards), q && d);
        }
    }
    Ok(rates)
}
