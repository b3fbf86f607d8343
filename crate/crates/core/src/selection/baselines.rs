use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::greedy::fill_combination;
use super::{AugmentationPlan, GapTable, Residual};
use crate::patterns::{AttributeSchema, InvertedIndex, MupSet, Pattern};

/// RANDOM baseline: draw uniform combinations one tuple at a time until every
/// target gap is closed. Deterministic in `seed`.
pub fn random_plan(
    mstar: &MupSet,
    gaps: &GapTable,
    schema: &AttributeSchema,
    seed: u64,
) -> AugmentationPlan {
    let cards = schema.cardinalities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = Residual::from_table(&gaps.restricted_to(mstar));
    let mut plan = AugmentationPlan::default();
    while !residual.is_empty() {
        let values: Vec<usize> = cards.iter().map(|&k| rng.random_range(0..k)).collect();
        let c = Pattern::combination(&values);
        plan.add(c.clone(), 1);
        residual.serve(&c, 1);
    }
    plan
}

/// MIN-GAP baseline.
///
/// Repeatedly takes the remaining MUP with the smallest gap (ties in report
/// order), completes it with the same fill rule as greedy, adds its whole gap to
/// that combination, and subtracts it from every MUP the combination matches.
///
/// `gaps` is the candidate pool and may hold MUPs beyond `targets` (for example
/// MUPs of every level); the loop stops once every target gap is closed.
pub fn min_gap_plan(
    targets: &MupSet,
    gaps: &GapTable,
    schema: &AttributeSchema,
    index: &InvertedIndex,
) -> AugmentationPlan {
    debug_assert_eq!(schema.arity(), index.arity());
    let mut pool = Residual::from_table(gaps);
    let mut plan = AugmentationPlan::default();
    let target_open = |pool: &Residual| pool.mups.iter().any(|m| targets.mups.contains(m));
    while target_open(&pool) {
        let (pick, &delta) = pool
            .mups
            .iter()
            .zip(&pool.gaps)
            .min_by(|a, b| {
                a.1.cmp(b.1)
                    .then_with(|| a.0.report_order().cmp(&b.0.report_order()))
            })
            .expect("pool nonempty while a target is open");
        let c = fill_combination(pick, index);
        plan.add(c.clone(), delta);
        pool.serve(&c, delta);
    }
    plan
}
