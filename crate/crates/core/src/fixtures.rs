//! Synthetic datasets used by the tests, the acceptance suite, and `gen-fixture`.
//!
//! Embeddings are clustered by attribute values: each value contributes a fixed
//! offset vector and each tuple adds unit Gaussian noise, so rare combinations
//! sit in sparse regions of the embedding space.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::generator_client::MockScenario;
use crate::guide_selection::{MaskLevel, Strategy};
use crate::orchestrator::RunConfig;
use crate::patterns::{Attribute, AttributeSchema, Dataset, TupleRecord};

/// Per (race, gender) counts of the face fixture, races in schema order.
pub const FERET_COUNTS: [[usize; 2]; 5] = [[331, 229], [21, 19], [80, 47], [11, 8], [9, 1]];
pub const FERET_RACES: [&str; 5] = ["White", "Black", "Asian", "Hispanic", "MiddleEastern"];
pub const FERET_GENDERS: [&str; 2] = ["Male", "Female"];
pub const FERET_TAU: usize = 100;
pub const FERET_DIM: usize = 8;

/// Thresholds of the combination-selection comparison.
pub const SELECTION_THRESHOLDS: [usize; 4] = [200, 350, 1000, 2000];

const EFFECT_SEED: u64 = 0x5eed_0fef_fec7;

/// Fixed offset vectors, one per value of each attribute.
fn value_effects(cards: &[usize], dim: usize, spread: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(EFFECT_SEED);
    cards
        .iter()
        .zip(spread)
        .map(|(&card, &s)| {
            let normal = Normal::new(0.0, s).expect("positive spread");
            (0..card)
                .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        })
        .collect()
}

fn clustered_embedding(
    rng: &mut ChaCha8Rng,
    values: &[usize],
    effects: &[Vec<Vec<f64>>],
    dim: usize,
) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let centre: f64 = values.iter().zip(effects).map(|(&v, e)| e[v][k]).sum();
            let z: f64 = StandardNormal.sample(rng);
            centre + z
        })
        .collect()
}

pub fn feret_schema() -> AttributeSchema {
    AttributeSchema::new(
        vec![
            Attribute::new("race", false, &FERET_RACES),
            Attribute::new("gender", false, &FERET_GENDERS),
        ],
        "A realistic frontal photo of a {race} {gender} person",
    )
    .expect("static schema is valid")
}

/// Face dataset with the published demographic counts and clustered 8-d embeddings.
pub fn feretdb(seed: u64) -> Dataset {
    let schema = feret_schema();
    let effects = value_effects(&[5, 2], FERET_DIM, &[1.5, 0.8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::new();
    for (r, row) in FERET_COUNTS.iter().enumerate() {
        for (g, &count) in row.iter().enumerate() {
            for i in 0..count {
                let values = vec![r, g];
                let embedding = clustered_embedding(&mut rng, &values, &effects, FERET_DIM);
                tuples.push(TupleRecord::new(
                    format!(
                        "{}-{}-{i:03}",
                        FERET_RACES[r].to_lowercase(),
                        FERET_GENDERS[g].to_lowercase()
                    ),
                    values,
                    embedding,
                ));
            }
        }
    }
    Dataset::new(schema, tuples).expect("fixture is valid")
}

/// Mock scenario whose joint pass rate on [`feretdb`] is close to 0.75.
///
/// Candidates stay near their guide's cluster (no edit shift), so the
/// distribution gate passes about 95% and the realism factors set the rest.
pub fn feret_scenario() -> MockScenario {
    MockScenario {
        guided_shrink: 0.5,
        edit_strength: 0.0,
        attribute_realism: BTreeMap::from([
            ("race".to_string(), 0.70),
            ("gender".to_string(), 0.70),
        ]),
        ..MockScenario::default()
    }
}

/// Run configuration for the face fixture repair.
pub fn feret_config(seed: u64) -> RunConfig {
    RunConfig {
        tau: FERET_TAU,
        seed,
        strategy: Strategy::LinUcb,
        mask_level: MaskLevel::Moderate,
        alpha_ucb: 1.0,
        mock: feret_scenario(),
        ..RunConfig::default()
    }
}

fn age_labels(levels: usize) -> Vec<String> {
    (0..levels).map(|i| format!("age{i}")).collect()
}

/// Schema with gender (2), race (5) and an ordinal age attribute.
pub fn utk_schema(age_levels: usize) -> AttributeSchema {
    let ages = age_labels(age_levels);
    let ages: Vec<&str> = ages.iter().map(String::as_str).collect();
    AttributeSchema::new(
        vec![
            Attribute::new("gender", false, &["male", "female"]),
            Attribute::new(
                "race",
                false,
                &["white", "black", "asian", "indian", "other"],
            ),
            Attribute::new("age", true, &ages),
        ],
        "A realistic photo of a {age} {race} {gender} person",
    )
    .expect("static schema is valid")
}

fn jittered(rng: &mut ChaCha8Rng, base: &[f64], jitter: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, jitter).expect("positive jitter");
    let w: Vec<f64> = base.iter().map(|p| p * normal.sample(rng).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

const GENDER_MARGINAL: [f64; 2] = [0.52, 0.48];
const RACE_MARGINAL: [f64; 5] = [0.42, 0.19, 0.15, 0.17, 0.07];
const AGE9_MARGINAL: [f64; 9] = [0.12, 0.045, 0.04, 0.26, 0.19, 0.10, 0.09, 0.085, 0.07];
const AGE5_MARGINAL: [f64; 5] = [0.15, 0.40, 0.25, 0.14, 0.06];

/// Large age/race/gender dataset with skewed, seed-jittered marginals and 1-d embeddings.
///
/// Used for plan-cost comparisons, where only the attribute values matter.
pub fn utk_like(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gender = jittered(&mut rng, &GENDER_MARGINAL, 0.05);
    let race = jittered(&mut rng, &RACE_MARGINAL, 0.15);
    let age = jittered(&mut rng, &AGE9_MARGINAL, 0.15);
    let tuples = (0..n)
        .map(|i| {
            let values = vec![
                draw(&mut rng, &gender),
                draw(&mut rng, &race),
                draw(&mut rng, &age),
            ];
            TupleRecord::new(format!("u{i:05}"), values, vec![0.0])
        })
        .collect();
    Dataset::new(utk_schema(9), tuples).expect("fixture is valid")
}

/// One combination-selection comparison instance.
#[derive(Debug, Clone)]
pub struct SelectionInstance {
    pub seed: u64,
    pub tau: usize,
    pub dataset: Dataset,
}

/// Instance `i` uses dataset seed `i` and threshold `SELECTION_THRESHOLDS[i % 4]`.
pub fn selection_instances(count: usize, n: usize) -> Vec<SelectionInstance> {
    (0..count as u64)
        .map(|seed| SelectionInstance {
            seed,
            tau: SELECTION_THRESHOLDS[seed as usize % SELECTION_THRESHOLDS.len()],
            dataset: utk_like(seed, n),
        })
        .collect()
}

pub const GUIDE_DIM: usize = 8;
pub const GUIDE_TAU: usize = 10;

/// Small age/race/gender dataset with clustered embeddings for guide-strategy trials.
pub fn guide_fixture(seed: u64, n: usize) -> Dataset {
    guide_fixture_with(seed, n, GUIDE_SPREAD)
}

/// Per-attribute spread of the value offsets in [`guide_fixture`].
pub const GUIDE_SPREAD: [f64; 3] = [0.8, 1.5, 1.0];

pub fn guide_fixture_with(seed: u64, n: usize, spread: [f64; 3]) -> Dataset {
    let effects = value_effects(&[2, 5, 5], GUIDE_DIM, &spread);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tuples = (0..n)
        .map(|i| {
            let values = vec![
                draw(&mut rng, &GENDER_MARGINAL),
                draw(&mut rng, &RACE_MARGINAL),
                draw(&mut rng, &AGE5_MARGINAL),
            ];
            let embedding = clustered_embedding(&mut rng, &values, &effects, GUIDE_DIM);
            TupleRecord::new(format!("g{i:04}"), values, embedding)
        })
        .collect();
    Dataset::new(utk_schema(5), tuples).expect("fixture is valid")
}

/// Mock scenario for guide-strategy trials: attributes differ in how well the
/// generator edits them.
pub fn guide_scenario() -> MockScenario {
    MockScenario {
        attribute_realism: BTreeMap::from([
            ("gender".to_string(), 0.75),
            ("race".to_string(), 0.97),
            ("age".to_string(), 0.60),
        ]),
        ..MockScenario::default()
    }
}
