use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    CostLedger, GeneratedCandidate, GenerationRequest, Generator, GeneratorError, Provenance,
};
use crate::guide_selection::MaskLevel;
use crate::patterns::{Combination, Dataset};

/// One factor per mask level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTable {
    pub accurate: f64,
    pub moderate: f64,
    pub imprecise: f64,
}

impl MaskTable {
    pub fn get(&self, level: MaskLevel) -> f64 {
        match level {
            MaskLevel::Accurate => self.accurate,
            MaskLevel::Moderate => self.moderate,
            MaskLevel::Imprecise => self.imprecise,
        }
    }
}

/// Parameters of the simulated generator. Distances are in units of the real
/// embeddings' root mean per-coordinate variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScenario {
    /// Noise around a guided candidate.
    pub sigma_guided: f64,
    /// Pull of a guided candidate toward the centroid of its guide's combination, in [0, 1].
    pub guided_shrink: f64,
    /// Noise around an unguided candidate.
    pub sigma_unguided: f64,
    /// Shift of unguided candidates away from the dataset mean along (1, …, 1)/√k.
    pub offset_magnitude: f64,
    /// Fraction of the way a guided candidate moves, per changed attribute, from
    /// the guide's value mean toward the target's value mean, in [0, 1].
    pub edit_strength: f64,
    /// Realism probability of an unguided candidate.
    pub no_guide_realism: f64,
    /// Realism factor for changing each attribute, by attribute name.
    pub attribute_realism: BTreeMap<String, f64>,
    /// Factor for attributes missing from `attribute_realism`.
    pub default_attribute_realism: f64,
    /// Realism of a guided candidate before any attribute change.
    pub base_guided_realism: f64,
    pub mask_realism: MaskTable,
    pub mask_noise: MaskTable,
    /// Probability that the backend refuses a request.
    pub content_rejection_rate: f64,
}

impl Default for MockScenario {
    fn default() -> Self {
        Self {
            sigma_guided: 0.2,
            guided_shrink: 0.0,
            sigma_unguided: 0.5,
            offset_magnitude: 2.4,
            edit_strength: 0.6,
            no_guide_realism: 0.78,
            attribute_realism: BTreeMap::new(),
            default_attribute_realism: 0.85,
            base_guided_realism: 0.97,
            mask_realism: MaskTable {
                accurate: 0.92,
                moderate: 1.0,
                imprecise: 1.0,
            },
            mask_noise: MaskTable {
                accurate: 0.9,
                moderate: 1.0,
                imprecise: 1.15,
            },
            content_rejection_rate: 0.0,
        }
    }
}

impl MockScenario {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("guided_shrink", self.guided_shrink),
            ("edit_strength", self.edit_strength),
            ("no_guide_realism", self.no_guide_realism),
            ("default_attribute_realism", self.default_attribute_realism),
            ("base_guided_realism", self.base_guided_realism),
            ("content_rejection_rate", self.content_rejection_rate),
        ];
        for (name, v) in probs
            .into_iter()
            .chain(self.attribute_realism.iter().map(|(k, v)| (k.as_str(), *v)))
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("sigma_guided", self.sigma_guided),
            ("sigma_unguided", self.sigma_unguided),
            ("offset_magnitude", self.offset_magnitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Simulated generator. Each request draws from its own random stream keyed
/// by `(seed, request.sequence)`, so results do not depend on call history.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    scenario: MockScenario,
    seed: u64,
    dim: usize,
    scale: f64,
    mean: Vec<f64>,
    embeddings: HashMap<String, Vec<f64>>,
    centroids: HashMap<Vec<usize>, Vec<f64>>,
    /// Mean embedding per attribute value; `None` for values with no tuples.
    value_means: Vec<Vec<Option<Vec<f64>>>>,
    attribute_realism: Vec<f64>,
}

impl MockGenerator {
    /// `dataset` should hold the real tuples only.
    pub fn new(dataset: &Dataset, scenario: MockScenario, seed: u64) -> Self {
        let dim = dataset.embedding_dim().unwrap_or(0);
        let n = dataset.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        let mut sums: HashMap<Vec<usize>, (Vec<f64>, usize)> = HashMap::new();
        for t in &dataset.tuples {
            for (m, x) in mean.iter_mut().zip(&t.embedding) {
                *m += x / n;
            }
            let entry = sums
                .entry(t.values.clone())
                .or_insert_with(|| (vec![0.0; dim], 0));
            for (s, x) in entry.0.iter_mut().zip(&t.embedding) {
                *s += x;
            }
            entry.1 += 1;
        }
        let var: f64 = if dim == 0 {
            0.0
        } else {
            dataset
                .tuples
                .iter()
                .map(|t| {
                    t.embedding
                        .iter()
                        .zip(&mean)
                        .map(|(x, m)| (x - m).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / (n * dim as f64)
        };
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let value_means = dataset
            .schema
            .attributes
            .iter()
            .enumerate()
            .map(|(a, attr)| {
                (0..attr.cardinality())
                    .map(|v| {
                        let members: Vec<&Vec<f64>> = dataset
                            .tuples
                            .iter()
                            .filter(|t| t.values[a] == v)
                            .map(|t| &t.embedding)
                            .collect();
                        (!members.is_empty()).then(|| {
                            let m = members.len() as f64;
                            (0..dim)
                                .map(|k| members.iter().map(|e| e[k]).sum::<f64>() / m)
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect();
        let centroids = sums
            .into_iter()
            .map(|(k, (s, c))| (k, s.into_iter().map(|v| v / c as f64).collect()))
            .collect();
        let attribute_realism = dataset
            .schema
            .attributes
            .iter()
            .map(|a| {
                scenario
                    .attribute_realism
                    .get(&a.name)
                    .copied()
                    .unwrap_or(scenario.default_attribute_realism)
            })
            .collect();
        Self {
            scenario,
            seed,
            dim,
            scale,
            mean,
            embeddings: dataset
                .tuples
                .iter()
                .map(|t| (t.id.clone(), t.embedding.clone()))
                .collect(),
            centroids,
            value_means,
            attribute_realism,
        }
    }

    pub fn scenario(&self) -> &MockScenario {
        &self.scenario
    }

    /// Probability that a simulated evaluator finds the candidate realistic.
    pub fn realism(&self, request: &GenerationRequest) -> f64 {
        let guide = &request.guide;
        if guide.tuple_id.is_none() {
            return self.scenario.no_guide_realism;
        }
        let mut r = self.scenario.base_guided_realism;
        for attr in guide.changed_attributes(&request.target) {
            r *= self.attribute_realism[attr];
        }
        if let Some(level) = guide.mask_level {
            r *= self.scenario.mask_realism.get(level);
        }
        r.clamp(0.0, 1.0)
    }

    fn centroid(&self, c: &Combination) -> Option<&Vec<f64>> {
        self.centroids.get(&c.values()?)
    }

    /// `edit_strength · Σ (mean[target value] − mean[guide value])` over changed attributes.
    fn edit_shift(&self, request: &GenerationRequest) -> Vec<f64> {
        let mut shift = vec![0.0; self.dim];
        let guide = &request.guide;
        for attr in guide.changed_attributes(&request.target) {
            let (Some(from), Some(to)) =
                (guide.source_combination.get(attr), request.target.get(attr))
            else {
                continue;
            };
            if let (Some(Some(a)), Some(Some(b))) = (
                self.value_means[attr].get(from),
                self.value_means[attr].get(to),
            ) {
                for ((s, x), y) in shift.iter_mut().zip(a).zip(b) {
                    *s += self.scenario.edit_strength * (y - x);
                }
            }
        }
        shift
    }
}

impl Generator for MockGenerator {
    fn provenance(&self) -> Provenance {
        Provenance::Mock
    }

    fn generate(
        &mut self,
        request: &GenerationRequest,
        ledger: &mut CostLedger,
    ) -> Result<GeneratedCandidate, GeneratorError> {
        if request.prompt.trim().is_empty() {
            return Err(GeneratorError::EmptyPrompt);
        }
        ledger.charge();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(request.sequence);
        if self.scenario.content_rejection_rate > 0.0
            && rng.random_bool(self.scenario.content_rejection_rate)
        {
            return Err(GeneratorError::ContentRejected("simulated refusal".into()));
        }
        let mut noise = |sigma: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sigma * self.scale
        };
        let embedding: Vec<f64> = match &request.guide.tuple_id {
            Some(id) => {
                let base = self.embeddings.get(id).ok_or_else(|| {
                    GeneratorError::EmbeddingUnavailable(format!("unknown guide tuple `{id}`"))
                })?;
                let s = self.scenario.guided_shrink;
                let centroid = self
                    .centroid(&request.guide.source_combination)
                    .unwrap_or(base);
                let sigma = self.scenario.sigma_guided
                    * request
                        .guide
                        .mask_level
                        .map_or(1.0, |l| self.scenario.mask_noise.get(l));
                let shift = self.edit_shift(request);
                base.iter()
                    .zip(centroid)
                    .zip(&shift)
                    .map(|((g, c), e)| (1.0 - s) * g + s * c + e + noise(sigma))
                    .collect()
            }
            None => {
                let shift =
                    self.scenario.offset_magnitude * self.scale / (self.dim.max(1) as f64).sqrt();
                self.mean
                    .iter()
                    .map(|m| m + shift + noise(self.scenario.sigma_unguided))
                    .collect()
            }
        };
        Ok(GeneratedCandidate {
            request_id: request.request_id.clone(),
            embedding,
            payload_path: None,
            provenance: Provenance::Mock,
            latency_ms: 0,
            simulated_realism: Some(self.realism(request)),
        })
    }
}
