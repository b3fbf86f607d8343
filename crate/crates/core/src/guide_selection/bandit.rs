use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::patterns::{AttributeSchema, Combination};

pub const DEFAULT_ALPHA_UCB: f64 = 0.5;

/// Row-major index of a combination among all `Π |dom|` combinations.
pub fn combination_index(c: &Combination, cardinalities: &[usize]) -> usize {
    c.cells().iter().zip(cardinalities).fold(0, |acc, (v, &k)| {
        acc * k + v.expect("context must be a full combination")
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCell {
    pub pulls: u64,
    pub successes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pull {
    pub arm: usize,
    pub context: usize,
    pub reward: u8,
}

/// LinUCB with disjoint linear models over one-hot combination contexts.
///
/// With one-hot contexts `A_a` stays diagonal (`1 + n_{a,c}`) and `b_a` holds the
/// success counts `s_{a,c}`, so each arm stores only the contexts it has seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: usize,
    pub contexts: usize,
    pub alpha_ucb: f64,
    pub cells: Vec<BTreeMap<usize, ArmCell>>,
    pub pull_log: Vec<Pull>,
}

impl BanditState {
    pub fn new(arms: usize, contexts: usize, alpha_ucb: f64) -> Self {
        assert!(arms >= 1, "at least one arm");
        assert!(alpha_ucb > 0.0, "alpha_ucb must be positive");
        Self {
            arms,
            contexts,
            alpha_ucb,
            cells: vec![BTreeMap::new(); arms],
            pull_log: Vec::new(),
        }
    }

    /// One arm per attribute, one context per combination.
    pub fn for_schema(schema: &AttributeSchema, alpha_ucb: f64) -> Self {
        Self::new(schema.arity(), schema.combination_count(), alpha_ucb)
    }

    pub fn cell(&self, arm: usize, context: usize) -> ArmCell {
        self.cells[arm].get(&context).copied().unwrap_or_default()
    }

    /// `fᵀθ̂_a = s / (1 + n)`.
    pub fn estimate(&self, arm: usize, context: usize) -> f64 {
        let c = self.cell(arm, context);
        c.successes as f64 / (1.0 + c.pulls as f64)
    }

    /// `α √(fᵀ A_a⁻¹ f) = α / √(1 + n)`.
    pub fn bonus(&self, arm: usize, context: usize) -> f64 {
        self.alpha_ucb / (1.0 + self.cell(arm, context).pulls as f64).sqrt()
    }

    pub fn ucb(&self, arm: usize, context: usize) -> f64 {
        self.estimate(arm, context) + self.bonus(arm, context)
    }

    /// Arms by decreasing UCB, ties to the lower index.
    pub fn ranked_arms(&self, context: usize) -> Vec<usize> {
        let mut arms: Vec<usize> = (0..self.arms).collect();
        let scores: Vec<f64> = arms.iter().map(|&a| self.ucb(a, context)).collect();
        arms.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        arms
    }

    pub fn select_arm(&self, context: usize) -> usize {
        self.ranked_arms(context)[0]
    }

    pub fn update(&mut self, arm: usize, context: usize, reward: bool) {
        assert!(arm < self.arms, "arm {arm} out of range");
        assert!(context < self.contexts, "context {context} out of range");
        let cell = self.cells[arm].entry(context).or_default();
        cell.pulls += 1;
        cell.successes += u64::from(reward);
        self.pull_log.push(Pull {
            arm,
            context,
            reward: u8::from(reward),
        });
    }

    /// Forget all pulls.
    pub fn reset(&mut self) {
        self.cells = vec![BTreeMap::new(); self.arms];
        self.pull_log.clear();
    }

    /// Rebuild the general matrix form from the pull log.
    pub fn to_dense(&self) -> DenseLinUcb {
        let mut dense = DenseLinUcb::new(self.arms, self.contexts, self.alpha_ucb);
        for p in &self.pull_log {
            dense.update(
                p.arm,
                &one_hot(self.contexts, p.context),
                f64::from(p.reward),
            );
        }
        dense
    }
}

pub fn one_hot(k: usize, i: usize) -> DVector<f64> {
    let mut f = DVector::zeros(k);
    f[i] = 1.0;
    f
}

/// LinUCB over arbitrary context vectors with explicit `A_a`, `b_a`.
#[derive(Debug, Clone)]
pub struct DenseLinUcb {
    pub alpha_ucb: f64,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl DenseLinUcb {
    pub fn new(arms: usize, k: usize, alpha_ucb: f64) -> Self {
        Self {
            alpha_ucb,
            a: vec![DMatrix::identity(k, k); arms],
            b: vec![DVector::zeros(k); arms],
        }
    }

    pub fn update(&mut self, arm: usize, f: &DVector<f64>, reward: f64) {
        self.a[arm] += f * f.transpose();
        self.b[arm] += f * reward;
    }

    /// `θ̂_a = A_a⁻¹ b_a`.
    pub fn theta(&self, arm: usize) -> DVector<f64> {
        self.a[arm]
            .clone()
            .cholesky()
            .expect("A_a is positive definite")
            .solve(&self.b[arm])
    }

    pub fn ucb(&self, arm: usize, f: &DVector<f64>) -> f64 {
        let chol = self.a[arm]
            .clone()
            .cholesky()
            .expect("A_a is positive definite");
        let theta = chol.solve(&self.b[arm]);
        let ainv_f = chol.solve(f);
        f.dot(&theta) + self.alpha_ucb * f.dot(&ainv_f).sqrt()
    }

    pub fn select_arm(&self, f: &DVector<f64>) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for arm in 0..self.a.len() {
            let u = self.ucb(arm, f);
            if u > best.1 {
                best = (arm, u);
            }
        }
        best.0
    }
}
