//! Guide tuple and mask selection.
//!
//! A guide is an existing tuple plus a mask of the region to regenerate. The
//! strategies are: no guide, a uniformly random tuple, a tuple drawn from a
//! combination similar to the target, and a LinUCB bandit that learns which
//! attribute of the target is best changed to find a guide.

mod bandit;
mod mask;
mod similar;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::{Combination, Dataset, InvertedIndex, Pattern, TupleRecord};

pub use bandit::{
    combination_index, one_hot, ArmCell, BanditState, DenseLinUcb, Pull, DEFAULT_ALPHA_UCB,
};
pub use mask::{delineate_mask, dilate_disk, moderate_radius, MaskLevel, Raster};
pub use similar::{
    build_similar_pool, similar, similar_candidates, similar_on, PoolEntry, SimilarPool,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuideError {
    #[error("no similar combination has any tuples")]
    EmptyPool,
    #[error("the dataset has no tuples to guide from")]
    EmptyDataset,
    #[error("mask has no true cells")]
    EmptyMask,
    #[error("guide tuple `{0}` has no mask")]
    MissingPayload(String),
    #[error("linucb strategy requires a bandit state")]
    MissingBandit,
    #[error("raster: {0}")]
    Raster(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "no-guide")]
    NoGuide,
    #[serde(rename = "random-guide")]
    RandomGuide,
    #[serde(rename = "similar-tuple")]
    SimilarTuple,
    #[serde(rename = "linucb")]
    LinUcb,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::NoGuide,
        Strategy::RandomGuide,
        Strategy::SimilarTuple,
        Strategy::LinUcb,
    ];
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-guide" | "none" => Ok(Strategy::NoGuide),
            "random-guide" | "random" => Ok(Strategy::RandomGuide),
            "similar-tuple" | "similar" => Ok(Strategy::SimilarTuple),
            "linucb" => Ok(Strategy::LinUcb),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::NoGuide => "no-guide",
            Strategy::RandomGuide => "random-guide",
            Strategy::SimilarTuple => "similar-tuple",
            Strategy::LinUcb => "linucb",
        })
    }
}

/// The pair (tuple, mask) handed to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guide {
    /// Strategy that produced the guide (after any fallback).
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuple_id: Option<String>,
    /// Combination of the guide tuple; the target itself when there is no guide.
    pub source_combination: Combination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_level: Option<MaskLevel>,
    /// Bandit arm (attribute) changed to reach the guide combination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_cells: Option<usize>,
    #[serde(skip)]
    pub mask: Option<Raster>,
}

impl Guide {
    pub fn none(target: &Combination) -> Self {
        Self {
            strategy: Strategy::NoGuide,
            tuple_id: None,
            source_combination: target.clone(),
            mask_level: None,
            arm: None,
            mask_cells: None,
            mask: None,
        }
    }

    /// Attributes on which the guide combination differs from `target`.
    pub fn changed_attributes(&self, target: &Combination) -> Vec<usize> {
        (0..target.arity())
            .filter(|&i| self.source_combination.get(i) != target.get(i))
            .collect()
    }
}

/// What guide selection reads: the real tuples and their index.
pub struct GuideContext<'a> {
    pub dataset: &'a Dataset,
    pub index: &'a InvertedIndex,
    pub mask_level: MaskLevel,
    /// Directory that relative mask paths are resolved against.
    pub base_dir: Option<&'a Path>,
    /// Fail with `MissingPayload` when a guide tuple has no mask file.
    pub require_masks: bool,
}

pub fn select_guide<R: Rng + ?Sized>(
    strategy: Strategy,
    target: &Combination,
    bandit: Option<&BanditState>,
    rng: &mut R,
    ctx: &GuideContext<'_>,
) -> Result<Guide, GuideError> {
    match strategy {
        Strategy::NoGuide => Ok(Guide::none(target)),
        Strategy::RandomGuide => random_guide(rng, ctx),
        Strategy::SimilarTuple => {
            let pool = match build_similar_pool(target, &ctx.dataset.schema, ctx.index) {
                Ok(pool) => pool,
                Err(GuideError::EmptyPool) => {
                    tracing::debug!(%target, "empty similar pool, falling back to a random guide");
                    return random_guide(rng, ctx);
                }
                Err(e) => return Err(e),
            };
            let combination = pool.sample(rng).clone();
            let tuple = uniform_tuple(&combination, rng, ctx);
            make_guide(Strategy::SimilarTuple, tuple, None, ctx)
        }
        Strategy::LinUcb => {
            let state = bandit.ok_or(GuideError::MissingBandit)?;
            let context = combination_index(target, &ctx.dataset.schema.cardinalities());
            for arm in state.ranked_arms(context) {
                let candidates = similar_on(target, arm, &ctx.dataset.schema);
                let Ok(pool) = SimilarPool::from_candidates(candidates, ctx.index) else {
                    continue;
                };
                let combination = pool.sample(rng).clone();
                let tuple = uniform_tuple(&combination, rng, ctx);
                return make_guide(Strategy::LinUcb, tuple, Some(arm), ctx);
            }
            tracing::debug!(%target, "no arm has a populated neighbourhood, falling back to a random guide");
            random_guide(rng, ctx)
        }
    }
}

fn random_guide<R: Rng + ?Sized>(rng: &mut R, ctx: &GuideContext<'_>) -> Result<Guide, GuideError> {
    if ctx.dataset.is_empty() {
        return Err(GuideError::EmptyDataset);
    }
    let tuple = &ctx.dataset.tuples[rng.random_range(0..ctx.dataset.len())];
    make_guide(Strategy::RandomGuide, tuple, None, ctx)
}

fn uniform_tuple<'a, R: Rng + ?Sized>(
    c: &Combination,
    rng: &mut R,
    ctx: &GuideContext<'a>,
) -> &'a TupleRecord {
    let positions = ctx.index.matching(c);
    &ctx.dataset.tuples[positions[rng.random_range(0..positions.len())]]
}

fn make_guide(
    strategy: Strategy,
    tuple: &TupleRecord,
    arm: Option<usize>,
    ctx: &GuideContext<'_>,
) -> Result<Guide, GuideError> {
    let mask = match &tuple.mask_path {
        Some(rel) => {
            let path = match ctx.base_dir {
                Some(dir) => dir.join(rel),
                None => Path::new(rel).to_path_buf(),
            };
            let accurate = Raster::load(&path)?;
            let width = accurate.width;
            Some(delineate_mask(&accurate, ctx.mask_level, width)?)
        }
        None if ctx.require_masks => return Err(GuideError::MissingPayload(tuple.id.clone())),
        None => None,
    };
    Ok(Guide {
        strategy,
        tuple_id: Some(tuple.id.clone()),
        source_combination: Pattern::combination(&tuple.values),
        mask_level: Some(ctx.mask_level),
        arm,
        mask_cells: mask.as_ref().map(Raster::count),
        mask,
    })
}
