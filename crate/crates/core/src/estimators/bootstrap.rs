//! Cluster bootstrap: clusters are resampled with replacement and the whole
//! pipeline (grouping, propensity fit, estimate) is rerun on each replicate.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_at_level, SmallArmRule, WeightingLevel};
use crate::data::{summarize_clusters, MultilevelDataset};
use crate::grouping::GroupingRecipe;
use crate::propensity::{estimate_propensity, Pooling, PropensityStrategy};
use crate::rng::SeedStream;

pub const MIN_REPLICATES: usize = 100;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub small_arm_rule: SmallArmRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub ci95: (f64, f64),
    pub se_boot: f64,
    pub n_valid: usize,
    pub n_failed: usize,
    /// Replicate estimates in replicate order (failures omitted).
    pub estimates: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("at least {MIN_REPLICATES} bootstrap replicates are required, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooFewValidReplicates { failed: usize, total: usize },
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn replicate(
    ds: &MultilevelDataset,
    recipe: &GroupingRecipe,
    strategy: &PropensityStrategy,
    level: WeightingLevel,
    stream: &SeedStream,
    b: u64,
    rule: SmallArmRule,
) -> Option<f64> {
    let mut rng = stream.rng("bootstrap-draw", b);
    let h = ds.n_clusters();
    let draws: Vec<usize> = (0..h).map(|_| rng.random_range(0..h)).collect();
    let boot = ds.resample_clusters(&draws);
    let needs_grouping = strategy.pooling == Pooling::Group || level == WeightingLevel::Group;
    let grouping = if needs_grouping {
        let s = summarize_clusters(&boot);
        Some(recipe.apply(&boot, &s, stream.derive("bootstrap-group", b)).ok()?)
    } else {
        None
    };
    let ps = estimate_propensity(&boot, strategy, grouping.as_ref()).ok()?;
    estimate_at_level(&boot, &ps.weights, level, grouping.as_ref(), "", rule).ok().map(|e| e.estimate)
}

pub fn bootstrap_ci(
    ds: &MultilevelDataset,
    recipe: &GroupingRecipe,
    strategy: &PropensityStrategy,
    level: WeightingLevel,
    config: &BootstrapConfig,
) -> Result<BootstrapResult, BootstrapError> {
    let r = config.replicates;
    if r < MIN_REPLICATES {
        return Err(BootstrapError::TooFewReplicates(r));
    }
    let stream = SeedStream::new(config.seed);
    let results: Vec<Option<f64>> = (0..r as u64)
        .into_par_iter()
        .map(|b| replicate(ds, recipe, strategy, level, &stream, b, config.small_arm_rule))
        .collect();
    let estimates: Vec<f64> = results.iter().flatten().copied().collect();
    let failed = r - estimates.len();
    if failed as f64 > MAX_FAILURE_RATE * r as f64 {
        return Err(BootstrapError::TooFewValidReplicates { failed, total: r });
    }
    if failed > 0 {
        log::warn!("{failed} of {r} bootstrap replicates failed and were discarded");
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BootstrapResult {
        ci95: (quantile(&sorted, 0.025), quantile(&sorted, 0.975)),
        se_boot: sd,
        n_valid: estimates.len(),
        n_failed: failed,
        estimates,
    })
}
