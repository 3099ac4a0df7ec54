//! Hájek-form IPW estimators of the average treatment effect.
//!
//! * full: weighted treated mean minus weighted control mean over the whole
//!   sample;
//! * cluster-weighted: the same contrast within each cluster, combined with
//!   cluster weight totals `w_h = sum_k w_hk`;
//! * group-weighted: the contrast within each group of clusters, combined
//!   with group weight totals.
//!
//! Standard errors treat the weights as fixed. Within a stratum the arm
//! variance is `V_z = sum w^2 (Y - mu_z)^2 / (sum w)^2`; strata are
//! combined as independent with squared normalized weights.

pub mod bootstrap;
pub mod matrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::MultilevelDataset;
use crate::grouping::GroupAssignment;
use crate::propensity::PropensityResult;

pub use bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapResult};
pub use matrix::{estimate_matrix, CellRequest, CellResult};

pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingLevel {
    Full,
    Group,
    Cluster,
}

impl WeightingLevel {
    pub fn name(&self) -> &'static str {
        match self {
            WeightingLevel::Full => "full",
            WeightingLevel::Group => "group",
            WeightingLevel::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for WeightingLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(WeightingLevel::Full),
            "group" => Ok(WeightingLevel::Group),
            "cluster" => Ok(WeightingLevel::Cluster),
            other => Err(format!("unknown weighting level `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no {0} individuals in the sample")]
    MissingArm(&'static str),
    #[error("no cluster has both treated and control individuals")]
    NoIdentifiedCluster,
    #[error("group {group} has no {arm} individuals")]
    DegenerateGroup { group: usize, arm: &'static str },
    #[error("weights do not match the dataset ({weights} weights, {rows} rows)")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("grouping covers {grouping} clusters but the dataset has {dataset}")]
    GroupingMismatch { grouping: usize, dataset: usize },
}

/// How the fixed-weight SE treats a stratum arm with a single observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmallArmRule {
    /// The SE is reported as missing.
    #[default]
    Missing,
    /// The arm borrows the weighted residual variance of that arm pooled
    /// over all strata with at least two observations in it.
    Pooled,
}

impl std::str::FromStr for SmallArmRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "missing" => Ok(SmallArmRule::Missing),
            "pooled" => Ok(SmallArmRule::Pooled),
            other => Err(format!("unknown small-arm rule `{other}`")),
        }
    }
}

/// Per-stratum (cluster or group) contribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub id: String,
    pub estimate: f64,
    pub weight_total: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteEstimate {
    pub estimate: f64,
    /// `None` when an arm has too few observations for a variance.
    pub se_fixed_ps: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub ps_strategy_tag: String,
    pub weighting_level: WeightingLevel,
    pub components: Vec<Component>,
    pub dropped_clusters: Vec<String>,
}

impl AteEstimate {
    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci95.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

/// Weighted arm sums over one stratum.
#[derive(Debug, Clone, Copy, Default)]
struct Arm {
    n: usize,
    sw: f64,
    swy: f64,
}

/// Weighted mean difference and arm summaries over `rows`.
#[derive(Debug, Clone)]
struct Stratum {
    arms: [Arm; 2],
    rows: Vec<usize>,
}

impl Stratum {
    fn new(ds: &MultilevelDataset, w: &[f64], rows: impl IntoIterator<Item = usize>) -> Self {
        let rows: Vec<usize> = rows.into_iter().collect();
        let mut arms = [Arm::default(); 2];
        for &i in &rows {
            let r = &ds.rows()[i];
            let a = &mut arms[r.treatment as usize];
            a.n += 1;
            a.sw += w[i];
            a.swy += w[i] * r.outcome;
        }
        Stratum { arms, rows }
    }

    fn missing_arm(&self) -> Option<&'static str> {
        if self.arms[1].n == 0 {
            Some("treated")
        } else if self.arms[0].n == 0 {
            Some("control")
        } else {
            None
        }
    }

    fn mean(&self, z: usize) -> f64 {
        self.arms[z].swy / self.arms[z].sw
    }

    fn effect(&self) -> f64 {
        self.mean(1) - self.mean(0)
    }

    fn weight_total(&self) -> f64 {
        self.arms[0].sw + self.arms[1].sw
    }

    /// `(sum w^2 (Y - mu)^2, sum w^2)` for arm `z`.
    fn arm_moments(&self, ds: &MultilevelDataset, w: &[f64], z: usize) -> (f64, f64) {
        let mu = self.mean(z);
        let mut ss = 0.0;
        let mut sw2 = 0.0;
        for &i in &self.rows {
            let r = &ds.rows()[i];
            if r.treatment as usize == z {
                ss += w[i] * w[i] * (r.outcome - mu) * (r.outcome - mu);
                sw2 += w[i] * w[i];
            }
        }
        (ss, sw2)
    }
}

/// Fixed-weight variance of a combination of strata with shares
/// proportional to `shares`.
fn combined_se(
    ds: &MultilevelDataset,
    w: &[f64],
    strata: &[&Stratum],
    shares: &[f64],
    rule: SmallArmRule,
) -> Option<f64> {
    let total: f64 = shares.iter().sum();
    // Pooled residual variance per arm, for the pooled rule.
    let mut pooled = [None; 2];
    if rule == SmallArmRule::Pooled {
        for z in 0..2 {
            let (mut ss, mut sw) = (0.0, 0.0);
            for s in strata.iter().filter(|s| s.arms[z].n >= 2) {
                let mu = s.mean(z);
                for &i in &s.rows {
                    let r = &ds.rows()[i];
                    if r.treatment as usize == z {
                        ss += w[i] * (r.outcome - mu) * (r.outcome - mu);
                        sw += w[i];
                    }
                }
            }
            if sw > 0.0 {
                pooled[z] = Some(ss / sw);
            }
        }
    }
    let mut var = 0.0;
    for (s, share) in strata.iter().zip(shares) {
        let mut v = 0.0;
        for z in 0..2 {
            let arm = s.arms[z];
            let (ss, sw2) = s.arm_moments(ds, w, z);
            if arm.n >= 2 {
                v += ss / (arm.sw * arm.sw);
            } else {
                match (rule, pooled[z]) {
                    (SmallArmRule::Pooled, Some(s2)) => v += s2 * sw2 / (arm.sw * arm.sw),
                    _ => return None,
                }
            }
        }
        var += (share / total) * (share / total) * v;
    }
    Some(var.sqrt())
}

fn finish(
    estimate: f64,
    se: Option<f64>,
    tag: &str,
    level: WeightingLevel,
    components: Vec<Component>,
    dropped_clusters: Vec<String>,
) -> AteEstimate {
    AteEstimate {
        estimate,
        se_fixed_ps: se,
        ci95: se.map(|s| (estimate - Z95 * s, estimate + Z95 * s)),
        ps_strategy_tag: tag.to_string(),
        weighting_level: level,
        components,
        dropped_clusters,
    }
}

fn check_len(ds: &MultilevelDataset, w: &[f64]) -> Result<(), EstimatorError> {
    if w.len() != ds.n() {
        return Err(EstimatorError::LengthMismatch { weights: w.len(), rows: ds.n() });
    }
    Ok(())
}

/// Weight-share average of stratum estimates. A single stratum is returned
/// as is so that one group reproduces the full-sample contrast bit for bit.
fn combine(comps: &[Component], total: f64) -> f64 {
    match comps {
        [only] => only.estimate,
        _ => comps.iter().map(|c| c.weight_total * c.estimate).sum::<f64>() / total,
    }
}

/// Full-sample Hájek contrast with raw weights.
pub fn ate_full_weights(
    ds: &MultilevelDataset,
    w: &[f64],
    tag: &str,
    rule: SmallArmRule,
) -> Result<AteEstimate, EstimatorError> {
    check_len(ds, w)?;
    let s = Stratum::new(ds, w, 0..ds.n());
    if let Some(arm) = s.missing_arm() {
        return Err(EstimatorError::MissingArm(arm));
    }
    let se = combined_se(ds, w, &[&s], &[1.0], rule);
    Ok(finish(s.effect(), se, tag, WeightingLevel::Full, vec![], vec![]))
}

/// Cluster-weighted contrast with raw weights; clusters missing an arm are
/// left out of both numerator and denominator.
pub fn ate_cluster_weights(
    ds: &MultilevelDataset,
    w: &[f64],
    tag: &str,
    rule: SmallArmRule,
) -> Result<AteEstimate, EstimatorError> {
    check_len(ds, w)?;
    let mut kept = Vec::new();
    let mut comps = Vec::new();
    let mut dropped = Vec::new();
    for h in 0..ds.n_clusters() {
        let s = Stratum::new(ds, w, ds.cluster_rows(h).iter().copied());
        if s.missing_arm().is_some() {
            dropped.push(ds.cluster_ids()[h].clone());
            continue;
        }
        comps.push(Component {
            id: ds.cluster_ids()[h].clone(),
            estimate: s.effect(),
            weight_total: s.weight_total(),
            n_treated: s.arms[1].n,
            n_control: s.arms[0].n,
        });
        kept.push(s);
    }
    if kept.is_empty() {
        return Err(EstimatorError::NoIdentifiedCluster);
    }
    if !dropped.is_empty() {
        log::info!("{} clusters lack a treatment arm and were left out", dropped.len());
    }
    let shares: Vec<f64> = comps.iter().map(|c| c.weight_total).collect();
    let total: f64 = shares.iter().sum();
    let est = combine(&comps, total);
    let refs: Vec<&Stratum> = kept.iter().collect();
    let se = combined_se(ds, w, &refs, &shares, rule);
    Ok(finish(est, se, tag, WeightingLevel::Cluster, comps, dropped))
}

/// Group-weighted contrast with raw weights.
pub fn ate_group_weights(
    ds: &MultilevelDataset,
    w: &[f64],
    grouping: &GroupAssignment,
    tag: &str,
    rule: SmallArmRule,
) -> Result<AteEstimate, EstimatorError> {
    check_len(ds, w)?;
    if grouping.n_clusters() != ds.n_clusters() {
        return Err(EstimatorError::GroupingMismatch {
            grouping: grouping.n_clusters(),
            dataset: ds.n_clusters(),
        });
    }
    let mut strata = Vec::with_capacity(grouping.n_groups());
    let mut comps = Vec::with_capacity(grouping.n_groups());
    for (g, grp) in grouping.groups().iter().enumerate() {
        let mut rows: Vec<usize> = grp.members.iter().flat_map(|&h| ds.cluster_rows(h).iter().copied()).collect();
        rows.sort_unstable();
        let s = Stratum::new(ds, w, rows);
        if let Some(arm) = s.missing_arm() {
            return Err(EstimatorError::DegenerateGroup { group: g, arm });
        }
        comps.push(Component {
            id: format!("group {g}"),
            estimate: s.effect(),
            weight_total: s.weight_total(),
            n_treated: s.arms[1].n,
            n_control: s.arms[0].n,
        });
        strata.push(s);
    }
    let shares: Vec<f64> = comps.iter().map(|c| c.weight_total).collect();
    let total: f64 = shares.iter().sum();
    let est = combine(&comps, total);
    let refs: Vec<&Stratum> = strata.iter().collect();
    let se = combined_se(ds, w, &refs, &shares, rule);
    Ok(finish(est, se, tag, WeightingLevel::Group, comps, vec![]))
}

pub fn ate_full(ds: &MultilevelDataset, ps: &PropensityResult) -> Result<AteEstimate, EstimatorError> {
    ate_full_weights(ds, &ps.weights, &ps.strategy.tag(), SmallArmRule::default())
}

pub fn ate_cluster_weighted(
    ds: &MultilevelDataset,
    ps: &PropensityResult,
) -> Result<AteEstimate, EstimatorError> {
    ate_cluster_weights(ds, &ps.weights, &ps.strategy.tag(), SmallArmRule::default())
}

pub fn ate_group_weighted(
    ds: &MultilevelDataset,
    ps: &PropensityResult,
    grouping: &GroupAssignment,
) -> Result<AteEstimate, EstimatorError> {
    ate_group_weights(ds, &ps.weights, grouping, &ps.strategy.tag(), SmallArmRule::default())
}

/// Dispatches on the weighting level.
pub fn estimate_at_level(
    ds: &MultilevelDataset,
    w: &[f64],
    level: WeightingLevel,
    grouping: Option<&GroupAssignment>,
    tag: &str,
    rule: SmallArmRule,
) -> Result<AteEstimate, EstimatorError> {
    match level {
        WeightingLevel::Full => ate_full_weights(ds, w, tag, rule),
        WeightingLevel::Cluster => ate_cluster_weights(ds, w, tag, rule),
        WeightingLevel::Group => match grouping {
            Some(g) => ate_group_weights(ds, w, g, tag, rule),
            None => Err(EstimatorError::GroupingMismatch { grouping: 0, dataset: ds.n_clusters() }),
        },
    }
}
