//! Propensity scores and inverse-probability weights.
//!
//! A strategy fixes the fitting scope (one model for the whole sample, one
//! per group of clusters, or one per cluster), how cluster membership
//! enters the model (not at all, random intercepts, or fixed-effect
//! dummies), and which covariate columns are used.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Column, DataError, MultilevelDataset};
use crate::grouping::GroupAssignment;
use crate::model::{fit_logistic, fit_random_intercept_logistic, ModelError, PROB_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Full,
    Group,
    Cluster,
}

impl Pooling {
    pub fn name(&self) -> &'static str {
        match self {
            Pooling::Full => "full",
            Pooling::Group => "group",
            Pooling::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Pooling::Full),
            "group" => Ok(Pooling::Group),
            "cluster" => Ok(Pooling::Cluster),
            other => Err(format!("unknown pooling level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterEffect {
    None,
    #[serde(alias = "random")]
    Re,
    #[serde(alias = "fixed")]
    Fe,
}

impl ClusterEffect {
    pub fn name(&self) -> &'static str {
        match self {
            ClusterEffect::None => "none",
            ClusterEffect::Re => "RE",
            ClusterEffect::Fe => "FE",
        }
    }
}

impl std::str::FromStr for ClusterEffect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ClusterEffect::None),
            "re" | "random" => Ok(ClusterEffect::Re),
            "fe" | "fixed" => Ok(ClusterEffect::Fe),
            other => Err(format!("unknown cluster effect `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityStrategy {
    pub pooling: Pooling,
    pub cluster_effect: ClusterEffect,
    /// Covariate columns in the model; `None` uses every column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Truncation of scores at weighting time.
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
    /// Enter each individual covariate as its cluster mean plus the
    /// within-cluster deviation.
    #[serde(default)]
    pub cluster_mean_split: bool,
    /// Coded columns entered as indicators of every level but the lowest.
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl PropensityStrategy {
    pub fn new(pooling: Pooling, cluster_effect: ClusterEffect) -> Self {
        PropensityStrategy {
            pooling,
            cluster_effect,
            covariates: None,
            clamp: None,
            cluster_mean_split: false,
            categorical: vec![],
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>) -> Self {
        self.covariates = Some(covariates);
        self
    }

    pub fn with_categorical(mut self, columns: Vec<String>) -> Self {
        self.categorical = columns;
        self
    }

    pub fn with_cluster_mean_split(mut self, on: bool) -> Self {
        self.cluster_mean_split = on;
        self
    }

    /// Label such as `full-RE` or `cluster-none`.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.pooling.name(), self.cluster_effect.name())
    }

    pub fn validate(&self) -> Result<(), PropensityError> {
        if self.pooling == Pooling::Cluster && self.cluster_effect != ClusterEffect::None {
            return Err(PropensityError::InvalidStrategy(
                "cluster-level models cannot carry a cluster effect".into(),
            ));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(PropensityError::InvalidStrategy(format!(
                    "clamp bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PropensityStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl std::str::FromStr for PropensityStrategy {
    type Err = String;

    /// Parses `full-RE`, `group,re`, `cluster-none` and similar.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(['-', ',', ':']);
        let pooling = parts.next().ok_or("empty strategy")?.parse()?;
        let effect = match parts.next() {
            Some(e) => e.parse()?,
            None => ClusterEffect::None,
        };
        if parts.next().is_some() {
            return Err(format!("malformed strategy `{s}`"));
        }
        Ok(PropensityStrategy::new(pooling, effect))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropensityError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("group pooling needs a grouping")]
    MissingGrouping,
    #[error("grouping covers {grouping} clusters but the dataset has {dataset}")]
    GroupingMismatch { grouping: usize, dataset: usize },
    #[error("scope `{scope}` has no {arm} individuals")]
    DegenerateScope { scope: String, arm: &'static str },
    #[error("score {score} at row {row} is outside (0, 1)")]
    ScoreOutOfRange { row: usize, score: f64 },
    #[error("model fit failed in scope `{scope}`: {source}")]
    Model { scope: String, source: ModelError },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Fit record for one scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeDiagnostics {
    pub scope: String,
    pub n: usize,
    pub converged: bool,
    pub clamp_count: usize,
    pub sigma_b: Option<f64>,
    /// Design columns dropped as constant within the scope.
    pub dropped_columns: Vec<String>,
    /// Set when the requested model could not be used.
    pub fallback: Option<String>,
    /// Treatment arm absent from the scope, for non-identified clusters.
    pub missing_arm: Option<&'static str>,
}

#[derive(Debug, Clone)]
pub struct PropensityResult {
    pub strategy: PropensityStrategy,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    /// Sum of weights per cluster.
    pub cluster_weight_totals: Vec<f64>,
    /// Sum of weights per group, when a grouping was supplied.
    pub group_weight_totals: Option<Vec<f64>>,
    pub diagnostics: Vec<ScopeDiagnostics>,
    /// Clusters whose own model was not identified (cluster pooling only).
    pub non_identified: Vec<usize>,
}

impl PropensityResult {
    /// Group totals under an arbitrary grouping.
    pub fn group_totals(&self, grouping: &GroupAssignment) -> Vec<f64> {
        let mut t = vec![0.0; grouping.n_groups()];
        for (h, w) in self.cluster_weight_totals.iter().enumerate() {
            t[grouping.group_of(h)] += w;
        }
        t
    }

    pub fn fallbacks(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.fallback.is_some()).count()
    }
}

/// `w = Z / e + (1 - Z) / (1 - e)`.
pub fn compute_weights(scores: &[f64], treatments: &[u8]) -> Result<Vec<f64>, PropensityError> {
    assert_eq!(scores.len(), treatments.len());
    scores
        .iter()
        .zip(treatments)
        .enumerate()
        .map(|(row, (&e, &z))| {
            if !(e > 0.0 && e < 1.0) {
                return Err(PropensityError::ScoreOutOfRange { row, score: e });
            }
            let z = z as f64;
            Ok(z / e + (1.0 - z) / (1.0 - e))
        })
        .collect()
}

struct Feature {
    name: String,
    values: Vec<f64>,
    cluster_level: bool,
}

fn features(ds: &MultilevelDataset, strategy: &PropensityStrategy) -> Result<Vec<Feature>, DataError> {
    let names: Vec<String> = match &strategy.covariates {
        Some(c) => c.clone(),
        None => ds
            .individual_covariate_names()
            .iter()
            .chain(ds.cluster_covariate_names())
            .cloned()
            .collect(),
    };
    let mut out = Vec::new();
    for name in names {
        let col = ds.column(&name)?;
        if strategy.categorical.contains(&name) {
            let values: Vec<f64> = (0..ds.n()).map(|i| ds.value(i, col)).collect();
            let mut levels = values.clone();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            for level in levels.iter().skip(1) {
                out.push(Feature {
                    name: format!("{name}={level}"),
                    values: values.iter().map(|&v| (v == *level) as u8 as f64).collect(),
                    cluster_level: matches!(col, Column::Cluster(_)),
                });
            }
            continue;
        }
        match col {
            Column::Individual(j) if strategy.cluster_mean_split => {
                let means = ds.cluster_means(j);
                let bar: Vec<f64> = (0..ds.n()).map(|i| means[ds.cluster_of(i)]).collect();
                let dev = (0..ds.n()).map(|i| ds.rows()[i].x[j] - bar[i]).collect();
                out.push(Feature { name: format!("mean({name})"), values: bar, cluster_level: true });
                out.push(Feature { name: format!("dev({name})"), values: dev, cluster_level: false });
            }
            col @ Column::Individual(_) => out.push(Feature {
                name,
                values: (0..ds.n()).map(|i| ds.value(i, col)).collect(),
                cluster_level: false,
            }),
            col @ Column::Cluster(_) => out.push(Feature {
                name,
                values: (0..ds.n()).map(|i| ds.value(i, col)).collect(),
                cluster_level: true,
            }),
        }
    }
    Ok(out)
}

fn is_constant(v: impl Iterator<Item = f64>) -> bool {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs()))
}

/// Design matrix for `rows` using the non-constant features (and, when
/// `skip_cluster_level`, only individual-level features).
fn design(feats: &[Feature], rows: &[usize], skip_cluster_level: bool) -> (DMatrix<f64>, Vec<String>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for f in feats {
        if (skip_cluster_level && f.cluster_level) || is_constant(rows.iter().map(|&i| f.values[i])) {
            dropped.push(f.name.clone());
        } else {
            kept.push(f);
        }
    }
    let x = DMatrix::from_fn(rows.len(), kept.len(), |r, c| kept[c].values[rows[r]]);
    (x, dropped)
}

fn missing_arm(z: &[f64]) -> Option<&'static str> {
    if z.iter().all(|&v| v == 0.0) {
        Some("treated")
    } else if z.iter().all(|&v| v == 1.0) {
        Some("control")
    } else {
        None
    }
}

struct ScopeFit {
    scores: Vec<f64>,
    diag: ScopeDiagnostics,
}

fn fit_scope(
    ds: &MultilevelDataset,
    feats: &[Feature],
    rows: &[usize],
    effect: ClusterEffect,
    scope: String,
) -> Result<ScopeFit, ModelError> {
    let y: Vec<f64> = rows.iter().map(|&i| ds.rows()[i].treatment as f64).collect();
    let mut diag = ScopeDiagnostics {
        scope,
        n: rows.len(),
        converged: true,
        clamp_count: 0,
        sigma_b: None,
        dropped_columns: vec![],
        fallback: None,
        missing_arm: None,
    };
    // Scope-local cluster labels in order of appearance.
    let mut local = Vec::with_capacity(rows.len());
    let mut seen: Vec<Option<usize>> = vec![None; ds.n_clusters()];
    let mut n_local = 0;
    for &i in rows {
        let h = ds.cluster_of(i);
        let l = *seen[h].get_or_insert_with(|| {
            n_local += 1;
            n_local - 1
        });
        local.push(l);
    }

    match effect {
        ClusterEffect::Re => {
            let (x, dropped) = design(feats, rows, false);
            diag.dropped_columns = dropped;
            let fit = fit_random_intercept_logistic(&x, &y, &local)?;
            diag.converged = fit.converged;
            diag.clamp_count = fit.clamp_count;
            diag.sigma_b = Some(fit.sigma_b);
            Ok(ScopeFit { scores: fit.fitted.iter().copied().collect(), diag })
        }
        ClusterEffect::Fe => {
            let (x, dropped) = design(feats, rows, true);
            let with_dummies = x.clone().resize_horizontally(x.ncols() + n_local.saturating_sub(1), 0.0);
            let mut xd = with_dummies;
            for (r, &l) in local.iter().enumerate() {
                if l > 0 {
                    xd[(r, x.ncols() + l - 1)] = 1.0;
                }
            }
            match fit_logistic(&xd, &y) {
                Ok(fit) if fit.converged => {
                    diag.dropped_columns = dropped;
                    diag.clamp_count = fit.clamp_count;
                    Ok(ScopeFit { scores: fit.fitted.iter().copied().collect(), diag })
                }
                other => {
                    let reason = match other {
                        Ok(_) => "fixed-effects fit did not converge".to_string(),
                        Err(e) => format!("fixed-effects fit failed: {e}"),
                    };
                    log::info!("{}: {reason}; using the pooled model", diag.scope);
                    let (x, dropped) = design(feats, rows, false);
                    let fit = fit_logistic(&x, &y)?;
                    diag.dropped_columns = dropped;
                    diag.converged = fit.converged;
                    diag.clamp_count = fit.clamp_count;
                    diag.fallback = Some(reason);
                    Ok(ScopeFit { scores: fit.fitted.iter().copied().collect(), diag })
                }
            }
        }
        ClusterEffect::None => {
            let (x, dropped) = design(feats, rows, false);
            diag.dropped_columns = dropped;
            match fit_logistic(&x, &y) {
                Ok(fit) => {
                    diag.converged = fit.converged;
                    diag.clamp_count = fit.clamp_count;
                    Ok(ScopeFit { scores: fit.fitted.iter().copied().collect(), diag })
                }
                Err(ModelError::RankDeficientDesign) if x.ncols() > 0 => {
                    let fit = fit_logistic(&DMatrix::zeros(rows.len(), 0), &y)?;
                    diag.fallback = Some("rank-deficient design; intercept-only model".into());
                    diag.converged = fit.converged;
                    Ok(ScopeFit { scores: fit.fitted.iter().copied().collect(), diag })
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Fits the strategy's propensity models and returns scores and weights.
pub fn estimate_propensity(
    ds: &MultilevelDataset,
    strategy: &PropensityStrategy,
    grouping: Option<&GroupAssignment>,
) -> Result<PropensityResult, PropensityError> {
    strategy.validate()?;
    if let Some(g) = grouping {
        if g.n_clusters() != ds.n_clusters() {
            return Err(PropensityError::GroupingMismatch {
                grouping: g.n_clusters(),
                dataset: ds.n_clusters(),
            });
        }
    }
    let feats = features(ds, strategy)?;

    let scopes: Vec<(String, Vec<usize>)> = match strategy.pooling {
        Pooling::Full => vec![("full".into(), (0..ds.n()).collect())],
        Pooling::Group => {
            let g = grouping.ok_or(PropensityError::MissingGrouping)?;
            g.groups()
                .iter()
                .enumerate()
                .map(|(k, grp)| {
                    let rows = grp.members.iter().flat_map(|&h| ds.cluster_rows(h).iter().copied()).collect();
                    (format!("group {k}"), rows)
                })
                .collect()
        }
        Pooling::Cluster => (0..ds.n_clusters())
            .map(|h| (format!("cluster {}", ds.cluster_ids()[h]), ds.cluster_rows(h).to_vec()))
            .collect(),
    };

    let mut scores = vec![f64::NAN; ds.n()];
    let mut diagnostics = Vec::with_capacity(scopes.len());
    let mut non_identified = Vec::new();
    for (k, (scope, rows)) in scopes.into_iter().enumerate() {
        let z: Vec<f64> = rows.iter().map(|&i| ds.rows()[i].treatment as f64).collect();
        if let Some(arm) = missing_arm(&z) {
            if strategy.pooling != Pooling::Cluster {
                return Err(PropensityError::DegenerateScope { scope, arm });
            }
            // The cluster's own model has no finite solution; its scores sit
            // at the fitting clamp and the cluster is flagged.
            let limit = if arm == "control" { 1.0 - PROB_CLAMP } else { PROB_CLAMP };
            for &i in &rows {
                scores[i] = limit;
            }
            non_identified.push(k);
            diagnostics.push(ScopeDiagnostics {
                scope,
                n: rows.len(),
                converged: false,
                clamp_count: rows.len(),
                sigma_b: None,
                dropped_columns: vec![],
                fallback: None,
                missing_arm: Some(arm),
            });
            continue;
        }
        let fit = fit_scope(ds, &feats, &rows, strategy.cluster_effect, scope.clone())
            .map_err(|source| PropensityError::Model { scope, source })?;
        for (r, &i) in rows.iter().enumerate() {
            scores[i] = fit.scores[r];
        }
        diagnostics.push(fit.diag);
    }

    if let Some((lo, hi)) = strategy.clamp {
        for e in &mut scores {
            *e = e.clamp(lo, hi);
        }
    }
    let weights = compute_weights(&scores, &ds.treatments())?;
    let mut cluster_weight_totals = vec![0.0; ds.n_clusters()];
    for (i, w) in weights.iter().enumerate() {
        cluster_weight_totals[ds.cluster_of(i)] += w;
    }
    let mut result = PropensityResult {
        strategy: strategy.clone(),
        scores,
        weights,
        cluster_weight_totals,
        group_weight_totals: None,
        diagnostics,
        non_identified,
    };
    if let Some(g) = grouping {
        result.group_weight_totals = Some(result.group_totals(g));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{summarize_clusters, testutil::plain, validate_dataset, RawRow};
    use crate::grouping::{group_by_prevalence, group_single};
    use crate::rng::SeedStream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn weight_formula() {
        let w = compute_weights(&[0.5, 0.25, 0.8], &[1, 1, 0]).unwrap();
        assert_eq!(&w[..2], &[2.0, 4.0]);
        assert!((w[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn weight_rejects_boundary_scores() {
        assert_eq!(
            compute_weights(&[0.5, 1.0], &[1, 1]).unwrap_err(),
            PropensityError::ScoreOutOfRange { row: 1, score: 1.0 }
        );
        assert!(compute_weights(&[0.0], &[0]).is_err());
        assert!(compute_weights(&[f64::NAN], &[0]).is_err());
    }

    #[test]
    fn strategy_tags_and_parsing() {
        assert_eq!(PropensityStrategy::new(Pooling::Full, ClusterEffect::Re).tag(), "full-RE");
        assert_eq!(PropensityStrategy::new(Pooling::Group, ClusterEffect::Re).tag(), "group-RE");
        let s: PropensityStrategy = "full,fe".parse().unwrap();
        assert_eq!(s.tag(), "full-FE");
        let s: PropensityStrategy = "cluster".parse().unwrap();
        assert_eq!(s.tag(), "cluster-none");
        assert!("cluster-re".parse::<PropensityStrategy>().unwrap().validate().is_err());
    }

    fn bernoulli_dataset(seed: u64, h: usize, p: impl Fn(usize, f64) -> f64) -> MultilevelDataset {
        let mut rng = SeedStream::new(seed).rng("ps-test", 0);
        let mut raw = Vec::new();
        for c in 0..h {
            let n = rng.random_range(5..25);
            let v: f64 = rng.random_range(-1.0..1.0);
            for _ in 0..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                let z = rng.random::<f64>() < p(c, x);
                raw.push(RawRow {
                    cluster_id: format!("s{c}"),
                    treatment: z as u8 as f64,
                    outcome: 0.0,
                    x: vec![x],
                    v: vec![v],
                });
            }
        }
        validate_dataset(raw, vec!["x".into()], vec!["v".into()]).unwrap()
    }

    #[test]
    fn coin_flip_assignment_gives_half_scores() {
        let ds = bernoulli_dataset(11, 140, |_, _| 0.5);
        assert!(ds.n() >= 2000);
        let r = estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Full, ClusterEffect::None), None).unwrap();
        assert!(r.scores.iter().all(|&e| (e - 0.5).abs() < 0.1));
        assert!(r.weights.iter().all(|&w| (w - 2.0).abs() < 0.5));
    }

    #[test]
    fn single_group_matches_full_pooling() {
        let ds = bernoulli_dataset(12, 40, |c, x| 0.3 + 0.01 * (c % 20) as f64 + 0.1 * x);
        let g = group_single(&summarize_clusters(&ds));
        let full = estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Full, ClusterEffect::Re), None).unwrap();
        let grp =
            estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Group, ClusterEffect::Re), Some(&g)).unwrap();
        assert_eq!(full.scores, grp.scores);
    }

    #[test]
    fn pure_cluster_is_flagged_not_fatal() {
        let ds = plain(&[("a", 1, 0.), ("a", 0, 0.), ("b", 1, 0.), ("b", 1, 0.), ("c", 0, 0.), ("c", 1, 0.)]);
        let r = estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Cluster, ClusterEffect::None), None).unwrap();
        assert_eq!(r.non_identified, vec![1]);
        assert_eq!(r.diagnostics[1].missing_arm, Some("control"));
        assert!((r.scores[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_group_is_fatal() {
        let ds = plain(&[("a", 1, 0.), ("a", 1, 0.), ("b", 0, 0.), ("b", 1, 0.)]);
        let g = group_by_prevalence(&summarize_clusters(&ds), 2).unwrap();
        let err =
            estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Group, ClusterEffect::None), Some(&g)).unwrap_err();
        assert!(matches!(err, PropensityError::DegenerateScope { .. }));
        assert_eq!(
            estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Group, ClusterEffect::None), None).unwrap_err(),
            PropensityError::MissingGrouping
        );
    }

    #[test]
    fn cluster_intercept_only_scores_equal_prevalence() {
        let ds = bernoulli_dataset(13, 30, |c, _| 0.2 + 0.02 * c as f64);
        let s = summarize_clusters(&ds);
        let mut strat = PropensityStrategy::new(Pooling::Cluster, ClusterEffect::None);
        strat.covariates = Some(vec![]);
        let r = estimate_propensity(&ds, &strat, None).unwrap();
        for i in 0..ds.n() {
            let h = ds.cluster_of(i);
            if s[h].is_mixed() {
                assert!((r.scores[i] - s[h].prevalence).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn group_intercept_only_scores_equal_group_prevalence() {
        let ds = bernoulli_dataset(14, 30, |c, _| 0.2 + 0.02 * c as f64);
        let s = summarize_clusters(&ds);
        let g = group_by_prevalence(&s, 4).unwrap();
        let strat = PropensityStrategy::new(Pooling::Group, ClusterEffect::None).with_covariates(vec![]);
        let r = estimate_propensity(&ds, &strat, Some(&g)).unwrap();
        for i in 0..ds.n() {
            let grp = &g.groups()[g.group_of(ds.cluster_of(i))];
            assert!((r.scores[i] - grp.prevalence).abs() < 1e-8);
        }
        let totals = r.group_weight_totals.clone().unwrap();
        let sum: f64 = totals.iter().sum();
        assert!((sum - r.cluster_weight_totals.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn fixed_effects_drop_cluster_level_columns() {
        let ds = bernoulli_dataset(15, 12, |c, x| 0.3 + 0.03 * c as f64 + 0.1 * x);
        let r = estimate_propensity(&ds, &PropensityStrategy::new(Pooling::Full, ClusterEffect::Fe), None).unwrap();
        let d = &r.diagnostics[0];
        if d.fallback.is_none() {
            assert_eq!(d.dropped_columns, vec!["v".to_string()]);
        }
        assert!(r.weights.iter().all(|&w| w >= 1.0));
    }

    #[test]
    fn cluster_mean_split_names_columns() {
        let ds = bernoulli_dataset(16, 20, |_, x| 0.5 + 0.2 * x);
        let strat = PropensityStrategy::new(Pooling::Full, ClusterEffect::None).with_cluster_mean_split(true);
        let r = estimate_propensity(&ds, &strat, None).unwrap();
        assert!(r.diagnostics[0].dropped_columns.is_empty());
        let feats = features(&ds, &strat).unwrap();
        let names: Vec<&str> = feats.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["mean(x)", "dev(x)", "v"]);
    }

    #[test]
    fn categorical_columns_become_indicators() {
        let mut raw = Vec::new();
        for (c, code) in [0.0, 1.0, 2.0, 1.0].iter().enumerate() {
            for k in 0..4 {
                raw.push(RawRow {
                    cluster_id: format!("c{c}"),
                    treatment: ((k + c) % 2) as f64,
                    outcome: 0.0,
                    x: vec![k as f64],
                    v: vec![*code],
                });
            }
        }
        let ds = validate_dataset(raw, vec!["x".into()], vec!["region".into()]).unwrap();
        let strat = PropensityStrategy::new(Pooling::Full, ClusterEffect::None).with_categorical(vec!["region".into()]);
        let feats = features(&ds, &strat).unwrap();
        let names: Vec<&str> = feats.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["x", "region=1", "region=2"]);
        assert_eq!(feats[2].values[8..12], [1.0; 4]);
        assert!(feats[1].cluster_level);
    }

    #[test]
    fn clamp_truncates_scores() {
        let ds = bernoulli_dataset(17, 20, |_, x| 0.5 + 0.45 * x);
        let mut strat = PropensityStrategy::new(Pooling::Full, ClusterEffect::None);
        strat.clamp = Some((0.2, 0.8));
        let r = estimate_propensity(&ds, &strat, None).unwrap();
        assert!(r.scores.iter().all(|&e| (0.2..=0.8).contains(&e)));
    }

    proptest! {
        #[test]
        fn weights_at_least_one(pairs in proptest::collection::vec((1e-9f64..1.0 - 1e-9, 0u8..2), 1..50)) {
            let (e, z): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            let w = compute_weights(&e, &z).unwrap();
            for (i, wi) in w.iter().enumerate() {
                prop_assert!(*wi >= 1.0);
                let expect = if z[i] == 1 { 1.0 / e[i] } else { 1.0 / (1.0 - e[i]) };
                prop_assert_eq!(*wi, expect);
            }
        }
    }
}
