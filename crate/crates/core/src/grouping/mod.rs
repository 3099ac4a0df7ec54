//! Partitioning clusters into groups for partially pooled propensity models.
//!
//! The primary criterion groups clusters with similar treatment prevalence
//! `p_h` via PAM on absolute differences. Random, covariate-based and
//! merged (prevalence + covariates) groupings exist for comparison.
//!
//! Every grouping records, per group, the pooled prevalence
//! `p_g = n_g1 / n_g` and, per cluster, the deviation `delta_h = p_h - p_g`.

pub mod pam;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClusterSummary, DataError, MultilevelDataset};
use crate::rng::SeedStream;
use pam::DistanceMatrix;

/// Default number of groups.
pub const DEFAULT_GROUPS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("requested {requested} groups but only {clusters} clusters exist")]
    TooManyGroups { requested: usize, clusters: usize },
    #[error("number of groups must be at least 1")]
    ZeroGroups,
    #[error("covariate grouping needs at least one covariate column")]
    NoCovariates,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMethod {
    Prevalence,
    Random,
    Covariate,
    Merged,
    Singleton,
    Single,
}

impl GroupingMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GroupingMethod::Prevalence => "prevalence",
            GroupingMethod::Random => "random",
            GroupingMethod::Covariate => "covariate",
            GroupingMethod::Merged => "merged",
            GroupingMethod::Singleton => "singleton",
            GroupingMethod::Single => "single",
        }
    }

    /// One-letter code used in result tables (P, R, C, M).
    pub fn code(&self) -> &'static str {
        match self {
            GroupingMethod::Prevalence => "P",
            GroupingMethod::Random => "R",
            GroupingMethod::Covariate => "C",
            GroupingMethod::Merged => "M",
            GroupingMethod::Singleton => "S",
            GroupingMethod::Single => "1",
        }
    }
}

impl std::str::FromStr for GroupingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "prevalence" | "p" => Ok(GroupingMethod::Prevalence),
            "random" | "r" => Ok(GroupingMethod::Random),
            "covariate" | "covariates" | "c" => Ok(GroupingMethod::Covariate),
            "merged" | "m" => Ok(GroupingMethod::Merged),
            "singleton" => Ok(GroupingMethod::Singleton),
            "single" => Ok(GroupingMethod::Single),
            other => Err(format!("unknown grouping method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Member cluster indices, ascending.
    pub members: Vec<usize>,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    cluster_ids: Vec<String>,
    group_of: Vec<usize>,
    groups: Vec<Group>,
    deltas: Vec<f64>,
    method: GroupingMethod,
    objective: f64,
    dropped_features: Vec<String>,
}

impl GroupAssignment {
    /// Builds an assignment from per-cluster labels. Labels need not be
    /// contiguous; empty labels disappear and groups are renumbered in order
    /// of their lowest-index member.
    pub fn from_labels(
        summaries: &[ClusterSummary],
        labels: &[usize],
        method: GroupingMethod,
        objective: f64,
    ) -> Self {
        assert_eq!(summaries.len(), labels.len());
        let mut remap: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
        let mut groups: Vec<Group> = Vec::new();
        let mut group_of = Vec::with_capacity(labels.len());
        for (h, &l) in labels.iter().enumerate() {
            let g = *remap[l].get_or_insert_with(|| {
                groups.push(Group { members: vec![], n: 0, n_treated: 0, n_control: 0, prevalence: 0.0 });
                groups.len() - 1
            });
            let s = &summaries[h];
            let grp = &mut groups[g];
            grp.members.push(h);
            grp.n += s.n;
            grp.n_treated += s.n_treated;
            grp.n_control += s.n_control;
            group_of.push(g);
        }
        for g in &mut groups {
            g.prevalence = g.n_treated as f64 / g.n as f64;
        }
        let deltas = summaries
            .iter()
            .zip(&group_of)
            .map(|(s, &g)| s.prevalence - groups[g].prevalence)
            .collect();
        GroupAssignment {
            cluster_ids: summaries.iter().map(|s| s.cluster_id.clone()).collect(),
            group_of,
            groups,
            deltas,
            method,
            objective,
            dropped_features: vec![],
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.group_of.len()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Group index of cluster `h` (cluster order of the summaries).
    pub fn group_of(&self, h: usize) -> usize {
        self.group_of[h]
    }

    pub fn group_of_id(&self, cluster_id: &str) -> Option<usize> {
        self.cluster_ids.iter().position(|c| c == cluster_id).map(|h| self.group_of[h])
    }

    pub fn labels(&self) -> &[usize] {
        &self.group_of
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    /// `p_h - p_g` for each cluster.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn method(&self) -> GroupingMethod {
        self.method
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Features dropped for having zero variance across clusters.
    pub fn dropped_features(&self) -> &[String] {
        &self.dropped_features
    }
}

fn check_groups(g: usize, h: usize) -> Result<(), GroupingError> {
    if g == 0 {
        return Err(GroupingError::ZeroGroups);
    }
    if g > h {
        return Err(GroupingError::TooManyGroups { requested: g, clusters: h });
    }
    Ok(())
}

fn from_pam(
    summaries: &[ClusterSummary],
    dist: &DistanceMatrix,
    g: usize,
    method: GroupingMethod,
) -> GroupAssignment {
    let res = pam::pam(dist, g);
    GroupAssignment::from_labels(summaries, &res.assignment, method, res.objective)
}

/// PAM on cluster prevalences with absolute-difference distance.
pub fn group_by_prevalence(
    summaries: &[ClusterSummary],
    g: usize,
) -> Result<GroupAssignment, GroupingError> {
    check_groups(g, summaries.len())?;
    let p: Vec<f64> = summaries.iter().map(|s| s.prevalence).collect();
    Ok(from_pam(summaries, &DistanceMatrix::absolute(&p), g, GroupingMethod::Prevalence))
}

/// Uniform random labels in `0..g`; empty labels are collapsed.
pub fn group_random(
    summaries: &[ClusterSummary],
    g: usize,
    seed: u64,
) -> Result<GroupAssignment, GroupingError> {
    check_groups(g, summaries.len())?;
    let mut rng = SeedStream::new(seed).rng("group-random", 0);
    let labels: Vec<usize> = (0..summaries.len()).map(|_| rng.random_range(0..g)).collect();
    let mut out = GroupAssignment::from_labels(summaries, &labels, GroupingMethod::Random, 0.0);
    out.objective = within_group_prevalence_distance(&out, summaries);
    Ok(out)
}

/// Every cluster in one group.
pub fn group_single(summaries: &[ClusterSummary]) -> GroupAssignment {
    let labels = vec![0; summaries.len()];
    let mut out = GroupAssignment::from_labels(summaries, &labels, GroupingMethod::Single, 0.0);
    out.objective = within_group_prevalence_distance(&out, summaries);
    out
}

/// Every cluster its own group.
pub fn group_singleton(summaries: &[ClusterSummary]) -> GroupAssignment {
    let labels: Vec<usize> = (0..summaries.len()).collect();
    GroupAssignment::from_labels(summaries, &labels, GroupingMethod::Singleton, 0.0)
}

/// Sum over groups of the absolute prevalence distance from each member to
/// the best medoid of its group. Makes objectives comparable with PAM.
pub fn within_group_prevalence_distance(
    assignment: &GroupAssignment,
    summaries: &[ClusterSummary],
) -> f64 {
    assignment
        .groups()
        .iter()
        .map(|grp| {
            grp.members
                .iter()
                .map(|&m| {
                    grp.members
                        .iter()
                        .map(|&j| (summaries[m].prevalence - summaries[j].prevalence).abs())
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Z-standardizes feature columns across clusters, dropping (with a
/// warning) any column with zero variance.
fn standardize(columns: Vec<(String, Vec<f64>)>) -> (Vec<Vec<f64>>, Vec<String>) {
    let h = columns.first().map_or(0, |c| c.1.len());
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for (name, col) in columns {
        let mean = col.iter().sum::<f64>() / h as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            log::warn!("grouping feature `{name}` is constant across clusters; dropped");
            dropped.push(name);
            continue;
        }
        kept.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let features = (0..h).map(|i| kept.iter().map(|c| c[i]).collect()).collect();
    (features, dropped)
}

fn covariate_columns(
    ds: &MultilevelDataset,
    columns: Option<&[String]>,
) -> Result<Vec<(String, Vec<f64>)>, GroupingError> {
    let names: Vec<String> = match columns {
        Some(c) => c.to_vec(),
        None => ds
            .individual_covariate_names()
            .iter()
            .chain(ds.cluster_covariate_names())
            .cloned()
            .collect(),
    };
    if names.is_empty() {
        return Err(GroupingError::NoCovariates);
    }
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let col = match ds.column(&name)? {
            crate::data::Column::Individual(j) => ds.cluster_means(j),
            crate::data::Column::Cluster(j) => {
                (0..ds.n_clusters()).map(|h| ds.rows()[ds.cluster_rows(h)[0]].v[j]).collect()
            }
        };
        out.push((name, col));
    }
    Ok(out)
}

fn feature_pam(
    summaries: &[ClusterSummary],
    columns: Vec<(String, Vec<f64>)>,
    g: usize,
    method: GroupingMethod,
) -> GroupAssignment {
    let (features, dropped) = standardize(columns);
    let mut out = from_pam(summaries, &DistanceMatrix::euclidean(&features), g, method);
    out.dropped_features = dropped;
    out
}

/// PAM on standardized cluster features: per-cluster means of individual
/// covariates and the cluster covariates (all columns unless `columns`).
pub fn group_by_covariates(
    ds: &MultilevelDataset,
    summaries: &[ClusterSummary],
    g: usize,
    columns: Option<&[String]>,
) -> Result<GroupAssignment, GroupingError> {
    check_groups(g, summaries.len())?;
    let cols = covariate_columns(ds, columns)?;
    Ok(feature_pam(summaries, cols, g, GroupingMethod::Covariate))
}

/// PAM on standardized `[p_h, covariate features]`.
pub fn group_merged(
    ds: &MultilevelDataset,
    summaries: &[ClusterSummary],
    g: usize,
    columns: Option<&[String]>,
) -> Result<GroupAssignment, GroupingError> {
    check_groups(g, summaries.len())?;
    let mut cols = vec![("prevalence".to_string(), summaries.iter().map(|s| s.prevalence).collect())];
    cols.extend(covariate_columns(ds, columns)?);
    Ok(feature_pam(summaries, cols, g, GroupingMethod::Merged))
}

/// A reusable grouping rule, re-applied to resampled or simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingRecipe {
    pub method: GroupingMethod,
    pub groups: usize,
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

impl GroupingRecipe {
    pub fn new(method: GroupingMethod, groups: usize) -> Self {
        GroupingRecipe { method, groups, covariates: None }
    }

    pub fn apply(
        &self,
        ds: &MultilevelDataset,
        summaries: &[ClusterSummary],
        seed: u64,
    ) -> Result<GroupAssignment, GroupingError> {
        let cols = self.covariates.as_deref();
        match self.method {
            GroupingMethod::Prevalence => group_by_prevalence(summaries, self.groups),
            GroupingMethod::Random => group_random(summaries, self.groups, seed),
            GroupingMethod::Covariate => group_by_covariates(ds, summaries, self.groups, cols),
            GroupingMethod::Merged => group_merged(ds, summaries, self.groups, cols),
            GroupingMethod::Singleton => Ok(group_singleton(summaries)),
            GroupingMethod::Single => Ok(group_single(summaries)),
        }
    }
}
