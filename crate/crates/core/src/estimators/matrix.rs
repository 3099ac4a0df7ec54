//! Several (propensity strategy, weighting level) cells on one dataset,
//! fitting each distinct strategy once.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_at_level, AteEstimate, EstimatorError, SmallArmRule, WeightingLevel};
use crate::data::MultilevelDataset;
use crate::grouping::GroupAssignment;
use crate::propensity::{estimate_propensity, PropensityError, PropensityResult, PropensityStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRequest {
    pub strategy: PropensityStrategy,
    pub level: WeightingLevel,
}

impl CellRequest {
    pub fn new(strategy: PropensityStrategy, level: WeightingLevel) -> Self {
        CellRequest { strategy, level }
    }

    /// Label such as `(group-RE, cluster)`.
    pub fn label(&self) -> String {
        format!("({}, {})", self.strategy.tag(), self.level.name())
    }
}

impl std::str::FromStr for CellRequest {
    type Err = String;

    /// Parses `(full-RE, group)` or `full-RE/group`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (strategy, level) = t.rsplit_once([',', '/']).ok_or_else(|| format!("malformed cell `{s}`"))?;
        Ok(CellRequest::new(strategy.trim().parse()?, level.trim().parse()?))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub request: CellRequest,
    /// Shared between every cell with the same strategy.
    pub propensity: Option<Arc<PropensityResult>>,
    pub outcome: Result<AteEstimate, CellError>,
}

/// Estimates every requested cell. A failing cell does not stop the others.
pub fn estimate_matrix(
    ds: &MultilevelDataset,
    grouping: Option<&GroupAssignment>,
    cells: &[CellRequest],
    rule: SmallArmRule,
) -> Vec<CellResult> {
    let mut cache: Vec<(PropensityStrategy, Result<Arc<PropensityResult>, PropensityError>)> = Vec::new();
    cells
        .iter()
        .map(|req| {
            let ps = match cache.iter().find(|(s, _)| *s == req.strategy) {
                Some((_, r)) => r.clone(),
                None => {
                    let r = estimate_propensity(ds, &req.strategy, grouping).map(Arc::new);
                    cache.push((req.strategy.clone(), r.clone()));
                    r
                }
            };
            match ps {
                Err(e) => CellResult { request: req.clone(), propensity: None, outcome: Err(e.into()) },
                Ok(ps) => {
                    let outcome = estimate_at_level(ds, &ps.weights, req.level, grouping, &req.strategy.tag(), rule)
                        .map_err(CellError::from);
                    CellResult { request: req.clone(), propensity: Some(ps), outcome }
                }
            }
        })
        .collect()
}

/// The seven standard comparison cells.
pub fn standard_cells(include_fixed_effects: bool, cluster_mean_split: bool) -> Vec<CellRequest> {
    use crate::propensity::{ClusterEffect, Pooling};
    let s = |p, e| PropensityStrategy::new(p, e).with_cluster_mean_split(cluster_mean_split);
    let mut out = Vec::new();
    if include_fixed_effects {
        out.push(CellRequest::new(s(Pooling::Full, ClusterEffect::Fe), WeightingLevel::Full));
    }
    for level in [WeightingLevel::Full, WeightingLevel::Group, WeightingLevel::Cluster] {
        out.push(CellRequest::new(s(Pooling::Full, ClusterEffect::Re), level));
    }
    for level in [WeightingLevel::Full, WeightingLevel::Group, WeightingLevel::Cluster] {
        out.push(CellRequest::new(s(Pooling::Group, ClusterEffect::Re), level));
    }
    out
}
