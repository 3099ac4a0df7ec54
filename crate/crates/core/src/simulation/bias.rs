//! Closed-form bias of group-level weighting under an unmeasured cluster
//! covariate.
//!
//! With outcome model `Y = b0 + g(U_h) + Z (k + f(U_h)) + e` and scores
//! equal to group prevalences `p_g`, the (group, group) estimator is
//! `tau + Lambda + Delta` where
//!
//! ```text
//! Lambda = n^-1 sum_h [ n_h d_h (1/p_g + 1/(1 - p_g)) g(U_h) + n_h d_h f(U_h) / p_g ]
//! ```
//!
//! with `d_h = p_h - p_g`, and `Delta` collects everything else (noise,
//! observed covariates, random intercepts). The analogous term for
//! (group, cluster) is
//! `Lambda~ = n^-1 sum_h n_h d_h (1/p_g - 1/(1 - p_g)) f(U_h) / 2`.

use serde::Serialize;
use thiserror::Error;

use super::dgp::SimulationTruth;
use crate::data::{summarize_clusters, ClusterSummary, MultilevelDataset};
use crate::estimators::{ate_group_weights, EstimatorError, SmallArmRule};
use crate::grouping::GroupAssignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("group {group} has prevalence {prevalence}")]
    DegenerateGroupPrevalence { group: usize, prevalence: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasDecomposition {
    pub lambda: f64,
    pub lambda_tilde: f64,
    /// `Delta`, filled in when an estimate is available.
    pub delta_residual: Option<f64>,
    /// Per cluster: `(confounding term, modification term)`, each already
    /// multiplied by `n_h d_h` but not divided by `n`.
    pub per_cluster_terms: Vec<(f64, f64)>,
}

fn check_prevalences(grouping: &GroupAssignment) -> Result<(), BiasError> {
    for (g, grp) in grouping.groups().iter().enumerate() {
        if grp.prevalence <= 0.0 || grp.prevalence >= 1.0 {
            return Err(BiasError::DegenerateGroupPrevalence { group: g, prevalence: grp.prevalence });
        }
    }
    Ok(())
}

pub fn bias_lambda(
    summaries: &[ClusterSummary],
    grouping: &GroupAssignment,
    g_values: &[f64],
    f_values: &[f64],
) -> Result<BiasDecomposition, BiasError> {
    check_prevalences(grouping)?;
    let n: usize = summaries.iter().map(|s| s.n).sum();
    let mut terms = Vec::with_capacity(summaries.len());
    let mut tilde = 0.0;
    for (h, s) in summaries.iter().enumerate() {
        let pg = grouping.groups()[grouping.group_of(h)].prevalence;
        let nd = s.n as f64 * grouping.deltas()[h];
        let conf = nd * (1.0 / pg + 1.0 / (1.0 - pg)) * g_values[h];
        let modif = nd * f_values[h] / pg;
        tilde += nd * (1.0 / pg - 1.0 / (1.0 - pg)) * f_values[h] / 2.0;
        terms.push((conf, modif));
    }
    let lambda = terms.iter().map(|(a, b)| a + b).sum::<f64>() / n as f64;
    Ok(BiasDecomposition {
        lambda,
        lambda_tilde: tilde / n as f64,
        delta_residual: None,
        per_cluster_terms: terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupGroupDecomposition {
    pub tau_hat: f64,
    pub tau: f64,
    pub lambda: f64,
    /// `tau_hat - tau - lambda`.
    pub delta: f64,
}

/// Evaluates the (group, group) estimator with scores `e_hk = p_g` and
/// splits its error into `Lambda` and the remainder.
pub fn decompose_group_group(
    ds: &MultilevelDataset,
    truth: &SimulationTruth,
    grouping: &GroupAssignment,
) -> Result<GroupGroupDecomposition, BiasError> {
    check_prevalences(grouping)?;
    let summaries = summarize_clusters(ds);
    let w: Vec<f64> = ds
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let pg = grouping.groups()[grouping.group_of(ds.cluster_of(i))].prevalence;
            if r.treatment == 1 {
                1.0 / pg
            } else {
                1.0 / (1.0 - pg)
            }
        })
        .collect();
    let est = ate_group_weights(ds, &w, grouping, "proxy", SmallArmRule::Pooled)?;
    let lambda = bias_lambda(&summaries, grouping, &truth.g_values, &truth.f_values)?.lambda;
    let tau = truth.tau_true;
    Ok(GroupGroupDecomposition { tau_hat: est.estimate, tau, lambda, delta: est.estimate - tau - lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{group_singleton, GroupingMethod};

    fn two_clusters() -> (Vec<ClusterSummary>, GroupAssignment) {
        let s = vec![
            ClusterSummary { cluster_id: "a".into(), n: 10, n_treated: 4, n_control: 6, prevalence: 0.4 },
            ClusterSummary { cluster_id: "b".into(), n: 10, n_treated: 6, n_control: 4, prevalence: 0.6 },
        ];
        let g = GroupAssignment::from_labels(&s, &[0, 0], GroupingMethod::Single, 0.0);
        (s, g)
    }

    #[test]
    fn symmetric_confounding_cancels() {
        let (s, g) = two_clusters();
        let d = bias_lambda(&s, &g, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(d.lambda.abs() < 1e-15);
    }

    #[test]
    fn one_sided_confounding() {
        let (s, g) = two_clusters();
        let d = bias_lambda(&s, &g, &[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((d.lambda - 0.2).abs() < 1e-12);
        let total: f64 = d.per_cluster_terms.iter().map(|(a, b)| a + b).sum::<f64>() / 20.0;
        assert_eq!(total, d.lambda);
    }

    #[test]
    fn zero_deviation_means_zero_bias() {
        let (s, _) = two_clusters();
        let g = group_singleton(&s);
        let d = bias_lambda(&s, &g, &[3.0, -1.0], &[2.0, 5.0]).unwrap();
        assert_eq!(d.lambda, 0.0);
        assert_eq!(d.lambda_tilde, 0.0);
    }

    #[test]
    fn pure_group_is_error() {
        let s = vec![ClusterSummary { cluster_id: "a".into(), n: 3, n_treated: 3, n_control: 0, prevalence: 1.0 }];
        let g = GroupAssignment::from_labels(&s, &[0], GroupingMethod::Single, 0.0);
        assert!(matches!(bias_lambda(&s, &g, &[0.0], &[0.0]), Err(BiasError::DegenerateGroupPrevalence { .. })));
    }
}
