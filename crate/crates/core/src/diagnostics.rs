//! Covariate balance between arms and cluster covariate mix across
//! treatment-prevalence bins.
//!
//! Continuous SMD is `|m1 - m0| / sqrt((s1^2 + s0^2) / 2)` with weighted
//! means and variances using the divisor `sum w`. A categorical covariate
//! with `K` levels gets one SMD, `sqrt(d' S^+ d)`, where `d` holds the arm
//! differences in the first `K - 1` level proportions and `S` is the average
//! of the two arms' multinomial covariances.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{summarize_clusters, DataError, MultilevelDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("covariate {covariate}: value {value} at row {row} is not a declared level")]
    UnknownLevel { covariate: String, value: f64, row: usize },
    #[error("no {0} observations with positive weight")]
    EmptyArm(&'static str),
    #[error("{weights} weights for {rows} rows")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Categorical { levels: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn continuous(name: &str) -> Self {
        CovariateSpec { name: name.into(), kind: CovariateKind::Continuous }
    }

    pub fn categorical(name: &str, levels: &[f64]) -> Self {
        CovariateSpec { name: name.into(), kind: CovariateKind::Categorical { levels: levels.to_vec() } }
    }
}

/// `ses`, `ses:cont`, or `region:cat:0|1|2|3`.
impl FromStr for CovariateSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [name] | [name, "cont"] if !name.is_empty() => Ok(CovariateSpec::continuous(name)),
            [name, "cat", levels] if !name.is_empty() => {
                let lv: Result<Vec<f64>, _> = levels.split('|').map(|l| l.trim().parse::<f64>()).collect();
                match lv {
                    Ok(lv) if !lv.is_empty() => Ok(CovariateSpec::categorical(name, &lv)),
                    _ => Err(format!("bad level list in {s:?}")),
                }
            }
            _ => Err(format!("bad covariate spec {s:?}; expected name, name:cont or name:cat:l1|l2|...")),
        }
    }
}

/// Treated and control value of one statistic: a mean for continuous
/// covariates, a proportion for a categorical level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStat {
    pub label: String,
    pub treated_unweighted: f64,
    pub control_unweighted: f64,
    pub treated_weighted: f64,
    pub control_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub stats: Vec<LevelStat>,
    pub smd_unweighted: f64,
    pub smd_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
    /// `(treated, control)`.
    pub sum_of_weights: (f64, f64),
}

impl BalanceTable {
    pub fn row(&self, covariate: &str) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.covariate == covariate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "covariate",
            "level",
            "treated_unweighted",
            "control_unweighted",
            "treated_weighted",
            "control_weighted",
            "smd_unweighted",
            "smd_weighted",
        ])?;
        for r in &self.rows {
            for s in &r.stats {
                wr.write_record([
                    r.covariate.clone(),
                    s.label.clone(),
                    s.treated_unweighted.to_string(),
                    s.control_unweighted.to_string(),
                    s.treated_weighted.to_string(),
                    s.control_weighted.to_string(),
                    r.smd_unweighted.to_string(),
                    r.smd_weighted.to_string(),
                ])?;
            }
        }
        let (t, c) = self.sum_of_weights;
        wr.write_record(["sum_of_weights", "", "", "", &t.to_string(), &c.to_string(), "", ""])?;
        wr.flush()?;
        Ok(())
    }
}

impl fmt::Display for BalanceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:<8} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}",
            "covariate", "level", "T", "C", "T(w)", "C(w)", "SMD", "SMD(w)"
        )?;
        for r in &self.rows {
            for (k, s) in r.stats.iter().enumerate() {
                let name = if k == 0 { r.covariate.as_str() } else { "" };
                write!(
                    f,
                    "{:<16} {:<8} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                    name,
                    s.label,
                    s.treated_unweighted,
                    s.control_unweighted,
                    s.treated_weighted,
                    s.control_weighted
                )?;
                if k == 0 {
                    writeln!(f, " {:>8.3} {:>8.3}", r.smd_unweighted, r.smd_weighted)?;
                } else {
                    writeln!(f)?;
                }
            }
        }
        writeln!(f, "{:<25} {:>9} {:>9} {:>9.1} {:>9.1}", "sum of weights", "", "", self.sum_of_weights.0, self.sum_of_weights.1)
    }
}

fn weighted_mean_var(x: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let m = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let v = x.iter().zip(w).map(|(a, b)| b * (a - m) * (a - m)).sum::<f64>() / sw;
    (m, v)
}

pub fn smd_continuous(x1: &[f64], w1: &[f64], x0: &[f64], w0: &[f64]) -> f64 {
    let (m1, v1) = weighted_mean_var(x1, w1);
    let (m0, v0) = weighted_mean_var(x0, w0);
    let diff = (m1 - m0).abs();
    let sd = ((v1 + v0) / 2.0).sqrt();
    if diff == 0.0 {
        0.0
    } else if sd == 0.0 {
        f64::INFINITY
    } else {
        diff / sd
    }
}

/// SMD from two arms' level proportions (all `K` levels).
pub fn smd_categorical(p1: &[f64], p0: &[f64]) -> f64 {
    let k = p1.len().saturating_sub(1);
    if k == 0 {
        return 0.0;
    }
    let d = DVector::from_fn(k, |i, _| p1[i] - p0[i]);
    let s = DMatrix::from_fn(k, k, |i, j| {
        let c = |p: &[f64]| if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
        (c(p1) + c(p0)) / 2.0
    });
    let pinv = s.pseudo_inverse(1e-12).expect("non-negative tolerance");
    let q = (d.transpose() * pinv * &d)[(0, 0)];
    q.max(0.0).sqrt()
}

fn level_props(values: &[f64], w: &[f64], levels: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    levels
        .iter()
        .map(|l| values.iter().zip(w).filter(|(v, _)| *v == l).map(|(_, b)| b).sum::<f64>() / sw)
        .collect()
}

fn fmt_level(v: f64) -> String {
    format!("{v}")
}

/// Balance of each covariate between arms, unweighted and weighted.
/// Without weights the weighted columns repeat the unweighted ones.
pub fn balance_table(
    ds: &MultilevelDataset,
    weights: Option<&[f64]>,
    specs: &[CovariateSpec],
) -> Result<BalanceTable, BalanceError> {
    let n = ds.n();
    let ones = vec![1.0; n];
    let w = match weights {
        Some(w) if w.len() != n => return Err(BalanceError::LengthMismatch { weights: w.len(), rows: n }),
        Some(w) => w,
        None => &ones,
    };
    let z = ds.treatments();
    let arm = |a: u8, src: &[f64]| -> Vec<f64> { (0..n).filter(|&i| z[i] == a).map(|i| src[i]).collect() };
    let (w1, w0) = (arm(1, w), arm(0, w));
    let (u1, u0) = (vec![1.0; w1.len()], vec![1.0; w0.len()]);
    let sum1: f64 = w1.iter().sum();
    let sum0: f64 = w0.iter().sum();
    if w1.is_empty() || sum1 <= 0.0 {
        return Err(BalanceError::EmptyArm("treated"));
    }
    if w0.is_empty() || sum0 <= 0.0 {
        return Err(BalanceError::EmptyArm("control"));
    }

    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let col = ds.column(&spec.name)?;
        let values: Vec<f64> = (0..n).map(|i| ds.value(i, col)).collect();
        let (x1, x0) = (arm(1, &values), arm(0, &values));
        let row = match &spec.kind {
            CovariateKind::Continuous => {
                let mean = |x: &[f64], w: &[f64]| weighted_mean_var(x, w).0;
                BalanceRow {
                    covariate: spec.name.clone(),
                    stats: vec![LevelStat {
                        label: "mean".into(),
                        treated_unweighted: mean(&x1, &u1),
                        control_unweighted: mean(&x0, &u0),
                        treated_weighted: mean(&x1, &w1),
                        control_weighted: mean(&x0, &w0),
                    }],
                    smd_unweighted: smd_continuous(&x1, &u1, &x0, &u0),
                    smd_weighted: smd_continuous(&x1, &w1, &x0, &w0),
                }
            }
            CovariateKind::Categorical { levels } => {
                if let Some(row) = values.iter().position(|v| !levels.contains(v)) {
                    return Err(BalanceError::UnknownLevel { covariate: spec.name.clone(), value: values[row], row });
                }
                let p1u = level_props(&x1, &u1, levels);
                let p0u = level_props(&x0, &u0, levels);
                let p1w = level_props(&x1, &w1, levels);
                let p0w = level_props(&x0, &w0, levels);
                BalanceRow {
                    covariate: spec.name.clone(),
                    stats: levels
                        .iter()
                        .enumerate()
                        .map(|(k, &l)| LevelStat {
                            label: fmt_level(l),
                            treated_unweighted: p1u[k],
                            control_unweighted: p0u[k],
                            treated_weighted: p1w[k],
                            control_weighted: p0w[k],
                        })
                        .collect(),
                    smd_unweighted: smd_categorical(&p1u, &p0u),
                    smd_weighted: smd_categorical(&p1w, &p0w),
                }
            }
        };
        rows.push(row);
    }
    Ok(BalanceTable { rows, sum_of_weights: (sum1, sum0) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileBin {
    pub n_clusters: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// One proportion per declared level.
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceProfile {
    pub covariate: String,
    pub levels: Vec<f64>,
    pub bins: Vec<ProfileBin>,
    /// Number of empty bins merged away.
    pub merged_bins: usize,
}

impl PrevalenceProfile {
    /// Long format: one line per (bin, level).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["covariate", "bin", "p_min", "p_max", "n_clusters", "level", "proportion"])?;
        for (b, bin) in self.bins.iter().enumerate() {
            for (k, l) in self.levels.iter().enumerate() {
                wr.write_record([
                    self.covariate.clone(),
                    b.to_string(),
                    bin.p_min.to_string(),
                    bin.p_max.to_string(),
                    bin.n_clusters.to_string(),
                    fmt_level(*l),
                    bin.proportions[k].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Clusters are binned at the `1/n_bins` quantiles of `p_h`, a cluster
/// going to the lowest bin whose upper edge is at least its prevalence.
/// Bins left empty by ties are dropped with a warning.
pub fn prevalence_profile(
    ds: &MultilevelDataset,
    covariate: &str,
    levels: &[f64],
    n_bins: usize,
) -> Result<PrevalenceProfile, BalanceError> {
    if n_bins < 2 {
        return Err(BalanceError::TooFewBins(n_bins));
    }
    let col = ds.column(covariate)?;
    let summaries = summarize_clusters(ds);
    let value: Vec<f64> = (0..ds.n_clusters()).map(|h| ds.value(ds.cluster_rows(h)[0], col)).collect();
    if let Some(h) = value.iter().position(|v| !levels.contains(v)) {
        return Err(BalanceError::UnknownLevel {
            covariate: covariate.into(),
            value: value[h],
            row: ds.cluster_rows(h)[0],
        });
    }
    let mut sorted: Vec<f64> = summaries.iter().map(|s| s.prevalence).collect();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..n_bins).map(|b| quantile_sorted(&sorted, b as f64 / n_bins as f64)).collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (h, s) in summaries.iter().enumerate() {
        let b = edges.iter().filter(|&&e| s.prevalence > e).count();
        members[b].push(h);
    }
    let merged = members.iter().filter(|m| m.is_empty()).count();
    if merged > 0 {
        log::warn!("{merged} empty prevalence bins merged into neighbours");
    }
    let bins = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let p: Vec<f64> = m.iter().map(|&h| summaries[h].prevalence).collect();
            ProfileBin {
                n_clusters: m.len(),
                p_min: p.iter().copied().fold(f64::INFINITY, f64::min),
                p_max: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                proportions: levels
                    .iter()
                    .map(|l| m.iter().filter(|&&h| value[h] == *l).count() as f64 / m.len() as f64)
                    .collect(),
            }
        })
        .collect();
    Ok(PrevalenceProfile { covariate: covariate.into(), levels: levels.to_vec(), bins, merged_bins: merged })
}
