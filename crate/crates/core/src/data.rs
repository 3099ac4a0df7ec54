//! Two-level clustered observational data.
//!
//! A [`MultilevelDataset`] holds individuals nested in clusters. Each row
//! carries a binary treatment, a real outcome, individual-level covariates
//! and the covariates of its cluster. Clusters are identified by opaque
//! strings and are ordered by first appearance in the input; every
//! per-cluster output in this crate follows that order.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("row {row}: treatment must be 0 or 1, found {value}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("row {row}: expected {expected} values for {kind} covariates, found {found}")]
    RaggedCovariateVector {
        row: usize,
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("cluster `{cluster}`: cluster-level column `{column}` is not constant")]
    InconsistentClusterCovariate { cluster: String, column: String },
    #[error("no cluster contains both treated and control individuals")]
    AllClustersDropped,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

/// An input row before validation. Treatment is kept as a float so that a
/// malformed value can be reported rather than silently truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub cluster_id: String,
    pub treatment: f64,
    pub outcome: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub cluster_id: String,
    pub treatment: u8,
    pub outcome: f64,
    /// Individual-level covariates.
    pub x: Vec<f64>,
    /// Covariates of the individual's cluster (identical within a cluster).
    pub v: Vec<f64>,
}

impl Individual {
    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }
}

/// Location of a named covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Individual(usize),
    Cluster(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelDataset {
    rows: Vec<Individual>,
    x_names: Vec<String>,
    v_names: Vec<String>,
    cluster_ids: Vec<String>,
    row_cluster: Vec<usize>,
    cluster_rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    /// Treatment prevalence `n_treated / n`.
    pub prevalence: f64,
}

impl ClusterSummary {
    pub fn is_mixed(&self) -> bool {
        self.n_treated > 0 && self.n_control > 0
    }
}

/// Validates raw rows and builds the cluster index.
pub fn validate_dataset(
    raw: Vec<RawRow>,
    x_names: Vec<String>,
    v_names: Vec<String>,
) -> Result<MultilevelDataset, DataError> {
    if raw.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let p = x_names.len();
    let q = v_names.len();
    let mut rows = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        if r.x.len() != p {
            return Err(DataError::RaggedCovariateVector {
                row: i,
                kind: "individual",
                expected: p,
                found: r.x.len(),
            });
        }
        if r.v.len() != q {
            return Err(DataError::RaggedCovariateVector {
                row: i,
                kind: "cluster",
                expected: q,
                found: r.v.len(),
            });
        }
        if r.treatment.is_nan() {
            return Err(DataError::MissingValue { row: i, column: "z".into() });
        }
        let treatment = if r.treatment == 0.0 {
            0
        } else if r.treatment == 1.0 {
            1
        } else {
            return Err(DataError::NonBinaryTreatment { row: i, value: r.treatment });
        };
        if !r.outcome.is_finite() {
            return Err(DataError::MissingValue { row: i, column: "y".into() });
        }
        for (j, val) in r.x.iter().enumerate() {
            if !val.is_finite() {
                return Err(DataError::MissingValue { row: i, column: x_names[j].clone() });
            }
        }
        for (j, val) in r.v.iter().enumerate() {
            if !val.is_finite() {
                return Err(DataError::MissingValue { row: i, column: v_names[j].clone() });
            }
        }
        rows.push(Individual {
            cluster_id: r.cluster_id,
            treatment,
            outcome: r.outcome,
            x: r.x,
            v: r.v,
        });
    }
    let ds = MultilevelDataset::index(rows, x_names, v_names);
    for (h, members) in ds.cluster_rows.iter().enumerate() {
        let first = &ds.rows[members[0]].v;
        for &i in &members[1..] {
            for (j, val) in ds.rows[i].v.iter().enumerate() {
                if *val != first[j] {
                    return Err(DataError::InconsistentClusterCovariate {
                        cluster: ds.cluster_ids[h].clone(),
                        column: ds.v_names[j].clone(),
                    });
                }
            }
        }
    }
    Ok(ds)
}

impl MultilevelDataset {
    /// Builds the cluster index over already-validated rows.
    fn index(rows: Vec<Individual>, x_names: Vec<String>, v_names: Vec<String>) -> Self {
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut cluster_ids = Vec::new();
        let mut cluster_rows: Vec<Vec<usize>> = Vec::new();
        let mut row_cluster = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let h = *lookup.entry(r.cluster_id.as_str()).or_insert_with(|| {
                cluster_ids.push(r.cluster_id.clone());
                cluster_rows.push(Vec::new());
                cluster_ids.len() - 1
            });
            cluster_rows[h].push(i);
            row_cluster.push(h);
        }
        MultilevelDataset { rows, x_names, v_names, cluster_ids, row_cluster, cluster_rows }
    }

    pub fn rows(&self) -> &[Individual] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn individual_covariate_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn cluster_covariate_names(&self) -> &[String] {
        &self.v_names
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    /// Cluster index (first-appearance order) of row `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.row_cluster[i]
    }

    pub fn row_clusters(&self) -> &[usize] {
        &self.row_cluster
    }

    pub fn cluster_rows(&self, h: usize) -> &[usize] {
        &self.cluster_rows[h]
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.treatment).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.outcome).collect()
    }

    pub fn column(&self, name: &str) -> Result<Column, DataError> {
        if let Some(j) = self.x_names.iter().position(|c| c == name) {
            return Ok(Column::Individual(j));
        }
        if let Some(j) = self.v_names.iter().position(|c| c == name) {
            return Ok(Column::Cluster(j));
        }
        Err(DataError::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, i: usize, col: Column) -> f64 {
        match col {
            Column::Individual(j) => self.rows[i].x[j],
            Column::Cluster(j) => self.rows[i].v[j],
        }
    }

    /// Per-cluster mean of individual covariate `j`, in cluster order.
    pub fn cluster_means(&self, j: usize) -> Vec<f64> {
        self.cluster_rows
            .iter()
            .map(|m| m.iter().map(|&i| self.rows[i].x[j]).sum::<f64>() / m.len() as f64)
            .collect()
    }

    /// Keeps only the given clusters (by index), preserving their order.
    pub fn subset_clusters(&self, keep: &[usize]) -> MultilevelDataset {
        let mut mask = vec![false; self.n_clusters()];
        for &h in keep {
            mask[h] = true;
        }
        let rows = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| mask[self.row_cluster[*i]])
            .map(|(_, r)| r.clone())
            .collect();
        MultilevelDataset::index(rows, self.x_names.clone(), self.v_names.clone())
    }

    /// Builds a dataset from a list of cluster draws (with repetition). Each
    /// draw becomes a distinct cluster whose id is suffixed with its draw
    /// position so repeated clusters stay separate.
    pub fn resample_clusters(&self, draws: &[usize]) -> MultilevelDataset {
        let mut rows = Vec::new();
        for (pos, &h) in draws.iter().enumerate() {
            let id = format!("{}#{}", self.cluster_ids[h], pos);
            for &i in &self.cluster_rows[h] {
                let mut r = self.rows[i].clone();
                r.cluster_id = id.clone();
                rows.push(r);
            }
        }
        MultilevelDataset::index(rows, self.x_names.clone(), self.v_names.clone())
    }

    /// Returns a copy with outcomes replaced by `f(row index, outcome)`.
    pub fn map_outcomes(&self, f: impl Fn(usize, f64) -> f64) -> MultilevelDataset {
        let mut out = self.clone();
        for (i, r) in out.rows.iter_mut().enumerate() {
            r.outcome = f(i, r.outcome);
        }
        out
    }

    /// Returns a copy with treatments replaced. Values must be 0 or 1.
    pub fn with_treatments(&self, z: &[u8]) -> MultilevelDataset {
        assert_eq!(z.len(), self.n());
        let mut out = self.clone();
        for (r, &t) in out.rows.iter_mut().zip(z) {
            assert!(t <= 1, "treatment must be binary");
            r.treatment = t;
        }
        out
    }
}

pub fn summarize_clusters(ds: &MultilevelDataset) -> Vec<ClusterSummary> {
    ds.cluster_rows
        .iter()
        .zip(&ds.cluster_ids)
        .map(|(members, id)| {
            let n = members.len();
            let n_treated = members.iter().filter(|&&i| ds.rows[i].treatment == 1).count();
            ClusterSummary {
                cluster_id: id.clone(),
                n,
                n_treated,
                n_control: n - n_treated,
                prevalence: n_treated as f64 / n as f64,
            }
        })
        .collect()
}

/// Drops clusters in which every individual received the same treatment.
/// Returns the restricted dataset and the ids of the dropped clusters.
pub fn restrict_to_mixed_clusters(
    ds: &MultilevelDataset,
) -> Result<(MultilevelDataset, Vec<String>), DataError> {
    let summaries = summarize_clusters(ds);
    let (keep, dropped): (Vec<usize>, Vec<usize>) =
        (0..summaries.len()).partition(|&h| summaries[h].is_mixed());
    if keep.is_empty() {
        return Err(DataError::AllClustersDropped);
    }
    let dropped_ids = dropped.iter().map(|&h| summaries[h].cluster_id.clone()).collect();
    if dropped.is_empty() {
        return Ok((ds.clone(), dropped_ids));
    }
    Ok((ds.subset_clusters(&keep), dropped_ids))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Builds a dataset from `(cluster, z, y)` triples with no covariates.
    pub fn plain(rows: &[(&str, u8, f64)]) -> MultilevelDataset {
        let raw = rows
            .iter()
            .map(|&(c, z, y)| RawRow {
                cluster_id: c.to_string(),
                treatment: z as f64,
                outcome: y,
                x: vec![],
                v: vec![],
            })
            .collect();
        validate_dataset(raw, vec![], vec![]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(c: &str, z: f64, v: f64) -> RawRow {
        RawRow { cluster_id: c.into(), treatment: z, outcome: 0.0, x: vec![0.5], v: vec![v] }
    }

    fn names() -> (Vec<String>, Vec<String>) {
        (vec!["x1".into()], vec!["v1".into()])
    }

    #[test]
    fn valid_two_clusters() {
        let (x, v) = names();
        let rows = vec![raw("a", 1.0, 0.3), raw("a", 0.0, 0.3), raw("b", 1.0, 0.7), raw("b", 0.0, 0.7)];
        let ds = validate_dataset(rows, x, v).unwrap();
        assert_eq!(ds.n_clusters(), 2);
        assert_eq!(ds.n(), 4);
    }

    #[test]
    fn inconsistent_cluster_covariate() {
        let (x, v) = names();
        let rows = vec![raw("a", 1.0, 0.3), raw("a", 0.0, 0.4)];
        let err = validate_dataset(rows, x, v).unwrap_err();
        assert_eq!(
            err,
            DataError::InconsistentClusterCovariate { cluster: "a".into(), column: "v1".into() }
        );
    }

    #[test]
    fn non_binary_treatment() {
        let (x, v) = names();
        let rows = vec![raw("a", 1.0, 0.3), raw("a", 2.0, 0.3)];
        assert_eq!(
            validate_dataset(rows, x, v).unwrap_err(),
            DataError::NonBinaryTreatment { row: 1, value: 2.0 }
        );
    }

    #[test]
    fn empty_and_ragged_and_missing() {
        let (x, v) = names();
        assert_eq!(validate_dataset(vec![], x.clone(), v.clone()).unwrap_err(), DataError::EmptyDataset);
        let mut r = raw("a", 1.0, 0.3);
        r.x.push(1.0);
        assert!(matches!(
            validate_dataset(vec![r], x.clone(), v.clone()).unwrap_err(),
            DataError::RaggedCovariateVector { row: 0, .. }
        ));
        let mut r = raw("a", 1.0, 0.3);
        r.outcome = f64::NAN;
        assert!(matches!(validate_dataset(vec![r], x, v).unwrap_err(), DataError::MissingValue { .. }));
    }

    #[test]
    fn summaries_count_prevalence() {
        use testutil::plain;
        let ds = plain(&[("a", 1, 0.), ("a", 0, 0.), ("a", 1, 0.), ("a", 0, 0.)]);
        let s = summarize_clusters(&ds);
        assert_eq!((s[0].n, s[0].n_treated, s[0].prevalence), (4, 2, 0.5));

        let ds = plain(&[("a", 1, 0.), ("a", 1, 0.), ("a", 1, 0.)]);
        assert_eq!(summarize_clusters(&ds)[0].prevalence, 1.0);
    }

    #[test]
    fn summaries_three_clusters() {
        use testutil::plain;
        let ds = plain(&[
            ("c1", 1, 0.),
            ("c1", 0, 0.),
            ("c2", 1, 0.),
            ("c2", 1, 0.),
            ("c2", 0, 0.),
            ("c3", 0, 0.),
            ("c3", 0, 0.),
            ("c3", 0, 0.),
            ("c3", 1, 0.),
        ]);
        let p: Vec<f64> = summarize_clusters(&ds).iter().map(|s| s.prevalence).collect();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.6667).abs() < 1e-4);
        assert_eq!(p[2], 0.25);
    }

    #[test]
    fn restrict_keeps_mixed_only() {
        use testutil::plain;
        let ds = plain(&[
            ("a", 1, 0.),
            ("a", 0, 0.),
            ("b", 1, 0.),
            ("c", 0, 0.),
            ("c", 0, 0.),
            ("d", 1, 0.),
            ("d", 0, 0.),
            ("d", 0, 0.),
        ]);
        let (kept, dropped) = restrict_to_mixed_clusters(&ds).unwrap();
        assert_eq!(kept.cluster_ids(), &["a".to_string(), "d".to_string()]);
        assert_eq!(dropped, vec!["b".to_string(), "c".to_string()]);

        let (again, none) = restrict_to_mixed_clusters(&kept).unwrap();
        assert_eq!(again, kept);
        assert!(none.is_empty());

        let pure = plain(&[("a", 1, 0.), ("b", 0, 0.)]);
        assert_eq!(restrict_to_mixed_clusters(&pure).unwrap_err(), DataError::AllClustersDropped);
    }

    proptest! {
        #[test]
        fn summaries_cover_all_rows_and_ignore_row_order(
            zs in proptest::collection::vec((0usize..6, 0u8..2), 1..60),
            rot in 0usize..60,
        ) {
            let rows: Vec<RawRow> = zs.iter().map(|&(c, z)| RawRow {
                cluster_id: format!("k{c}"), treatment: z as f64, outcome: 0.0, x: vec![], v: vec![],
            }).collect();
            let mut shuffled = rows.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let a = validate_dataset(rows, vec![], vec![]).unwrap();
            let b = validate_dataset(shuffled, vec![], vec![]).unwrap();
            let sa = summarize_clusters(&a);
            prop_assert_eq!(sa.iter().map(|s| s.n).sum::<usize>(), a.n());
            let mut sa_sorted = sa.clone();
            let mut sb_sorted = summarize_clusters(&b);
            sa_sorted.sort_by(|x, y| x.cluster_id.cmp(&y.cluster_id));
            sb_sorted.sort_by(|x, y| x.cluster_id.cmp(&y.cluster_id));
            prop_assert_eq!(sa_sorted, sb_sorted);
            for s in &sa {
                prop_assert_eq!(s.n_treated + s.n_control, s.n);
                prop_assert_eq!(s.prevalence, s.n_treated as f64 / s.n as f64);
            }
        }
    }
}
