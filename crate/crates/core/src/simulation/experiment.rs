//! Replicated simulation over a grid of `(alpha4, beta4, kappa4)` scenarios.
//!
//! Every replicate draws a fresh dataset, groups clusters by each requested
//! method, fits every requested propensity strategy once and evaluates all
//! requested cells. Replicates run in parallel; their records are folded in
//! replicate order, so results do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dataset, DgpConfig};
use crate::data::summarize_clusters;
use crate::estimators::{estimate_at_level, CellRequest, SmallArmRule, WeightingLevel};
use crate::grouping::{GroupAssignment, GroupingMethod, GroupingRecipe, DEFAULT_GROUPS};
use crate::propensity::{estimate_propensity, Pooling, PropensityResult};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub alpha4: f64,
    pub beta4: f64,
    pub kappa4: f64,
}

impl Scenario {
    pub fn new(alpha4: f64, beta4: f64, kappa4: f64) -> Self {
        Scenario { alpha4, beta4, kappa4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub template: DgpConfig,
    pub grid: Vec<Scenario>,
    pub cells: Vec<CellRequest>,
    #[serde(default = "default_methods")]
    pub grouping_methods: Vec<GroupingMethod>,
    #[serde(default = "default_groups")]
    pub groups: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rule")]
    pub small_arm_rule: SmallArmRule,
}

fn default_methods() -> Vec<GroupingMethod> {
    vec![GroupingMethod::Prevalence]
}

fn default_groups() -> usize {
    DEFAULT_GROUPS
}

fn default_rule() -> SmallArmRule {
    SmallArmRule::Pooled
}

fn needs_grouping(cell: &CellRequest) -> bool {
    cell.strategy.pooling == Pooling::Group || cell.level == WeightingLevel::Group
}

/// One output row: a (scenario, grouping method, cell) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub alpha4: f64,
    pub beta4: f64,
    pub kappa4: f64,
    pub beta_exp: i32,
    pub kappa_exp: i32,
    pub interaction: bool,
    pub grouping_method: String,
    #[serde(rename = "G")]
    pub groups: Option<usize>,
    pub ps_strategy: String,
    pub weighting_level: String,
    pub mean_bias: Option<f64>,
    pub mean_abs_bias: Option<f64>,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    pub n_failures: usize,
    pub n_dropped_clusters_mean: Option<f64>,
    pub n_replicates: usize,
    pub n_se_missing: usize,
}

/// Running sums for one output row. Merging is associative and
/// commutative up to floating-point rounding; the harness always folds in
/// replicate order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub n: usize,
    pub sum_bias: f64,
    pub sum_abs_bias: f64,
    pub sum_sq_bias: f64,
    pub n_se: usize,
    pub sum_se: f64,
    pub n_covered: usize,
    pub n_failures: usize,
    pub sum_dropped: f64,
}

/// What one cell produced in one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellRecord {
    Estimate { bias: f64, se: Option<f64>, covered: Option<bool>, dropped: usize },
    Failed,
}

impl Accumulator {
    pub fn push(&mut self, r: &CellRecord) {
        match *r {
            CellRecord::Failed => self.n_failures += 1,
            CellRecord::Estimate { bias, se, covered, dropped } => {
                self.n += 1;
                self.sum_bias += bias;
                self.sum_abs_bias += bias.abs();
                self.sum_sq_bias += bias * bias;
                self.sum_dropped += dropped as f64;
                if let (Some(se), Some(c)) = (se, covered) {
                    self.n_se += 1;
                    self.sum_se += se;
                    self.n_covered += c as usize;
                }
            }
        }
    }

    pub fn merge(mut self, o: &Accumulator) -> Accumulator {
        self.n += o.n;
        self.sum_bias += o.sum_bias;
        self.sum_abs_bias += o.sum_abs_bias;
        self.sum_sq_bias += o.sum_sq_bias;
        self.n_se += o.n_se;
        self.sum_se += o.sum_se;
        self.n_covered += o.n_covered;
        self.n_failures += o.n_failures;
        self.sum_dropped += o.sum_dropped;
        self
    }

    fn mean(&self, s: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| s / n as f64)
    }

    pub fn mean_bias(&self) -> Option<f64> {
        self.mean(self.sum_bias, self.n)
    }

    pub fn mean_abs_bias(&self) -> Option<f64> {
        self.mean(self.sum_abs_bias, self.n)
    }

    /// Monte Carlo standard error of the mean bias.
    pub fn bias_mc_se(&self) -> Option<f64> {
        (self.n > 1).then(|| {
            let m = self.sum_bias / self.n as f64;
            let var = (self.sum_sq_bias - self.n as f64 * m * m) / (self.n - 1) as f64;
            (var.max(0.0) / self.n as f64).sqrt()
        })
    }

    pub fn mean_se(&self) -> Option<f64> {
        self.mean(self.sum_se, self.n_se)
    }

    pub fn coverage(&self) -> Option<f64> {
        self.mean(self.n_covered as f64, self.n_se)
    }
}

/// An output slot: a cell, evaluated under one grouping method (or none).
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub cell: usize,
    pub method: Option<GroupingMethod>,
}

pub fn slots(config: &ExperimentConfig) -> Vec<Slot> {
    let mut out = Vec::new();
    for (c, cell) in config.cells.iter().enumerate() {
        if needs_grouping(cell) {
            for &m in &config.grouping_methods {
                out.push(Slot { cell: c, method: Some(m) });
            }
        } else {
            out.push(Slot { cell: c, method: None });
        }
    }
    out
}

/// Simulates one replicate and evaluates every slot.
pub fn run_replicate(config: &ExperimentConfig, scenario: usize, replicate: u64) -> Vec<CellRecord> {
    let sc = config.grid[scenario];
    let stream = SeedStream::new(config.seed).child("scenario", scenario as u64);
    let dgp = DgpConfig {
        seed: stream.derive("dataset", replicate),
        ..config.template.clone()
    }
    .with_scenario(sc.alpha4, sc.beta4, sc.kappa4);
    let (ds, truth) = simulate_dataset(&dgp);
    let summaries = summarize_clusters(&ds);

    let mut groupings: Vec<(GroupingMethod, Option<GroupAssignment>)> = Vec::new();
    let mut grouping_for = |m: GroupingMethod| -> Option<GroupAssignment> {
        if let Some((_, g)) = groupings.iter().find(|(k, _)| *k == m) {
            return g.clone();
        }
        let recipe = GroupingRecipe::new(m, config.groups);
        let g = recipe
            .apply(&ds, &summaries, stream.child("grouping", replicate).derive(m.name(), 0))
            .ok();
        groupings.push((m, g.clone()));
        g
    };

    type Key = (usize, Option<GroupingMethod>);
    let mut cache: Vec<(Key, Option<PropensityResult>)> = Vec::new();
    let slots = slots(config);
    let mut out = Vec::with_capacity(slots.len());
    for slot in &slots {
        let cell = &config.cells[slot.cell];
        let grouping = slot.method.and_then(&mut grouping_for);
        if slot.method.is_some() && grouping.is_none() {
            out.push(CellRecord::Failed);
            continue;
        }
        // Propensity fits that ignore the grouping are shared by all methods.
        let strat_idx = config.cells.iter().position(|c| c.strategy == cell.strategy).unwrap();
        let key = (strat_idx, if cell.strategy.pooling == Pooling::Group { slot.method } else { None });
        let ps = match cache.iter().find(|(k, _)| *k == key) {
            Some((_, p)) => p.clone(),
            None => {
                let p = estimate_propensity(&ds, &cell.strategy, grouping.as_ref()).ok();
                cache.push((key, p.clone()));
                p
            }
        };
        let Some(ps) = ps else {
            out.push(CellRecord::Failed);
            continue;
        };
        match estimate_at_level(&ds, &ps.weights, cell.level, grouping.as_ref(), "", config.small_arm_rule) {
            Ok(est) => out.push(CellRecord::Estimate {
                bias: est.estimate - truth.tau_true,
                se: est.se_fixed_ps,
                covered: est.covers(truth.tau_true),
                dropped: est.dropped_clusters.len(),
            }),
            Err(_) => out.push(CellRecord::Failed),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// Accumulators parallel to `rows`.
    pub accumulators: Vec<Accumulator>,
}

impl ExperimentResult {
    /// Row for a scenario, strategy tag, weighting level and grouping method
    /// (`None` for cells without grouping).
    pub fn find(
        &self,
        scenario: Scenario,
        tag: &str,
        level: WeightingLevel,
        method: Option<GroupingMethod>,
    ) -> Option<(&ResultRow, &Accumulator)> {
        let method = method.map_or("none", |m| m.name());
        self.rows
            .iter()
            .zip(&self.accumulators)
            .find(|(r, _)| {
                r.alpha4 == scenario.alpha4
                    && r.beta4 == scenario.beta4
                    && r.kappa4 == scenario.kappa4
                    && r.ps_strategy == tag
                    && r.weighting_level == level.name()
                    && r.grouping_method == method
            })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> ExperimentResult {
    let slots = slots(config);
    let jobs: Vec<(usize, u64)> = (0..config.grid.len())
        .flat_map(|s| (0..config.replicates as u64).map(move |r| (s, r)))
        .collect();
    let records: Vec<Vec<CellRecord>> =
        jobs.par_iter().map(|&(s, r)| run_replicate(config, s, r)).collect();

    let mut rows = Vec::new();
    let mut accs = Vec::new();
    for (s, sc) in config.grid.iter().enumerate() {
        let reps = &records[s * config.replicates..(s + 1) * config.replicates];
        for (k, slot) in slots.iter().enumerate() {
            let mut acc = Accumulator::default();
            for rec in reps {
                acc.push(&rec[k]);
            }
            let cell = &config.cells[slot.cell];
            rows.push(ResultRow {
                alpha4: sc.alpha4,
                beta4: sc.beta4,
                kappa4: sc.kappa4,
                beta_exp: config.template.beta_exp,
                kappa_exp: config.template.kappa_exp,
                interaction: config.template.interaction,
                grouping_method: slot.method.map_or("none", |m| m.name()).to_string(),
                groups: slot.method.map(|_| config.groups),
                ps_strategy: cell.strategy.tag(),
                weighting_level: cell.level.name().to_string(),
                mean_bias: acc.mean_bias(),
                mean_abs_bias: acc.mean_abs_bias(),
                mean_se: acc.mean_se(),
                coverage: acc.coverage(),
                n_failures: acc.n_failures,
                n_dropped_clusters_mean: acc.mean(acc.sum_dropped, acc.n),
                n_replicates: config.replicates,
                n_se_missing: acc.n - acc.n_se,
            });
            accs.push(acc);
        }
        log::info!("scenario {}/{} done", s + 1, config.grid.len());
    }
    ExperimentResult { rows, accumulators: accs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::matrix::standard_cells;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            template: DgpConfig { clusters: 40, ..DgpConfig::default() },
            grid: vec![Scenario::new(-2.0, -2.0, -2.0), Scenario::new(0.0, 0.0, 0.0)],
            cells: standard_cells(false, true),
            grouping_methods: vec![GroupingMethod::Prevalence, GroupingMethod::Random],
            groups: 4,
            replicates: 3,
            seed: 5,
            small_arm_rule: SmallArmRule::Pooled,
        }
    }

    #[test]
    fn slot_layout() {
        let cfg = small_config();
        let s = slots(&cfg);
        // (full-RE, full) and (full-RE, cluster) once; the four grouped
        // cells once per method.
        assert_eq!(s.len(), 2 + 4 * 2);
    }

    #[test]
    fn rows_and_determinism() {
        let cfg = small_config();
        let a = run_experiment(&cfg);
        let b = run_experiment(&cfg);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 2 * 10);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "alpha4,beta4,kappa4,beta_exp,kappa_exp,interaction,grouping_method,G,ps_strategy,weighting_level,mean_bias"
        ));
    }

    #[test]
    fn accumulator_merge_matches_sequential_push() {
        let recs = [
            CellRecord::Estimate { bias: 0.5, se: Some(0.2), covered: Some(false), dropped: 1 },
            CellRecord::Failed,
            CellRecord::Estimate { bias: -0.25, se: None, covered: None, dropped: 0 },
            CellRecord::Estimate { bias: 0.125, se: Some(0.3), covered: Some(true), dropped: 3 },
        ];
        let mut all = Accumulator::default();
        recs.iter().for_each(|r| all.push(r));
        let mut a = Accumulator::default();
        let mut b = Accumulator::default();
        recs[..2].iter().for_each(|r| a.push(r));
        recs[2..].iter().for_each(|r| b.push(r));
        assert_eq!(a.merge(&b), all);
        assert_eq!(b.merge(&a), all);
        assert_eq!(all.coverage(), Some(0.5));
        assert_eq!(all.n_failures, 1);
        assert_eq!(all.mean_bias(), Some(0.125));
    }
}
