//! TOML configuration for `partialpool simulate`.

use serde::{Deserialize, Serialize};

use partialpool::estimators::{CellRequest, SmallArmRule};
use partialpool::grouping::{GroupingMethod, DEFAULT_GROUPS};
use partialpool::simulation::{DgpConfig, ExperimentConfig, Scenario};

/// Cartesian product of scenario values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridProduct {
    pub alpha4: Vec<f64>,
    pub beta4: Vec<f64>,
    pub kappa4: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_methods")]
    pub grouping_methods: Vec<GroupingMethod>,
    #[serde(default = "default_rule")]
    pub small_arm_rule: SmallArmRule,
    /// Enter `x` as cluster mean and within-cluster deviation.
    #[serde(default = "default_true")]
    pub cluster_mean_split: bool,
    /// Cells such as `"(group-RE, group)"`.
    pub cells: Vec<String>,
    #[serde(default)]
    pub template: DgpConfig,
    #[serde(default)]
    pub grid: Vec<Scenario>,
    #[serde(default)]
    pub grid_product: Option<GridProduct>,
}

fn default_groups() -> usize {
    DEFAULT_GROUPS
}

fn default_methods() -> Vec<GroupingMethod> {
    vec![GroupingMethod::Prevalence]
}

fn default_rule() -> SmallArmRule {
    SmallArmRule::Pooled
}

fn default_true() -> bool {
    true
}

impl SimulateConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: SimulateConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.experiment()?;
        Ok(cfg)
    }

    /// Explicit grid points followed by the product grid, in
    /// `alpha4`, `beta4`, `kappa4` nesting order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = self.grid.clone();
        if let Some(p) = &self.grid_product {
            for &a in &p.alpha4 {
                for &b in &p.beta4 {
                    for &k in &p.kappa4 {
                        out.push(Scenario::new(a, b, k));
                    }
                }
            }
        }
        out
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, String> {
        if self.replicates == 0 {
            return Err("replicates must be at least 1".into());
        }
        if self.groups == 0 {
            return Err("groups must be at least 1".into());
        }
        let grid = self.scenarios();
        if grid.is_empty() {
            return Err("no scenarios: give `grid` or `grid_product`".into());
        }
        if self.cells.is_empty() {
            return Err("no cells requested".into());
        }
        let cells = self
            .cells
            .iter()
            .map(|c| {
                let mut c: CellRequest = c.parse()?;
                c.strategy = c.strategy.with_cluster_mean_split(self.cluster_mean_split);
                c.strategy.validate().map_err(|e| e.to_string())?;
                Ok(c)
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(ExperimentConfig {
            template: self.template.clone(),
            grid,
            cells,
            grouping_methods: self.grouping_methods.clone(),
            groups: self.groups,
            replicates: self.replicates,
            seed: self.seed,
            small_arm_rule: self.small_arm_rule,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
replicates = 2
cells = ["(full-RE, full)", "(group-RE, group)"]

[template]
clusters = 30

[grid_product]
alpha4 = [-2.0]
beta4 = [-2.0, 0.0]
kappa4 = [2.0]
"#;

    #[test]
    fn minimal_config() {
        let c = SimulateConfig::parse(MINIMAL).unwrap();
        let e = c.experiment().unwrap();
        assert_eq!(e.grid, vec![Scenario::new(-2.0, -2.0, 2.0), Scenario::new(-2.0, 0.0, 2.0)]);
        assert_eq!(e.groups, 10);
        assert_eq!(e.template.clusters, 30);
        assert_eq!(e.template.kappa_exp, DgpConfig::default().kappa_exp);
        assert!(e.cells.iter().all(|c| c.strategy.cluster_mean_split));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SimulateConfig::parse(&format!("{MINIMAL}\nextra = 1\n")).is_err());
        let bad = MINIMAL.replace("clusters = 30", "clusterz = 30");
        assert!(SimulateConfig::parse(&bad).is_err());
    }

    #[test]
    fn bad_cells_and_empty_grid() {
        assert!(SimulateConfig::parse(&MINIMAL.replace("(full-RE, full)", "(full-RE, nowhere)")).is_err());
        assert!(SimulateConfig::parse(&MINIMAL.replace("(full-RE, full)", "(cluster-RE, full)")).is_err());
        let no_grid = "seed = 1\nreplicates = 1\ncells = [\"(full-RE, full)\"]\n";
        assert!(SimulateConfig::parse(no_grid).is_err());
    }
}
