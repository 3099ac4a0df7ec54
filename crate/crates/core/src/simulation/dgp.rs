//! Two-level data with an unmeasured cluster covariate `U_h`.
//!
//! ```text
//! logit e*_hk = a_h0 + a1 Xbar_h + a2 (X_hk - Xbar_h) + a3 V_h + a4 (U_h - Ubar)
//! e_hk        = 0.7 e*_hk + 0.15,   Z_hk ~ Bernoulli(e_hk)
//! Y_hk(0)     = b_h0 + b1 Xbar_h + b2 (X_hk - Xbar_h) + b3 V_h + b4 (U_h - Ubar)^b' + eps_hk
//! tau_hk      = k_h0 + k1 Xbar_h + k2 (X_hk - Xbar_h) + k3 V_h + k4 (U_h - Ubar)^k'
//! Y_hk(1)     = Y_hk(0) + tau_hk
//! ```
//!
//! In interaction mode the `U` terms move inside the within-cluster slope:
//! `b2 (X - Xbar) * b4 (U - Ubar)` replaces `b2 (X - Xbar) + b4 (U - Ubar)^b'`
//! and likewise for the effect.
//!
//! `X ~ N(0, 1)`, `V ~ U(-1, 1)`, `U ~ U(-2, 2)`, `n_h = floor(U(5, 25))`.
//! The noise `eps` is shared by both potential outcomes, so `tau_hk` is the
//! deterministic individual effect.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, MultilevelDataset, RawRow};
use crate::model::logistic::logistic;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Sample mean of the drawn `U_h`.
    #[default]
    Sample,
    /// Distribution mean, zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub clusters: usize,
    /// Cluster sizes are `floor(U(lo, hi))`.
    pub cluster_size: (f64, f64),
    pub alpha: [f64; 3],
    pub alpha4: f64,
    pub beta: [f64; 3],
    pub beta4: f64,
    pub beta_exp: i32,
    pub kappa: [f64; 3],
    pub kappa4: f64,
    pub kappa_exp: i32,
    pub random_intercept_sd: f64,
    pub sigma_y: f64,
    pub interaction: bool,
    pub centering: Centering,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            clusters: 200,
            cluster_size: (5.0, 25.0),
            alpha: [-1.0, -1.0, -0.5],
            alpha4: -2.0,
            beta: [1.0, -1.0, 0.5],
            beta4: -2.0,
            beta_exp: 1,
            kappa: [-0.5, 1.0, -1.0],
            kappa4: -2.0,
            kappa_exp: 2,
            random_intercept_sd: 1.0,
            sigma_y: 1.0,
            interaction: false,
            centering: Centering::Sample,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn with_scenario(mut self, alpha4: f64, beta4: f64, kappa4: f64) -> Self {
        self.alpha4 = alpha4;
        self.beta4 = beta4;
        self.kappa4 = kappa4;
        self
    }

    /// Zeroes every coefficient on the observed covariates.
    pub fn without_covariates(mut self) -> Self {
        self.alpha = [0.0; 3];
        self.beta = [0.0; 3];
        self.kappa = [0.0; 3];
        self
    }

    /// Cluster-level outcome term `g(U_h)` of the additive model.
    pub fn g(&self, centered_u: f64) -> f64 {
        if self.interaction {
            0.0
        } else {
            self.beta4 * centered_u.powi(self.beta_exp)
        }
    }

    /// Cluster-level effect term `f(U_h)` of the additive model.
    pub fn f(&self, centered_u: f64) -> f64 {
        if self.interaction {
            0.0
        } else {
            self.kappa4 * centered_u.powi(self.kappa_exp)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub u: Vec<f64>,
    pub u_bar: f64,
    /// `(a_h0, b_h0, k_h0)` per cluster.
    pub random_intercepts: Vec<(f64, f64, f64)>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub tau_individual: Vec<f64>,
    pub tau_true: f64,
    /// True assignment probabilities `e_hk`.
    pub propensity: Vec<f64>,
    /// `g(U_h)` per cluster.
    pub g_values: Vec<f64>,
    /// `f(U_h)` per cluster.
    pub f_values: Vec<f64>,
}

/// Sample average of the individual effects.
pub fn true_ate(truth: &SimulationTruth) -> f64 {
    truth.tau_individual.iter().sum::<f64>() / truth.tau_individual.len() as f64
}

pub fn simulate_dataset(config: &DgpConfig) -> (MultilevelDataset, SimulationTruth) {
    let mut rng = SeedStream::new(config.seed).rng("dgp", 0);
    let h = config.clusters;
    let size = Uniform::new(config.cluster_size.0, config.cluster_size.1).expect("valid size range");
    let uu = Uniform::new(-2.0, 2.0).expect("valid range");
    let uv = Uniform::new(-1.0, 1.0).expect("valid range");
    let ri = Normal::new(0.0, config.random_intercept_sd).expect("finite sd");

    struct Cluster {
        n: usize,
        u: f64,
        v: f64,
        a0: f64,
        b0: f64,
        k0: f64,
    }
    let clusters: Vec<Cluster> = (0..h)
        .map(|_| Cluster {
            n: size.sample(&mut rng).floor() as usize,
            u: uu.sample(&mut rng),
            v: uv.sample(&mut rng),
            a0: ri.sample(&mut rng),
            b0: ri.sample(&mut rng),
            k0: ri.sample(&mut rng),
        })
        .collect();
    let u_bar = match config.centering {
        Centering::Sample => clusters.iter().map(|c| c.u).sum::<f64>() / h as f64,
        Centering::Zero => 0.0,
    };

    let (a, b, k) = (&config.alpha, &config.beta, &config.kappa);
    let mut raw = Vec::new();
    let mut y0s = Vec::new();
    let mut y1s = Vec::new();
    let mut taus = Vec::new();
    let mut es = Vec::new();
    for (c, cl) in clusters.iter().enumerate() {
        let xs: Vec<f64> = (0..cl.n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xbar = xs.iter().sum::<f64>() / cl.n as f64;
        let du = cl.u - u_bar;
        for &x in &xs {
            let dx = x - xbar;
            let e_star = logistic(cl.a0 + a[0] * xbar + a[1] * dx + a[2] * cl.v + config.alpha4 * du);
            let e = 0.7 * e_star + 0.15;
            let z = rng.random::<f64>() < e;
            let eps: f64 = StandardNormal.sample(&mut rng);
            let (y0_u, tau_u) = if config.interaction {
                (b[1] * dx * config.beta4 * du, k[1] * dx * config.kappa4 * du)
            } else {
                (b[1] * dx + config.g(du), k[1] * dx + config.f(du))
            };
            let y0 = cl.b0 + b[0] * xbar + b[2] * cl.v + y0_u + config.sigma_y * eps;
            let tau = cl.k0 + k[0] * xbar + k[2] * cl.v + tau_u;
            let y1 = y0 + tau;
            raw.push(RawRow {
                cluster_id: format!("h{c}"),
                treatment: z as u8 as f64,
                outcome: if z { y1 } else { y0 },
                x: vec![x],
                v: vec![cl.v],
            });
            y0s.push(y0);
            y1s.push(y1);
            taus.push(tau);
            es.push(e);
        }
    }
    let ds = validate_dataset(raw, vec!["x".into()], vec!["v".into()]).expect("simulated rows are valid");
    let truth = SimulationTruth {
        u: clusters.iter().map(|c| c.u).collect(),
        u_bar,
        random_intercepts: clusters.iter().map(|c| (c.a0, c.b0, c.k0)).collect(),
        tau_true: taus.iter().sum::<f64>() / taus.len() as f64,
        y0: y0s,
        y1: y1s,
        tau_individual: taus,
        propensity: es,
        g_values: clusters.iter().map(|c| config.g(c.u - u_bar)).collect(),
        f_values: clusters.iter().map(|c| config.f(c.u - u_bar)).collect(),
    };
    (ds, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_configuration() {
        let cfg = DgpConfig {
            alpha4: 0.0,
            beta4: 0.0,
            kappa4: 0.0,
            random_intercept_sd: 0.0,
            sigma_y: 0.0,
            seed: 3,
            ..DgpConfig::default()
        }
        .without_covariates();
        let (ds, truth) = simulate_dataset(&cfg);
        assert!(truth.propensity.iter().all(|&e| e == 0.5));
        assert!(ds.outcomes().iter().all(|&y| y == 0.0));
        assert_eq!(truth.tau_true, 0.0);
    }

    #[test]
    fn propensities_within_bounds_and_sizes_in_range() {
        for seed in 0..5 {
            let cfg = DgpConfig { alpha4: 4.0, random_intercept_sd: 3.0, seed, ..DgpConfig::default() };
            let (ds, truth) = simulate_dataset(&cfg);
            assert!(truth.propensity.iter().all(|&e| (0.15..=0.85).contains(&e)));
            assert_eq!(ds.n_clusters(), 200);
            for h in 0..ds.n_clusters() {
                assert!((5..25).contains(&ds.cluster_rows(h).len()));
            }
        }
    }

    #[test]
    fn consistency_and_true_ate() {
        let (ds, truth) = simulate_dataset(&DgpConfig { seed: 8, ..DgpConfig::default() });
        for (i, r) in ds.rows().iter().enumerate() {
            let expect = if r.treatment == 1 { truth.y1[i] } else { truth.y0[i] };
            assert_eq!(r.outcome, expect);
            assert!((truth.y1[i] - truth.y0[i] - truth.tau_individual[i]).abs() < 1e-12);
        }
        let brute = truth.y1.iter().zip(&truth.y0).map(|(a, b)| a - b).sum::<f64>() / ds.n() as f64;
        assert!((true_ate(&truth) - brute).abs() < 1e-12);
        assert_eq!(true_ate(&truth), truth.tau_true);
    }

    #[test]
    fn constant_effect() {
        // k' = 0 turns the U term into the constant k4.
        let cfg = DgpConfig {
            random_intercept_sd: 0.0,
            kappa_exp: 0,
            kappa4: 1.75,
            seed: 4,
            ..DgpConfig::default()
        }
        .without_covariates();
        let (_, truth) = simulate_dataset(&cfg);
        assert!((truth.tau_true - 1.75).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = DgpConfig { seed: 77, ..DgpConfig::default() };
        let (a, ta) = simulate_dataset(&cfg);
        let (b, tb) = simulate_dataset(&cfg);
        assert_eq!(a.outcomes(), b.outcomes());
        assert_eq!(ta, tb);
    }

    #[test]
    fn centering_flag() {
        let cfg = DgpConfig { seed: 5, centering: Centering::Zero, ..DgpConfig::default() };
        let (_, t) = simulate_dataset(&cfg);
        assert_eq!(t.u_bar, 0.0);
        let cfg = DgpConfig { seed: 5, ..DgpConfig::default() };
        let (_, t) = simulate_dataset(&cfg);
        assert!((t.u_bar - t.u.iter().sum::<f64>() / 200.0).abs() < 1e-15);
    }

    #[test]
    fn interaction_mode_has_no_additive_u_terms() {
        let cfg = DgpConfig { seed: 6, interaction: true, ..DgpConfig::default() };
        let (_, t) = simulate_dataset(&cfg);
        assert!(t.g_values.iter().all(|&g| g == 0.0));
        assert!(t.f_values.iter().all(|&f| f == 0.0));
    }
}
