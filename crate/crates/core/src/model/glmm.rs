//! Random-intercept logistic regression,
//! `logit P(y = 1) = x'beta + b_h`, `b_h ~ N(0, sigma^2)`.
//!
//! For fixed `sigma` the conditional modes `(beta, b)` maximize the
//! penalized log-likelihood
//!
//! ```text
//! Q(beta, b) = sum_i [y_i eta_i - ln(1 + e^eta_i)] - sum_h b_h^2 / (2 sigma^2)
//! ```
//!
//! by Newton steps whose random-effect block is diagonal and eliminated by a
//! Schur complement. The Laplace approximation of the marginal likelihood is
//!
//! ```text
//! l_LA(sigma) = Q(beta_hat, b_hat) - 1/2 sum_h ln(1 + sigma^2 H_h),
//! H_h = sum_{i in h} mu_i (1 - mu_i)
//! ```
//!
//! and `sigma` is chosen by golden-section search on `[0, SIGMA_MAX]`, with
//! the plain logistic model standing in for `sigma = 0`.

use nalgebra::{DMatrix, DVector};

use super::logistic::{check_rank, clamp_prob, fit_logistic, log_likelihood, logistic, with_intercept};
use super::{ModelError, PROB_CLAMP};

pub const SIGMA_MAX: f64 = 10.0;
pub const SIGMA_TOL: f64 = 1e-4;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RandomInterceptFit {
    /// Intercept first, then one coefficient per design column.
    pub fixed_coefficients: DVector<f64>,
    pub sigma_b: f64,
    /// Conditional mode per cluster label.
    pub intercept_modes: Vec<f64>,
    pub converged: bool,
    pub log_marginal_likelihood: f64,
    /// Fitted probabilities using `x'beta + b_h`, clamped.
    pub fitted: DVector<f64>,
    pub clamp_count: usize,
    /// Number of marginal-likelihood evaluations in the outer search.
    pub evaluations: usize,
}

impl RandomInterceptFit {
    pub fn predict(&self, x: &[f64], cluster: usize) -> f64 {
        let b = &self.fixed_coefficients;
        let eta = b[0]
            + x.iter().enumerate().map(|(j, v)| b[j + 1] * v).sum::<f64>()
            + self.intercept_modes[cluster];
        clamp_prob(logistic(eta))
    }
}

/// Design with intercept plus cluster labels, shared by the inner solver
/// and the gradient check.
pub struct PenalizedProblem<'a> {
    pub x: DMatrix<f64>,
    pub y: &'a [f64],
    pub clusters: &'a [usize],
    members: Vec<Vec<usize>>,
}

impl<'a> PenalizedProblem<'a> {
    /// `x` without intercept column; `clusters` are labels in `0..H`.
    pub fn new(x: &DMatrix<f64>, y: &'a [f64], clusters: &'a [usize]) -> Self {
        let h = clusters.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); h];
        for (i, &c) in clusters.iter().enumerate() {
            members[c].push(i);
        }
        PenalizedProblem { x: with_intercept(x), y, clusters, members }
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    fn eta(&self, beta: &DVector<f64>, b: &[f64]) -> DVector<f64> {
        let mut eta = &self.x * beta;
        for (i, &c) in self.clusters.iter().enumerate() {
            eta[i] += b[c];
        }
        eta
    }

    /// Penalized log-likelihood `Q(beta, b)`.
    pub fn objective(&self, sigma: f64, beta: &DVector<f64>, b: &[f64]) -> f64 {
        let pen: f64 = b.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma);
        log_likelihood(self.y, &self.eta(beta, b)) - pen
    }

    /// Analytic gradient of `Q`: fixed effects first, then one entry per
    /// cluster.
    pub fn gradient(&self, sigma: f64, beta: &DVector<f64>, b: &[f64]) -> DVector<f64> {
        let eta = self.eta(beta, b);
        let p = self.n_fixed();
        let mut g = DVector::zeros(p + self.n_clusters());
        for i in 0..self.y.len() {
            let r = self.y[i] - logistic(eta[i]);
            for j in 0..p {
                g[j] += self.x[(i, j)] * r;
            }
            g[p + self.clusters[i]] += r;
        }
        for (h, bh) in b.iter().enumerate() {
            g[p + h] -= bh / (sigma * sigma);
        }
        g
    }

    /// Maximizes `Q` at fixed `sigma > 0` starting from `(beta, b)`.
    /// Returns whether the iteration converged.
    fn solve_modes(&self, sigma: f64, beta: &mut DVector<f64>, b: &mut [f64]) -> bool {
        let n = self.y.len();
        let p = self.n_fixed();
        let hn = self.n_clusters();
        let prec = 1.0 / (sigma * sigma);
        let mut q = self.objective(sigma, beta, b);
        for _ in 0..MAX_ITER {
            let eta = self.eta(beta, b);
            let mu: Vec<f64> = eta.iter().map(|&e| clamp_prob(logistic(e))).collect();
            let mut a = DMatrix::<f64>::zeros(p, p);
            let mut c = DMatrix::<f64>::zeros(p, hn);
            let mut d = vec![prec; hn];
            let mut sb = DVector::<f64>::zeros(p);
            let mut su: Vec<f64> = b.iter().map(|v| -v * prec).collect();
            for i in 0..n {
                let w = mu[i] * (1.0 - mu[i]);
                let r = self.y[i] - mu[i];
                let h = self.clusters[i];
                d[h] += w;
                su[h] += r;
                for j in 0..p {
                    let xij = self.x[(i, j)];
                    sb[j] += xij * r;
                    c[(j, h)] += w * xij;
                    for k in j..p {
                        a[(j, k)] += w * xij * self.x[(i, k)];
                    }
                }
            }
            for j in 0..p {
                for k in 0..j {
                    a[(j, k)] = a[(k, j)];
                }
            }
            // Schur complement on the fixed effects.
            let mut s = a;
            let mut rhs = sb;
            for h in 0..hn {
                let ch = c.column(h);
                for j in 0..p {
                    rhs[j] -= ch[j] * su[h] / d[h];
                    for k in 0..p {
                        s[(j, k)] -= ch[j] * ch[k] / d[h];
                    }
                }
            }
            let dbeta = match s.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    let ridged = s + DMatrix::identity(p, p) * RIDGE;
                    match ridged.lu().solve(&rhs) {
                        Some(v) => v,
                        None => return false,
                    }
                }
            };
            let du: Vec<f64> =
                (0..hn).map(|h| (su[h] - c.column(h).dot(&dbeta)) / d[h]).collect();

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let nb = &*beta + &dbeta * t;
                let nu: Vec<f64> = b.iter().zip(&du).map(|(v, dv)| v + t * dv).collect();
                let nq = self.objective(sigma, &nb, &nu);
                if nq.is_finite() && nq >= q - 1e-12 * (1.0 + q.abs()) {
                    accepted = Some((nb, nu, nq));
                    break;
                }
                t *= 0.5;
            }
            let Some((nb, nu, nq)) = accepted else {
                return true;
            };
            let change = (&nb - &*beta)
                .amax()
                .max(nu.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
            let dq = (nq - q).abs();
            *beta = nb;
            b.copy_from_slice(&nu);
            q = nq;
            if change < 1e-8 || dq < 1e-10 {
                return true;
            }
        }
        false
    }

    /// Laplace marginal log-likelihood at the modes `(beta, b)`.
    pub fn laplace(&self, sigma: f64, beta: &DVector<f64>, b: &[f64]) -> f64 {
        let eta = self.eta(beta, b);
        let mut curv = vec![0.0; self.n_clusters()];
        for (i, &c) in self.clusters.iter().enumerate() {
            let m = clamp_prob(logistic(eta[i]));
            curv[c] += m * (1.0 - m);
        }
        let s2 = sigma * sigma;
        self.objective(sigma, beta, b) - 0.5 * curv.iter().map(|h| (s2 * h).ln_1p()).sum::<f64>()
    }
}

/// Fits the random-intercept model. `x` has no intercept column;
/// `clusters` holds a label in `0..H` per row, every label used. With fewer
/// than two clusters `sigma_b` is fixed at zero.
pub fn fit_random_intercept_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    clusters: &[usize],
) -> Result<RandomInterceptFit, ModelError> {
    assert_eq!(x.nrows(), y.len());
    assert_eq!(clusters.len(), y.len());
    let base = fit_logistic(x, y)?;
    let prob = PenalizedProblem::new(x, y, clusters);
    check_rank(&prob.x)?;
    let hn = prob.n_clusters();

    let pooled = |base: &super::LogisticFit| RandomInterceptFit {
        fixed_coefficients: base.coefficients.clone(),
        sigma_b: 0.0,
        intercept_modes: vec![0.0; hn],
        converged: base.converged,
        log_marginal_likelihood: base.log_likelihood,
        fitted: base.fitted.clone(),
        clamp_count: base.clamp_count,
        evaluations: 0,
    };
    if hn < 2 {
        return Ok(pooled(&base));
    }

    let mut beta = base.coefficients.clone();
    let mut b = vec![0.0; hn];
    let mut evaluations = 0;
    let mut all_converged = true;
    let mut eval = |sigma: f64, beta: &mut DVector<f64>, b: &mut Vec<f64>| -> f64 {
        evaluations += 1;
        if sigma <= 0.0 {
            return base.log_likelihood;
        }
        all_converged &= prob.solve_modes(sigma, beta, b);
        prob.laplace(sigma, beta, b)
    };

    // Golden-section search for the maximum of l_LA on [0, SIGMA_MAX].
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, SIGMA_MAX);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = eval(c, &mut beta, &mut b);
    let mut fd = eval(d, &mut beta, &mut b);
    while hi - lo > SIGMA_TOL {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = eval(c, &mut beta, &mut b);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = eval(d, &mut beta, &mut b);
        }
    }
    let sigma = 0.5 * (lo + hi);
    let ll = eval(sigma, &mut beta, &mut b);
    if !(ll > base.log_likelihood) {
        let mut out = pooled(&base);
        out.evaluations = evaluations;
        return Ok(out);
    }

    let eta = prob.eta(&beta, &b);
    let raw: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let clamp_count = raw.iter().filter(|&&m| m < PROB_CLAMP || m > 1.0 - PROB_CLAMP).count();
    if !all_converged {
        log::warn!("random-intercept mode finding did not converge at every sigma");
    }
    Ok(RandomInterceptFit {
        fixed_coefficients: beta,
        sigma_b: sigma,
        intercept_modes: b,
        converged: all_converged,
        log_marginal_likelihood: ll,
        fitted: DVector::from_iterator(y.len(), raw.into_iter().map(clamp_prob)),
        clamp_count,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Clustered logistic data with a random intercept of sd `sigma`.
    fn simulate(seed: u64, h: usize, sigma: f64) -> (DMatrix<f64>, Vec<f64>, Vec<usize>) {
        let mut rng = SeedStream::new(seed).rng("glmm-test", 0);
        let mut xs = Vec::new();
        let mut y = Vec::new();
        let mut cl = Vec::new();
        for c in 0..h {
            let n = rng.random_range(5..25);
            let z: f64 = StandardNormal.sample(&mut rng);
            let b = sigma * z;
            for _ in 0..n {
                let x: f64 = StandardNormal.sample(&mut rng);
                let p = logistic(-0.3 + 0.8 * x + b);
                xs.push(x);
                y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                cl.push(c);
            }
        }
        (DMatrix::from_column_slice(xs.len(), 1, &xs), y, cl)
    }

    #[test]
    fn single_cluster_reduces_to_logistic() {
        let (x, y, _) = simulate(1, 1, 0.0);
        let cl = vec![0; y.len()];
        let f = fit_random_intercept_logistic(&x, &y, &cl).unwrap();
        let l = fit_logistic(&x, &y).unwrap();
        assert_eq!(f.sigma_b, 0.0);
        assert!(f.intercept_modes.iter().all(|&b| b == 0.0));
        assert!((&f.fixed_coefficients - &l.coefficients).amax() < 1e-12);
    }

    #[test]
    fn laplace_tends_to_logistic_at_small_sigma() {
        let (x, y, cl) = simulate(2, 30, 1.0);
        let prob = PenalizedProblem::new(&x, &y, &cl);
        let l = fit_logistic(&x, &y).unwrap();
        let mut beta = l.coefficients.clone();
        let mut b = vec![0.0; prob.n_clusters()];
        prob.solve_modes(1e-6, &mut beta, &mut b);
        assert!((prob.laplace(1e-6, &beta, &b) - l.log_likelihood).abs() < 1e-3);
    }

    #[test]
    fn pooled_truth_gives_small_sigma() {
        // Under a pooled truth the estimate sits on the boundary about half
        // the time; the median over replicates is the stable summary.
        let mut sigmas = Vec::new();
        for seed in 0..21 {
            let (x, y, cl) = simulate(300 + seed, 200, 0.0);
            let f = fit_random_intercept_logistic(&x, &y, &cl).unwrap();
            let l = fit_logistic(&x, &y).unwrap();
            assert!((&f.fixed_coefficients - &l.coefficients).amax() < 0.1);
            sigmas.push(f.sigma_b);
        }
        sigmas.sort_by(f64::total_cmp);
        assert!(sigmas[10] < 0.15, "median sigma {}", sigmas[10]);
    }

    #[test]
    fn recovers_unit_sigma() {
        let (x, y, cl) = simulate(4, 200, 1.0);
        let f = fit_random_intercept_logistic(&x, &y, &cl).unwrap();
        assert!((0.7..=1.3).contains(&f.sigma_b), "sigma {}", f.sigma_b);
        assert!(f.converged);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y, cl) = simulate(5, 8, 1.0);
        let prob = PenalizedProblem::new(&x, &y, &cl);
        let mut rng = SeedStream::new(5).rng("points", 0);
        let dim = prob.n_fixed() + prob.n_clusters();
        for _ in 0..50 {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let sigma = rng.random_range(0.3..2.0);
            let split = |v: &[f64]| (DVector::from_column_slice(&v[..2]), v[2..].to_vec());
            let (beta, b) = split(&v);
            let g = prob.gradient(sigma, &beta, &b);
            for k in 0..dim {
                let mut up = v.clone();
                let mut dn = v.clone();
                up[k] += 1e-5;
                dn[k] -= 1e-5;
                let (bu, uu) = split(&up);
                let (bd, ud) = split(&dn);
                let fd = (prob.objective(sigma, &bu, &uu) - prob.objective(sigma, &bd, &ud)) / 2e-5;
                let rel = (fd - g[k]).abs() / g[k].abs().max(1e-2);
                assert!(rel < 1e-4, "component {k}: analytic {} fd {fd}", g[k]);
            }
        }
    }

    #[test]
    fn row_permutation_invariance() {
        let (x, y, cl) = simulate(6, 40, 1.0);
        let f = fit_random_intercept_logistic(&x, &y, &cl).unwrap();
        let n = y.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7919) % n).collect();
        let mut sorted = perm.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), n);
        let xp = DMatrix::from_fn(n, 1, |i, _| x[(perm[i], 0)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let cp: Vec<usize> = perm.iter().map(|&i| cl[i]).collect();
        let g = fit_random_intercept_logistic(&xp, &yp, &cp).unwrap();
        assert!((&f.fixed_coefficients - &g.fixed_coefficients).amax() < 1e-6);
        assert!((f.sigma_b - g.sigma_b).abs() < 1e-6);
    }
}
