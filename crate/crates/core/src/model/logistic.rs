//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::{softplus, ModelError, PROB_CLAMP};

pub const MAX_ITER: usize = 100;
pub const BETA_TOL: f64 = 1e-8;
pub const DEVIANCE_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per design column.
    pub coefficients: DVector<f64>,
    /// Fitted probabilities, clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fitted: DVector<f64>,
    /// Log-likelihood at the unclamped linear predictor.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Deviance at the start and after every iteration.
    pub deviance_trace: Vec<f64>,
    /// Number of fitted probabilities that hit the clamp.
    pub clamp_count: usize,
}

impl LogisticFit {
    pub fn deviance(&self) -> f64 {
        -2.0 * self.log_likelihood
    }

    /// Probability for a new covariate row (no intercept entry).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let b = &self.coefficients;
        let eta = b[0] + x.iter().enumerate().map(|(j, v)| b[j + 1] * v).sum::<f64>();
        clamp_prob(logistic(eta))
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Bernoulli log-likelihood of `y` at linear predictor `eta`.
pub fn log_likelihood(y: &[f64], eta: &DVector<f64>) -> f64 {
    y.iter().zip(eta.iter()).map(|(&yi, &e)| yi * e - softplus(e)).sum()
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Fails if the smallest eigenvalue of the column-scaled `X'X` is
/// negligible relative to the largest, or if there are fewer rows than
/// columns.
pub fn check_rank(x: &DMatrix<f64>) -> Result<(), ModelError> {
    let (n, p) = x.shape();
    if n < p {
        return Err(ModelError::RankDeficientDesign);
    }
    if p == 0 {
        return Ok(());
    }
    let xtx = x.transpose() * x;
    let scale: Vec<f64> = (0..p).map(|j| xtx[(j, j)].sqrt()).collect();
    if scale.iter().any(|&s| s == 0.0) {
        return Err(ModelError::RankDeficientDesign);
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] / (scale[i] * scale[j]));
    let ev = scaled.symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    if !(min / max >= RANK_TOL) {
        return Err(ModelError::RankDeficientDesign);
    }
    Ok(())
}

/// Fits `logit P(y = 1) = b0 + x'b`; `x` must not contain an intercept
/// column.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<LogisticFit, ModelError> {
    assert_eq!(x.nrows(), y.len(), "design rows must match responses");
    let n = y.len();
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 || n1 == n {
        return Err(ModelError::DegenerateResponse);
    }
    let xd = with_intercept(x);
    check_rank(&xd)?;
    let p = xd.ncols();

    let mut beta = DVector::zeros(p);
    let ybar = n1 as f64 / n as f64;
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = &xd * &beta;
    let mut ll = log_likelihood(y, &eta);
    let mut trace = vec![-2.0 * ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| clamp_prob(logistic(e))).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        // Newton step: (X'WX) d = X'(y - mu)
        let mut xw = xd.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let xtwx = xd.tr_mul(&xw);
        let resid = DVector::from_iterator(n, (0..n).map(|i| y[i] - mu[i]));
        let score = xd.tr_mul(&resid);
        let step = match xtwx.clone().cholesky() {
            Some(c) => c.solve(&score),
            None => match xtwx.lu().solve(&score) {
                Some(s) => s,
                None => return Err(ModelError::RankDeficientDesign),
            },
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_eta = &xd * &cand;
            let cand_ll = log_likelihood(y, &cand_eta);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((new_beta, new_eta, new_ll)) = accepted else {
            // No step improves the likelihood: at numerical optimum.
            converged = true;
            break;
        };
        let max_change = (&new_beta - &beta).amax();
        let dev_change = 2.0 * (new_ll - ll).abs();
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        trace.push(-2.0 * ll);
        if max_change < BETA_TOL || dev_change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }

    let raw: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let clamp_count = raw.iter().filter(|&&m| m < PROB_CLAMP || m > 1.0 - PROB_CLAMP).count();
    let fitted = DVector::from_iterator(n, raw.into_iter().map(clamp_prob));
    if !converged {
        log::debug!("logistic IRLS did not converge in {MAX_ITER} iterations");
    }
    Ok(LogisticFit {
        coefficients: beta,
        fitted,
        log_likelihood: ll,
        iterations,
        converged,
        deviance_trace: trace,
        clamp_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(cols: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(cols[0].len(), cols.len(), |i, j| cols[j][i])
    }

    #[test]
    fn intercept_only_matches_log_odds() {
        let y = [1.0, 0.0, 0.0, 0.0];
        let x = DMatrix::zeros(4, 0);
        let f = fit_logistic(&x, &y).unwrap();
        assert!((f.coefficients[0] - (1.0f64 / 3.0).ln()).abs() < 1e-10);
        assert!(f.fitted.iter().all(|&m| (m - 0.25).abs() < 1e-10));
    }

    #[test]
    fn degenerate_response() {
        let x = design(&[&[0.0, 1.0, 2.0]]);
        assert!(matches!(fit_logistic(&x, &[1.0; 3]), Err(ModelError::DegenerateResponse)));
        assert!(matches!(fit_logistic(&x, &[0.0; 3]), Err(ModelError::DegenerateResponse)));
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let a = [0.1, 0.5, -0.3, 0.9, 1.2];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let x = design(&[&a, &b]);
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        assert!(matches!(fit_logistic(&x, &y), Err(ModelError::RankDeficientDesign)));
    }

    #[test]
    fn separation_converges_with_clamped_fits() {
        let x = design(&[&[-2.0, -1.0, 1.0, 2.0]]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let f = fit_logistic(&x, &y).unwrap();
        assert!(f.fitted.iter().all(|&m| (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&m)));
        assert!(f.clamp_count > 0);
        for w in f.deviance_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn binary_covariate_matches_cell_proportions() {
        // With a single binary covariate the MLE reproduces cell proportions.
        let x = design(&[&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]]);
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let f = fit_logistic(&x, &y).unwrap();
        assert!((f.fitted[0] - 0.25).abs() < 1e-9);
        assert!((f.fitted[4] - 0.8).abs() < 1e-9);
        assert!(f.converged);
    }

    #[test]
    fn score_vanishes_at_optimum() {
        let x = design(&[&[0.3, -1.2, 0.8, 2.1, -0.4, 0.0, 1.5, -2.0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]]);
        let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let f = fit_logistic(&x, &y).unwrap();
        let xd = with_intercept(&x);
        let r: Vec<f64> = (0..8).map(|i| y[i] - f.fitted[i]).collect();
        for j in 0..3 {
            let s: f64 = (0..8).map(|i| xd[(i, j)] * r[i]).sum();
            assert!(s.abs() < 1e-8, "score {j} = {s}");
        }
    }

    proptest! {
        #[test]
        fn deviance_never_increases(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 8..60)
        ) {
            let y: Vec<f64> = pts.iter().map(|p| if p.2 { 1.0 } else { 0.0 }).collect();
            let a: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let x = design(&[&a, &b]);
            if let Ok(f) = fit_logistic(&x, &y) {
                for w in f.deviance_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
                }
                prop_assert!(f.fitted.iter().all(|&m| m >= PROB_CLAMP && m <= 1.0 - PROB_CLAMP));
            }
        }
    }
}
