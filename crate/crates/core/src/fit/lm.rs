//! Damped Gauss-Newton (Levenberg-Marquardt) with central-difference
//! Jacobians. Shared by every fitter in the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the scaled step is below this fraction of the parameters.
    pub xtol: f64,
    /// Relative step for central differences.
    pub rel_step: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-15,
            xtol: 1e-13,
            rel_step: 1e-6,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals after each accepted iteration, starting with
    /// the initial guess.
    pub cost_history: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Jacobian at the returned parameters.
    pub jacobian: DMatrix<f64>,
}

impl LmReport {
    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// `s² (JᵀJ)⁻¹` with `s² = RSS / (m - n)`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let m = self.residuals.len();
        let n = self.params.len();
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = invert_spd(&jtj).ok_or_else(|| {
            Error::Numerical("degenerate Jacobian at the optimum; parameters are not identifiable".into())
        })?;
        let rss: f64 = self.residuals.iter().map(|r| r * r).sum();
        let s2 = if m > n { rss / (m - n) as f64 } else { 0.0 };
        Ok(inv * s2)
    }

    pub fn stderr(&self) -> Result<Vec<f64>> {
        let cov = self.covariance()?;
        Ok((0..self.params.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
    }
}

fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    // Scale to unit diagonal so conditioning reflects correlations, not units.
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)].max(0.0).sqrt()).collect();
    if d.iter().any(|&x| x == 0.0 || !x.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = scaled.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > max * 1e-14) {
        return None;
    }
    let inv = scaled.cholesky()?.inverse();
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j])))
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Central-difference Jacobian; `scales` sets the step floor per parameter.
pub fn numeric_jacobian<F>(f: &F, x: &[f64], r0: &[f64], scales: &[f64], rel_step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(scales[j]);
        xp[j] = x[j] + h;
        let plus = f(&xp);
        xp[j] = x[j] - h;
        let minus = f(&xp);
        xp[j] = x[j];
        match (plus, minus) {
            (Some(p), Some(mn)) => {
                for i in 0..m {
                    jac[(i, j)] = (p[i] - mn[i]) / (2.0 * h);
                }
            }
            // one-sided at a domain boundary
            (Some(p), None) => {
                for i in 0..m {
                    jac[(i, j)] = (p[i] - r0[i]) / h;
                }
            }
            (None, Some(mn)) => {
                for i in 0..m {
                    jac[(i, j)] = (r0[i] - mn[i]) / h;
                }
            }
            (None, None) => return None,
        }
    }
    Some(jac)
}

/// Minimises `Σ r_i(x)²`. `residuals` returns `None` for parameters outside
/// the model's domain; such trial steps are rejected. `scales` gives the
/// typical magnitude of each parameter (used for difference steps).
pub fn minimize<F>(residuals: F, x0: &[f64], scales: &[f64], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    assert_eq!(x0.len(), scales.len());
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x)
        .ok_or_else(|| Error::input("initial guess lies outside the model domain"))?;
    if r.len() < n {
        return Err(Error::input(format!(
            "need at least {n} residuals for {n} parameters, got {}",
            r.len()
        )));
    }
    let mut c = cost(&r);
    let mut history = vec![c];
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iter = 0;
    let data_scale = c.max(f64::MIN_POSITIVE);

    let mut jac = numeric_jacobian(&residuals, &x, &r, scales, opts.rel_step)
        .ok_or_else(|| Error::Numerical("Jacobian undefined at the initial guess".into()))?;

    while iter < opts.max_iter {
        iter += 1;
        if c <= 1e-30 * data_scale || c == 0.0 {
            converged = true;
            break;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(1e-300);
                a[(i, i)] += lambda * d;
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let Some(rt) = residuals(&trial) else {
                lambda *= 10.0;
                continue;
            };
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let rel_drop = (c - ct) / c.max(f64::MIN_POSITIVE);
                let step_small = step
                    .iter()
                    .zip(&x)
                    .zip(scales)
                    .all(|((s, xi), sc)| s.abs() <= opts.xtol * (xi.abs().max(*sc)));
                x = trial;
                r = rt;
                c = ct;
                history.push(c);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.ftol || step_small {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent direction left: we are at a (numerical) minimum
            converged = true;
        }
        jac = numeric_jacobian(&residuals, &x, &r, scales, opts.rel_step)
            .ok_or_else(|| Error::Numerical("Jacobian undefined during iteration".into()))?;
        if converged {
            break;
        }
    }
    Ok(LmReport {
        params: x,
        residuals: r,
        cost_history: history,
        n_iter: iter,
        converged,
        jacobian: jac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_linear_least_squares_exactly() {
        // y = 2x + 1
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = |p: &[f64]| Some(xs.iter().zip(&ys).map(|(x, y)| p[0] * x + p[1] - y).collect());
        let rep = minimize(f, &[0.0, 0.0], &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((rep.params[0] - 2.0).abs() < 1e-10);
        assert!((rep.params[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rosenbrock_converges_and_cost_never_rises() {
        let f = |p: &[f64]| Some(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
        let rep = minimize(f, &[-1.2, 1.0], &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-8, "{:?}", rep.params);
        for w in rep.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_steps_outside_domain() {
        // minimum of (sqrt(p) - 2)^2 with p >= 0
        let f = |p: &[f64]| if p[0] < 0.0 { None } else { Some(vec![p[0].sqrt() - 2.0]) };
        let rep = minimize(f, &[0.5], &[1.0], &LmOptions::default()).unwrap();
        assert!((rep.params[0] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_jacobian_reported_by_covariance() {
        // only p0 + p1 is identifiable
        let f = |p: &[f64]| Some(vec![p[0] + p[1] - 1.0, p[0] + p[1] - 1.0, p[0] + p[1] - 1.0]);
        let rep = minimize(f, &[0.2, 0.2], &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!(rep.covariance().is_err());
    }
}
