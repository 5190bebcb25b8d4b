use std::f64::consts::PI;

use super::lm::{minimize, LmOptions};
use super::{check_xy, linear_regression, FitResult};
use crate::error::{Error, Result};

fn sorted_pairs(t: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..t.len()).collect();
    idx.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(y[a].total_cmp(&y[b])));
    (idx.iter().map(|&i| t[i]).collect(), idx.iter().map(|&i| y[i]).collect())
}

fn range(y: &[f64]) -> (f64, f64) {
    y.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `A e^{-t/τ} + c`
pub fn exp_decay_model(t: f64, amplitude: f64, tau: f64, offset: f64) -> f64 {
    amplitude * (-t / tau).exp() + offset
}

/// Fits `A e^{-t/τ} + c`. Parameters are named `A`, `tau`, `offset`.
pub fn fit_exp_decay(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(t, y, 4)?;
    let (t, y) = sorted_pairs(t, y);
    let (lo, hi) = range(&y);
    let spread = hi - lo;
    if spread <= 1e-14 * hi.abs().max(lo.abs()) || spread == 0.0 {
        return Err(Error::input("degenerate data: all y values are equal"));
    }
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return Err(Error::input("degenerate data: all t values are equal"));
    }
    // Decaying towards the late values; sign tells whether A is positive.
    let sign = if y[0] >= y[y.len() - 1] { 1.0 } else { -1.0 };
    let c0 = if sign > 0.0 { lo - 0.02 * spread } else { hi + 0.02 * spread };
    let logs: Vec<(f64, f64)> = t
        .iter()
        .zip(&y)
        .filter_map(|(&ti, &yi)| {
            let v = sign * (yi - c0);
            (v > 0.0).then(|| (ti, v.ln()))
        })
        .collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
    let (slope, intercept) = linear_regression(&lx, &ly).unwrap_or((-1.0 / span, spread.ln()));
    let tau0 = if slope < 0.0 { (-1.0 / slope).min(100.0 * span) } else { span };
    let a0 = sign * intercept.exp();

    let resid = |p: &[f64]| {
        if p[1] <= 0.0 {
            return None;
        }
        Some(
            t.iter()
                .zip(&y)
                .map(|(&ti, &yi)| exp_decay_model(ti, p[0], p[1], p[2]) - yi)
                .collect(),
        )
    };
    let report = minimize(resid, &[a0, tau0, c0], &[spread, span, spread], &LmOptions::default())?;
    let p = report.params.clone();
    FitResult::from_report(&["A", "tau", "offset"], &report, p)
}

/// Periodogram peak of mean-subtracted data on an oversampled frequency grid.
/// Returns `(frequency, amplitude estimate)`.
fn spectral_peak(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = t.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let span = t[n - 1] - t[0];
    let nyquist = 0.5 * (n - 1) as f64 / span;
    let df = 1.0 / (span * 16.0);
    let mut powers = Vec::new();
    let mut f = 0.5 / span;
    while f <= nyquist {
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let arg = 2.0 * PI * f * ti;
            re += (yi - mean) * arg.cos();
            im += (yi - mean) * arg.sin();
        }
        powers.push((f, (re * re + im * im).sqrt() * 2.0 / n as f64));
        f += df;
    }
    let &(fpk, apk) = powers.iter().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let mut amps: Vec<f64> = powers.iter().map(|p| p.1).collect();
    amps.sort_by(f64::total_cmp);
    let median = amps[amps.len() / 2];
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if apk <= 1e-12 * scale || apk < 3.0 * median {
        return None;
    }
    Some((fpk, apk))
}

/// Fits `A e^{-t/τ} cos(2π f t + φ) + c`. Parameters are named `A`, `f`,
/// `phase`, `tau`, `offset`; `A > 0` and `phase ∈ (-π, π]` on return.
pub fn fit_decaying_cosine(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(t, y, 10)?;
    let (t, y) = sorted_pairs(t, y);
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return Err(Error::input("degenerate data: all t values are equal"));
    }
    let (f0, _) = spectral_peak(&t, &y)
        .ok_or_else(|| Error::input("no spectral peak above the noise floor"))?;

    // Linear solve for (a, b, c) at the peak frequency over a few decay guesses.
    let mut best: Option<(f64, [f64; 3], f64)> = None;
    for tau in [0.1, 0.25, 0.5, 1.0, 2.0, 10.0].map(|k| k * span) {
        let rows: Vec<[f64; 3]> = t
            .iter()
            .map(|&ti| {
                let env = (-(ti - t[0]) / tau).exp();
                let arg = 2.0 * PI * f0 * ti;
                [env * arg.cos(), env * arg.sin(), 1.0]
            })
            .collect();
        let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
        let b = nalgebra::DVector::from_column_slice(&y);
        let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-12) else {
            continue;
        };
        let res = (&a * &sol - &b).norm();
        if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
            best = Some((res, [sol[0], sol[1], sol[2]], tau));
        }
    }
    let (_, [ca, cb, c0], tau0) = best.ok_or_else(|| Error::Numerical("linear initialisation failed".into()))?;
    // env was referenced to t[0]; fold that into the amplitude
    let amp0 = (ca * ca + cb * cb).sqrt() * (t[0] / tau0).exp();
    let phase0 = (-cb).atan2(ca);
    let (lo, hi) = range(&y);
    let spread = (hi - lo).max(1e-300);

    let resid = |p: &[f64]| {
        if p[3] <= 0.0 || p[1] <= 0.0 {
            return None;
        }
        Some(
            t.iter()
                .zip(&y)
                .map(|(&ti, &yi)| p[0] * (-ti / p[3]).exp() * (2.0 * PI * p[1] * ti + p[2]).cos() + p[4] - yi)
                .collect(),
        )
    };
    let report = minimize(
        resid,
        &[amp0, f0, phase0, tau0, c0],
        &[spread, f0, 1.0, span, spread],
        &LmOptions::default(),
    )?;
    let mut p = report.params.clone();
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    p[2] = wrap_phase(p[2]);
    if p[1] * span < 2.0 {
        return Err(Error::input(format!(
            "trace spans {:.2} periods; need at least 2",
            p[1] * span
        )));
    }
    FitResult::from_report(&["A", "f", "phase", "tau", "offset"], &report, p)
}

fn wrap_phase(mut phi: f64) -> f64 {
    phi = phi.rem_euclid(2.0 * PI);
    if phi > PI {
        phi -= 2.0 * PI;
    }
    phi
}

/// `Γ₀ / (1 + Γ₀ ρ t)`: recombination-limited recovery.
pub fn recombination_model(t: f64, gamma0: f64, rho: f64) -> f64 {
    gamma0 / (1.0 + gamma0 * rho * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryModel {
    Exponential,
    Recombination,
}

impl RecoveryModel {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryModel::Exponential => "exponential",
            RecoveryModel::Recombination => "recombination",
        }
    }
}

#[derive(Debug)]
pub struct RecoveryFit {
    /// Parameters `gamma0`, `tau`.
    pub exponential: Result<FitResult>,
    /// Parameters `gamma0`, `rho`.
    pub recombination: Result<FitResult>,
    pub choice: RecoveryModel,
}

impl RecoveryFit {
    pub fn chosen(&self) -> &FitResult {
        match self.choice {
            RecoveryModel::Exponential => self.exponential.as_ref(),
            RecoveryModel::Recombination => self.recombination.as_ref(),
        }
        .expect("chosen branch always converged")
    }
}

/// Fits added loss vs delay with both the relaxation-limited (exponential)
/// and recombination-limited forms and picks the smaller residual norm.
pub fn fit_recovery(delays: &[f64], added_gamma: &[f64]) -> Result<RecoveryFit> {
    check_xy(delays, added_gamma, 5)?;
    let (t, y) = sorted_pairs(delays, added_gamma);
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return Err(Error::input("degenerate data: all delays are equal"));
    }
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > 0.0) {
        return Err(Error::input("recovery data must contain positive added loss"));
    }

    let exponential = (|| {
        let pos: (Vec<f64>, Vec<f64>) =
            t.iter().zip(&y).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a, b.ln())).unzip();
        let (slope, icpt) = linear_regression(&pos.0, &pos.1).unwrap_or((-1.0 / span, ymax.ln()));
        let tau0 = if slope < 0.0 { -1.0 / slope } else { span };
        let resid = |p: &[f64]| {
            (p[1] > 0.0).then(|| t.iter().zip(&y).map(|(&ti, &yi)| p[0] * (-ti / p[1]).exp() - yi).collect())
        };
        let rep = minimize(resid, &[icpt.exp(), tau0], &[ymax, span], &LmOptions::default())?;
        let p = rep.params.clone();
        FitResult::from_report(&["gamma0", "tau"], &rep, p)
    })();

    let recombination = (|| {
        let inv: (Vec<f64>, Vec<f64>) =
            t.iter().zip(&y).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a, 1.0 / b)).unzip();
        let (slope, icpt) = linear_regression(&inv.0, &inv.1).unwrap_or((1.0 / (ymax * span), 1.0 / ymax));
        let g0 = if icpt > 0.0 { 1.0 / icpt } else { ymax };
        let rho0 = (slope).max(1e-6 / (ymax * span));
        let resid = |p: &[f64]| {
            (p[0] > 0.0 && p[1] >= 0.0)
                .then(|| t.iter().zip(&y).map(|(&ti, &yi)| recombination_model(ti, p[0], p[1]) - yi).collect())
        };
        let rep = minimize(resid, &[g0, rho0], &[ymax, 1.0 / (ymax * span)], &LmOptions::default())?;
        let p = rep.params.clone();
        FitResult::from_report(&["gamma0", "rho"], &rep, p)
    })();

    let choice = match (&exponential, &recombination) {
        (Ok(e), Ok(r)) => {
            if e.residual_norm <= r.residual_norm {
                RecoveryModel::Exponential
            } else {
                RecoveryModel::Recombination
            }
        }
        (Ok(_), Err(_)) => RecoveryModel::Exponential,
        (Err(_), Ok(_)) => RecoveryModel::Recombination,
        (Err(e), Err(r)) => {
            return Err(Error::NonConvergence(format!(
                "both recovery models failed: exponential: {e}; recombination: {r}"
            )))
        }
    };
    Ok(RecoveryFit {
        exponential,
        recombination,
        choice,
    })
}
