use std::f64::consts::PI;

use super::lm::{minimize, LmOptions};
use super::FitResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub centers: Vec<f64>,
    /// Normalised so the histogram integrates to one.
    pub density: Vec<f64>,
    pub bin_width: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Histogram with Freedman-Diaconis bin width `2 IQR n^{-1/3}`.
pub fn freedman_diaconis_histogram(shots: &[f64]) -> Result<Histogram> {
    if shots.len() < 2 || shots.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("histogram needs at least two finite shots"));
    }
    let mut sorted = shots.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return Err(Error::input("all shots are identical"));
    }
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let mut width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    if !(width > 0.0) {
        width = (hi - lo) / 10.0;
    }
    let n_bins = (((hi - lo) / width).ceil() as usize).clamp(1, 10_000);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &s in &sorted {
        let k = (((s - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let norm = 1.0 / (sorted.len() as f64 * width);
    Ok(Histogram {
        centers: (0..n_bins).map(|k| lo + (k as f64 + 0.5) * width).collect(),
        density: counts.iter().map(|&c| c as f64 * norm).collect(),
        bin_width: width,
    })
}

/// `p N(mu_g, σ) + (1 - p) N(mu_e, σ)` evaluated at `x`.
pub fn double_gaussian_density(x: f64, p_g: f64, mu_g: f64, mu_e: f64, sigma: f64) -> f64 {
    let g = |mu: f64| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
    p_g * g(mu_g) + (1.0 - p_g) * g(mu_e)
}

#[derive(Debug, Clone)]
pub struct DoubleGaussianFit {
    /// Parameters `p_g`, `mu_g`, `mu_e`, `sigma`, with `mu_g <= mu_e`.
    pub fit: FitResult,
    /// Set when the two modes sit closer than one standard deviation, or when
    /// a single Gaussian describes the histogram about as well.
    pub unresolved: bool,
    pub histogram: Histogram,
}

/// Two-means split of the shots into lower and upper clusters.
fn two_means(shots: &[f64]) -> (f64, f64, f64, f64) {
    let mean = shots.iter().sum::<f64>() / shots.len() as f64;
    let mut cut = mean;
    let (mut m0, mut m1, mut frac) = (mean, mean, 0.5);
    for _ in 0..100 {
        let (lo, hi): (Vec<f64>, Vec<f64>) = shots.iter().partition(|&&s| s < cut);
        if lo.is_empty() || hi.is_empty() {
            break;
        }
        m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        frac = lo.len() as f64 / shots.len() as f64;
        let next = 0.5 * (m0 + m1);
        if next == cut {
            break;
        }
        cut = next;
    }
    let var = shots
        .iter()
        .map(|&s| if s < cut { (s - m0).powi(2) } else { (s - m1).powi(2) })
        .sum::<f64>()
        / shots.len() as f64;
    (frac, m0, m1, var.sqrt().max(1e-12 * (m1 - m0).abs().max(1e-300)))
}

/// Least-squares fit of the double-Gaussian density to histogram data.
pub fn fit_double_gaussian_density(centers: &[f64], density: &[f64], init: [f64; 4]) -> Result<FitResult> {
    if centers.len() != density.len() || centers.len() < 4 {
        return Err(Error::input("need at least 4 histogram bins with matching lengths"));
    }
    let width = (init[2] - init[1]).abs().max(init[3]);
    let peak = density.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let resid = |p: &[f64]| {
        if !(0.0..=1.0).contains(&p[0]) || p[3] <= 0.0 {
            return None;
        }
        Some(
            centers
                .iter()
                .zip(density)
                .map(|(&x, &d)| (double_gaussian_density(x, p[0], p[1], p[2], p[3]) - d) / peak)
                .collect(),
        )
    };
    let report = minimize(resid, &init, &[0.1, width, width, init[3]], &LmOptions::default())?;
    let mut p = report.params.clone();
    if p[1] > p[2] {
        p.swap(1, 2);
        p[0] = 1.0 - p[0];
    }
    let mut fit = FitResult::from_report(&["p_g", "mu_g", "mu_e", "sigma"], &report, p)?;
    if fit.params != report.params {
        // swapped labels: permute the uncertainties to match
        fit.stderr.swap(1, 2);
    }
    // residuals were scaled by the peak density
    fit.residual_norm *= peak;
    for r in fit.residual_history.iter_mut() {
        *r *= peak;
    }
    Ok(fit)
}

/// 99th percentile of F(2, large n).
const F_CRIT: f64 = 4.61;

/// Nested-model F test: does the two-Gaussian fit beat a fitted single
/// Gaussian by more than its two extra parameters explain?
fn second_mode_significant(hist: &Histogram, two: &FitResult, (mu0, sd0): (f64, f64)) -> bool {
    let n = hist.centers.len();
    if n <= 4 {
        return true;
    }
    let peak = hist.density.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let resid = |p: &[f64]| {
        (p[1] > 0.0).then(|| {
            hist.centers
                .iter()
                .zip(&hist.density)
                .map(|(&x, &d)| (double_gaussian_density(x, 1.0, p[0], p[0], p[1]) - d) / peak)
                .collect()
        })
    };
    let Ok(one) = minimize(resid, &[mu0, sd0], &[sd0, sd0], &LmOptions::default()) else {
        return true;
    };
    let rss1 = one.residual_norm().powi(2) * peak * peak;
    let rss2 = two.residual_norm.powi(2);
    if rss2 <= 0.0 {
        return rss1 > 0.0;
    }
    ((rss1 - rss2) / 2.0) / (rss2 / (n - 4) as f64) > F_CRIT
}

/// Histograms the shots (Freedman-Diaconis bins) and fits two Gaussians with
/// a shared width. The lower-valued mode is labelled ground.
pub fn fit_double_gaussian(shots: &[f64]) -> Result<DoubleGaussianFit> {
    if shots.len() < 1000 {
        return Err(Error::input(format!("need at least 1000 shots, got {}", shots.len())));
    }
    let hist = freedman_diaconis_histogram(shots)?;
    let (frac, m0, m1, sd) = two_means(shots);
    let init = [frac.clamp(0.01, 0.99), m0, m1, sd];
    let fit = fit_double_gaussian_density(&hist.centers, &hist.density, init)?;
    let unresolved = (fit.get("mu_e") - fit.get("mu_g")).abs() < fit.get("sigma")
        || !second_mode_significant(&hist, &fit, (m0 * frac + m1 * (1.0 - frac), sd.max((m1 - m0).abs() / 2.0)));
    Ok(DoubleGaussianFit {
        fit,
        unresolved,
        histogram: hist,
    })
}
