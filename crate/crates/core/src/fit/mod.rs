//! Nonlinear least-squares kernels for the analysis pipeline: lifetimes,
//! Rabi traces, recovery curves, readout histograms and loss-rate ratios.
//! All of them run on the damped Gauss-Newton engine in [`lm`].

pub mod lm;

mod curves;
mod histogram;
mod ratios;

pub use curves::{
    exp_decay_model, fit_decaying_cosine, fit_exp_decay, fit_recovery, recombination_model, RecoveryFit,
    RecoveryModel,
};
pub use histogram::{
    double_gaussian_density, fit_double_gaussian, fit_double_gaussian_density, freedman_diaconis_histogram,
    DoubleGaussianFit, Histogram,
};
pub use ratios::{delta_stats, loss_ratios, DeltaStats, LossCurve, RatioTable};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use lm::LmReport;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub n_iter: usize,
    /// Residual norm after each accepted iteration.
    pub residual_history: Vec<f64>,
}

impl FitResult {
    pub(crate) fn from_report(names: &[&str], report: &LmReport, params: Vec<f64>) -> Result<Self> {
        if !report.converged {
            return Err(Error::NonConvergence(format!(
                "fit of ({}) did not converge in {} iterations",
                names.join(", "),
                report.n_iter
            )));
        }
        let stderr = report.stderr()?;
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            params,
            stderr,
            residual_norm: report.residual_norm(),
            converged: report.converged,
            n_iter: report.n_iter,
            residual_history: report.cost_history.iter().map(|c| c.sqrt()).collect(),
        })
    }

    /// Parameter value by name. Panics on unknown names.
    pub fn get(&self, name: &str) -> f64 {
        self.params[self.index(name)]
    }

    pub fn err(&self, name: &str) -> f64 {
        self.stderr[self.index(name)]
    }

    fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
    }

    /// `name = value ± stderr` lines followed by fit diagnostics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ((n, v), e) in self.names.iter().zip(&self.params).zip(&self.stderr) {
            let _ = writeln!(s, "{n} = {v:.9e} +/- {e:.3e}");
        }
        let _ = writeln!(s, "residual_norm = {:.6e}", self.residual_norm);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "iterations = {}", self.n_iter);
        s
    }

    /// `parameter,value,stderr` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,value,stderr\n");
        for ((n, v), e) in self.names.iter().zip(&self.params).zip(&self.stderr) {
            let _ = writeln!(s, "{n},{v:.12e},{e:.12e}");
        }
        s
    }
}

/// Ordinary least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub(crate) fn linear_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub(crate) fn check_xy(t: &[f64], y: &[f64], min_points: usize) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::input(format!(
            "x and y lengths differ ({} vs {})",
            t.len(),
            y.len()
        )));
    }
    if t.len() < min_points {
        return Err(Error::input(format!(
            "need at least {min_points} points, got {}",
            t.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite input value"));
    }
    Ok(())
}
