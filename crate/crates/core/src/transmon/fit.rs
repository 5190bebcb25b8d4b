//! Least-squares extraction of resonant-ABS transmon parameters from the
//! offset-charge dependence of `f01` and `f02/2`.

use nalgebra::DMatrix;

use super::{diagonalize, transitions, JunctionModel, TransmonParams, DEFAULT_CHARGE_CUTOFF};
use crate::error::{Error, Result};
use crate::fit::lm::{minimize, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionPoint {
    pub ng: f64,
    pub f01_ghz: f64,
    pub f02_half_ghz: f64,
}

#[derive(Debug, Clone)]
pub struct DispersionFit {
    /// Fitted parameters (always a `ResonantAbs` junction).
    pub params: TransmonParams,
    /// Covariance of `(Ec, Δ̃, T)`.
    pub covariance: DMatrix<f64>,
    /// Standard errors of `(Ec, Δ̃, T)`.
    pub stderr: [f64; 3],
    pub residual_norm: f64,
    pub n_iter: usize,
}

impl DispersionFit {
    pub fn ec_ghz(&self) -> f64 {
        self.params.ec_ghz
    }

    pub fn eff_gap_ghz(&self) -> f64 {
        match self.params.junction {
            JunctionModel::ResonantAbs { eff_gap_ghz, .. } => eff_gap_ghz,
            _ => unreachable!(),
        }
    }

    pub fn transmission(&self) -> f64 {
        match self.params.junction {
            JunctionModel::ResonantAbs { transmission, .. } => transmission,
            _ => unreachable!(),
        }
    }

    pub fn to_text(&self) -> String {
        let names = ["ec_GHz", "eff_gap_GHz", "transmission"];
        let vals = [self.ec_ghz(), self.eff_gap_ghz(), self.transmission()];
        let mut s = String::new();
        for i in 0..3 {
            s.push_str(&format!("{} = {:.9e} +/- {:.3e}\n", names[i], vals[i], self.stderr[i]));
        }
        s.push_str(&format!(
            "effective_EJ_GHz = {:.9e}\n",
            super::effective_ej(&self.params.junction)
        ));
        s.push_str(&format!("residual_norm_GHz = {:.6e}\n", self.residual_norm));
        s.push_str(&format!("iterations = {}\n", self.n_iter));
        s
    }

    pub fn to_csv(&self) -> String {
        let names = ["ec_GHz", "eff_gap_GHz", "transmission"];
        let vals = [self.ec_ghz(), self.eff_gap_ghz(), self.transmission()];
        let mut s = String::from("parameter,value,stderr\n");
        for i in 0..3 {
            s.push_str(&format!("{},{:.12e},{:.12e}\n", names[i], vals[i], self.stderr[i]));
        }
        s
    }
}

fn abs_params(p: &[f64], lead_gap_uev: f64) -> TransmonParams {
    TransmonParams {
        ec_ghz: p[0],
        junction: JunctionModel::ResonantAbs {
            eff_gap_ghz: p[1],
            transmission: p[2],
        },
        lead_gap_uev,
    }
}

/// Fits `(Ec, Δ̃, T)` of the resonant-ABS model to measured transition
/// frequencies. The initial guess may use any junction model; its effective
/// Josephson energy seeds `Δ̃` when it is not already a resonant-ABS model.
pub fn fit_dispersion(data: &[DispersionPoint], init: &TransmonParams) -> Result<DispersionFit> {
    if data.len() < 8 {
        return Err(Error::input(format!("need at least 8 dispersion points, got {}", data.len())));
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), d| (l.min(d.ng), h.max(d.ng)));
    if hi - lo < 0.5 - 1e-12 {
        return Err(Error::input(format!(
            "offset charges span {:.3}; need at least half a charge period",
            hi - lo
        )));
    }
    init.validate()?;
    let x0 = match init.junction {
        JunctionModel::ResonantAbs { eff_gap_ghz, transmission } => [init.ec_ghz, eff_gap_ghz, transmission],
        ref other => {
            let ej = super::effective_ej(other);
            [init.ec_ghz, 4.0 * ej / 0.95, 0.95]
        }
    };
    let lead_gap = init.lead_gap_uev;
    let resid = |p: &[f64]| {
        if p[0] <= 0.0 || p[1] <= 0.0 || p[2] <= 0.0 || p[2] > 1.0 {
            return None;
        }
        let params = abs_params(p, lead_gap);
        let mut r = Vec::with_capacity(2 * data.len());
        for d in data {
            let (f01, f02h) = transitions(&params, d.ng, DEFAULT_CHARGE_CUTOFF);
            r.push(f01 - d.f01_ghz);
            r.push(f02h - d.f02_half_ghz);
        }
        Some(r)
    };
    let opts = LmOptions {
        max_iter: 300,
        ..LmOptions::default()
    };
    let report = minimize(resid, &x0, &[x0[0], x0[1], 0.1], &opts)?;
    if !report.converged {
        return Err(Error::NonConvergence(format!(
            "dispersion fit did not converge in {} iterations",
            report.n_iter
        )));
    }
    let covariance = report.covariance().map_err(|_| {
        Error::Numerical(
            "degenerate Jacobian in dispersion fit; widen the offset-charge span or add f02/2 data".into(),
        )
    })?;
    let params = abs_params(&report.params, lead_gap);
    // confirm the final parameters are inside the converged-basis regime
    diagonalize(&params, data[0].ng, 3)?;
    Ok(DispersionFit {
        stderr: [0, 1, 2].map(|i| covariance[(i, i)].max(0.0).sqrt()),
        covariance,
        params,
        residual_norm: report.residual_norm(),
        n_iter: report.n_iter,
    })
}
