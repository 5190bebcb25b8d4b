//! Transmon spectrum in the charge basis for three junction potentials, the
//! resulting charge dispersion, and the quasiparticle sensitivity `D`.
//!
//! All transmon energies are in GHz·h. The Hamiltonian is
//! `H = 4 Ec (n - ng)^2 + V(φ)`.
//!
//! * `Cosine`: `V = EJ (1 - cos φ)`, tridiagonal on the integer charge lattice.
//! * `MultiChannel`: `V = -Σ Δ_i sqrt(1 - T_i sin²(φ/2))`, banded on the
//!   integer lattice with matrix elements from numerical Fourier coefficients.
//! * `ResonantAbs`: `V = Δ̃ [cos(φ/2) σz + sqrt(1-T) sin(φ/2) σx]`. The
//!   half-charge shifts put it on the half-integer lattice. `V` commutes with
//!   `exp(2πi n) ⊗ σy`; in the eigen-sector that connects continuously to the
//!   cosine transmon (T → 0 at fixed Δ̃T) the problem is a real tridiagonal
//!   chain with hoppings `Δ̃(1 ± sqrt(1-T))/2` alternating bond by bond, and an
//!   offset-charge shift of 1/4.

mod band;
mod fit;

pub use band::BandMatrix;
pub use fit::{fit_dispersion, DispersionFit, DispersionPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::uev_to_ghz;

/// Default charge cutoff: states `n = -30..=30`.
pub const DEFAULT_CHARGE_CUTOFF: usize = 30;

const CONVERGENCE_TOL_GHZ: f64 = 1e-6;
const FOURIER_GRID: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub gap_ghz: f64,
    pub transmission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum JunctionModel {
    Cosine { ej_ghz: f64 },
    MultiChannel { channels: Vec<Channel> },
    ResonantAbs { eff_gap_ghz: f64, transmission: f64 },
}

impl JunctionModel {
    pub fn validate(&self) -> Result<()> {
        let bad_t = |t: f64| !(t > 0.0 && t <= 1.0);
        match self {
            JunctionModel::Cosine { ej_ghz } => {
                if !(*ej_ghz >= 0.0) || !ej_ghz.is_finite() {
                    return Err(Error::validation(format!("cosine EJ must be >= 0, got {ej_ghz}")));
                }
            }
            JunctionModel::MultiChannel { channels } => {
                if channels.is_empty() {
                    return Err(Error::validation("multi-channel junction needs at least one channel"));
                }
                for (i, c) in channels.iter().enumerate() {
                    if !(c.gap_ghz > 0.0) || bad_t(c.transmission) {
                        return Err(Error::validation(format!(
                            "channel {i}: need gap > 0 and transmission in (0,1], got {c:?}"
                        )));
                    }
                }
            }
            JunctionModel::ResonantAbs { eff_gap_ghz, transmission } => {
                if !(*eff_gap_ghz > 0.0) || bad_t(*transmission) {
                    return Err(Error::validation(format!(
                        "resonant ABS: need gap > 0 and transmission in (0,1], got {eff_gap_ghz}, {transmission}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    pub ec_ghz: f64,
    pub junction: JunctionModel,
    /// Superconducting gap of the junction leads, µeV.
    #[serde(rename = "lead_gap_ueV")]
    pub lead_gap_uev: f64,
}

impl TransmonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ec_ghz > 0.0) {
            return Err(Error::validation(format!("Ec must be > 0, got {}", self.ec_ghz)));
        }
        if !(self.lead_gap_uev > 0.0) {
            return Err(Error::validation(format!(
                "lead gap must be > 0, got {}",
                self.lead_gap_uev
            )));
        }
        self.junction.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub ng: f64,
    pub levels: Vec<f64>,
    pub f01: f64,
    pub f02_half: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub charge_cutoff: usize,
    /// Re-solve with a 25% larger basis and fail if levels move by more than
    /// 1e-6 GHz.
    pub check_convergence: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            charge_cutoff: DEFAULT_CHARGE_CUTOFF,
            check_convergence: true,
        }
    }
}

/// Builds the charge-basis Hamiltonian at offset charge `ng`.
pub fn hamiltonian(junction: &JunctionModel, ec: f64, ng: f64, cutoff: usize) -> BandMatrix {
    match junction {
        JunctionModel::Cosine { ej_ghz } => {
            let dim = 2 * cutoff + 1;
            let mut h = BandMatrix::zeros(dim, 1);
            for i in 0..dim {
                let n = i as f64 - cutoff as f64;
                h.set(i, i, 4.0 * ec * (n - ng).powi(2) + ej_ghz);
                if i > 0 {
                    h.set(i, i - 1, -0.5 * ej_ghz);
                }
            }
            h
        }
        JunctionModel::MultiChannel { channels } => {
            let coeffs = multichannel_fourier(channels, 2 * cutoff);
            let scale: f64 = channels.iter().map(|c| c.gap_ghz).sum();
            let bandwidth = coeffs
                .iter()
                .rposition(|c| c.abs() > 1e-15 * scale)
                .unwrap_or(0)
                .max(1);
            let dim = 2 * cutoff + 1;
            let mut h = BandMatrix::zeros(dim, bandwidth);
            for i in 0..dim {
                let n = i as f64 - cutoff as f64;
                h.set(i, i, 4.0 * ec * (n - ng).powi(2) + coeffs[0]);
                for d in 1..=h.bandwidth().min(i) {
                    h.set(i, i - d, coeffs[d]);
                }
            }
            h
        }
        JunctionModel::ResonantAbs { eff_gap_ghz, transmission } => {
            let reflect = (1.0 - transmission).max(0.0).sqrt();
            let strong = 0.5 * eff_gap_ghz * (1.0 + reflect);
            let weak = 0.5 * eff_gap_ghz * (1.0 - reflect);
            // sites n = -cutoff, -cutoff + 1/2, ..., cutoff
            let dim = 4 * cutoff + 1;
            let shifted = ng + 0.25;
            let mut h = BandMatrix::zeros(dim, 1);
            for j in 0..dim {
                let n = -(cutoff as f64) + 0.5 * j as f64;
                h.set(j, j, 4.0 * ec * (n - shifted).powi(2));
                if j > 0 {
                    // bond (j-1, j) starts on an integer charge when j-1 is even
                    let t = if (j - 1) % 2 == 0 { strong } else { weak };
                    h.set(j, j - 1, t);
                }
            }
            h
        }
    }
}

/// Fourier cosine coefficients `V_k`, k = 0..=kmax, of the multi-channel
/// potential, from the trapezoid rule on a uniform 2^12-point phase grid.
fn multichannel_fourier(channels: &[Channel], kmax: usize) -> Vec<f64> {
    let m = FOURIER_GRID;
    let potential: Vec<f64> = (0..m)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let s2 = (0.5 * phi).sin().powi(2);
            -channels
                .iter()
                .map(|c| c.gap_ghz * (1.0 - c.transmission * s2).max(0.0).sqrt())
                .sum::<f64>()
        })
        .collect();
    (0..=kmax)
        .map(|k| {
            let s: f64 = potential
                .iter()
                .enumerate()
                .map(|(j, v)| v * (2.0 * std::f64::consts::PI * (k * j % m) as f64 / m as f64).cos())
                .sum();
            s / m as f64
        })
        .collect()
}

fn levels_with_cutoff(params: &TransmonParams, ng: f64, n_levels: usize, cutoff: usize) -> Vec<f64> {
    hamiltonian(&params.junction, params.ec_ghz, ng, cutoff).lowest_eigenvalues(n_levels)
}

/// Lowest `n_levels` eigen-energies at offset charge `ng`.
pub fn diagonalize(params: &TransmonParams, ng: f64, n_levels: usize) -> Result<SpectrumResult> {
    diagonalize_with(params, ng, n_levels, SolverOptions::default())
}

pub fn diagonalize_with(
    params: &TransmonParams,
    ng: f64,
    n_levels: usize,
    opts: SolverOptions,
) -> Result<SpectrumResult> {
    if n_levels < 2 {
        return Err(Error::input("need at least two levels"));
    }
    params.validate()?;
    let want = n_levels.max(3);
    let levels = levels_with_cutoff(params, ng, want, opts.charge_cutoff);
    if opts.check_convergence {
        let bigger = opts.charge_cutoff + opts.charge_cutoff.div_ceil(4);
        let check = levels_with_cutoff(params, ng, want, bigger);
        let shift = levels
            .iter()
            .zip(&check)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if shift > CONVERGENCE_TOL_GHZ {
            return Err(Error::NonConvergence(format!(
                "levels shift by {shift:.3e} GHz when the charge cutoff grows from {} to {bigger}",
                opts.charge_cutoff
            )));
        }
    }
    Ok(spectrum_from_levels(ng, levels, n_levels))
}

fn spectrum_from_levels(ng: f64, mut levels: Vec<f64>, n_levels: usize) -> SpectrumResult {
    let f01 = levels[1] - levels[0];
    let f02_half = 0.5 * (levels[2] - levels[0]);
    levels.truncate(n_levels);
    SpectrumResult {
        ng,
        levels,
        f01,
        f02_half,
    }
}

/// Unchecked `(f01, f02/2)` for inner loops (fits, dispersion scans).
pub(crate) fn transitions(params: &TransmonParams, ng: f64, cutoff: usize) -> (f64, f64) {
    let l = levels_with_cutoff(params, ng, 3, cutoff);
    (l[1] - l[0], 0.5 * (l[2] - l[0]))
}

fn transition(params: &TransmonParams, ng: f64, pair: (usize, usize)) -> f64 {
    let l = levels_with_cutoff(params, ng, pair.1 + 1, DEFAULT_CHARGE_CUTOFF);
    l[pair.1] - l[pair.0]
}

/// Peak-to-peak variation of `f_ij` over one offset-charge period.
pub fn charge_dispersion(params: &TransmonParams, level_pair: (usize, usize)) -> Result<f64> {
    charge_dispersion_with_grid(params, level_pair, 21)
}

pub fn charge_dispersion_with_grid(
    params: &TransmonParams,
    level_pair: (usize, usize),
    grid_points: usize,
) -> Result<f64> {
    let (i, j) = level_pair;
    if i >= j {
        return Err(Error::input(format!("level pair must satisfy i < j, got ({i},{j})")));
    }
    if grid_points < 3 {
        return Err(Error::input("dispersion grid needs at least 3 points"));
    }
    // converged basis is checked once at the symmetric point
    diagonalize(params, 0.0, j + 1)?;
    let f = |ng: f64| transition(params, ng, level_pair);
    let step = 1.0 / (grid_points - 1) as f64;
    let values: Vec<f64> = (0..grid_points).map(|k| f(k as f64 * step)).collect();
    let (imax, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let (imin, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    let bracket = |k: usize| (k as f64 * step - step, k as f64 * step + step);
    let (a, b) = bracket(imax);
    let fmax = (-golden_section(|x| -f(x), a, b, 1e-4).1).max(values[imax]);
    let (a, b) = bracket(imin);
    let fmin = golden_section(f, a, b, 1e-4).1.min(values[imin]);
    Ok(fmax - fmin)
}

/// Minimises `f` on `[a, b]`; returns `(x, f(x))`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(c, fc), (d, fd), (x, fx)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// Effective Josephson energy (GHz·h): the curvature of the junction
/// potential at φ = 0.
pub fn effective_ej(junction: &JunctionModel) -> f64 {
    match junction {
        JunctionModel::Cosine { ej_ghz } => *ej_ghz,
        JunctionModel::MultiChannel { channels } => {
            channels.iter().map(|c| c.gap_ghz * c.transmission / 4.0).sum()
        }
        JunctionModel::ResonantAbs { eff_gap_ghz, transmission } => eff_gap_ghz * transmission / 4.0,
    }
}

/// Quasiparticle sensitivity `D` in ns⁻¹, so that `Γ₁ = D · x_qp`.
///
/// `D = (16 EJ / π) sqrt(Ec / 8EJ) sqrt(Δ / 2 h f01)` with every energy in
/// frequency units, giving an ordinary (not angular) rate. Written with ħ in
/// the prefactor the same expression comes out 2π larger; the ordinary-rate
/// form is the one that reproduces the tabulated sensitivities of the
/// reference device (7.3–7.5 ns⁻¹).
pub fn qp_sensitivity_d(params: &TransmonParams, f01_ghz: f64) -> f64 {
    let ej = effective_ej(&params.junction);
    let ec = params.ec_ghz;
    let gap = uev_to_ghz(params.lead_gap_uev);
    if ej <= 0.0 || f01_ghz <= 0.0 {
        return 0.0;
    }
    16.0 * ej / std::f64::consts::PI * (ec / (8.0 * ej)).sqrt() * (gap / (2.0 * f01_ghz)).sqrt()
}
