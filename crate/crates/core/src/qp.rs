//! Quasiparticle density dynamics and the qubit observables derived from it.
//!
//! `dx/dt = g(t) - x/τ_ss - r x²`, with `Γ₁ = D·x`. `D` is carried in ns⁻¹
//! and rates come out in µs⁻¹.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpModel {
    pub tau_ss_us: f64,
    /// Recombination coefficient, µs⁻¹ per unit x_qp.
    #[serde(default)]
    pub r_per_us: f64,
    /// x_qp generation rate per unit pair-breaking power (per µeV).
    pub kappa: f64,
    /// Sensitivity `D`, ns⁻¹.
    pub d_per_ns: f64,
    pub gamma_baseline_per_us: f64,
    /// Ratio of quasiparticle-induced up- to down-transition rates.
    #[serde(default = "one")]
    pub upconvert_fraction: f64,
    /// Excited population with the injector off; sets a constant background
    /// excitation rate.
    #[serde(default)]
    pub residual_excited_pop: f64,
}

fn one() -> f64 {
    1.0
}

impl QpModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ss_us > 0.0) || !(self.r_per_us >= 0.0) || !(self.kappa > 0.0) || !(self.d_per_ns > 0.0) {
            return Err(Error::validation("qp model needs tau_ss > 0, r >= 0, kappa > 0, D > 0"));
        }
        if !(self.gamma_baseline_per_us >= 0.0) {
            return Err(Error::validation("baseline loss rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.upconvert_fraction) || !(0.0..0.5).contains(&self.residual_excited_pop) {
            return Err(Error::validation("upconvert_fraction must lie in [0,1] and residual_excited_pop in [0, 0.5)"));
        }
        Ok(())
    }

    /// Generation rate (µs⁻¹) produced by pair-breaking power `p` (µeV/µs).
    pub fn generation(&self, power: f64) -> f64 {
        self.kappa * power
    }

    /// Steady-state density for constant generation `g`.
    pub fn steady_state(&self, g: f64) -> f64 {
        let inv_tau = 1.0 / self.tau_ss_us;
        if self.r_per_us == 0.0 {
            g * self.tau_ss_us
        } else {
            // root of r x² + x/τ - g = 0 written without cancellation
            2.0 * g / (inv_tau + (inv_tau * inv_tau + 4.0 * self.r_per_us * g).sqrt())
        }
    }

    fn background_excitation(&self) -> f64 {
        let p = self.residual_excited_pop;
        p / (1.0 - p) * self.gamma_baseline_per_us
    }
}

/// Piecewise-constant generation rate: `values[i]` on `[edges[i], edges[i+1])`,
/// zero outside `[edges[0], edges[last])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    edges: Vec<f64>,
    values: Vec<f64>,
}

impl Generation {
    pub fn new(edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if edges.len() != values.len() + 1 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("generation needs strictly increasing edges, one more than values"));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::input("generation rate must be non-negative"));
        }
        Ok(Self { edges, values })
    }

    pub fn constant(g: f64, until: f64) -> Result<Self> {
        Self::new(vec![0.0, until], vec![g])
    }

    pub fn pulse(g: f64, start: f64, duration: f64) -> Result<Self> {
        Self::new(vec![start, start + duration], vec![g])
    }

    pub fn zero() -> Self {
        Self { edges: vec![0.0, 1.0], values: vec![0.0] }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t < self.edges[0] || t >= *self.edges.last().unwrap() {
            return 0.0;
        }
        let i = self.edges.partition_point(|&e| e <= t) - 1;
        self.values[i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpTrace {
    pub times: Vec<f64>,
    pub xqp: Vec<f64>,
    pub gamma1: Vec<f64>,
}

impl QpTrace {
    /// CSV `t_us,xqp,gamma1_per_us`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_us,xqp,gamma1_per_us\n");
        for i in 0..self.times.len() {
            s.push_str(&format!("{},{:e},{:e}\n", self.times[i], self.xqp[i], self.gamma1[i]));
        }
        s
    }
}

/// Integrates the rate equation from `x0` at `t_grid[0]` with fixed-step RK4,
/// never stepping across a generation edge or an output time.
pub fn evolve_xqp(model: &QpModel, generation: &Generation, t_grid: &[f64], x0: f64) -> Result<QpTrace> {
    model.validate()?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("time grid must be non-empty and strictly increasing"));
    }
    if !(x0 >= 0.0) {
        return Err(Error::input("initial density must be >= 0"));
    }
    let tau = model.tau_ss_us;
    let r = model.r_per_us;
    let x_scale = x0.max(model.steady_state(generation.max()));
    let mut h_max = tau / 50.0;
    if r > 0.0 && x_scale > 0.0 {
        h_max = h_max.min(0.02 / (r * x_scale));
    }
    let rhs = |x: f64, g: f64| g - x / tau - r * x * x;

    let mut stops: Vec<f64> = generation
        .edges()
        .iter()
        .copied()
        .filter(|&e| e > t_grid[0] && e < *t_grid.last().unwrap())
        .chain(t_grid.iter().copied())
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut xs = Vec::with_capacity(t_grid.len());
    let mut x = x0;
    let mut next_out = 0;
    let mut t = stops[0];
    let mut record = |t: f64, x: f64, xs: &mut Vec<f64>| {
        if next_out < t_grid.len() && t == t_grid[next_out] {
            xs.push(x);
            next_out += 1;
        }
    };
    record(t, x, &mut xs);
    for &stop in &stops[1..] {
        // generation is constant on (t, stop)
        let g = generation.at(0.5 * (t + stop));
        let n = ((stop - t) / h_max).ceil().max(1.0) as usize;
        let h = (stop - t) / n as f64;
        for _ in 0..n {
            let k1 = rhs(x, g);
            let k2 = rhs(x + 0.5 * h * k1, g);
            let k3 = rhs(x + 0.5 * h * k2, g);
            let k4 = rhs(x + h * k3, g);
            let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if h * (1.0 / tau + 2.0 * r * x.max(next)) > 0.1 {
                return Err(Error::Numerical(format!("rate-equation step {h} µs is too coarse")));
            }
            x = next.max(0.0);
        }
        t = stop;
        record(t, x, &mut xs);
    }
    let gamma1 = xs.iter().map(|&x| gamma1_from_xqp(model, x)).collect();
    Ok(QpTrace { times: t_grid.to_vec(), xqp: xs, gamma1 })
}

/// `Γ₁ = D·x_qp` in µs⁻¹.
pub fn gamma1_from_xqp(model: &QpModel, xqp: f64) -> f64 {
    model.d_per_ns * 1e3 * xqp
}

/// Loss rate added by injection: `1/T1(biased) - 1/T1(baseline)`.
pub fn added_gamma1(t1_biased_us: f64, t1_baseline_us: f64) -> Result<f64> {
    if !(t1_biased_us > 0.0) || !(t1_baseline_us > 0.0) {
        return Err(Error::input("T1 values must be positive"));
    }
    Ok(1.0 / t1_biased_us - 1.0 / t1_baseline_us)
}

/// Two-level populations `(P_g, P_e)` at density `xqp`.
pub fn populations(model: &QpModel, xqp: f64) -> (f64, f64) {
    let loss = gamma1_from_xqp(model, xqp);
    let down = model.gamma_baseline_per_us + loss;
    let up = model.upconvert_fraction * loss + model.background_excitation();
    let pe = if up + down > 0.0 { up / (up + down) } else { 0.0 };
    (1.0 - pe, pe)
}

/// Rabi contrast `|P_g - P_e|`.
pub fn rabi_amplitude(pg: f64, pe: f64) -> f64 {
    (pg - pe).abs()
}

/// Rabi contrast normalised to the injector-off populations.
pub fn normalized_rabi_amplitude(pg: f64, pe: f64, pg0: f64, pe0: f64) -> Result<f64> {
    let a0 = rabi_amplitude(pg0, pe0);
    if a0 == 0.0 {
        return Err(Error::Numerical("zero-bias Rabi amplitude is zero; cannot normalise".into()));
    }
    Ok(rabi_amplitude(pg, pe) / a0)
}

/// `A e^{-t/τ} cos(2π f t)`; `t` in µs, `f` in MHz.
pub fn synth_rabi_trace(amplitude: f64, decay_us: f64, f_rabi_mhz: f64, t_grid: &[f64]) -> Vec<f64> {
    t_grid
        .iter()
        .map(|&t| amplitude * (-t / decay_us).exp() * (2.0 * std::f64::consts::PI * f_rabi_mhz * t).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub mu_g: f64,
    pub mu_e: f64,
    pub sigma: f64,
}

/// Single-shot readout values drawn from the two-Gaussian mixture.
pub fn synth_histogram(pg: f64, readout: Readout, n_shots: usize, seed: u64) -> Result<Vec<f64>> {
    if !(readout.sigma > 0.0) || n_shots == 0 || !(0.0..=1.0).contains(&pg) {
        return Err(Error::input("need sigma > 0, n_shots >= 1 and P_g in [0, 1]"));
    }
    let mut rng = rng::stream(seed, 0);
    let noise = Normal::new(0.0, readout.sigma).expect("sigma checked");
    Ok((0..n_shots)
        .map(|_| {
            let mu = if rng.random::<f64>() < pg { readout.mu_g } else { readout.mu_e };
            mu + noise.sample(&mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(tau: f64, r: f64) -> QpModel {
        QpModel {
            tau_ss_us: tau,
            r_per_us: r,
            kappa: 1.0,
            d_per_ns: 7.4,
            gamma_baseline_per_us: 1.0 / 3.8,
            upconvert_fraction: 1.0,
            residual_excited_pop: 0.0,
        }
    }

    #[test]
    fn steady_state_value() {
        let m = model(80.0, 0.0);
        let g = 6.25e-6;
        assert!((m.steady_state(g) - 5e-4).abs() < 1e-15);
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 10.0).collect();
        let tr = evolve_xqp(&m, &Generation::constant(g, 2000.0).unwrap(), &grid, 0.0).unwrap();
        let last = *tr.xqp.last().unwrap();
        assert!((last - 5e-4).abs() / 5e-4 < 1e-5, "{last}");
    }

    #[test]
    fn quadratic_steady_state_solves_balance() {
        let m = model(80.0, 50.0);
        let g = 1e-5;
        let x = m.steady_state(g);
        assert!((g - x / 80.0 - 50.0 * x * x).abs() < 1e-18);
    }

    #[test]
    fn free_decay_is_exponential() {
        let m = model(80.0, 0.0);
        let grid: Vec<f64> = (0..=60).map(|k| k as f64 * 5.0).collect();
        let tr = evolve_xqp(&m, &Generation::zero(), &grid, 1e-3).unwrap();
        for (t, x) in grid.iter().zip(&tr.xqp) {
            let exact = 1e-3 * (-t / 80.0).exp();
            assert!((x - exact).abs() / exact < 1e-6);
        }
    }

    #[test]
    fn recombination_only_decay() {
        let m = model(1e12, 2e3);
        let x0 = 1e-3;
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.2).collect();
        let tr = evolve_xqp(&m, &Generation::zero(), &grid, x0).unwrap();
        for (t, x) in grid.iter().zip(&tr.xqp) {
            let exact = x0 / (1.0 + 2e3 * x0 * t);
            assert!((x - exact).abs() / exact < 1e-4);
        }
    }

    #[test]
    fn post_pulse_log_is_affine() {
        let m = model(80.0, 0.0);
        let gen = Generation::pulse(1e-5, 0.0, 20.0).unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| 20.0 + k as f64 * 5.0).collect();
        let mut full = vec![0.0];
        full.extend(&grid);
        let tr = evolve_xqp(&m, &gen, &full, 0.0).unwrap();
        let x20 = tr.xqp[1];
        for (t, x) in grid.iter().zip(&tr.xqp[1..]) {
            let predicted = x20 * (-(t - 20.0) / 80.0).exp();
            assert!((x - predicted).abs() / predicted < 1e-6);
        }
        // rise during the pulse follows 1 - e^{-t/τ}
        assert!((x20 - 1e-5 * 80.0 * (1.0 - (-0.25f64).exp())).abs() / x20 < 1e-8);
    }

    #[test]
    fn gamma_conversions() {
        let m = model(80.0, 0.0);
        assert!((gamma1_from_xqp(&m, 5e-4) - 3.7).abs() < 1e-12);
        assert!((added_gamma1(1.3, 3.8).unwrap() - 0.506).abs() < 5e-4);
        assert_eq!(added_gamma1(3.8, 3.8).unwrap(), 0.0);
        assert!(added_gamma1(0.0, 3.8).is_err());
    }

    #[test]
    fn population_limits() {
        let mut m = model(80.0, 0.0);
        m.residual_excited_pop = 0.07;
        let (pg, pe) = populations(&m, 0.0);
        assert!((pg - 0.93).abs() < 1e-12 && (pe - 0.07).abs() < 1e-12);
        m.residual_excited_pop = 0.0;
        let (_, pe) = populations(&m, 1.0);
        assert!((pe - 0.5).abs() < 1e-3);
        let x = m.gamma_baseline_per_us / (m.d_per_ns * 1e3);
        let (_, pe) = populations(&m, x);
        assert!((pe - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rabi_normalisation() {
        assert_eq!(normalized_rabi_amplitude(0.93, 0.07, 0.93, 0.07).unwrap(), 1.0);
        let a = normalized_rabi_amplitude(0.35, 0.65, 0.93, 0.07).unwrap();
        assert!((a - 0.3 / 0.86).abs() < 1e-12 && (a - 0.349).abs() < 1e-3);
        assert_eq!(normalized_rabi_amplitude(0.5, 0.5, 0.93, 0.07).unwrap(), 0.0);
        assert!(normalized_rabi_amplitude(0.9, 0.1, 0.5, 0.5).is_err());
    }

    #[test]
    fn histogram_of_pure_ground_state() {
        let r = Readout { mu_g: -1.0, mu_e: 1.0, sigma: 0.2 };
        let shots = synth_histogram(1.0, r, 10_000, 5).unwrap();
        let mean = shots.iter().sum::<f64>() / shots.len() as f64;
        assert!((mean + 1.0).abs() < 3.0 * 0.2 / 100.0);
        assert_eq!(shots, synth_histogram(1.0, r, 10_000, 5).unwrap());
    }

    #[test]
    fn histogram_round_trips_through_fit() {
        let r = Readout { mu_g: 0.0, mu_e: 6.0, sigma: 1.0 };
        for (pg, seed) in [(0.93, 1), (0.35, 2)] {
            let shots = synth_histogram(pg, r, 10_000, seed).unwrap();
            let fit = crate::fit::fit_double_gaussian(&shots).unwrap();
            assert!((fit.fit.get("p_g") - pg).abs() < 0.02, "{pg}: {}", fit.fit.get("p_g"));
        }
    }

    proptest! {
        #[test]
        fn density_stays_non_negative(
            values in proptest::collection::vec(0.0f64..1e-4, 1..6),
            tau in 5.0f64..200.0,
            r in 0.0f64..100.0,
        ) {
            let edges: Vec<f64> = (0..=values.len()).map(|k| k as f64 * 7.0).collect();
            let gen = Generation::new(edges, values).unwrap();
            let grid: Vec<f64> = (0..=80).map(|k| k as f64 * 0.75).collect();
            let tr = evolve_xqp(&model(tau, r), &gen, &grid, 0.0).unwrap();
            prop_assert!(tr.xqp.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn steady_state_monotone(g in 0.0f64..1e-3, dg in 1e-9f64..1e-3, tau in 1.0f64..200.0, r in 0.0f64..50.0) {
            let m = model(tau, r);
            prop_assert!(m.steady_state(g + dg) > m.steady_state(g));
            if g > 0.0 {
                prop_assert!(model(tau * 1.1, r).steady_state(g) > m.steady_state(g));
            }
        }

        #[test]
        fn populations_monotone(x in 0.0f64..1e-3, dx in 1e-9f64..1e-3) {
            let mut m = model(80.0, 0.0);
            m.residual_excited_pop = 0.07;
            let (pg1, pe1) = populations(&m, x);
            let (pg2, pe2) = populations(&m, x + dx);
            prop_assert!(pe2 >= pe1);
            if pg1 > pe1 {
                prop_assert!(rabi_amplitude(pg2, pe2) <= rabi_amplitude(pg1, pe1));
            }
        }
    }
}
