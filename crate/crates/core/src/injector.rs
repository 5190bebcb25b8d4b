//! Voltage-biased superconductor-insulator-superconductor injector: its
//! quasiparticle I-V curve and the phonons it emits.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{BOLTZMANN_UEV_PER_MK, CHARGES_PER_US_PER_NA};

/// Relaxation stops once the hot quasiparticle is this close to the gap edge;
/// the remainder leaves as one last (harmless) phonon.
const RELAX_RESIDUAL_UEV: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectorParams {
    #[serde(rename = "gap_ueV")]
    pub gap: f64,
    pub normal_resistance_kohm: f64,
    #[serde(default = "default_dynes")]
    pub dynes: f64,
    #[serde(default = "default_temperature")]
    pub temperature_mk: f64,
    /// Probability that a relaxed injected pair recombines into a 2Δ phonon.
    #[serde(default = "default_recombine")]
    pub recombine_prob: f64,
}

fn default_dynes() -> f64 {
    1e-3
}
fn default_temperature() -> f64 {
    20.0
}
fn default_recombine() -> f64 {
    1.0
}

impl Default for InjectorParams {
    fn default() -> Self {
        Self {
            gap: 270.0,
            normal_resistance_kohm: 50.0,
            dynes: default_dynes(),
            temperature_mk: default_temperature(),
            recombine_prob: default_recombine(),
        }
    }
}

impl InjectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0) || !(self.normal_resistance_kohm > 0.0) {
            return Err(Error::validation("injector gap and normal resistance must be positive"));
        }
        if !(self.dynes > 0.0 && self.dynes < 0.1) {
            return Err(Error::validation(format!(
                "dynes parameter must be small and positive, got {}",
                self.dynes
            )));
        }
        if !(self.temperature_mk > 0.0) || !(0.0..=1.0).contains(&self.recombine_prob) {
            return Err(Error::validation("injector temperature must be > 0 and recombine_prob in [0, 1]"));
        }
        Ok(())
    }

    /// Pair-breaking threshold 2Δ/e in mV.
    pub fn threshold_mv(&self) -> f64 {
        2.0 * self.gap / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasProgram {
    Constant { v_bias_mv: f64 },
    Pulse { amplitude_mv: f64, duration_us: f64, delays_us: Vec<f64> },
}

impl BiasProgram {
    pub fn validate(&self) -> Result<()> {
        match self {
            BiasProgram::Constant { v_bias_mv } if v_bias_mv.is_finite() => Ok(()),
            BiasProgram::Pulse { duration_us, delays_us, .. } => {
                if !(*duration_us > 0.0) {
                    return Err(Error::validation("pulse duration must be > 0"));
                }
                if delays_us.is_empty() || delays_us.windows(2).any(|w| w[1] <= w[0]) || delays_us[0] < 0.0 {
                    return Err(Error::validation("pulse delays must be non-negative and strictly increasing"));
                }
                Ok(())
            }
            _ => Err(Error::validation("bias must be finite")),
        }
    }
}

/// Dynes-broadened BCS density of states, normalised to the normal state.
pub fn dynes_dos(energy: f64, gap: f64, dynes: f64) -> f64 {
    let z = Complex64::new(energy, dynes * gap);
    (z / (z * z - gap * gap).sqrt()).re.abs()
}

fn fermi(energy: f64, kt: f64) -> f64 {
    0.5 * (1.0 - (0.5 * energy / kt).tanh())
}

// 8-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        s += w * (f(c - h * x) + f(c + h * x));
    }
    s * h
}

/// Integrates over `[a, b]` with panels graded geometrically towards both
/// ends, where the integrand's peaks sit.
fn graded(f: &impl Fn(f64) -> f64, a: f64, b: f64, finest: f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    if len <= 4.0 * finest {
        return gauss_legendre(f, a, b);
    }
    let half = 0.5 * len;
    // panel edges at finest, 2·finest, 4·finest, ... from each end
    let mut edges = vec![0.0];
    let mut d = finest;
    while d < half {
        edges.push(d);
        d *= 1.6;
    }
    edges.push(half);
    let mut s = 0.0;
    for w in edges.windows(2) {
        s += gauss_legendre(f, a + w[0], a + w[1]);
        s += gauss_legendre(f, b - w[1], b - w[0]);
    }
    s
}

/// Quasiparticle tunnel current in nA at bias `v_bias` (mV).
pub fn iv_current(params: &InjectorParams, v_bias: f64) -> f64 {
    if v_bias == 0.0 {
        return 0.0;
    }
    if v_bias < 0.0 {
        return -iv_current(params, -v_bias);
    }
    let ev = 1000.0 * v_bias;
    let gap = params.gap;
    let kt = BOLTZMANN_UEV_PER_MK * params.temperature_mk;
    let integrand = |e: f64| {
        dynes_dos(e, gap, params.dynes)
            * dynes_dos(e + ev, gap, params.dynes)
            * (fermi(e, kt) - fermi(e + ev, kt))
    };
    let margin = 40.0 * kt;
    let (lo, hi) = (-ev - margin, margin);
    let mut cuts = vec![lo, hi, -gap, gap, -ev - gap, -ev + gap, 0.0, -ev];
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let finest = 0.01 * params.dynes * gap;
    let total: f64 = cuts.windows(2).map(|w| graded(&integrand, w[0], w[1], finest)).sum();
    // µeV / kΩ is nA
    total / params.normal_resistance_kohm
}

/// Phonon output of the injector at a fixed bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhononSource {
    pub v_bias_mv: f64,
    pub current_na: f64,
    pub gap: f64,
    pub recombine_prob: f64,
}

/// Phonons released by one injected quasiparticle pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairEmission {
    pub phonons: Vec<f64>,
    /// Energy left in the injector when the pair does not recombine.
    pub retained: f64,
}

impl PairEmission {
    pub fn total(&self) -> f64 {
        self.phonons.iter().sum::<f64>() + self.retained
    }
}

/// Builds the source at `v_bias` (mV) carrying `current` (nA). Sub-gap
/// biases give an empty source.
pub fn emission_spectrum(params: &InjectorParams, v_bias: f64, current: f64) -> PhononSource {
    let above = v_bias.abs() >= params.threshold_mv();
    PhononSource {
        v_bias_mv: v_bias,
        current_na: if above { current } else { 0.0 },
        gap: params.gap,
        recombine_prob: params.recombine_prob,
    }
}

impl PhononSource {
    pub fn is_empty(&self) -> bool {
        self.current_na == 0.0
    }

    /// Injected pairs per µs.
    pub fn pair_rate(&self) -> f64 {
        self.current_na.abs() * CHARGES_PER_US_PER_NA
    }

    /// Energy released per pair, |eV| in µeV.
    pub fn pair_energy(&self) -> f64 {
        1000.0 * self.v_bias_mv.abs()
    }

    /// Emitted power I·V in µeV/µs.
    pub fn power(&self) -> f64 {
        self.pair_rate() * self.pair_energy()
    }

    /// Energy of the hot quasiparticle, eV - Δ.
    pub fn hot_qp_energy(&self) -> f64 {
        self.pair_energy() - self.gap
    }

    /// Largest phonon the hot quasiparticle can emit on its way to the gap edge.
    pub fn max_relaxation_phonon(&self) -> f64 {
        (self.pair_energy() - 2.0 * self.gap).max(0.0)
    }

    pub fn recombination_energy(&self) -> f64 {
        2.0 * self.gap
    }

    /// Samples the phonons of one pair: the hot quasiparticle relaxes in
    /// uniformly drawn steps, then the pair recombines.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> PairEmission {
        let mut out = PairEmission::default();
        if self.is_empty() {
            return out;
        }
        let mut excess = self.max_relaxation_phonon();
        while excess > RELAX_RESIDUAL_UEV {
            let step = excess * (1.0 - rng.random::<f64>());
            out.phonons.push(step);
            excess -= step;
        }
        if excess > 0.0 {
            out.phonons.push(excess);
        }
        if rng.random::<f64>() < self.recombine_prob {
            out.phonons.push(self.recombination_energy());
        } else {
            out.retained = self.recombination_energy();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn p() -> InjectorParams {
        InjectorParams::default()
    }

    #[test]
    fn zero_bias_zero_current() {
        assert_eq!(iv_current(&p(), 0.0), 0.0);
    }

    #[test]
    fn subgap_current_is_suppressed() {
        let i1 = iv_current(&p(), 1.0);
        let i04 = iv_current(&p(), 0.4);
        assert!(i1 > 0.0);
        assert!(i04.abs() < 1e-3 * i1, "{i04} vs {i1}");
    }

    // Independent oracle: plain midpoint rule on a very fine uniform grid.
    fn brute_current(params: &InjectorParams, v: f64) -> f64 {
        let ev = 1000.0 * v;
        let kt = BOLTZMANN_UEV_PER_MK * params.temperature_mk;
        let (lo, hi) = (-ev - 40.0 * kt, 40.0 * kt);
        let n = 2_000_000;
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let e = lo + (k as f64 + 0.5) * h;
            s += dynes_dos(e, params.gap, params.dynes)
                * dynes_dos(e + ev, params.gap, params.dynes)
                * (fermi(e, kt) - fermi(e + ev, kt));
        }
        s * h / params.normal_resistance_kohm
    }

    #[test]
    fn current_matches_fine_grid_oracle() {
        // larger broadening keeps the brute-force grid honest
        let params = InjectorParams { dynes: 2e-2, ..p() };
        for v in [0.7, 1.0, 2.5] {
            let a = iv_current(&params, v);
            let b = brute_current(&params, v);
            assert!((a - b).abs() / b < 1e-4, "{v}: {a} vs {b}");
        }
    }

    #[test]
    fn approaches_ohmic_line_at_high_bias() {
        let i = iv_current(&p(), 10.0);
        let ohmic = 10.0 / 50.0 * 1000.0;
        assert!((i - ohmic).abs() / ohmic < 0.01, "{i}");
    }

    #[test]
    fn conductance_peaks_at_twice_the_gap() {
        let step = 0.002;
        let v: Vec<f64> = (0..=500).map(|k| 0.3 + step * k as f64).collect();
        let i: Vec<f64> = v.iter().map(|&x| iv_current(&p(), x)).collect();
        let (k, _) = i
            .windows(2)
            .map(|w| (w[1] - w[0]) / step)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let v_peak = 0.5 * (v[k] + v[k + 1]);
        assert!((v_peak - 0.54).abs() <= step, "peak at {v_peak}");
    }

    #[test]
    fn odd_and_monotone() {
        let params = p();
        let mut prev = 0.0;
        for k in 1..=200 {
            let v = 3.0 * k as f64 / 200.0;
            let i = iv_current(&params, v);
            assert_eq!(iv_current(&params, -v), -i);
            assert!(i >= prev, "non-monotone at {v}");
            prev = i;
        }
    }

    #[test]
    fn source_energies_at_one_millivolt() {
        let s = emission_spectrum(&p(), 1.0, 10.0);
        assert_eq!(s.hot_qp_energy(), 730.0);
        assert_eq!(s.max_relaxation_phonon(), 460.0);
        assert_eq!(s.recombination_energy(), 540.0);
        let mut r = rng::stream(1, 0);
        for _ in 0..1000 {
            let e = s.sample_pair(&mut r);
            assert!(e.phonons.iter().all(|&x| x > 0.0 && x <= 540.0));
        }
    }

    #[test]
    fn subgap_source_is_empty() {
        let s = emission_spectrum(&p(), 0.5, 1e-6);
        assert!(s.is_empty());
        assert_eq!(s.power(), 0.0);
        assert!(s.sample_pair(&mut rng::stream(0, 0)).phonons.is_empty());
    }

    #[test]
    fn pair_bookkeeping_closes() {
        let v = 2.5;
        let params = InjectorParams { recombine_prob: 0.7, ..p() };
        let current = iv_current(&params, v);
        let s = emission_spectrum(&params, v, current);
        let n = 1_000_000;
        let mut r = rng::stream(3, 0);
        let mut emitted = 0.0;
        for _ in 0..n {
            let e = s.sample_pair(&mut r);
            let tot = e.total();
            assert!(tot >= 2.0 * s.gap && tot <= 2.0 * s.pair_energy());
            emitted += e.total();
        }
        let per_pair = emitted / n as f64;
        assert!((per_pair - s.pair_energy()).abs() / s.pair_energy() < 1e-9);
        let power = per_pair * s.pair_rate();
        let iv = current * v * 1000.0 * CHARGES_PER_US_PER_NA;
        assert!((power - iv).abs() / iv < 0.01);
    }
}
