//! Declarative experiments: a TOML scenario file names the chip, the injector,
//! the cascade settings and the per-qubit quasiparticle models, plus one
//! section per experiment kind. Each runner returns a [`ResultTable`].
//!
//! Every table carries the seed and a SHA-256 hash of the fully resolved
//! configuration (layout included), and rerunning with identical inputs
//! reproduces the CSV byte for byte.

mod run;
pub mod svg;
mod table;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::CascadeConfig;
use crate::chip::{self, ChipLayout};
use crate::error::{Error, Result};
use crate::injector::{BiasProgram, InjectorParams};
use crate::qp::{QpModel, Readout};
use crate::transmon;

pub use run::{
    run_dc_sweep, run_field_toggle, run_population_sweep, run_pulse_recovery, run_ratio_report, DcSweepResult,
    FieldToggleResult, PopulationResult, PulseResult, ToggleDelta,
};
pub use table::{Column, ResultTable};

pub const DEFAULT_SCENARIO_TOML: &str = include_str!("../../../../configs/default_scenario.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Layout file, relative to the scenario file. The built-in default
    /// layout is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default)]
    pub injector: InjectorParams,
    #[serde(default)]
    pub cascade: CascadeConfig,
    pub qp: QpSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc_sweep: Option<DcSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseRecovery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_toggle: Option<FieldToggle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_report: Option<RatioReport>,
}

/// Shared quasiparticle settings plus per-qubit overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpSection {
    /// x_qp generation rate per unit pair-breaking power, 1/µeV. Calibrated.
    pub kappa: f64,
    #[serde(default)]
    pub r_per_us: f64,
    pub gamma_baseline_per_us: f64,
    #[serde(default = "one")]
    pub upconvert_fraction: f64,
    #[serde(default)]
    pub residual_excited_pop: f64,
    pub qubits: BTreeMap<String, QubitQp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitQp {
    pub tau_ss_us: f64,
    /// Sensitivity override; computed from the transmon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_per_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_baseline_per_us: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSweep {
    pub bias_mv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseRecovery {
    pub amplitude_mv: f64,
    pub duration_us: f64,
    /// Delays after the end of the pulse.
    pub delays_us: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldToggle {
    /// Film whose gap is overridden.
    #[serde(default = "default_trap")]
    pub material: String,
    /// First entry is the reference; 0 turns the film normal.
    #[serde(rename = "gap_overrides_ueV")]
    pub gap_overrides: Vec<f64>,
    /// Bias grid; the dc-sweep grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_mv: Option<Vec<f64>>,
    /// Qubits whose δΓ₁ is reported.
    #[serde(default = "default_toggle_qubits")]
    pub qubits: Vec<String>,
    /// absorb_prob of the film in the normal state; unchanged when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_absorb_prob: Option<f64>,
    /// Sensitivity control: the normal film's absorb_prob is multiplied by
    /// this factor and the toggle rerun. No control run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_absorb_scale: Option<f64>,
}

fn default_trap() -> String {
    "Al".to_string()
}

fn default_toggle_qubits() -> Vec<String> {
    vec!["Near_Al".to_string(), "Far_Al".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSweep {
    pub bias_mv: Vec<f64>,
    pub readout: Readout,
    /// Shots per synthetic readout histogram; 0 skips the histogram fits.
    #[serde(default)]
    pub n_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioReport {
    /// dc-sweep CSV to analyse, relative to the scenario file. A fresh dc
    /// sweep is run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default = "default_floor")]
    pub noise_floor_per_us: f64,
}

fn default_floor() -> f64 {
    1e-3
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation(format!("{name} must be non-empty and strictly increasing")));
    }
    Ok(())
}

/// A scenario with its layout loaded and per-qubit models resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub layout: ChipLayout,
    /// Models in layout qubit order.
    pub qp_models: Vec<QpModel>,
    /// Directory that relative paths resolve against.
    pub base_dir: Option<std::path::PathBuf>,
}

impl Scenario {
    pub fn from_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let layout = match &config.layout {
            None => chip::default_layout(),
            Some(p) => {
                let path = base_dir.map(|d| d.join(p)).unwrap_or_else(|| p.into());
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                chip::load_layout(&text)?
            }
        };
        Self::new(config, layout, base_dir)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text, path.parent())
    }

    pub fn new(config: ScenarioConfig, layout: ChipLayout, base_dir: Option<&Path>) -> Result<Self> {
        layout.validate()?;
        let qp_models = resolve_qp(&config.qp, &layout)?;
        let s = Self { config, layout, qp_models, base_dir: base_dir.map(Path::to_path_buf) };
        s.validate()?;
        Ok(s)
    }

    /// Re-resolves the quasiparticle models after the config or layout was
    /// edited in place, and validates everything again.
    pub fn refresh(&mut self) -> Result<()> {
        self.layout.validate()?;
        self.qp_models = resolve_qp(&self.config.qp, &self.layout)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.injector.validate()?;
        c.cascade.validate(&self.layout)?;
        if let Some(d) = &c.dc_sweep {
            check_grid("dc_sweep.bias_mv", &d.bias_mv)?;
        }
        if let Some(p) = &c.pulse {
            BiasProgram::Pulse {
                amplitude_mv: p.amplitude_mv,
                duration_us: p.duration_us,
                delays_us: p.delays_us.clone(),
            }
            .validate()?;
        }
        if let Some(f) = &c.field_toggle {
            if !self.layout.materials.contains_key(&f.material) {
                return Err(Error::validation(format!("field_toggle: unknown material {}", f.material)));
            }
            if f.gap_overrides.len() < 2 || f.gap_overrides.iter().any(|g| !(*g >= 0.0)) {
                return Err(Error::validation("field_toggle needs at least two non-negative gap overrides"));
            }
            match &f.bias_mv {
                Some(g) => check_grid("field_toggle.bias_mv", g)?,
                None if c.dc_sweep.is_none() => {
                    return Err(Error::validation("field_toggle needs bias_mv or a dc_sweep section"))
                }
                None => {}
            }
            for q in &f.qubits {
                if self.qubit_index(q).is_none() {
                    return Err(Error::validation(format!("field_toggle: unknown qubit {q}")));
                }
            }
            let eta = self.normal_absorb_prob(f);
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::validation("field_toggle.normal_absorb_prob must lie in [0, 1]"));
            }
            if let Some(k) = f.control_absorb_scale {
                if !(k >= 0.0) || !(eta * k <= 1.0) {
                    return Err(Error::validation(format!(
                        "field_toggle control: absorb_prob {eta} scaled by {k} leaves [0, 1]"
                    )));
                }
            }
        }
        if let Some(p) = &c.population {
            check_grid("population.bias_mv", &p.bias_mv)?;
            if !(p.readout.sigma > 0.0) {
                return Err(Error::validation("population.readout.sigma must be > 0"));
            }
        }
        if let Some(r) = &c.ratio_report {
            if r.input.is_none() && c.dc_sweep.is_none() {
                return Err(Error::validation("ratio_report needs an input file or a dc_sweep section"));
            }
            if let Some(p) = &r.input {
                let path = self.resolve(p);
                if !path.exists() {
                    return Err(Error::validation(format!("ratio_report input {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn normal_absorb_prob(&self, f: &FieldToggle) -> f64 {
        f.normal_absorb_prob.unwrap_or_else(|| self.layout.materials[&f.material].absorb_prob)
    }

    pub fn resolve(&self, p: &str) -> std::path::PathBuf {
        match &self.base_dir {
            Some(d) => d.join(p),
            None => p.into(),
        }
    }

    pub fn qubit_index(&self, label: &str) -> Option<usize> {
        self.layout.qubits.iter().position(|q| q.label.as_str() == label)
    }

    pub fn seed(&self) -> u64 {
        self.config.cascade.seed
    }

    /// SHA-256 over the resolved configuration and layout.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut cfg = self.config.clone();
        cfg.layout = None;
        h.update(toml::to_string(&cfg).expect("config serialises").as_bytes());
        h.update(b"\n--- layout ---\n");
        h.update(self.layout.to_toml().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The shipped scenario on the built-in layout.
pub fn default_scenario() -> Scenario {
    Scenario::from_str(DEFAULT_SCENARIO_TOML, None).expect("shipped scenario is valid")
}

fn resolve_qp(qp: &QpSection, layout: &ChipLayout) -> Result<Vec<QpModel>> {
    for k in qp.qubits.keys() {
        if !layout.qubits.iter().any(|q| q.label.as_str() == k) {
            return Err(Error::validation(format!("qp.qubits.{k} is not a qubit of the layout")));
        }
    }
    layout
        .qubits
        .iter()
        .map(|site| {
            let label = site.label.as_str();
            let q = qp
                .qubits
                .get(label)
                .ok_or_else(|| Error::validation(format!("qp.qubits.{label} is missing")))?;
            let d_per_ns = match q.d_per_ns {
                Some(d) => d,
                None => {
                    let s = transmon::diagonalize(&site.transmon, 0.0, 2)?;
                    transmon::qp_sensitivity_d(&site.transmon, s.f01)
                }
            };
            let m = QpModel {
                tau_ss_us: q.tau_ss_us,
                r_per_us: qp.r_per_us,
                kappa: q.kappa.unwrap_or(qp.kappa),
                d_per_ns,
                gamma_baseline_per_us: q.gamma_baseline_per_us.unwrap_or(qp.gamma_baseline_per_us),
                upconvert_fraction: qp.upconvert_fraction,
                residual_excited_pop: qp.residual_excited_pop,
            };
            m.validate().map_err(|e| Error::validation(format!("qp model of {label}: {e}")))?;
            Ok(m)
        })
        .collect()
}
