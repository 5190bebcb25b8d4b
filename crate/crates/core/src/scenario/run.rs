use std::time::Instant;

use crate::cascade::{run_source, CascadeStats, ARRIVAL_BINS, ARRIVAL_BIN_US};
use crate::chip::ChipLayout;
use crate::error::{Error, Result};
use crate::fit::{delta_stats, fit_double_gaussian, fit_recovery, loss_ratios, LossCurve, RecoveryFit};
use crate::injector::{emission_spectrum, iv_current};
use crate::qp::{evolve_xqp, normalized_rabi_amplitude, populations, synth_histogram, Generation, QpModel};
use crate::rng::child_seed;

use super::{Column, FieldToggle, ResultTable, Scenario};

fn missing(section: &str) -> Error {
    Error::validation(format!("scenario has no [{section}] section"))
}

/// Steady-state density and loss rate for power `p`, with the loss-rate
/// standard error propagated from `p_se`.
fn steady_gamma(m: &QpModel, p: f64, p_se: f64) -> (f64, f64, f64) {
    let g = m.generation(p);
    let x = m.steady_state(g);
    let dxdg = 1.0 / (1.0 / m.tau_ss_us + 2.0 * m.r_per_us * x);
    let scale = m.d_per_ns * 1e3;
    (x, scale * x, scale * dxdg * m.kappa * p_se)
}

/// Per-bias cascade runs shared by the dc sweep and the field toggle. Bias
/// point `i` always uses seed `child_seed(seed, i)`, so two sweeps over the
/// same grid are paired point by point.
fn cascade_sweep(scn: &Scenario, layout: &ChipLayout, bias: &[f64]) -> Result<Vec<(f64, CascadeStats)>> {
    let inj = &scn.config.injector;
    bias.iter()
        .enumerate()
        .map(|(i, &v)| {
            let current = iv_current(inj, v);
            let src = emission_spectrum(inj, v, current);
            let mut cfg = scn.config.cascade;
            cfg.seed = child_seed(scn.seed(), i as u64);
            Ok((current, run_source(layout, &src, &cfg)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DcSweepResult {
    pub bias_mv: Vec<f64>,
    pub current_na: Vec<f64>,
    pub labels: Vec<String>,
    /// `[qubit][bias]`, µeV/µs.
    pub power: Vec<Vec<f64>>,
    pub xqp: Vec<Vec<f64>>,
    /// Added Γ₁, µs⁻¹.
    pub gamma: Vec<Vec<f64>>,
    pub gamma_se: Vec<Vec<f64>>,
    pub stats: Vec<CascadeStats>,
    pub table: ResultTable,
}

impl DcSweepResult {
    pub fn qubit(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

fn dc_from_runs(
    scn: &Scenario,
    layout: &ChipLayout,
    bias: &[f64],
    runs: Vec<(f64, CascadeStats)>,
    name: &str,
) -> Result<DcSweepResult> {
    let labels: Vec<String> = layout.qubits.iter().map(|q| q.label.to_string()).collect();
    let nq = labels.len();
    let mut power = vec![Vec::new(); nq];
    let mut xqp = vec![Vec::new(); nq];
    let mut gamma = vec![Vec::new(); nq];
    let mut gamma_se = vec![Vec::new(); nq];
    for (_, s) in &runs {
        for q in 0..nq {
            let p = s.qubit_power(q);
            let (x, g, se) = steady_gamma(&scn.qp_models[q], p, s.qubit_power_stderr(q));
            power[q].push(p);
            xqp[q].push(x);
            gamma[q].push(g);
            gamma_se[q].push(se);
        }
    }

    let mut cols = vec![
        Column::new("v_bias", "mV"),
        Column::new("current", "nA"),
        Column::new("injected_power", "ueV/us"),
        Column::new("ledger_residual", "1"),
        Column::new("stuck_fraction", "1"),
    ];
    for l in &labels {
        cols.push(Column::new(format!("power_{l}"), "ueV/us"));
        cols.push(Column::new(format!("xqp_{l}"), "1"));
        cols.push(Column::new(format!("added_gamma1_{l}"), "1/us"));
        cols.push(Column::new(format!("added_gamma1_se_{l}"), "1/us"));
    }
    let mut table = ResultTable::new(name, cols, scn.seed(), &scn.config_hash());
    for (b, (current, s)) in runs.iter().enumerate() {
        let stuck = if s.injected > 0.0 { s.stuck / s.injected } else { 0.0 };
        let mut row = vec![bias[b], *current, s.injected * s.pair_rate / s.n_packets as f64, s.ledger_residual(), stuck];
        for q in 0..nq {
            row.extend([power[q][b], xqp[q][b], gamma[q][b], gamma_se[q][b]]);
        }
        table.push_row(row)?;
    }
    Ok(DcSweepResult {
        bias_mv: bias.to_vec(),
        current_na: runs.iter().map(|r| r.0).collect(),
        labels,
        power,
        xqp,
        gamma,
        gamma_se,
        stats: runs.into_iter().map(|r| r.1).collect(),
        table,
    })
}

/// Added Γ₁ against constant bias for every qubit, from the steady-state
/// density under the cascade's pair-breaking power.
pub fn run_dc_sweep(scn: &Scenario) -> Result<DcSweepResult> {
    let start = Instant::now();
    let bias = &scn.config.dc_sweep.as_ref().ok_or_else(|| missing("dc_sweep"))?.bias_mv;
    let runs = cascade_sweep(scn, &scn.layout, bias)?;
    let mut r = dc_from_runs(scn, &scn.layout, bias, runs, "dc-sweep")?;
    r.table.runtime_s = start.elapsed().as_secs_f64();
    Ok(r)
}

#[derive(Debug)]
pub struct PulseResult {
    pub delays_us: Vec<f64>,
    pub labels: Vec<String>,
    /// `[qubit][delay]`, µs⁻¹.
    pub gamma: Vec<Vec<f64>>,
    pub fits: Vec<RecoveryFit>,
    pub table: ResultTable,
}

/// Piecewise-constant pair-breaking power at one qubit during and after a
/// square pulse of `duration` µs, from the cascade's arrival-time histogram.
/// Returns bin edges and per-bin power.
fn pulse_power(arrival: &[f64], pair_rate: f64, n_pairs: usize, duration: f64) -> (Vec<f64>, Vec<f64>) {
    let dt = ARRIVAL_BIN_US;
    let emit_bins = (duration / dt).ceil() as usize;
    let weight = |m: usize| ((duration - m as f64 * dt) / dt).clamp(0.0, 1.0);
    let scale = pair_rate / n_pairs as f64;
    let nbins = emit_bins + ARRIVAL_BINS - 1;
    let power: Vec<f64> = (0..nbins)
        .map(|k| {
            let lo = k.saturating_sub(ARRIVAL_BINS - 1);
            (lo..=k.min(emit_bins - 1)).map(|m| weight(m) * arrival[k - m]).sum::<f64>() * scale
        })
        .collect();
    let edges = (0..=nbins).map(|k| k as f64 * dt).collect();
    (edges, power)
}

/// Square injection pulse followed by a delay scan; the added loss against
/// delay is fitted with both recovery models for each qubit.
pub fn run_pulse_recovery(scn: &Scenario) -> Result<PulseResult> {
    let start = Instant::now();
    let p = scn.config.pulse.as_ref().ok_or_else(|| missing("pulse"))?;
    let inj = &scn.config.injector;
    let src = emission_spectrum(inj, p.amplitude_mv, iv_current(inj, p.amplitude_mv));
    let mut cfg = scn.config.cascade;
    cfg.seed = child_seed(scn.seed(), 0);
    let stats = run_source(&scn.layout, &src, &cfg)?;

    let labels: Vec<String> = scn.layout.qubits.iter().map(|q| q.label.to_string()).collect();
    // pulse starts at t = 0; the first grid point is dropped from the output
    let mut t_grid = vec![0.0];
    t_grid.extend(p.delays_us.iter().map(|d| p.duration_us + d));

    let mut gamma = Vec::new();
    let mut fits = Vec::new();
    for (q, model) in scn.qp_models.iter().enumerate() {
        let (edges, power) = pulse_power(&stats.arrival[q], stats.pair_rate, stats.n_packets, p.duration_us);
        let g = Generation::new(edges, power.iter().map(|&w| model.generation(w)).collect())?;
        let trace = evolve_xqp(model, &g, &t_grid, 0.0)?;
        let gq = trace.gamma1[1..].to_vec();
        fits.push(fit_recovery(&p.delays_us, &gq).map_err(|e| match e {
            Error::NonConvergence(m) | Error::Numerical(m) => Error::Numerical(format!("recovery fit of {}: {m}", labels[q])),
            other => other,
        })?);
        gamma.push(gq);
    }

    let mut cols = vec![Column::new("delay", "us")];
    cols.extend(labels.iter().map(|l| Column::new(format!("added_gamma1_{l}"), "1/us")));
    let mut table = ResultTable::new("pulse", cols, scn.seed(), &scn.config_hash());
    table.notes.push(format!(
        "pulse: amplitude {} mV, duration {} us, {} pairs/us",
        p.amplitude_mv,
        p.duration_us,
        stats.pair_rate
    ));
    for (l, f) in labels.iter().zip(&fits) {
        let mut note = format!("fit {l}: selected {}", f.choice.as_str());
        if let Ok(e) = &f.exponential {
            note += &format!("; exponential gamma0 {:e} tau_us {:e} +/- {:e} residual {:e}", e.get("gamma0"), e.get("tau"), e.err("tau"), e.residual_norm);
        }
        if let Ok(r) = &f.recombination {
            note += &format!("; recombination gamma0 {:e} rho {:e} residual {:e}", r.get("gamma0"), r.get("rho"), r.residual_norm);
        }
        table.notes.push(note);
    }
    for (i, d) in p.delays_us.iter().enumerate() {
        let mut row = vec![*d];
        row.extend(gamma.iter().map(|g| g[i]));
        table.push_row(row)?;
    }
    table.runtime_s = start.elapsed().as_secs_f64();
    Ok(PulseResult { delays_us: p.delays_us.clone(), labels, gamma, fits, table })
}

/// Loss-rate differences between one film condition and the reference, for
/// one qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct ToggleDelta {
    pub label: String,
    pub condition: String,
    /// `condition - reference` at each bias, µs⁻¹.
    pub deltas: Vec<f64>,
    pub mean: f64,
    /// Monte Carlo standard error of `mean`, from the per-point errors of
    /// both curves.
    pub mc_stderr: f64,
    /// Standard error of `mean` from the scatter of the deltas.
    pub scatter_stderr: f64,
}

impl ToggleDelta {
    /// `mean / mc_stderr`; 0 when both vanish.
    pub fn significance(&self) -> f64 {
        if self.mc_stderr > 0.0 {
            self.mean / self.mc_stderr
        } else if self.mean == 0.0 {
            0.0
        } else {
            self.mean.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldToggleResult {
    pub bias_mv: Vec<f64>,
    /// One sweep per gap override, in config order.
    pub sweeps: Vec<(f64, DcSweepResult)>,
    pub deltas: Vec<ToggleDelta>,
    /// Sensitivity control: normal film with scaled absorb_prob.
    pub control: Option<(f64, DcSweepResult, Vec<ToggleDelta>)>,
    pub table: ResultTable,
}

fn with_film(layout: &ChipLayout, material: &str, gap: f64, absorb: f64) -> ChipLayout {
    let mut l = layout.clone();
    let m = l.materials.get_mut(material).expect("material validated");
    m.gap = gap;
    m.absorb_prob = absorb;
    l
}

fn toggle_deltas(
    f: &FieldToggle,
    reference: &DcSweepResult,
    cond: &DcSweepResult,
    condition: &str,
) -> Result<Vec<ToggleDelta>> {
    f.qubits
        .iter()
        .map(|label| {
            let q = reference.qubit(label).expect("qubit validated");
            let d = delta_stats(&reference.gamma[q], &cond.gamma[q])?;
            let n = d.deltas.len() as f64;
            let var: f64 = reference.gamma_se[q].iter().chain(&cond.gamma_se[q]).map(|s| s * s).sum();
            Ok(ToggleDelta {
                label: label.clone(),
                condition: condition.to_string(),
                deltas: d.deltas,
                mean: d.mean,
                mc_stderr: var.sqrt() / n,
                scatter_stderr: d.scatter_stderr,
            })
        })
        .collect()
}

/// Dc sweeps with the trap film's gap overridden, compared at equal bias
/// with paired seeds.
pub fn run_field_toggle(scn: &Scenario) -> Result<FieldToggleResult> {
    let start = Instant::now();
    let f = scn.config.field_toggle.as_ref().ok_or_else(|| missing("field_toggle"))?;
    let bias = match &f.bias_mv {
        Some(b) => b.clone(),
        None => scn.config.dc_sweep.as_ref().ok_or_else(|| missing("dc_sweep"))?.bias_mv.clone(),
    };
    let sc_absorb = scn.layout.materials[&f.material].absorb_prob;
    let normal_absorb = scn.normal_absorb_prob(f);
    let mut sweeps = Vec::new();
    for &gap in &f.gap_overrides {
        let eta = if gap == 0.0 { normal_absorb } else { sc_absorb };
        let layout = with_film(&scn.layout, &f.material, gap, eta);
        let runs = cascade_sweep(scn, &layout, &bias)?;
        sweeps.push((gap, dc_from_runs(scn, &layout, &bias, runs, "field-toggle")?));
    }
    let mut deltas = Vec::new();
    for (gap, s) in &sweeps[1..] {
        deltas.extend(toggle_deltas(f, &sweeps[0].1, s, &format!("gap {gap} ueV"))?);
    }
    let control = match f.control_absorb_scale {
        Some(k) => {
            let eta = normal_absorb * k;
            let layout = with_film(&scn.layout, &f.material, 0.0, eta);
            let runs = cascade_sweep(scn, &layout, &bias)?;
            let s = dc_from_runs(scn, &layout, &bias, runs, "field-toggle")?;
            let d = toggle_deltas(f, &sweeps[0].1, &s, &format!("normal, absorb_prob {eta}"))?;
            Some((eta, s, d))
        }
        None => None,
    };

    let mut cols = vec![Column::new("v_bias", "mV")];
    for label in &f.qubits {
        for (gap, _) in &sweeps {
            cols.push(Column::new(format!("added_gamma1_{label}_gap{gap}"), "1/us"));
            cols.push(Column::new(format!("added_gamma1_se_{label}_gap{gap}"), "1/us"));
        }
        if control.is_some() {
            cols.push(Column::new(format!("added_gamma1_{label}_control"), "1/us"));
        }
    }
    for d in deltas.iter().chain(control.iter().flat_map(|c| c.2.iter())) {
        let tag = if d.condition.starts_with("normal") { "control".to_string() } else { d.condition.replace(' ', "") };
        cols.push(Column::new(format!("delta_gamma1_{}_{tag}", d.label), "1/us"));
    }
    let mut table = ResultTable::new("field-toggle", cols, scn.seed(), &scn.config_hash());
    table.notes.push(format!("reference: {} gap {} ueV", f.material, f.gap_overrides[0]));
    for d in deltas.iter().chain(control.iter().flat_map(|c| c.2.iter())) {
        table.notes.push(format!(
            "delta {} [{}]: mean {:e} 1/us, mc_stderr {:e}, scatter_stderr {:e}, mean/mc_stderr {:.3}",
            d.label,
            d.condition,
            d.mean,
            d.mc_stderr,
            d.scatter_stderr,
            d.significance()
        ));
    }
    for (b, v) in bias.iter().enumerate() {
        let mut row = vec![*v];
        for label in &f.qubits {
            for (_, s) in &sweeps {
                let q = s.qubit(label).expect("qubit validated");
                row.extend([s.gamma[q][b], s.gamma_se[q][b]]);
            }
            if let Some((_, s, _)) = &control {
                row.push(s.gamma[s.qubit(label).expect("qubit validated")][b]);
            }
        }
        for d in deltas.iter().chain(control.iter().flat_map(|c| c.2.iter())) {
            row.push(d.deltas[b]);
        }
        table.push_row(row)?;
    }
    table.runtime_s = start.elapsed().as_secs_f64();
    Ok(FieldToggleResult { bias_mv: bias, sweeps, deltas, control, table })
}

#[derive(Debug, Clone)]
pub struct PopulationResult {
    pub bias_mv: Vec<f64>,
    pub labels: Vec<String>,
    /// `[qubit][bias]`.
    pub p_g: Vec<Vec<f64>>,
    pub a_norm: Vec<Vec<f64>>,
    /// Ground population recovered from synthetic readout histograms; empty
    /// when `n_shots` is 0.
    pub p_g_fit: Vec<Vec<f64>>,
    pub table: ResultTable,
}

/// Steady-state populations and normalised Rabi amplitude against bias.
pub fn run_population_sweep(scn: &Scenario) -> Result<PopulationResult> {
    let start = Instant::now();
    let p = scn.config.population.as_ref().ok_or_else(|| missing("population"))?;
    let runs = cascade_sweep(scn, &scn.layout, &p.bias_mv)?;
    let labels: Vec<String> = scn.layout.qubits.iter().map(|q| q.label.to_string()).collect();
    let nq = labels.len();
    let mut xqp = vec![Vec::new(); nq];
    let mut p_g = vec![Vec::new(); nq];
    let mut p_e = vec![Vec::new(); nq];
    let mut a_norm = vec![Vec::new(); nq];
    let mut p_g_fit = vec![Vec::new(); if p.n_shots > 0 { nq } else { 0 }];
    for (b, (_, s)) in runs.iter().enumerate() {
        for (q, m) in scn.qp_models.iter().enumerate() {
            let (pg0, pe0) = populations(m, 0.0);
            let (x, _, _) = steady_gamma(m, s.qubit_power(q), 0.0);
            let (pg, pe) = populations(m, x);
            xqp[q].push(x);
            p_g[q].push(pg);
            p_e[q].push(pe);
            a_norm[q].push(normalized_rabi_amplitude(pg, pe, pg0, pe0)?);
            if p.n_shots > 0 {
                let seed = child_seed(child_seed(scn.seed(), 1 << 32 | q as u64), b as u64);
                let shots = synth_histogram(pg, p.readout, p.n_shots, seed)?;
                p_g_fit[q].push(fit_double_gaussian(&shots)?.fit.get("p_g"));
            }
        }
    }

    let mut cols = vec![Column::new("v_bias", "mV")];
    for l in &labels {
        cols.push(Column::new(format!("xqp_{l}"), "1"));
        cols.push(Column::new(format!("p_g_{l}"), "1"));
        cols.push(Column::new(format!("p_e_{l}"), "1"));
        cols.push(Column::new(format!("a_norm_{l}"), "1"));
        if p.n_shots > 0 {
            cols.push(Column::new(format!("p_g_fit_{l}"), "1"));
        }
    }
    let mut table = ResultTable::new("population", cols, scn.seed(), &scn.config_hash());
    for (b, v) in p.bias_mv.iter().enumerate() {
        let mut row = vec![*v];
        for q in 0..nq {
            row.extend([xqp[q][b], p_g[q][b], p_e[q][b], a_norm[q][b]]);
            if p.n_shots > 0 {
                row.push(p_g_fit[q][b]);
            }
        }
        table.push_row(row)?;
    }
    table.runtime_s = start.elapsed().as_secs_f64();
    Ok(PopulationResult { bias_mv: p.bias_mv.clone(), labels, p_g, a_norm, p_g_fit, table })
}

/// Pairwise loss-rate ratios from a dc-sweep table (read from the configured
/// input, or computed on the spot). NbTiN-side qubits come first so the
/// headline ratios read NbTiN over Al.
pub fn run_ratio_report(scn: &Scenario) -> Result<ResultTable> {
    let start = Instant::now();
    let r = scn.config.ratio_report.as_ref().ok_or_else(|| missing("ratio_report"))?;
    let dc = match &r.input {
        Some(p) => {
            let path = scn.resolve(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            ResultTable::from_csv(&text)?
        }
        None => run_dc_sweep(scn)?.table,
    };
    ratio_table(scn, &dc, r.noise_floor_per_us, start)
}

fn ratio_table(scn: &Scenario, dc: &ResultTable, floor: f64, start: Instant) -> Result<ResultTable> {
    let bias_col = dc.column_index("v_bias").ok_or_else(|| Error::input("input table has no v_bias column"))?;
    let bias: Vec<f64> = dc.rows.iter().map(|row| row[bias_col]).collect();
    let mut labels: Vec<String> = dc
        .columns
        .iter()
        .filter_map(|c| c.name.strip_prefix("added_gamma1_").filter(|l| !l.starts_with("se_")))
        .map(str::to_string)
        .collect();
    if labels.len() < 2 {
        return Err(Error::input("input table needs at least two added_gamma1_* columns"));
    }
    labels.sort_by_key(|l| (!l.contains("NbTiN"), l.clone()));
    let curves: Vec<LossCurve> = labels
        .iter()
        .map(|l| LossCurve { label: l.clone(), bias_mv: bias.clone(), added_gamma: dc.column(&format!("added_gamma1_{l}")) })
        .collect();
    let ratios = loss_ratios(&curves, floor)?;
    let mut cols = vec![Column::new("v_bias", "mV")];
    cols.extend(ratios.pairs.iter().map(|(a, b)| Column::new(format!("ratio_{a}/{b}"), "1")));
    let mut table = ResultTable::new("ratios", cols, scn.seed(), &scn.config_hash());
    table.notes.push(format!("source table: {} (config_sha256 {})", dc.scenario, dc.config_hash));
    table.notes.push(format!("noise floor: {floor} 1/us"));
    for (b, v) in bias.iter().enumerate() {
        let mut row = vec![*v];
        row.extend(ratios.ratios.iter().map(|r| r[b]));
        table.push_row(row)?;
    }
    table.runtime_s = start.elapsed().as_secs_f64();
    Ok(table)
}
