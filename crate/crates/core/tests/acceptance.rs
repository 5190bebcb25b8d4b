//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stdout (visible without `--nocapture`) and then asserts.

use std::io::Write as _;
use std::time::{Duration, Instant};

use phonontrap::cascade::{downconvert, run_source, run_source_logged, CascadeConfig, EventKind};
use phonontrap::chip::FilmMaterial;
use phonontrap::fit::{
    double_gaussian_density, exp_decay_model, fit_decaying_cosine, fit_double_gaussian, fit_double_gaussian_density,
    fit_exp_decay, fit_recovery, recombination_model, RecoveryModel,
};
use phonontrap::injector::{emission_spectrum, iv_current};
use phonontrap::qp::{synth_histogram, Readout};
use phonontrap::rng;
use phonontrap::scenario::{
    default_scenario, run_dc_sweep, run_field_toggle, run_population_sweep, run_pulse_recovery, Scenario,
};
use phonontrap::transmon::{
    charge_dispersion, diagonalize, fit_dispersion, qp_sensitivity_d, DispersionPoint, JunctionModel,
    TransmonParams,
};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn report(n: u32, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    writeln!(std::io::stdout().lock(), "criterion {n}: {verdict} {detail}").unwrap();
    assert!(ok, "criterion {n}: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn cosine(ej: f64, ec: f64) -> TransmonParams {
    TransmonParams { ec_ghz: ec, junction: JunctionModel::Cosine { ej_ghz: ej }, lead_gap_uev: 270.0 }
}

fn abs_junction(gap: f64, t: f64, ec: f64) -> TransmonParams {
    TransmonParams {
        ec_ghz: ec,
        junction: JunctionModel::ResonantAbs { eff_gap_ghz: gap, transmission: t },
        lead_gap_uev: 270.0,
    }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s < {:.0}s", e.as_secs_f64(), limit.as_secs_f64()))
}

#[test]
fn criterion_01_sensitivity_table() {
    let t = Instant::now();
    // (EJeff/h GHz, EJeff/Ec, f01 GHz, D /ns) of the four reference qubits
    let rows = [
        ("Near_Al", 5.26, 13.1, 3.948, 7.5),
        ("Near_NbTiN", 5.07, 12.8, 3.864, 7.4),
        ("Far_NbTiN", 5.15, 13.8, 3.784, 7.3),
        ("Far_Al", 4.92, 11.7, 3.892, 7.5),
    ];
    let mut worst = 0.0f64;
    let mut got = Vec::new();
    for (label, ej, ratio, f01, d) in rows {
        let dq = qp_sensitivity_d(&cosine(ej, ej / ratio), f01);
        worst = worst.max(rel(dq, d));
        got.push(format!("{label}={dq:.3}"));
    }
    let (fast, time) = within(t, Duration::from_secs(1));
    report(1, worst < 0.02 && fast, &format!("D [{}], worst {:.2}%, {time}", got.join(" "), 100.0 * worst));
}

#[test]
fn criterion_02_transmon_solver() {
    let t = Instant::now();
    let f01 = diagonalize(&cosine(20.0, 0.4), 0.0, 3).unwrap().f01;
    let f_ok = rel(f01, 7.6) < 0.01;
    let t_f01 = t.elapsed();

    let t = Instant::now();
    let models = [cosine(20.0, 0.4), cosine(5.2, 0.4), abs_junction(21.0, 0.99, 0.4), abs_junction(30.0, 0.7, 0.35)];
    let mut sym = 0.0f64;
    for p in &models {
        for k in 0..=20 {
            let ng = -1.0 + 0.1 * k as f64;
            let a = diagonalize(p, ng, 3).unwrap();
            let b = diagonalize(p, ng + 1.0, 3).unwrap();
            let c = diagonalize(p, -ng, 3).unwrap();
            sym = sym.max((a.f01 - b.f01).abs()).max((a.f01 - c.f01).abs()).max((a.f02_half - c.f02_half).abs());
        }
    }
    let sym_ok = sym < 1e-9;
    let t_sym = t.elapsed();

    let t = Instant::now();
    let (gap, tr, ec) = (21.0, 0.999, 0.4);
    let d_abs = charge_dispersion(&abs_junction(gap, tr, ec), (0, 1)).unwrap();
    let d_cos = charge_dispersion(&cosine(gap * tr / 4.0, ec), (0, 1)).unwrap();
    let supp = d_cos / d_abs;
    let t_abs = t.elapsed();

    let limit = Duration::from_secs(5);
    let fast = t_f01 < limit && t_sym < limit && t_abs < limit;
    report(
        2,
        f_ok && sym_ok && supp > 10.0 && fast,
        &format!(
            "f01 {f01:.4} GHz, symmetry error {sym:.1e} GHz, ABS suppression {supp:.1}x, {:.2}/{:.2}/{:.2}s",
            t_f01.as_secs_f64(),
            t_sym.as_secs_f64(),
            t_abs.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_dispersion_fit() {
    let t = Instant::now();
    let truth = abs_junction(21.0, 0.99, 0.40);
    let clean: Vec<DispersionPoint> = (0..21)
        .map(|k| {
            let ng = k as f64 / 20.0;
            let s = diagonalize(&truth, ng, 3).unwrap();
            DispersionPoint { ng, f01_ghz: s.f01, f02_half_ghz: s.f02_half }
        })
        .collect();
    let init = abs_junction(18.0, 0.9, 0.35);
    let err = |d: &[DispersionPoint]| {
        let f = fit_dispersion(d, &init).unwrap();
        rel(f.ec_ghz(), 0.40).max(rel(f.eff_gap_ghz(), 21.0)).max(rel(f.transmission(), 0.99))
    };
    let e0 = err(&clean);
    let mut noisy = clean.clone();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    for d in noisy.iter_mut() {
        d.f01_ghz += noise.sample(&mut r);
        d.f02_half_ghz += noise.sample(&mut r);
    }
    let e1 = err(&noisy);
    let (fast, time) = within(t, Duration::from_secs(30));
    report(
        3,
        e0 < 0.01 && e1 < 0.05 && fast,
        &format!("noiseless worst {:.2e}, 1 MHz noise worst {:.2}%, {time}", e0, 100.0 * e1),
    );
}

#[test]
fn criterion_04_injector() {
    let t = Instant::now();
    let p = default_scenario().config.injector;
    let thr = p.threshold_mv();
    let i1 = iv_current(&p, 1.0);
    // every bias below 2Δ/e on a 10 µV grid
    let inside: Vec<(f64, f64)> = (1..54).map(|k| 0.01 * k as f64).map(|v| (v, iv_current(&p, v).abs() / i1)).collect();
    let sub = inside.iter().map(|x| x.1).fold(0.0, f64::max);
    let sub_ok = sub < 1e-3;
    let holds_to = inside.iter().take_while(|x| x.1 < 1e-3).last().map_or(0.0, |x| x.0);

    let h = 0.005;
    let v: Vec<f64> = (0..=300).map(|k| h * k as f64).collect();
    let i: Vec<f64> = v.iter().map(|&v| iv_current(&p, v)).collect();
    let g: Vec<f64> = i.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let k = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
    let peak = 0.5 * (v[k] + v[k + 1]);
    let peak_ok = (peak - thr).abs() <= h;

    // sampled pairs against I·V from the elementary charge
    let mut worst = 0.0f64;
    for bias in [0.8, 1.5, 2.5] {
        let current = iv_current(&p, bias);
        let src = emission_spectrum(&p, bias, current);
        let mut r = rng::stream(4, (bias * 1000.0) as u64);
        let n = 1_000_000;
        let total: f64 = (0..n).map(|_| src.sample_pair(&mut r).total()).sum();
        // nA · mV = 1e-12 W, and eV/s equals µeV/µs
        let iv = current * bias * 1e-12 / 1.602_176_634e-19;
        let sampled = src.pair_rate() * total / n as f64;
        worst = worst.max(rel(sampled, iv)).max(rel(src.power(), iv));
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    report(
        4,
        sub_ok && peak_ok && worst < 0.01 && fast,
        &format!(
            "subgap max {sub:.1e} of I(1 mV) (below 1e-3 up to {holds_to:.2} mV), dI/dV peak at {peak:.3} mV (2Δ/e {thr:.3}), power error {worst:.2e}, {time}"
        ),
    );
}

#[test]
fn criterion_05_cascade_conservation() {
    let t = Instant::now();
    let scn = default_scenario();
    assert_eq!(scn.config.cascade.n_packets, 100_000);
    let dc = run_dc_sweep(&scn).unwrap();
    let ledger = dc.stats.iter().map(|s| s.ledger_residual()).fold(0.0, f64::max);

    let inj = &scn.config.injector;
    let mut below = 0usize;
    let mut hits = 0usize;
    let mut same = true;
    for (i, &v) in dc.bias_mv.iter().enumerate() {
        let src = emission_spectrum(inj, v, iv_current(inj, v));
        let mut cfg = scn.config.cascade;
        cfg.seed = rng::child_seed(scn.seed(), i as u64);
        let run = run_source_logged(&scn.layout, &src, &cfg, true).unwrap();
        same &= run.stats == dc.stats[i];
        for (_, e) in run.events.iter().filter(|(_, e)| e.kind == EventKind::QubitHit) {
            hits += 1;
            if e.energy < 2.0 * scn.layout.qubits[e.target as usize].nanowire_gap {
                below += 1;
            }
        }
    }

    let src = emission_spectrum(inj, 2.5, iv_current(inj, 2.5));
    let csv: Vec<String> = [1, 4, 8]
        .iter()
        .map(|&w| {
            let cfg = CascadeConfig { workers: Some(w), ..scn.config.cascade };
            run_source(&scn.layout, &src, &cfg).unwrap().to_csv()
        })
        .collect();
    let exact = csv.iter().all(|c| c == &csv[0]);
    let (fast, time) = within(t, Duration::from_secs(120));
    report(
        5,
        ledger < 1e-9 && below == 0 && hits > 0 && same && exact && fast,
        &format!(
            "ledger residual {ledger:.1e} over {} biases, {below} of {hits} qubit hits below 2Δ_nw, 1/4/8 workers identical: {exact}, {time}",
            dc.bias_mv.len()
        ),
    );
}

#[test]
fn criterion_06_downconversion_unit_case() {
    let al = FilmMaterial { gap: 180.0, thickness_nm: 100.0, absorb_prob: 1.0, recombine_reemit_prob: 1.0 };
    let (out, kept) = downconvert(1000.0, &al, &mut rng::stream(0, 0));
    let mut sorted = out.clone();
    sorted.sort_by(f64::total_cmp);
    report(6, sorted == [320.0, 320.0, 360.0] && kept == 0.0, &format!("1000 µeV in Al(180) -> {out:?}"));
}

fn slope_kink(v: &[f64], g: &[f64]) -> usize {
    let slope: Vec<f64> = (0..v.len() - 1).map(|i| (g[i + 1] - g[i]) / (v[i + 1] - v[i])).collect();
    let change: Vec<f64> = (1..slope.len()).map(|i| slope[i] - slope[i - 1]).collect();
    (0..change.len()).max_by(|&a, &b| change[a].total_cmp(&change[b])).unwrap() + 1
}

#[test]
fn criterion_07_loss_ratios() {
    let t = Instant::now();
    let scn = default_scenario();
    let thr = scn.config.injector.threshold_mv();
    let dc = run_dc_sweep(&scn).unwrap();
    let v = &dc.bias_mv;
    let k_gap = v.iter().position(|&b| (b - thr).abs() < 1e-9);
    let mut ok = v.len() == 15 && scn.config.cascade.n_packets == 100_000 && k_gap.is_some();
    let k_gap = k_gap.unwrap_or(usize::MAX);

    let mut lines = Vec::new();
    for (hi, lo, range) in [("Near_NbTiN", "Near_Al", 2.0..=3.0), ("Far_NbTiN", "Far_Al", 4.0..=6.0)] {
        let (a, b) = (dc.qubit(hi).unwrap(), dc.qubit(lo).unwrap());
        let r: Vec<f64> = (0..v.len()).filter(|&i| v[i] >= 1.5).map(|i| dc.gamma[a][i] / dc.gamma[b][i]).collect();
        ok &= r.iter().all(|x| range.contains(x));
        lines.push(format!("{hi}/{lo} {:.2}..{:.2}", r.iter().cloned().fold(f64::INFINITY, f64::min), r.iter().cloned().fold(0.0, f64::max)));
    }
    for (q, g) in dc.gamma.iter().enumerate() {
        let onset = g.iter().position(|&x| x > 0.0);
        let kink = slope_kink(v, g);
        ok &= onset == Some(k_gap) && kink == k_gap;
        if kink != k_gap {
            lines.push(format!("{} kink at {} mV", dc.labels[q], v[kink]));
        }
    }
    let (fast, time) = within(t, Duration::from_secs(600));
    report(7, ok && fast, &format!("{}, onset and kink at {thr:.2} mV, {time}", lines.join(", ")));
}

#[test]
fn criterion_08_pulse_recovery() {
    let t = Instant::now();
    let scn = default_scenario();
    let r = run_pulse_recovery(&scn).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (q, fit) in r.fits.iter().enumerate() {
        let want = scn.config.qp.qubits[&r.labels[q]].tau_ss_us;
        let tau = fit.chosen().get("tau");
        ok &= fit.choice == RecoveryModel::Exponential && rel(tau, want) < 0.05;
        parts.push(format!("{} {tau:.1}/{want} ({})", r.labels[q], fit.choice.as_str()));
    }
    let (fast, time) = within(t, Duration::from_secs(300));
    report(8, ok && fast, &format!("tau {}, {time}", parts.join(", ")));
}

#[test]
fn criterion_09_populations() {
    let t = Instant::now();
    let scn = default_scenario();
    let ro = scn.config.population.as_ref().unwrap().readout;
    let readout = Readout { mu_g: ro.mu_g, mu_e: ro.mu_e, sigma: ro.sigma };
    let mut ok = true;
    let mut got = Vec::new();
    for (p, seed) in [(0.93, 1), (0.35, 2)] {
        let shots = synth_histogram(p, readout, 20_000, seed).unwrap();
        let f = fit_double_gaussian(&shots).unwrap();
        let pg = f.fit.get("p_g");
        ok &= !f.unresolved && (pg - p).abs() < 0.02;
        got.push(format!("{p} -> {pg:.3}"));
    }
    let pop = run_population_sweep(&scn).unwrap();
    let thr = scn.config.injector.threshold_mv();
    for a in &pop.a_norm {
        ok &= a[0] == 1.0;
        ok &= a.windows(2).zip(&pop.bias_mv).all(|(w, &v)| v < thr || w[1] <= w[0]);
        ok &= a.iter().all(|&x| x <= 1.0);
    }
    let a_end: Vec<String> = pop.a_norm.iter().map(|a| format!("{:.3}", a[a.len() - 1])).collect();
    let (fast, time) = within(t, Duration::from_secs(60));
    report(
        9,
        ok && fast,
        &format!("p_g {}, A_norm at {} mV [{}], {time}", got.join(", "), pop.bias_mv[pop.bias_mv.len() - 1], a_end.join(" ")),
    );
}

#[test]
fn criterion_10_field_toggle_null() {
    let t = Instant::now();
    let scn: Scenario = default_scenario();
    let r = run_field_toggle(&scn).unwrap();
    let null_ok = r.deltas.iter().all(|d| d.mean.abs() < 2.0 * d.mc_stderr);
    let control = r.control.as_ref().map(|(scale, _, ds)| {
        let broken = ds.iter().all(|d| d.mean.abs() >= 2.0 * d.mc_stderr);
        let sig: Vec<String> = ds.iter().map(|d| format!("{} {:+.1}", d.label, d.significance())).collect();
        (broken, format!("control absorb x{scale}: [{}] SE", sig.join(", ")))
    });
    let (broken, ctl) = control.unwrap_or((false, "no control configured".into()));
    let sig: Vec<String> = r
        .deltas
        .iter()
        .map(|d| format!("{} {:+.4}/us ({:+.1} SE)", d.label, d.mean, d.significance()))
        .collect();
    let (fast, time) = within(t, Duration::from_secs(600));
    report(10, null_ok && broken && fast, &format!("mean normal - superconducting: {}; {ctl}, {time}", sig.join(", ")));
}

fn grid(n: usize, t_max: f64) -> Vec<f64> {
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn criterion_11_fit_kernels() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut bands = Vec::new();

    let tt = grid(40, 15.0);
    let y: Vec<f64> = tt.iter().map(|&t| exp_decay_model(t, 1.0, 3.8, 0.2)).collect();
    worst = worst.max(rel(fit_exp_decay(&tt, &y).unwrap().get("tau"), 3.8));

    let tc = grid(200, 2.0);
    let cos = |a: f64, t: f64| a * (-t / 2.0f64).exp() * (2.0 * std::f64::consts::PI * 5.0 * t + 0.3).cos() + 0.1;
    let f = fit_decaying_cosine(&tc, &tc.iter().map(|&t| cos(0.86, t)).collect::<Vec<_>>()).unwrap();
    for (n, w) in [("A", 0.86), ("f", 5.0), ("tau", 2.0)] {
        worst = worst.max(rel(f.get(n), w));
    }

    let d = [5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 130.0, 160.0, 200.0];
    let fe = fit_recovery(&d, &d.iter().map(|&t| 1.3 * (-t / 80.0f64).exp()).collect::<Vec<_>>()).unwrap();
    let mut ok = fe.choice == RecoveryModel::Exponential;
    worst = worst.max(rel(fe.chosen().get("tau"), 80.0));
    let dr = [0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0];
    let fr = fit_recovery(&dr, &dr.iter().map(|&t| recombination_model(t, 2.0, 0.05)).collect::<Vec<_>>()).unwrap();
    ok &= fr.choice == RecoveryModel::Recombination;
    worst = worst.max(rel(fr.chosen().get("rho"), 0.05));

    let x: Vec<f64> = (0..200).map(|i| -4.0 + 14.0 * i as f64 / 199.0).collect();
    let dens: Vec<f64> = x.iter().map(|&x| double_gaussian_density(x, 0.35, 0.0, 6.0, 1.0)).collect();
    let fg = fit_double_gaussian_density(&x, &dens, [0.5, 0.5, 5.0, 1.5]).unwrap();
    worst = worst.max(rel(fg.get("p_g"), 0.35)).max(rel(fg.get("sigma"), 1.0));
    ok &= worst < 1e-6;

    // noisy bands: fraction of Monte Carlo replicates landing inside tolerance
    let noise = Normal::new(0.0, 0.02).unwrap();
    let te = grid(50, 3.0 * 3.8);
    let exp_hits = (0..100)
        .filter(|&s| {
            let mut r = rng::stream(7, s);
            let y: Vec<f64> = te
                .iter()
                .map(|&t| {
                    let c = exp_decay_model(t, 1.0, 3.8, 0.0);
                    c * (1.0 + noise.sample(&mut r))
                })
                .collect();
            fit_exp_decay(&te, &y).is_ok_and(|f| rel(f.get("tau"), 3.8) < 0.05)
        })
        .count();
    ok &= exp_hits >= 95;
    bands.push(format!("T1 {exp_hits}/100"));

    let small = Normal::new(0.0, 0.005).unwrap();
    let cos_hits = (0..50)
        .filter(|&s| {
            let mut r = rng::stream(3, s);
            let y: Vec<f64> = tc.iter().map(|&t| cos(0.86, t) + small.sample(&mut r)).collect();
            fit_decaying_cosine(&tc, &y).is_ok_and(|f| rel(f.get("A"), 0.86) < 0.02)
        })
        .count();
    ok &= cos_hits >= 48;
    bands.push(format!("Rabi {cos_hits}/50"));

    let dd: Vec<f64> = (1..=12).map(|k| 20.0 * k as f64).collect();
    let five = Normal::new(0.0, 0.05).unwrap();
    let rec_hits = (0..50)
        .filter(|&s| {
            let mut r = rng::stream(11, s);
            let y: Vec<f64> = dd.iter().map(|&t| (-t / 67.0f64).exp() * (1.0 + five.sample(&mut r))).collect();
            fit_recovery(&dd, &y).is_ok_and(|f| f.exponential.as_ref().is_ok_and(|e| rel(e.get("tau"), 67.0) < 0.10))
        })
        .count();
    ok &= rec_hits >= 47;
    bands.push(format!("recovery {rec_hits}/50"));

    let readout = Readout { mu_g: 0.0, mu_e: 6.0, sigma: 1.0 };
    let hist_hits = (0..20)
        .filter(|&s| {
            let shots = synth_histogram(0.35, readout, 20_000, 100 + s).unwrap();
            fit_double_gaussian(&shots).is_ok_and(|f| (f.fit.get("p_g") - 0.35).abs() < 0.02)
        })
        .count();
    ok &= hist_hits >= 19;
    bands.push(format!("histogram {hist_hits}/20"));

    let (fast, time) = within(t, Duration::from_secs(120));
    report(
        11,
        ok && fast,
        &format!("noiseless worst {worst:.1e}, noise bands {}, {time}", bands.join(" ")),
    );
}
