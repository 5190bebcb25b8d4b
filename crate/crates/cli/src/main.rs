use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use phonontrap::chip::{self, ChipLayout};
use phonontrap::fit::{self, FitResult};
use phonontrap::injector::{emission_spectrum, iv_current};
use phonontrap::scenario::{self, svg, ResultTable, Scenario};
use phonontrap::transmon::{self, DispersionPoint, JunctionModel, TransmonParams};
use phonontrap::Error;

mod input;

/// Phonon-mediated quasiparticle poisoning simulator.
///
/// Exit status: 0 on success, 1 for invalid input or configuration, 2 when a
/// numerical step (fit, solver) fails.
#[derive(Parser)]
#[command(name = "phonontrap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the scenario experiments and write its CSV table.
    Simulate {
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model to measured or synthetic data.
    Fit {
        kind: FitKind,
        /// CSV input. t1/rabi/recovery: `x,y`; histogram: one shot per line;
        /// dispersion: `ng,f01_GHz,f02_half_GHz`.
        #[arg(long)]
        input: PathBuf,
        /// Initial Ec for the dispersion fit, GHz.
        #[arg(long, default_value_t = 0.4)]
        ec: f64,
        /// Initial effective ABS gap for the dispersion fit, GHz.
        #[arg(long, default_value_t = 25.0)]
        eff_gap: f64,
        /// Initial transmission for the dispersion fit.
        #[arg(long, default_value_t = 0.9)]
        transmission: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derived reports.
    Report {
        #[command(subcommand)]
        report: Report,
    },
    /// Chip layout tools.
    Layout {
        #[command(subcommand)]
        action: LayoutAction,
    },
    /// Injector I-V tools.
    Iv {
        #[command(subcommand)]
        action: IvAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    DcSweep,
    Pulse,
    FieldToggle,
    Population,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    T1,
    Rabi,
    Recovery,
    Histogram,
    Dispersion,
}

#[derive(Subcommand)]
enum Report {
    /// Pairwise added-loss ratios from a dc sweep.
    Ratios {
        /// dc-sweep CSV; overrides the scenario's ratio_report input.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum LayoutAction {
    /// Load and validate a layout (the built-in one when no path is given).
    Validate {
        path: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IvAction {
    /// Tabulate current and emitted phonon power against bias.
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = -3.0)]
        v_min: f64,
        #[arg(long, default_value_t = 3.0)]
        v_max: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file; the shipped default when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Injected pairs per cascade run.
    #[arg(long)]
    packets: Option<usize>,
    /// Also write an SVG plot next to the CSV.
    #[arg(long)]
    svg: bool,
}

impl Common {
    fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut s = match &self.config {
            Some(p) => Scenario::from_file(p)?,
            None => scenario::default_scenario(),
        };
        if let Some(seed) = self.seed {
            s.config.cascade.seed = seed;
        }
        if let Some(n) = self.packets {
            s.config.cascade.n_packets = n;
        }
        s.refresh()?;
        Ok(s)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(err) if !err.is_validation() => ExitCode::from(2),
                Some(_) => ExitCode::from(1),
                None if e.downcast_ref::<std::io::Error>().is_some() => ExitCode::from(1),
                None if e.is::<input::InputError>() => ExitCode::from(1),
                None => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { experiment, common } => simulate(experiment, &common),
        Command::Fit { kind, input, ec, eff_gap, transmission, out } => {
            fit_cmd(kind, &input, (ec, eff_gap, transmission), out.as_deref())
        }
        Command::Report { report: Report::Ratios { input, common } } => {
            let mut s = common.scenario()?;
            if let Some(p) = input {
                let p = std::fs::canonicalize(&p).map_err(|e| Error::Io { path: p.display().to_string(), source: e })?;
                let r = s.config.ratio_report.get_or_insert(scenario::RatioReport { input: None, noise_floor_per_us: 1e-3 });
                r.input = Some(p.display().to_string());
                s.refresh()?;
            }
            let t = scenario::run_ratio_report(&s)?;
            let series = ratio_series(&t);
            write_outputs(&common, "ratios", &t, "Added-loss ratios", "ratio", series)
        }
        Command::Layout { action: LayoutAction::Validate { path } } => layout_validate(path.as_deref()),
        Command::Iv { action: IvAction::Dump { config, v_min, v_max, points, out } } => {
            iv_dump(config.as_deref(), v_min, v_max, points, out.as_deref())
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(path)
}

fn write_outputs(
    common: &Common,
    stem: &str,
    table: &ResultTable,
    title: &str,
    y_label: &str,
    series: Vec<svg::Series>,
) -> anyhow::Result<()> {
    let path = write_file(&common.out, &format!("{stem}.csv"), &table.to_csv())?;
    println!("wrote {}", path.display());
    if common.svg {
        let x_label = table.columns.first().map(|c| c.header()).unwrap_or_default();
        let plot = svg::line_plot(title, &x_label, y_label, &series);
        let path = write_file(&common.out, &format!("{stem}.svg"), &plot)?;
        println!("wrote {}", path.display());
    }
    eprintln!("runtime {:.2} s", table.runtime_s);
    Ok(())
}

fn columns_with_prefix(t: &ResultTable, prefix: &str) -> Vec<svg::Series> {
    let x = t.rows.iter().map(|r| r[0]).collect::<Vec<_>>();
    t.columns
        .iter()
        .filter(|c| c.name.starts_with(prefix))
        .map(|c| svg::Series { label: c.name.clone(), x: x.clone(), y: t.column(&c.name) })
        .collect()
}

fn ratio_series(t: &ResultTable) -> Vec<svg::Series> {
    columns_with_prefix(t, "ratio_")
}

fn simulate(experiment: Experiment, common: &Common) -> anyhow::Result<()> {
    let s = common.scenario()?;
    match experiment {
        Experiment::DcSweep => {
            let r = scenario::run_dc_sweep(&s)?;
            for (l, g) in r.labels.iter().zip(&r.gamma) {
                println!("{l}: max added gamma1 {:.4} /us", g.iter().cloned().fold(0.0, f64::max));
            }
            let mut series = Vec::new();
            for (l, g) in r.labels.iter().zip(&r.gamma) {
                series.push(svg::Series { label: l.clone(), x: r.bias_mv.clone(), y: g.clone() });
            }
            write_outputs(common, "dc_sweep", &r.table, "Added loss vs bias", "added gamma1 [1/us]", series)
        }
        Experiment::Pulse => {
            let r = scenario::run_pulse_recovery(&s)?;
            for (l, f) in r.labels.iter().zip(&r.fits) {
                let c = f.chosen();
                let detail = match f.choice {
                    fit::RecoveryModel::Exponential => format!("tau {:.2} +/- {:.2} us", c.get("tau"), c.err("tau")),
                    fit::RecoveryModel::Recombination => format!("rho {:.4e}", c.get("rho")),
                };
                println!("{l}: {} recovery, {detail}", f.choice.as_str());
            }
            let series = r
                .labels
                .iter()
                .zip(&r.gamma)
                .map(|(l, g)| svg::Series { label: l.clone(), x: r.delays_us.clone(), y: g.clone() })
                .collect();
            write_outputs(common, "pulse", &r.table, "Recovery after pulse", "added gamma1 [1/us]", series)
        }
        Experiment::FieldToggle => {
            let r = scenario::run_field_toggle(&s)?;
            for d in r.deltas.iter().chain(r.control.iter().flat_map(|c| c.2.iter())) {
                println!(
                    "{} [{}]: mean delta {:+.4e} /us, {:.2} MC standard errors",
                    d.label,
                    d.condition,
                    d.mean,
                    d.significance()
                );
            }
            let series = columns_with_prefix(&r.table, "delta_gamma1_");
            write_outputs(common, "field_toggle", &r.table, "Field toggle", "delta gamma1 [1/us]", series)
        }
        Experiment::Population => {
            let r = scenario::run_population_sweep(&s)?;
            for (l, pg) in r.labels.iter().zip(&r.p_g) {
                println!("{l}: P_g from {:.3} to {:.3}", pg[0], pg[pg.len() - 1]);
            }
            let series = columns_with_prefix(&r.table, "a_norm_");
            write_outputs(common, "population", &r.table, "Normalised Rabi amplitude", "A_norm", series)
        }
    }
}

fn fit_cmd(kind: FitKind, path: &Path, init: (f64, f64, f64), out: Option<&Path>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let (report, csv) = match kind {
        FitKind::T1 | FitKind::Rabi => {
            let [x, y] = input::columns::<2>(&text)?;
            let r = match kind {
                FitKind::T1 => fit::fit_exp_decay(&x, &y)?,
                _ => fit::fit_decaying_cosine(&x, &y)?,
            };
            (r.to_text(), r.to_csv())
        }
        FitKind::Recovery => {
            let [x, y] = input::columns::<2>(&text)?;
            let r = fit::fit_recovery(&x, &y)?;
            let mut text = format!("selected = {}\n", r.choice.as_str());
            let mut csv = String::from("model,parameter,value,stderr\n");
            for (name, branch) in [("exponential", &r.exponential), ("recombination", &r.recombination)] {
                match branch {
                    Ok(f) => {
                        text += &format!("[{name}]\n{}", f.to_text());
                        csv += &prefixed_csv(name, f);
                    }
                    Err(e) => text += &format!("[{name}]\nfailed: {e}\n"),
                }
            }
            (text, csv)
        }
        FitKind::Histogram => {
            let [shots] = input::columns::<1>(&text)?;
            let r = fit::fit_double_gaussian(&shots)?;
            let mut text = r.fit.to_text();
            text += &format!("unresolved = {}\n", r.unresolved);
            (text, r.fit.to_csv())
        }
        FitKind::Dispersion => {
            let [ng, f01, f02] = input::columns::<3>(&text)?;
            let data: Vec<DispersionPoint> = (0..ng.len())
                .map(|i| DispersionPoint { ng: ng[i], f01_ghz: f01[i], f02_half_ghz: f02[i] })
                .collect();
            let init = TransmonParams {
                ec_ghz: init.0,
                junction: JunctionModel::ResonantAbs { eff_gap_ghz: init.1, transmission: init.2 },
                lead_gap_uev: 270.0,
            };
            init.validate()?;
            let r = transmon::fit_dispersion(&data, &init)?;
            (r.to_text(), r.to_csv())
        }
    };
    print!("{report}");
    if let Some(dir) = out {
        let p = write_file(dir, "fit.csv", &csv)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn prefixed_csv(model: &str, f: &FitResult) -> String {
    f.to_csv().lines().skip(1).map(|l| format!("{model},{l}\n")).collect()
}

fn layout_validate(path: Option<&Path>) -> anyhow::Result<()> {
    let layout: ChipLayout = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.display().to_string(), source: e })?;
            chip::load_layout(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => chip::default_layout(),
    };
    println!("layout ok: {} x {} mm, {} regions, {} qubits", layout.width_mm, layout.height_mm, layout.regions.len(), layout.qubits.len());
    for (name, _) in &layout.materials {
        println!("  {name}: {:.3} mm^2", layout.material_area(name));
    }
    for q in &layout.qubits {
        let d = layout.injector_distance(q.label).unwrap_or(f64::NAN);
        let film = layout.film_at(q.x_mm, q.y_mm)?.map(|_| "film").unwrap_or("bare");
        println!("  {}: ({}, {}) mm, {:.3} mm from injector, {film}", q.label, q.x_mm, q.y_mm, d);
    }
    Ok(())
}

fn iv_dump(config: Option<&Path>, v_min: f64, v_max: f64, points: usize, out: Option<&Path>) -> anyhow::Result<()> {
    if points < 2 || !(v_max > v_min) {
        bail!(input::InputError("need at least 2 points and v_max > v_min".into()));
    }
    let s = match config {
        Some(p) => Scenario::from_file(p)?,
        None => scenario::default_scenario(),
    };
    let inj = s.config.injector;
    let mut csv = String::from("v_bias_mV,current_nA,phonon_power_ueV_per_us,pair_rate_per_us\n");
    for i in 0..points {
        let v = v_min + (v_max - v_min) * i as f64 / (points - 1) as f64;
        let current = iv_current(&inj, v);
        let src = emission_spectrum(&inj, v.abs(), current.abs());
        csv += &format!("{v},{current:e},{:e},{:e}\n", src.power(), src.pair_rate());
    }
    match out {
        Some(dir) => {
            let p = write_file(dir, "iv.csv", &csv)?;
            println!("wrote {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
