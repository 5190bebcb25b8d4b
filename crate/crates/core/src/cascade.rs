//! Monte Carlo phonon transport in the substrate box.
//!
//! Phonons fly ballistically between the six faces of the substrate. The
//! backside is thermally anchored and absorbs with `backside_absorb_prob`.
//! On the top surface a phonon may be caught by a qubit's sensing disc, by a
//! superconducting film (pair breaking, then [`downconvert`]) or by a normal
//! film (thermalised). Anything not absorbed reflects, specularly or with a
//! cosine law.
//!
//! The unit of Monte Carlo work is one injected quasiparticle pair: its
//! phonons and all their descendants are traced on the RNG stream addressed
//! by `(seed, pair index)`. Work is cut into fixed-size chunks whose ledgers
//! are merged in index order, so the result does not depend on the number of
//! worker threads.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chip::{ChipLayout, FilmMaterial};
use crate::error::{Error, Result};
use crate::injector::PhononSource;
use crate::rng::{self, Stream};

/// Width of the arrival-time histogram bins, µs.
pub const ARRIVAL_BIN_US: f64 = 0.25;
/// Number of arrival-time bins; later arrivals land in the last bin.
pub const ARRIVAL_BINS: usize = 400;
/// Bounce histogram length; the last bin collects overflow.
pub const BOUNCE_BINS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhononPacket {
    pub energy: f64,
    pub position: [f64; 3],
    pub direction: [f64; 3],
    pub weight: f64,
}

impl PhononPacket {
    pub fn is_valid(&self) -> bool {
        let [a, b, c] = self.direction;
        self.energy > 0.0 && self.weight > 0.0 && ((a * a + b * b + c * c).sqrt() - 1.0).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Number of injected pairs to simulate.
    pub n_packets: usize,
    pub seed: u64,
    #[serde(rename = "track_floor_ueV")]
    pub track_floor: f64,
    pub max_bounces: u32,
    /// Pairs per work chunk. Changing it does not change results.
    pub chunk_size: usize,
    /// Worker threads; `None` uses the global rayon pool.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            n_packets: 100_000,
            seed: 1,
            track_floor: 530.0,
            max_bounces: 10_000,
            chunk_size: 2048,
            workers: None,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self, layout: &ChipLayout) -> Result<()> {
        if self.n_packets == 0 || self.chunk_size == 0 {
            return Err(Error::validation("n_packets and chunk_size must be >= 1"));
        }
        let min_gap = layout.qubits.iter().map(|q| q.nanowire_gap).fold(f64::INFINITY, f64::min);
        if !(self.track_floor >= 0.0) || self.track_floor >= 2.0 * min_gap {
            return Err(Error::validation(format!(
                "track floor {} µeV must lie below the qubits' pair-breaking threshold {} µeV",
                self.track_floor,
                2.0 * min_gap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Pair breaking at a qubit; `target` is the qubit index.
    QubitHit,
    /// Pair breaking in a superconducting film; descendants follow.
    FilmAbsorbed,
    /// Energy kept by a film when a relaxed pair does not re-emit.
    Retained,
    /// Absorbed and thermalised by a normal film.
    Thermalized,
    Escaped,
    Dropped,
    Stuck,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::QubitHit => "qubit_hit",
            EventKind::FilmAbsorbed => "film_absorbed",
            EventKind::Retained => "retained",
            EventKind::Thermalized => "thermalized",
            EventKind::Escaped => "escaped",
            EventKind::Dropped => "dropped",
            EventKind::Stuck => "stuck",
        }
    }
}

pub const NO_TARGET: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    /// Qubit index for hits, material index for film events, else `NO_TARGET`.
    pub target: u16,
    pub energy: f64,
    pub x: f64,
    pub y: f64,
    pub time_us: f64,
    /// Top and backside hits made by this phonon (side walls excluded).
    pub bounces: u32,
}

/// Layout flattened into index-based tables for tracing.
pub struct Geometry<'a> {
    layout: &'a ChipLayout,
    material_names: Vec<&'a str>,
    materials: Vec<&'a FilmMaterial>,
    region_material: Vec<usize>,
    qubits: Vec<(f64, f64, f64, f64)>,
}

impl<'a> Geometry<'a> {
    pub fn new(layout: &'a ChipLayout) -> Self {
        let material_names: Vec<&str> = layout.materials.keys().map(String::as_str).collect();
        let materials = layout.materials.values().collect();
        let region_material = layout
            .regions
            .iter()
            .map(|r| material_names.iter().position(|m| *m == r.material).expect("validated layout"))
            .collect();
        let qubits = layout
            .qubits
            .iter()
            .map(|q| (q.x_mm, q.y_mm, q.sense_radius_mm * q.sense_radius_mm, 2.0 * q.nanowire_gap))
            .collect();
        Self { layout, material_names, materials, region_material, qubits }
    }

    pub fn material_name(&self, idx: u16) -> &str {
        self.material_names.get(idx as usize).copied().unwrap_or("")
    }

    fn qubit_at(&self, x: f64, y: f64, energy: f64) -> Option<usize> {
        self.qubits.iter().position(|&(qx, qy, r2, threshold)| {
            energy >= threshold && (x - qx).powi(2) + (y - qy).powi(2) <= r2
        })
    }

    fn film_at(&self, x: f64, y: f64) -> Option<usize> {
        self.layout.region_index_at(x, y).map(|r| self.region_material[r])
    }
}

fn downward_isotropic<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let c = 1.0 - rng.random::<f64>();
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    [s * phi.cos(), s * phi.sin(), -c]
}

/// Cosine-law direction about the inward normal `axis` (0, 1 or 2) with sign.
fn lambertian<R: Rng + ?Sized>(rng: &mut R, axis: usize, sign: f64) -> [f64; 3] {
    let c = (1.0 - rng.random::<f64>()).sqrt();
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    let (a, b) = (s * phi.cos(), s * phi.sin());
    let mut d = [0.0; 3];
    d[axis] = sign * c;
    d[(axis + 1) % 3] = a;
    d[(axis + 2) % 3] = b;
    d
}

/// One pair-breaking cycle in a superconducting film: the two quasiparticles
/// relax to the gap edge (one phonon each) and may recombine into a 2Δ
/// phonon. Returns the re-emitted energies and the energy retained in the
/// film.
pub fn downconvert<R: Rng + ?Sized>(energy: f64, film: &FilmMaterial, rng: &mut R) -> (Vec<f64>, f64) {
    assert!(film.gap > 0.0 && energy >= 2.0 * film.gap, "downconvert needs E >= 2Δ > 0");
    let relax = 0.5 * energy - film.gap;
    let mut out = Vec::with_capacity(3);
    if relax > 0.0 {
        out.push(relax);
        out.push(energy - relax - 2.0 * film.gap);
    }
    let pair = 2.0 * film.gap;
    if rng.random::<f64>() < film.recombine_reemit_prob {
        out.push(pair);
        (out, 0.0)
    } else {
        (out, pair)
    }
}

/// Traces `packet` and all its descendants, returning terminal and
/// absorption events in the order they occur.
pub fn trace(
    geometry: &Geometry,
    packet: PhononPacket,
    config: &CascadeConfig,
    rng: &mut Stream,
) -> Vec<Event> {
    let mut events = Vec::new();
    trace_into(geometry, packet, 0.0, config, rng, &mut events);
    events
}

fn trace_into(
    geo: &Geometry,
    packet: PhononPacket,
    t0: f64,
    config: &CascadeConfig,
    rng: &mut Stream,
    events: &mut Vec<Event>,
) {
    let layout = geo.layout;
    let size = [layout.width_mm, layout.height_mm, layout.substrate_thickness_mm];
    let inv_speed = 1.0 / layout.sound_speed_mm_per_us;
    let mut stack = vec![(packet, t0)];
    while let Some((p, t_start)) = stack.pop() {
        let energy = p.energy;
        let mut pos = p.position;
        let mut dir = p.direction;
        let mut time = t_start;
        let mut bounces = 0u32;
        let mut walls = 0u32;
        let ev = |kind, target, pos: [f64; 3], time, bounces| Event {
            kind,
            target,
            energy,
            x: pos[0],
            y: pos[1],
            time_us: time,
            bounces,
        };
        if energy < config.track_floor {
            events.push(ev(EventKind::Dropped, NO_TARGET, pos, time, 0));
            continue;
        }
        loop {
            // nearest face along the flight direction
            let mut t_hit = f64::INFINITY;
            let mut face = (0usize, 0.0f64);
            for k in 0..3 {
                let t = if dir[k] > 0.0 {
                    (size[k] - pos[k]) / dir[k]
                } else if dir[k] < 0.0 {
                    -pos[k] / dir[k]
                } else {
                    f64::INFINITY
                };
                if t < t_hit {
                    t_hit = t;
                    face = (k, if dir[k] > 0.0 { size[k] } else { 0.0 });
                }
            }
            let t_hit = t_hit.max(0.0);
            for k in 0..3 {
                pos[k] += dir[k] * t_hit;
            }
            let (axis, wall) = face;
            for k in 0..3 {
                pos[k] = pos[k].clamp(0.0, size[k]);
            }
            pos[axis] = wall;
            time += t_hit * inv_speed;
            walls += 1;
            if walls > config.max_bounces {
                events.push(ev(EventKind::Stuck, NO_TARGET, pos, time, bounces));
                break;
            }
            let inward = if wall == 0.0 { 1.0 } else { -1.0 };
            if axis == 2 {
                bounces += 1;
                if wall == 0.0 {
                    if rng.random::<f64>() < layout.backside_absorb_prob {
                        events.push(ev(EventKind::Escaped, NO_TARGET, pos, time, bounces));
                        break;
                    }
                } else {
                    if let Some(q) = geo.qubit_at(pos[0], pos[1], energy) {
                        events.push(ev(EventKind::QubitHit, q as u16, pos, time, bounces));
                        break;
                    }
                    if let Some(m) = geo.film_at(pos[0], pos[1]) {
                        let film = geo.materials[m];
                        let can_absorb = film.is_normal() || energy >= 2.0 * film.gap;
                        if can_absorb && rng.random::<f64>() < film.absorb_prob {
                            if film.is_normal() {
                                events.push(ev(EventKind::Thermalized, m as u16, pos, time, bounces));
                            } else {
                                events.push(ev(EventKind::FilmAbsorbed, m as u16, pos, time, bounces));
                                let (children, retained) = downconvert(energy, film, rng);
                                if retained > 0.0 {
                                    events.push(Event {
                                        energy: retained,
                                        ..ev(EventKind::Retained, m as u16, pos, time, bounces)
                                    });
                                }
                                // pushed in reverse so they are traced in emission order
                                let born: Vec<_> = children
                                    .into_iter()
                                    .filter(|&e| e > 0.0)
                                    .map(|e| {
                                        let d = downward_isotropic(rng);
                                        (PhononPacket { energy: e, position: pos, direction: d, weight: p.weight }, time)
                                    })
                                    .collect();
                                stack.extend(born.into_iter().rev());
                            }
                            break;
                        }
                    }
                }
            }
            if rng.random::<f64>() < layout.surface_specularity {
                dir[axis] = -dir[axis];
            } else {
                dir = lambertian(rng, axis, inward);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStats {
    pub n_packets: usize,
    /// Injected pairs per µs; scales per-pair energies to power.
    pub pair_rate: f64,
    /// Total sampled source energy, µeV.
    pub injected: f64,
    pub qubit_labels: Vec<String>,
    pub qubit_energy: Vec<f64>,
    /// Sum over pairs of the squared per-pair qubit energy.
    pub qubit_energy_sq: Vec<f64>,
    pub qubit_events: Vec<u64>,
    /// Energy ending up in each film: thermalised or retained.
    pub material_absorbed: BTreeMap<String, f64>,
    pub film_absorptions: u64,
    pub source_retained: f64,
    pub escaped: f64,
    pub dropped: f64,
    pub stuck: f64,
    pub stuck_events: u64,
    pub bounce_histogram: Vec<u64>,
    /// Per qubit, energy arriving in each `ARRIVAL_BIN_US` bin after emission.
    pub arrival: Vec<Vec<f64>>,
}

impl CascadeStats {
    fn zero(layout: &ChipLayout, n_packets: usize, pair_rate: f64) -> Self {
        let nq = layout.qubits.len();
        Self {
            n_packets,
            pair_rate,
            injected: 0.0,
            qubit_labels: layout.qubits.iter().map(|q| q.label.to_string()).collect(),
            qubit_energy: vec![0.0; nq],
            qubit_energy_sq: vec![0.0; nq],
            qubit_events: vec![0; nq],
            material_absorbed: layout.materials.keys().map(|k| (k.clone(), 0.0)).collect(),
            film_absorptions: 0,
            source_retained: 0.0,
            escaped: 0.0,
            dropped: 0.0,
            stuck: 0.0,
            stuck_events: 0,
            bounce_histogram: vec![0; BOUNCE_BINS],
            arrival: vec![vec![0.0; ARRIVAL_BINS]; nq],
        }
    }

    fn merge(&mut self, other: &CascadeStats) {
        self.injected += other.injected;
        for i in 0..self.qubit_energy.len() {
            self.qubit_energy[i] += other.qubit_energy[i];
            self.qubit_energy_sq[i] += other.qubit_energy_sq[i];
            self.qubit_events[i] += other.qubit_events[i];
            for (a, b) in self.arrival[i].iter_mut().zip(&other.arrival[i]) {
                *a += b;
            }
        }
        for (k, v) in &other.material_absorbed {
            *self.material_absorbed.get_mut(k).expect("same layout") += v;
        }
        self.film_absorptions += other.film_absorptions;
        self.source_retained += other.source_retained;
        self.escaped += other.escaped;
        self.dropped += other.dropped;
        self.stuck += other.stuck;
        self.stuck_events += other.stuck_events;
        for (a, b) in self.bounce_histogram.iter_mut().zip(&other.bounce_histogram) {
            *a += b;
        }
    }

    fn scale(&self) -> f64 {
        if self.n_packets == 0 {
            0.0
        } else {
            self.pair_rate / self.n_packets as f64
        }
    }

    /// Pair-breaking power delivered to qubit `i`, µeV/µs.
    pub fn qubit_power(&self, i: usize) -> f64 {
        self.qubit_energy[i] * self.scale()
    }

    /// Monte Carlo standard error of [`qubit_power`](Self::qubit_power).
    pub fn qubit_power_stderr(&self, i: usize) -> f64 {
        let n = self.n_packets as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.qubit_energy[i] / n;
        let var = ((self.qubit_energy_sq[i] / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() * self.pair_rate
    }

    pub fn qubit_index(&self, label: &str) -> Option<usize> {
        self.qubit_labels.iter().position(|l| l == label)
    }

    /// Sum of every energy sink.
    pub fn accounted(&self) -> f64 {
        self.qubit_energy.iter().sum::<f64>()
            + self.material_absorbed.values().sum::<f64>()
            + self.source_retained
            + self.escaped
            + self.dropped
            + self.stuck
    }

    /// Relative mismatch between injected and accounted energy.
    pub fn ledger_residual(&self) -> f64 {
        if self.injected == 0.0 {
            return self.accounted().abs();
        }
        (self.injected - self.accounted()).abs() / self.injected
    }

    pub fn mean_bounces(&self) -> f64 {
        let (mut n, mut s) = (0u64, 0u64);
        for (k, c) in self.bounce_histogram.iter().enumerate() {
            n += c;
            s += k as u64 * c;
        }
        if n == 0 {
            0.0
        } else {
            s as f64 / n as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairs simulated      {}", self.n_packets);
        let _ = writeln!(s, "pair rate            {:.6e} /us", self.pair_rate);
        let _ = writeln!(s, "injected energy      {:.6e} ueV", self.injected);
        for (i, l) in self.qubit_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "{l:<20} {:.6e} +- {:.2e} ueV/us  ({} events)",
                self.qubit_power(i),
                self.qubit_power_stderr(i),
                self.qubit_events[i]
            );
        }
        for (m, e) in &self.material_absorbed {
            let _ = writeln!(s, "absorbed in {m:<8} {e:.6e} ueV");
        }
        let _ = writeln!(s, "escaped backside     {:.6e} ueV", self.escaped);
        let _ = writeln!(s, "dropped below floor  {:.6e} ueV", self.dropped);
        let _ = writeln!(s, "stuck                {:.6e} ueV", self.stuck);
        let _ = writeln!(s, "ledger residual      {:.3e}", self.ledger_residual());
        s
    }

    /// `qubit,power_ueV_per_us,stderr_ueV_per_us,events` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("qubit,power_ueV_per_us,stderr_ueV_per_us,events\n");
        for (i, l) in self.qubit_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "{l},{:e},{:e},{}",
                self.qubit_power(i),
                self.qubit_power_stderr(i),
                self.qubit_events[i]
            );
        }
        s
    }
}

/// Result of [`run_source`], optionally with the full event log.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeRun {
    pub stats: CascadeStats,
    /// `(pair index, event)`; only filled when requested.
    pub events: Vec<(usize, Event)>,
}

fn run_pair(
    geo: &Geometry,
    source: &PhononSource,
    config: &CascadeConfig,
    index: usize,
    stats: &mut CascadeStats,
    qubit_scratch: &mut [f64],
    log: Option<&mut Vec<(usize, Event)>>,
) {
    let layout = geo.layout;
    let mut rng = rng::stream(config.seed, index as u64);
    let pair = source.sample_pair(&mut rng);
    stats.injected += pair.total();
    stats.source_retained += pair.retained;
    let start = [layout.injector.x_mm, layout.injector.y_mm, layout.substrate_thickness_mm];
    let mut events = Vec::new();
    for &e in &pair.phonons {
        let packet = PhononPacket { energy: e, position: start, direction: downward_isotropic(&mut rng), weight: 1.0 };
        trace_into(geo, packet, 0.0, config, &mut rng, &mut events);
    }
    qubit_scratch.iter_mut().for_each(|x| *x = 0.0);
    for e in &events {
        match e.kind {
            EventKind::QubitHit => {
                let q = e.target as usize;
                qubit_scratch[q] += e.energy;
                stats.qubit_events[q] += 1;
                let bin = ((e.time_us / ARRIVAL_BIN_US) as usize).min(ARRIVAL_BINS - 1);
                stats.arrival[q][bin] += e.energy;
            }
            EventKind::FilmAbsorbed => stats.film_absorptions += 1,
            EventKind::Retained | EventKind::Thermalized => {
                *stats.material_absorbed.get_mut(geo.material_name(e.target)).expect("known material") += e.energy;
            }
            EventKind::Escaped => stats.escaped += e.energy,
            EventKind::Dropped => stats.dropped += e.energy,
            EventKind::Stuck => {
                stats.stuck += e.energy;
                stats.stuck_events += 1;
            }
        }
        if !matches!(e.kind, EventKind::Retained | EventKind::Dropped) {
            stats.bounce_histogram[(e.bounces as usize).min(BOUNCE_BINS - 1)] += 1;
        }
    }
    for (q, x) in qubit_scratch.iter().enumerate() {
        stats.qubit_energy[q] += x;
        stats.qubit_energy_sq[q] += x * x;
    }
    if let Some(log) = log {
        log.extend(events.into_iter().map(|e| (index, e)));
    }
}

/// Simulates `config.n_packets` injected pairs from `source`.
pub fn run_source(layout: &ChipLayout, source: &PhononSource, config: &CascadeConfig) -> Result<CascadeStats> {
    Ok(run_source_logged(layout, source, config, false)?.stats)
}

pub fn run_source_logged(
    layout: &ChipLayout,
    source: &PhononSource,
    config: &CascadeConfig,
    record_events: bool,
) -> Result<CascadeRun> {
    config.validate(layout)?;
    if source.is_empty() {
        return Ok(CascadeRun { stats: CascadeStats::zero(layout, config.n_packets, 0.0), events: Vec::new() });
    }
    let geo = Geometry::new(layout);
    let n = config.n_packets;
    let chunk = config.chunk_size;
    let n_chunks = n.div_ceil(chunk);
    let nq = layout.qubits.len();
    let work = |c: usize| {
        let mut stats = CascadeStats::zero(layout, 0, 0.0);
        let mut scratch = vec![0.0; nq];
        let mut log = record_events.then(Vec::new);
        for i in c * chunk..((c + 1) * chunk).min(n) {
            run_pair(&geo, source, config, i, &mut stats, &mut scratch, log.as_mut());
        }
        (stats, log.unwrap_or_default())
    };
    let run = || (0..n_chunks).into_par_iter().map(work).collect::<Vec<_>>();
    let parts = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut stats = CascadeStats::zero(layout, n, source.pair_rate());
    let mut events = Vec::new();
    for (s, log) in parts {
        stats.merge(&s);
        events.extend(log);
    }
    Ok(CascadeRun { stats, events })
}

/// Event log as CSV `packet_id,event,material,energy_ueV,x_mm,y_mm`. The
/// material column holds the qubit label for qubit hits.
pub fn events_to_csv(layout: &ChipLayout, events: &[(usize, Event)]) -> String {
    let geo = Geometry::new(layout);
    let mut s = String::from("packet_id,event,material,energy_ueV,x_mm,y_mm\n");
    for (id, e) in events {
        let target = match e.kind {
            EventKind::QubitHit => layout.qubits[e.target as usize].label.as_str(),
            _ if e.target == NO_TARGET => "",
            _ => geo.material_name(e.target),
        };
        let _ = writeln!(s, "{id},{},{target},{},{},{}", e.kind.as_str(), e.energy, e.x, e.y);
    }
    s
}
