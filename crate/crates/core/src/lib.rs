//! Desk-scale simulator for phonon-mediated quasiparticle poisoning of
//! superconducting qubits.
//!
//! The pipeline runs from a voltage-biased injector junction ([`injector`]),
//! through Monte Carlo phonon transport and pair-breaking cascades in the
//! substrate and its films ([`cascade`]), to quasiparticle densities and qubit
//! observables ([`qp`]). Qubit sensitivity to quasiparticles comes from the
//! transmon spectrum ([`transmon`]). [`fit`] holds the least-squares kernels
//! used to analyse simulated (or measured) traces, and [`scenario`] wires
//! everything into declarative experiments that emit CSV tables.
//!
//! Units are fixed across the crate: lengths in mm, energies in µeV
//! (transmon energies in GHz·h), times in µs, voltages in mV, currents in nA.

pub mod cascade;
pub mod chip;
pub mod error;
pub mod fit;
pub mod injector;
pub mod qp;
pub mod rng;
pub mod scenario;
pub mod transmon;
pub mod units;

pub use error::{Error, Result};
