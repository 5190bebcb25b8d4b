//! Physical constants in the crate's unit system.

/// Planck constant expressed as µeV per GHz.
pub const PLANCK_UEV_PER_GHZ: f64 = 4.135_667_696;

/// Elementary charges per µs carried by a current of 1 nA.
pub const CHARGES_PER_US_PER_NA: f64 = 6_241.509_074_460_763;

/// Boltzmann constant in µeV per mK.
pub const BOLTZMANN_UEV_PER_MK: f64 = 0.086_173_332_62;

/// Converts an energy in µeV to GHz·h.
pub fn uev_to_ghz(energy_uev: f64) -> f64 {
    energy_uev / PLANCK_UEV_PER_GHZ
}

/// Converts a rate in ns⁻¹ to µs⁻¹.
pub fn per_ns_to_per_us(rate: f64) -> f64 {
    rate * 1.0e3
}
