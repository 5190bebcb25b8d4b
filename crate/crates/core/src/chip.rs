//! Chip geometry: a substrate box with rectangular film regions on its top
//! surface, one phonon injector and a set of qubit sites.
//!
//! Films have no thickness in the geometry; the top surface is at
//! `z = substrate_thickness_mm` and the backside at `z = 0`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transmon::TransmonParams;

/// Layout shipped with the crate.
pub const DEFAULT_LAYOUT_TOML: &str = include_str!("../../../configs/default_layout.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmMaterial {
    /// Superconducting gap; 0 for a normal metal.
    #[serde(rename = "gap_ueV")]
    pub gap: f64,
    pub thickness_nm: f64,
    /// Probability that a phonon hitting the film is absorbed.
    pub absorb_prob: f64,
    /// Probability that a relaxed pair recombines and re-emits a 2Δ phonon.
    pub recombine_reemit_prob: f64,
}

impl FilmMaterial {
    pub fn is_normal(&self) -> bool {
        self.gap == 0.0
    }

    fn validate(&self, name: &str) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.gap >= 0.0) || !self.gap.is_finite() {
            return Err(Error::validation(format!("material {name}: gap must be >= 0")));
        }
        if !(self.thickness_nm > 0.0) {
            return Err(Error::validation(format!("material {name}: thickness must be > 0")));
        }
        if !prob(self.absorb_prob) || !prob(self.recombine_reemit_prob) {
            return Err(Error::validation(format!(
                "material {name}: probabilities must lie in [0, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min_mm: f64,
    pub x_max_mm: f64,
    pub y_min_mm: f64,
    pub y_max_mm: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min_mm: x_min, x_max_mm: x_max, y_min_mm: y_min, y_max_mm: y_max }
    }

    pub fn area(&self) -> f64 {
        (self.x_max_mm - self.x_min_mm) * (self.y_max_mm - self.y_min_mm)
    }

    // Half-open so that rectangles sharing an edge never both claim a point.
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min_mm && x < self.x_max_mm && y >= self.y_min_mm && y < self.y_max_mm
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x_min_mm < other.x_max_mm
            && other.x_min_mm < self.x_max_mm
            && self.y_min_mm < other.y_max_mm
            && other.y_min_mm < self.y_max_mm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub material: String,
    #[serde(flatten)]
    pub rect: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QubitLabel {
    #[serde(rename = "Near_Al")]
    NearAl,
    #[serde(rename = "Near_NbTiN")]
    NearNbTiN,
    #[serde(rename = "Far_Al")]
    FarAl,
    #[serde(rename = "Far_NbTiN")]
    FarNbTiN,
}

impl QubitLabel {
    pub const ALL: [QubitLabel; 4] =
        [QubitLabel::NearAl, QubitLabel::NearNbTiN, QubitLabel::FarAl, QubitLabel::FarNbTiN];

    pub fn as_str(self) -> &'static str {
        match self {
            QubitLabel::NearAl => "Near_Al",
            QubitLabel::NearNbTiN => "Near_NbTiN",
            QubitLabel::FarAl => "Far_Al",
            QubitLabel::FarNbTiN => "Far_NbTiN",
        }
    }
}

impl fmt::Display for QubitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QubitLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QubitLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::input(format!("unknown qubit label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitSite {
    pub label: QubitLabel,
    pub x_mm: f64,
    pub y_mm: f64,
    pub sense_radius_mm: f64,
    #[serde(rename = "nanowire_gap_ueV")]
    pub nanowire_gap: f64,
    pub transmon: TransmonParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipLayout {
    pub width_mm: f64,
    pub height_mm: f64,
    pub substrate_thickness_mm: f64,
    pub sound_speed_mm_per_us: f64,
    /// Probability of specular (vs. diffuse) reflection at a surface.
    pub surface_specularity: f64,
    pub backside_absorb_prob: f64,
    pub injector: Point,
    #[serde(default)]
    pub materials: BTreeMap<String, FilmMaterial>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub qubits: Vec<QubitSite>,
}

/// Parses and validates a layout from TOML text.
pub fn load_layout(config_text: &str) -> Result<ChipLayout> {
    let layout: ChipLayout = toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    layout.validate()?;
    Ok(layout)
}

pub fn default_layout() -> ChipLayout {
    load_layout(DEFAULT_LAYOUT_TOML).expect("shipped layout is valid")
}

impl ChipLayout {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout serializes")
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_mm).contains(&x) && (0.0..=self.height_mm).contains(&y)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        for (name, v) in [
            ("width_mm", self.width_mm),
            ("height_mm", self.height_mm),
            ("substrate_thickness_mm", self.substrate_thickness_mm),
            ("sound_speed_mm_per_us", self.sound_speed_mm_per_us),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !prob(self.surface_specularity) || !prob(self.backside_absorb_prob) {
            return Err(Error::validation("specularity and backside_absorb_prob must lie in [0, 1]"));
        }
        if !self.in_bounds(self.injector.x_mm, self.injector.y_mm) {
            return Err(Error::validation(format!("injector at {:?} is outside the chip", self.injector)));
        }
        for (name, m) in &self.materials {
            m.validate(name)?;
        }
        for (i, r) in self.regions.iter().enumerate() {
            let rect = &r.rect;
            if !self.materials.contains_key(&r.material) {
                return Err(Error::validation(format!(
                    "region {i} references undefined material {:?}",
                    r.material
                )));
            }
            if !(rect.x_min_mm < rect.x_max_mm && rect.y_min_mm < rect.y_max_mm) {
                return Err(Error::validation(format!("region {i} ({}) is empty or inverted", r.material)));
            }
            if rect.x_min_mm < 0.0
                || rect.y_min_mm < 0.0
                || rect.x_max_mm > self.width_mm
                || rect.y_max_mm > self.height_mm
            {
                return Err(Error::validation(format!("region {i} ({}) extends outside the chip", r.material)));
            }
            for (j, other) in self.regions.iter().enumerate().take(i) {
                if rect.overlaps(&other.rect) {
                    return Err(Error::validation(format!(
                        "region {i} ({}) overlaps region {j} ({})",
                        r.material, other.material
                    )));
                }
            }
        }
        for (i, q) in self.qubits.iter().enumerate() {
            if !self.in_bounds(q.x_mm, q.y_mm) {
                return Err(Error::validation(format!("qubit {} is outside the chip", q.label)));
            }
            if !(q.sense_radius_mm > 0.0) || !(q.nanowire_gap > 0.0) {
                return Err(Error::validation(format!(
                    "qubit {}: sense radius and nanowire gap must be positive",
                    q.label
                )));
            }
            if self.qubits[..i].iter().any(|o| o.label == q.label) {
                return Err(Error::validation(format!("duplicate qubit label {}", q.label)));
            }
            q.transmon
                .validate()
                .map_err(|e| Error::validation(format!("qubit {}: {e}", q.label)))?;
        }
        Ok(())
    }

    /// Index of the region covering `(x, y)`, if any. Points on the far chip
    /// edges are folded back onto the chip so the lookup stays total.
    pub fn region_index_at(&self, x: f64, y: f64) -> Option<usize> {
        let x = if x >= self.width_mm { self.width_mm * (1.0 - f64::EPSILON) } else { x };
        let y = if y >= self.height_mm { self.height_mm * (1.0 - f64::EPSILON) } else { y };
        self.regions.iter().position(|r| r.rect.contains(x, y))
    }

    /// Film covering the top surface at `(x, y)`; `Ok(None)` is bare substrate.
    pub fn film_at(&self, x: f64, y: f64) -> Result<Option<&FilmMaterial>> {
        if !self.in_bounds(x, y) {
            return Err(Error::input(format!("point ({x}, {y}) is outside the chip")));
        }
        Ok(self.region_index_at(x, y).map(|i| &self.materials[&self.regions[i].material]))
    }

    pub fn qubit(&self, label: QubitLabel) -> Option<&QubitSite> {
        self.qubits.iter().find(|q| q.label == label)
    }

    pub fn injector_distance(&self, label: QubitLabel) -> Option<f64> {
        self.qubit(label)
            .map(|q| (q.x_mm - self.injector.x_mm).hypot(q.y_mm - self.injector.y_mm))
    }

    /// Total area covered by regions of `material`.
    pub fn material_area(&self, material: &str) -> f64 {
        self.regions.iter().filter(|r| r.material == material).map(|r| r.rect.area()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bare() -> &'static str {
        r#"
width_mm = 6.0
height_mm = 6.0
substrate_thickness_mm = 0.525
sound_speed_mm_per_us = 6.0
surface_specularity = 0.5
backside_absorb_prob = 0.1
regions = []
injector = { x_mm = 3.0, y_mm = 5.8 }
"#
    }

    #[test]
    fn default_layout_distances() {
        let l = default_layout();
        assert_eq!(l.qubits.len(), 4);
        for (label, d) in [
            (QubitLabel::NearAl, 1.8),
            (QubitLabel::NearNbTiN, 1.8),
            (QubitLabel::FarAl, 4.4),
            (QubitLabel::FarNbTiN, 4.4),
        ] {
            let got = l.injector_distance(label).unwrap();
            assert!((got - d).abs() / d < 0.01, "{label}: {got}");
        }
        // injector at the top edge, one qubit per corner quadrant
        assert!(l.injector.y_mm > 0.9 * l.height_mm);
        let near_al = l.qubit(QubitLabel::NearAl).unwrap();
        let far_nb = l.qubit(QubitLabel::FarNbTiN).unwrap();
        assert!(near_al.x_mm < 3.0 && near_al.y_mm > 3.0);
        assert!(far_nb.x_mm > 3.0 && far_nb.y_mm < 3.0);
    }

    #[test]
    fn film_lookup_in_default_layout() {
        let l = default_layout();
        let al = l.film_at(0.5, 3.0).unwrap().unwrap();
        assert_eq!(al.gap, 180.0);
        // inside the NbTiN guard around the Al-side qubits
        let q = l.qubit(QubitLabel::NearAl).unwrap();
        let guard = l.film_at(q.x_mm + 0.29, q.y_mm).unwrap().unwrap();
        assert!(guard.gap >= 1500.0);
        assert!(l.film_at(3.0, 3.0).unwrap().is_none());
        assert!(l.film_at(6.5, 3.0).is_err());
        assert!(l.film_at(6.0, 6.0).unwrap().is_some());
    }

    #[test]
    fn empty_region_list_is_valid() {
        let l = load_layout(bare()).unwrap();
        assert!(l.regions.is_empty());
        assert!(l.film_at(1.0, 1.0).unwrap().is_none());
    }

    #[test]
    fn overlapping_regions_rejected() {
        let text = format!(
            "{}{}",
            bare().replace("regions = []\n", ""),
            r#"
[materials.Al]
gap_ueV = 180.0
thickness_nm = 200.0
absorb_prob = 0.05
recombine_reemit_prob = 1.0

[[regions]]
material = "Al"
x_min_mm = 0.0
x_max_mm = 2.0
y_min_mm = 0.0
y_max_mm = 2.0

[[regions]]
material = "Al"
x_min_mm = 1.5
x_max_mm = 3.0
y_min_mm = 1.0
y_max_mm = 2.5
"#
        );
        let err = load_layout(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("overlaps")), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = load_layout("width_mm = = 3").unwrap_err();
        assert!(matches!(err, Error::Parse(ref m) if m.contains("line 1")), "{err}");
    }

    #[test]
    fn bad_values_rejected() {
        let l = default_layout();
        let mut bad = l.clone();
        bad.qubits[0].x_mm = 7.0;
        assert!(bad.validate().is_err());
        let mut bad = l.clone();
        bad.qubits[1].label = bad.qubits[0].label;
        assert!(bad.validate().is_err());
        let mut bad = l.clone();
        bad.regions[0].material = "Nb".into();
        assert!(bad.validate().is_err());
        let mut bad = l;
        bad.regions[0].rect.x_max_mm = 9.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let l = default_layout();
        let again = load_layout(&l.to_toml()).unwrap();
        assert_eq!(l, again);
    }

    proptest! {
        #[test]
        fn at_most_one_region_claims_each_point(x in 0.0f64..6.0, y in 0.0f64..6.0) {
            let l = default_layout();
            let n = l.regions.iter().filter(|r| r.rect.contains(x, y)).count();
            prop_assert!(n <= 1);
        }
    }
}
