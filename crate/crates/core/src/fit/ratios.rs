use crate::error::{Error, Result};

/// Added loss rate of one qubit against bias voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub label: String,
    pub bias_mv: Vec<f64>,
    pub added_gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub bias_mv: Vec<f64>,
    /// `(numerator, denominator)` labels, one per pair in input order.
    pub pairs: Vec<(String, String)>,
    /// `ratios[pair][bias]`; NaN where the denominator is below the floor.
    pub ratios: Vec<Vec<f64>>,
}

impl RatioTable {
    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<&[f64]> {
        self.pairs
            .iter()
            .position(|(a, b)| a == numerator && b == denominator)
            .map(|i| self.ratios[i].as_slice())
    }
}

/// All pairwise ratios `curve_i / curve_j` (i before j in input order) at
/// each bias point.
pub fn loss_ratios(curves: &[LossCurve], noise_floor: f64) -> Result<RatioTable> {
    let Some(first) = curves.first() else {
        return Err(Error::input("no curves given"));
    };
    for c in curves {
        if c.bias_mv.len() != c.added_gamma.len() {
            return Err(Error::input(format!("curve {} has mismatched lengths", c.label)));
        }
        if c.bias_mv != first.bias_mv {
            return Err(Error::input(format!(
                "bias grid of {} does not match {}",
                c.label, first.label
            )));
        }
    }
    let mut pairs = Vec::new();
    let mut ratios = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            pairs.push((curves[i].label.clone(), curves[j].label.clone()));
            ratios.push(
                curves[i]
                    .added_gamma
                    .iter()
                    .zip(&curves[j].added_gamma)
                    .map(|(a, b)| if b.abs() < noise_floor { f64::NAN } else { a / b })
                    .collect(),
            );
        }
    }
    Ok(RatioTable {
        bias_mv: first.bias_mv.clone(),
        pairs,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStats {
    /// `condition - reference` at each bias point.
    pub deltas: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean from the scatter of the deltas.
    pub scatter_stderr: f64,
}

/// Differences between two loss curves at equal bias, with their mean.
pub fn delta_stats(reference: &[f64], condition: &[f64]) -> Result<DeltaStats> {
    if reference.len() != condition.len() || reference.is_empty() {
        return Err(Error::input("delta statistics need equal, non-empty grids"));
    }
    let deltas: Vec<f64> = condition.iter().zip(reference).map(|(c, r)| c - r).collect();
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let scatter_stderr = if deltas.len() > 1 {
        (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(DeltaStats {
        deltas,
        mean,
        scatter_stderr,
    })
}
