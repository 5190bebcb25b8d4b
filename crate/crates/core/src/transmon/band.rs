//! Lowest eigenvalues of real symmetric band matrices by inertia-counting
//! bisection.
//!
//! For half-bandwidth 1 the count is the classic Sturm sequence. For wider
//! bands the count comes from an unpivoted LDLᵀ factorisation of `A - σI`,
//! with tiny pivots replaced by `-pivmin` the way LAPACK's `dstebz` does.

/// Symmetric band matrix holding the diagonal and `bandwidth` sub-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bandwidth: usize,
    // lower[i * (bandwidth + 1) + d] = A[i][i - d]
    lower: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bandwidth = bandwidth.min(n.saturating_sub(1));
        Self {
            n,
            bandwidth,
            lower: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Element `A[i][j]`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        if d > self.bandwidth {
            0.0
        } else {
            self.lower[i * (self.bandwidth + 1) + d]
        }
    }

    /// Sets `A[i][j]` and `A[j][i]`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        assert!(d <= self.bandwidth, "element ({i},{j}) outside band");
        self.lower[i * (self.bandwidth + 1) + d] = value;
    }

    fn norm_bound(&self) -> (f64, f64) {
        // Gershgorin interval
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let mut radius = 0.0;
            let j0 = i.saturating_sub(self.bandwidth);
            let j1 = (i + self.bandwidth).min(self.n - 1);
            for j in j0..=j1 {
                if j != i {
                    radius += self.get(i, j).abs();
                }
            }
            let a = self.get(i, i);
            lo = lo.min(a - radius);
            hi = hi.max(a + radius);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `sigma`.
    pub fn count_below(&self, sigma: f64, pivmin: f64) -> usize {
        if self.bandwidth <= 1 {
            return self.sturm_count(sigma, pivmin);
        }
        let b = self.bandwidth;
        let w = b + 1;
        let n = self.n;
        // l[i * w + d] = L[i][i - d], d in 1..=b; d_piv[i] = D[i]
        let mut l = vec![0.0; n * w];
        let mut d_piv = vec![0.0; n];
        let mut negatives = 0;
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..i {
                // L[i][j] = (A[i][j] - sum_{k<j} L[i][k] L[j][k] D[k]) / D[j]
                let mut s = self.get(i, j);
                let k0 = j0.max(j.saturating_sub(b));
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)] * d_piv[k];
                }
                l[i * w + (i - j)] = s / d_piv[j];
            }
            let mut s = self.get(i, i) - sigma;
            for k in j0..i {
                let lik = l[i * w + (i - k)];
                s -= lik * lik * d_piv[k];
            }
            if s.abs() < pivmin {
                s = -pivmin;
            }
            if s < 0.0 {
                negatives += 1;
            }
            d_piv[i] = s;
        }
        negatives
    }

    fn sturm_count(&self, sigma: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.n {
            let off = if i > 0 { self.get(i, i - 1) } else { 0.0 };
            q = if i == 0 {
                self.get(0, 0) - sigma
            } else {
                self.get(i, i) - sigma - off * off / q
            };
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k` smallest eigenvalues in ascending order.
    pub fn lowest_eigenvalues(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.n);
        let (lo0, hi0) = self.norm_bound();
        let scale = lo0.abs().max(hi0.abs()).max(f64::MIN_POSITIVE);
        let pivmin = f64::MIN_POSITIVE.sqrt() * scale.max(1.0);
        let tol = 4.0 * f64::EPSILON * scale;
        let mut out = Vec::with_capacity(k);
        let mut lower_bound = lo0 - tol;
        for index in 0..k {
            let mut lo = lower_bound;
            let mut hi = hi0 + tol;
            for _ in 0..256 {
                if hi - lo <= tol + 2.0 * f64::EPSILON * (lo.abs().max(hi.abs())) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if self.count_below(mid, pivmin) > index {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let value = 0.5 * (lo + hi);
            out.push(value);
            lower_bound = lo;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(m: &BandMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(m.dim(), m.dim(), |i, j| m.get(i, j))
    }

    #[test]
    fn matches_dense_solver_on_random_band_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, b) in &[(1, 0), (2, 1), (17, 1), (40, 3), (61, 12), (30, 29)] {
            let mut m = BandMatrix::zeros(n, b);
            for i in 0..n {
                for d in 0..=m.bandwidth().min(i) {
                    m.set(i, i - d, rng.random_range(-5.0..5.0));
                }
            }
            let mut reference: Vec<f64> = dense(&m).symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got = m.lowest_eigenvalues(n.min(6));
            for (g, r) in got.iter().zip(&reference) {
                assert!((g - r).abs() < 1e-10, "n={n} b={b}: {g} vs {r}");
            }
        }
    }

    #[test]
    fn resolves_degenerate_pairs() {
        let mut m = BandMatrix::zeros(4, 1);
        for (i, v) in [1.0, 1.0, 3.0, 3.0].iter().enumerate() {
            m.set(i, i, *v);
        }
        let ev = m.lowest_eigenvalues(4);
        assert!((ev[0] - 1.0).abs() < 1e-13 && (ev[1] - 1.0).abs() < 1e-13);
        assert!((ev[2] - 3.0).abs() < 1e-13 && (ev[3] - 3.0).abs() < 1e-13);
    }
}
