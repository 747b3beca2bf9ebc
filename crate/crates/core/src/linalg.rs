//! Dense Cholesky factors stored as packed lower-triangular rows.
//!
//! Row `i` of the factor occupies `data[i * (i + 1) / 2 ..][..=i]`, so both
//! appending a row (rank-one extension) and taking a leading block (prefix
//! of the design) are cheap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, NumericalDiagnostics, Result};

/// Jitter levels tried, in order, before a factorization is declared failed.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>,
}

impl Default for CholeskyFactor {
    fn default() -> Self {
        Self::empty()
    }
}

impl CholeskyFactor {
    pub fn empty() -> Self {
        Self {
            n: 0,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let off = row_offset(i);
        &self.data[off..off + i + 1]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[row_offset(i) + i]
    }

    /// Factor a symmetric matrix given in row-major order (only the lower
    /// triangle is read) after adding `jitter` to its diagonal.
    pub fn factor(matrix: &[f64], n: usize, jitter: f64) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: matrix.len(),
            });
        }
        let mut data = vec![0.0; row_offset(n)];
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let off_i = row_offset(i);
            for j in 0..i {
                let off_j = row_offset(j);
                let s = matrix[i * n + j] - dot(&data[off_i..off_i + j], &data[off_j..off_j + j]);
                data[off_i + j] = s / data[off_j + j];
            }
            let d2 = matrix[i * n + i] + jitter - dot(&data[off_i..off_i + i], &data[off_i..off_i + i]);
            if !(d2 > 0.0) || !d2.is_finite() {
                return Err(Error::NotPositiveDefinite(NumericalDiagnostics {
                    matrix_size: n,
                    failed_pivot: i,
                    pivot_value: d2,
                    jitter,
                    condition_estimate: condition(max_pivot, min_pivot),
                }));
            }
            max_pivot = max_pivot.max(d2);
            min_pivot = min_pivot.min(d2);
            data[off_i + i] = d2.sqrt();
        }
        Ok(Self { n, data })
    }

    /// Factor with `base_jitter`, then escalate through [`JITTER_LADDER`].
    /// Returns the factor and the jitter that succeeded.
    pub fn factor_with_escalation(matrix: &[f64], n: usize, base_jitter: f64) -> Result<(Self, f64)> {
        let mut last_err = None;
        let ladder = std::iter::once(base_jitter).chain(JITTER_LADDER.iter().copied().filter(|&j| j > base_jitter));
        for jitter in ladder {
            match Self::factor(matrix, n, jitter) {
                Ok(f) => return Ok((f, jitter)),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("ladder is never empty"))
    }

    /// Append one row. `cross` holds the new column of the matrix above the
    /// diagonal (length `dim()`), `diag` its diagonal entry (jitter included).
    /// Returns the new squared pivot, i.e. the Schur complement of the new
    /// entry.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> Result<f64> {
        if cross.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: cross.len(),
            });
        }
        let l = self.solve_lower(cross);
        let d2 = diag - dot(&l, &l);
        if !(d2 > 0.0) || !d2.is_finite() {
            return Err(Error::NotPositiveDefinite(NumericalDiagnostics {
                matrix_size: self.n + 1,
                failed_pivot: self.n,
                pivot_value: d2,
                jitter: 0.0,
                condition_estimate: f64::INFINITY,
            }));
        }
        self.data.extend_from_slice(&l);
        self.data.push(d2.sqrt());
        self.n += 1;
        Ok(d2)
    }

    /// Leading `k × k` block, which is the factor of the leading block of
    /// the original matrix.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.n);
        Self {
            n: k,
            data: self.data[..row_offset(k)].to_vec(),
        }
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length");
        let mut y = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &y[..i]);
            y.push(s / row[i]);
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n, "rhs length");
        let mut x = y.to_vec();
        for i in (0..self.n).rev() {
            let row = self.row(i);
            x[i] /= row[i];
            let xi = x[i];
            for (xj, lij) in x[..i].iter_mut().zip(&row[..i]) {
                *xj -= lij * xi;
            }
        }
        x
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L Lᵀ` as a dense row-major matrix.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.row(i)[..=j], &self.row(j)[..=j]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

fn condition(max_pivot: f64, min_pivot: f64) -> f64 {
    if min_pivot.is_finite() && min_pivot > 0.0 {
        max_pivot / min_pivot
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<f64> {
        // Gram of a fixed full-rank set plus identity.
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (-(pts[i] - pts[j]).powi(2)).exp() + if i == j { 1.0 } else { 0.0 };
            }
        }
        m
    }

    #[test]
    fn factor_reconstructs() {
        let n = 12;
        let m = spd(n);
        let f = CholeskyFactor::factor(&m, n, 0.0).unwrap();
        let r = f.reconstruct();
        for (a, b) in m.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn push_matches_batch() {
        let n = 10;
        let m = spd(n);
        let batch = CholeskyFactor::factor(&m, n, 0.0).unwrap();
        let mut inc = CholeskyFactor::empty();
        for i in 0..n {
            let cross: Vec<f64> = (0..i).map(|j| m[i * n + j]).collect();
            inc.push(&cross, m[i * n + i]).unwrap();
        }
        for (a, b) in batch.data.iter().zip(&inc.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_inverts() {
        let n = 8;
        let m = spd(n);
        let f = CholeskyFactor::factor(&m, n, 0.0).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = f.solve(&b);
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| m[i * n + j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_reports_pivot() {
        let m = vec![1.0, 2.0, 2.0, 1.0];
        let err = CholeskyFactor::factor(&m, 2, 0.0).unwrap_err();
        match err {
            Error::NotPositiveDefinite(d) => assert_eq!(d.failed_pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(CholeskyFactor::factor_with_escalation(&m, 2, 1e-8).is_err());
    }

    #[test]
    fn escalation_rescues_singular_gram() {
        // Rank-one matrix: fails without jitter, succeeds with it.
        let m = vec![1.0, 1.0, 1.0, 1.0];
        assert!(CholeskyFactor::factor(&m, 2, 0.0).is_err());
        let (_, jitter) = CholeskyFactor::factor_with_escalation(&m, 2, 0.0).unwrap();
        assert_eq!(jitter, 1e-8);
    }
}
