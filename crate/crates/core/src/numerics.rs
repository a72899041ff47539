//! Dense row-major matrices, the SPD solver behind every influence-function
//! computation, empirical quantiles, and seeded RNG streams.
//!
//! Everything downstream works with matrices of side at most p + 1 (eight or
//! so), so this is deliberately minimal: multiply, transpose, Cholesky. The
//! RNG contract is the load-bearing part — identical `(base_seed, stream_id)`
//! pairs must yield bit-identical draw sequences so that Monte Carlo grids
//! are reproducible under any parallel schedule.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative pivot tolerance for the Cholesky factorization.
const PIVOT_TOL: f64 = 1e-12;
/// Relative symmetry tolerance accepted by [`spd_solve`].
const SYMMETRY_TOL: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length does not
    /// match `rows * cols`; entry finiteness is the caller's invariant.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} != {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[f64]) -> Self {
        Self::from_vec(v.len(), 1, v.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Contiguous view of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scaled(-1.0))
    }

    /// Accumulates `s * v v'` into a square matrix in place.
    pub fn add_outer(&mut self, v: &[f64], s: f64) {
        assert_eq!(self.rows, v.len());
        assert_eq!(self.cols, v.len());
        for (i, vi) in v.iter().enumerate() {
            let svi = s * vi;
            if svi == 0.0 {
                continue;
            }
            for (j, vj) in v.iter().enumerate() {
                self.data[i * self.cols + j] += svi * vj;
            }
        }
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs() / scale);
            }
        }
        worst
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot drops to or below
/// `PIVOT_TOL` times the largest diagonal entry of the input.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let diag_max = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs()));
    let floor = PIVOT_TOL * diag_max.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= floor {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `A X = B` for symmetric positive-definite `A` via Cholesky.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.rows != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "spd_solve: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.asymmetry() > SYMMETRY_TOL {
        return Err(Error::NotSymmetric);
    }
    let l = cholesky(a)?;
    let n = a.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        // forward: L z = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        // backward: L' x = z
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// `spd_solve` for a single right-hand-side vector.
pub fn spd_solve_vec(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(spd_solve(a, &Matrix::column_vector(b))?.data)
}

/// Lower empirical quantile: the order statistic at 1-based index
/// `ceil(q * N)`, with `q = 0` mapping to the minimum. The returned value is
/// always a member of `values`, which keeps strata cut points reproducible.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[idx - 1])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn max_abs_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Seeded, streamed RNG: one stream per replicate.
///
/// Identical `(base_seed, stream_id)` pairs produce bit-identical sequences;
/// distinct stream ids produce independent ChaCha streams, so replicates can
/// run on any thread in any order without changing results.
pub struct RngStream {
    base_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(stream_id);
        Self {
            base_seed,
            stream_id,
            rng,
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    #[test]
    fn spd_solve_identity_returns_rhs() {
        let b = Matrix::from_rows(&[vec![1.0], vec![-2.0], vec![3.5]]);
        let x = spd_solve(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn spd_solve_matches_cofactor_inverse_2x2() {
        // A = [[4,2],[2,3]], det = 8, inverse by cofactors:
        // [[3/8, -2/8], [-2/8, 4/8]] = [[0.375, -0.25], [-0.25, 0.5]]
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let x = spd_solve(&a, &Matrix::identity(2)).unwrap();
        assert_abs_diff_eq!(x.get(0, 0), 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(x.get(0, 1), -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(x.get(1, 0), -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(x.get(1, 1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let err = spd_solve(&a, &Matrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }), "{err}");
    }

    #[test]
    fn spd_solve_rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.0, 2.0]]);
        assert!(matches!(
            spd_solve(&a, &Matrix::identity(2)),
            Err(Error::NotSymmetric)
        ));
    }

    #[test]
    fn spd_solve_rejects_dimension_mismatch() {
        let a = Matrix::identity(3);
        let b = Matrix::zeros(2, 1);
        assert!(matches!(
            spd_solve(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn spd_solve_recovers_solution_of_random_spd_systems() {
        // A = G'G + I is SPD; check ||X - X0|| small for dims up to 20.
        let mut rng = RngStream::new(7, 0);
        for dim in 1..=20usize {
            let mut g = Matrix::zeros(dim, dim);
            for r in 0..dim {
                for c in 0..dim {
                    g.set(r, c, rng.gen_range(-1.0..1.0));
                }
            }
            let a = g.transpose().matmul(&g).add(&Matrix::identity(dim));
            let mut x0 = Matrix::zeros(dim, 3);
            for r in 0..dim {
                for c in 0..3 {
                    x0.set(r, c, rng.gen_range(-5.0..5.0));
                }
            }
            let b = a.matmul(&x0);
            let x = spd_solve(&a, &b).unwrap();
            let rel = x.sub(&x0).max_abs() / x0.max_abs().max(1.0);
            assert!(rel < 1e-8, "dim {dim}: relative error {rel:e}");
            // residual check against the contract on ||AX - B||
            let resid = a.matmul(&x).sub(&b).max_abs();
            assert!(resid <= 1e-9 * b.max_abs().max(1.0), "residual {resid:e}");
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(empirical_quantile(&[5.0], 0.0).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[5.0], 0.37).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[5.0], 1.0).unwrap(), 5.0);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        // ceil(0.2 * 5) = 1 => first order statistic
        assert_eq!(empirical_quantile(&v, 0.2).unwrap(), 1.0);
        // ceil(0.8 * 5) = 4
        assert_eq!(empirical_quantile(&v, 0.8).unwrap(), 4.0);
        assert_eq!(empirical_quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn quantile_rejects_bad_input() {
        assert!(matches!(
            empirical_quantile(&[], 0.5),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            empirical_quantile(&[1.0], 1.5),
            Err(Error::InvalidQuantile(_))
        ));
    }

    proptest! {
        #[test]
        fn quantile_is_monotone_and_member(
            values in proptest::collection::vec(-1e6f64..1e6, 1..60),
            q1 in 0.0f64..=1.0,
            q2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = empirical_quantile(&values, lo).unwrap();
            let b = empirical_quantile(&values, hi).unwrap();
            prop_assert!(a <= b);
            prop_assert!(values.contains(&a));
            prop_assert!(values.contains(&b));
        }
    }

    #[test]
    fn equal_streams_are_bit_identical_for_a_million_draws() {
        let mut a = RngStream::new(42, 17);
        let mut b = RngStream::new(42, 17);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 4, "streams 0 and 1 nearly identical");
    }
}
