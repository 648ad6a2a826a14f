//! Dense matrix carrier and the three kernels every pipeline rests on:
//! economy QR, truncated SVD and minimum-norm least squares.
//!
//! Storage may be single or double precision, but every kernel takes a
//! binary64 view. Callers upcast at the boundary.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, QR, SVDDC};
use thiserror::Error;

/// Relative threshold on `|R_ii|` below which a QR factor is called rank deficient.
pub const QR_RANK_TOL: f64 = 1e-14;
/// Relative singular-value cutoff used by [`lstsq`].
pub const LSTSQ_RCOND: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid rank {rank} for a {rows}x{cols} matrix")]
    Rank { rank: usize, rows: usize, cols: usize },
    #[error("LAPACK failure: {0}")]
    Lapack(String),
    #[error("BLAS self-check failed: matrix product off by {0:e}; try OPENBLAS_CORETYPE=Haswell")]
    BrokenBlas(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    Binary32,
    Binary64,
}

impl Precision {
    /// Storage cost of one entry in half double-words.
    pub fn half_words(self) -> u64 {
        match self {
            Precision::Binary32 => 1,
            Precision::Binary64 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Binary32 => "binary32",
            Precision::Binary64 => "binary64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    F64(Array2<f64>),
    F32(Array2<f32>),
}

/// A row-major real matrix tagged with its storage precision.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    data: Storage,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize, precision: Precision) -> Result<Self, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::Empty { rows, cols });
        }
        let data = match precision {
            Precision::Binary64 => Storage::F64(Array2::zeros((rows, cols))),
            Precision::Binary32 => Storage::F32(Array2::zeros((rows, cols))),
        };
        Ok(Self { data })
    }

    /// Wraps a binary64 array after checking shape and finiteness.
    pub fn from_f64(a: Array2<f64>) -> Result<Self, MatrixError> {
        check_nonempty(a.nrows(), a.ncols())?;
        check_finite(a.view())?;
        Ok(Self { data: Storage::F64(a.as_standard_layout().into_owned()) })
    }

    pub fn from_f32(a: Array2<f32>) -> Result<Self, MatrixError> {
        check_nonempty(a.nrows(), a.ncols())?;
        if let Some(((row, col), _)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(MatrixError::NonFinite { row, col });
        }
        Ok(Self { data: Storage::F32(a.as_standard_layout().into_owned()) })
    }

    /// Builds a matrix from row-major values in the requested precision.
    pub fn from_row_major(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        precision: Precision,
    ) -> Result<Self, MatrixError> {
        check_nonempty(rows, cols)?;
        if values.len() != rows * cols {
            return Err(MatrixError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        let a = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| MatrixError::Shape(e.to_string()))?;
        Self::from_f64(a).map(|m| m.into_precision(precision))
    }

    pub fn rows(&self) -> usize {
        match &self.data {
            Storage::F64(a) => a.nrows(),
            Storage::F32(a) => a.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.data {
            Storage::F64(a) => a.ncols(),
            Storage::F32(a) => a.ncols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn precision(&self) -> Precision {
        match &self.data {
            Storage::F64(_) => Precision::Binary64,
            Storage::F32(_) => Precision::Binary32,
        }
    }

    /// Borrowed binary64 view, present only for double storage.
    pub fn as_f64(&self) -> Option<ArrayView2<'_, f64>> {
        match &self.data {
            Storage::F64(a) => Some(a.view()),
            Storage::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<ArrayView2<'_, f32>> {
        match &self.data {
            Storage::F32(a) => Some(a.view()),
            Storage::F64(_) => None,
        }
    }

    /// Exact widening copy (binary32 values are representable in binary64).
    pub fn to_f64(&self) -> Array2<f64> {
        match &self.data {
            Storage::F64(a) => a.clone(),
            Storage::F32(a) => a.mapv(f64::from),
        }
    }

    /// Changes storage precision. Narrowing rounds to nearest.
    pub fn into_precision(self, precision: Precision) -> Self {
        let data = match (self.data, precision) {
            (Storage::F64(a), Precision::Binary32) => Storage::F32(a.mapv(|v| v as f32)),
            (Storage::F32(a), Precision::Binary64) => Storage::F64(a.mapv(f64::from)),
            (d, _) => d,
        };
        Self { data }
    }

    /// Adds a binary64 increment to the block starting at `(row, col)`.
    /// Single-precision storage is updated as `round(old + inc)`, so the sum
    /// itself is formed in double.
    pub fn add_block(
        &mut self,
        row: usize,
        col: usize,
        inc: ArrayView2<'_, f64>,
    ) -> Result<(), MatrixError> {
        let (r, c) = inc.dim();
        if row + r > self.rows() || col + c > self.cols() {
            return Err(MatrixError::Shape(format!(
                "{r}x{c} block at ({row}, {col}) exceeds {}x{}",
                self.rows(),
                self.cols()
            )));
        }
        match &mut self.data {
            Storage::F64(a) => {
                let mut dst = a.slice_mut(s![row..row + r, col..col + c]);
                dst += &inc;
            }
            Storage::F32(a) => {
                let mut dst = a.slice_mut(s![row..row + r, col..col + c]);
                dst.zip_mut_with(&inc, |d, &v| *d = (f64::from(*d) + v) as f32);
            }
        }
        Ok(())
    }

    /// Row-major entries widened to binary64.
    pub fn to_row_major_f64(&self) -> Vec<f64> {
        self.to_f64().iter().copied().collect()
    }
}

fn check_nonempty(rows: usize, cols: usize) -> Result<(), MatrixError> {
    if rows == 0 || cols == 0 {
        Err(MatrixError::Empty { rows, cols })
    } else {
        Ok(())
    }
}

pub(crate) fn check_finite(a: ArrayView2<'_, f64>) -> Result<(), MatrixError> {
    match a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((row, col), _)) => Err(MatrixError::NonFinite { row, col }),
        None => Ok(()),
    }
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Thin QR factorization with a rank-deficiency flag.
#[derive(Clone, Debug)]
pub struct QrFactors {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub rank_deficient: bool,
}

/// Economy QR of a tall matrix: `Q` is rows x cols with orthonormal columns.
pub fn qr_economy(m: ArrayView2<'_, f64>) -> Result<QrFactors, MatrixError> {
    let (rows, cols) = m.dim();
    check_nonempty(rows, cols)?;
    if rows < cols {
        return Err(MatrixError::Shape(format!("QR needs rows >= cols, got {rows}x{cols}")));
    }
    let owned = m.as_standard_layout().into_owned();
    let scale = frobenius(m);
    let (q, r) = owned.qr().map_err(|e| MatrixError::Lapack(e.to_string()))?;
    let rank_deficient = (0..cols).any(|i| r[[i, i]].abs() <= QR_RANK_TOL * scale);
    Ok(QrFactors { q, r, rank_deficient })
}

/// The `r` leading singular triplets of a matrix.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> Array2<f64> {
        let us = &self.u * &self.s.view().insert_axis(Axis(0));
        us.dot(&self.v.t())
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

pub fn svd_truncated(m: ArrayView2<'_, f64>, r: usize) -> Result<TruncatedSvd, MatrixError> {
    let (rows, cols) = m.dim();
    check_nonempty(rows, cols)?;
    if r == 0 || r > rows.min(cols) {
        return Err(MatrixError::Rank { rank: r, rows, cols });
    }
    let owned = m.as_standard_layout().into_owned();
    let (u, sv, vt) = owned
        .svddc(JobSvd::Some)
        .map_err(|e| MatrixError::Lapack(e.to_string()))?;
    let u = u.ok_or_else(|| MatrixError::Lapack("missing left vectors".into()))?;
    let vt = vt.ok_or_else(|| MatrixError::Lapack("missing right vectors".into()))?;
    Ok(TruncatedSvd {
        u: u.slice(s![.., ..r]).to_owned(),
        s: sv.slice(s![..r]).to_owned(),
        v: vt.slice(s![..r, ..]).t().to_owned(),
    })
}

/// All singular values, non-increasing.
pub fn singular_values(m: ArrayView2<'_, f64>) -> Result<Array1<f64>, MatrixError> {
    check_nonempty(m.nrows(), m.ncols())?;
    let owned = m.as_standard_layout().into_owned();
    let (_, sv, _) = owned
        .svddc(JobSvd::None)
        .map_err(|e| MatrixError::Lapack(e.to_string()))?;
    Ok(sv)
}

pub fn spectral_norm(m: ArrayView2<'_, f64>) -> Result<f64, MatrixError> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Array2<f64>,
    /// Set when the smallest singular value falls below the cutoff.
    pub ill_conditioned: bool,
}

/// Minimum-norm least-squares solve `argmin ||C X - rhs||_F` through the
/// pseudoinverse of `C`.
pub fn lstsq(c: ArrayView2<'_, f64>, rhs: ArrayView2<'_, f64>) -> Result<LstsqSolution, MatrixError> {
    let (rows, cols) = c.dim();
    check_nonempty(rows, cols)?;
    if rows < cols {
        return Err(MatrixError::Shape(format!("lstsq needs rows >= cols, got {rows}x{cols}")));
    }
    if rhs.nrows() != rows {
        return Err(MatrixError::Shape(format!(
            "right-hand side has {} rows, expected {rows}",
            rhs.nrows()
        )));
    }
    let owned = c.as_standard_layout().into_owned();
    let (u, sv, vt) = owned
        .svddc(JobSvd::Some)
        .map_err(|e| MatrixError::Lapack(e.to_string()))?;
    let (u, vt) = match (u, vt) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(MatrixError::Lapack("missing singular vectors".into())),
    };
    let smax = sv.first().copied().unwrap_or(0.0);
    let cutoff = LSTSQ_RCOND * smax;
    let ill_conditioned = smax == 0.0 || sv.iter().any(|&v| v < cutoff);
    let inv = sv.mapv(|v| if smax > 0.0 && v >= cutoff { 1.0 / v } else { 0.0 });
    let mut coef = u.t().dot(&rhs);
    coef *= &inv.view().insert_axis(Axis(1));
    Ok(LstsqSolution { x: vt.t().dot(&coef), ill_conditioned })
}

/// Compares a BLAS matrix product against a plain triple loop on a shape
/// that exercises the blocked kernels.
pub fn check_blas() -> Result<(), MatrixError> {
    let (m, k) = (200, 60);
    let a = Array2::from_shape_fn((m, k), |(i, j)| ((i * 31 + j * 17) % 23) as f64 - 11.0);
    let b = Array2::from_shape_fn((k, m), |(i, j)| ((i * 7 + j * 13) % 19) as f64 - 9.0);
    let fast = a.dot(&b);
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let exact: f64 = (0..k).map(|t| a[[i, t]] * b[[t, j]]).sum();
            worst = worst.max((fast[[i, j]] - exact).abs());
        }
    }
    // Integer-valued inputs make every product exact.
    if worst > 0.0 {
        return Err(MatrixError::BrokenBlas(worst));
    }
    Ok(())
}

/// Orthonormal basis for the column space of a tall matrix (Q of its thin QR).
pub fn orthonormalize(m: ArrayView2<'_, f64>) -> Result<Array2<f64>, MatrixError> {
    Ok(qr_economy(m)?.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn eye(n: usize) -> Array2<f64> {
        Array2::eye(n)
    }

    #[test]
    fn qr_of_identity_is_identity_up_to_sign() {
        let f = qr_economy(eye(3).view()).unwrap();
        for i in 0..3 {
            assert!((f.q[[i, i]].abs() - 1.0).abs() < 1e-15);
            assert!((f.r[[i, i]].abs() - 1.0).abs() < 1e-15);
        }
        assert!(!f.rank_deficient);
    }

    #[test]
    fn qr_normalizes_single_column() {
        let f = qr_economy(array![[3.0], [4.0]].view()).unwrap();
        let sign = f.r[[0, 0]].signum();
        assert!((f.r[[0, 0]].abs() - 5.0).abs() < 1e-14);
        assert!((f.q[[0, 0]] * sign - 0.6).abs() < 1e-15);
        assert!((f.q[[1, 0]] * sign - 0.8).abs() < 1e-15);
    }

    #[test]
    fn qr_residual_and_orthonormality() {
        let m = gaussian(20, 5, 1);
        let f = qr_economy(m.view()).unwrap();
        let ortho = f.q.t().dot(&f.q) - eye(5);
        assert!(frobenius(ortho.view()) <= 1e-13);
        let resid = f.q.dot(&f.r) - &m;
        assert!(frobenius(resid.view()) <= 1e-12 * frobenius(m.view()));
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(f.r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn qr_flags_rank_deficiency() {
        let mut m = gaussian(10, 3, 2);
        let c0 = m.column(0).to_owned();
        m.column_mut(2).assign(&(&c0 * 2.0));
        assert!(qr_economy(m.view()).unwrap().rank_deficient);
    }

    #[test]
    fn qr_rejects_wide_input() {
        assert!(qr_economy(gaussian(2, 3, 3).view()).is_err());
    }

    #[test]
    fn svd_of_diagonal() {
        let m = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let t = svd_truncated(m.view(), 2).unwrap();
        assert!((t.s[0] - 3.0).abs() < 1e-14 && (t.s[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn svd_recovers_rank_one() {
        let u = gaussian(7, 1, 4);
        let v = gaussian(5, 1, 5);
        let m = u.dot(&v.t());
        let t = svd_truncated(m.view(), 1).unwrap();
        let resid = &m - &t.reconstruct();
        assert!(frobenius(resid.view()) <= 1e-12 * frobenius(m.view()));
    }

    #[test]
    fn svd_residual_matches_tail_energy() {
        let m = gaussian(30, 20, 6);
        let t = svd_truncated(m.view(), 5).unwrap();
        let all = singular_values(m.view()).unwrap();
        let tail: f64 = all.iter().skip(5).map(|v| v * v).sum::<f64>().sqrt();
        let resid = frobenius((&m - &t.reconstruct()).view());
        assert!((resid - tail).abs() <= 1e-10 * tail);
        let ortho = t.u.t().dot(&t.u) - eye(5);
        assert!(frobenius(ortho.view()) <= 1e-12 * 5f64.sqrt());
        assert!(t.s.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_rejects_zero_rank() {
        assert!(svd_truncated(eye(3).view(), 0).is_err());
        assert!(svd_truncated(eye(3).view(), 4).is_err());
    }

    #[test]
    fn lstsq_identity_and_orthonormal() {
        let rhs = gaussian(4, 3, 7);
        let x = lstsq(eye(4).view(), rhs.view()).unwrap().x;
        assert!(frobenius((&x - &rhs).view()) < 1e-14);

        let q = qr_economy(gaussian(12, 4, 8).view()).unwrap().q;
        let rhs = gaussian(12, 3, 9);
        let x = lstsq(q.view(), rhs.view()).unwrap().x;
        let expect = q.t().dot(&rhs);
        assert!(frobenius((&x - &expect).view()) <= 1e-12 * frobenius(expect.view()));
    }

    #[test]
    fn lstsq_normal_equation_residual() {
        let c = gaussian(40, 10, 10);
        let rhs = gaussian(40, 6, 11);
        let sol = lstsq(c.view(), rhs.view()).unwrap();
        assert!(!sol.ill_conditioned);
        let normal = c.t().dot(&(c.dot(&sol.x) - &rhs));
        let cnorm = spectral_norm(c.view()).unwrap();
        assert!(frobenius(normal.view()) <= 1e-10 * cnorm * frobenius(rhs.view()));
    }

    #[test]
    fn lstsq_rank_deficient_gives_minimum_norm() {
        let mut c = gaussian(8, 3, 12);
        let c0 = c.column(0).to_owned();
        c.column_mut(1).assign(&c0);
        let rhs = gaussian(8, 1, 13);
        let sol = lstsq(c.view(), rhs.view()).unwrap();
        assert!(sol.ill_conditioned);
        // Minimum-norm solutions split weight evenly across the duplicated columns.
        assert!((sol.x[[0, 0]] - sol.x[[1, 0]]).abs() < 1e-10);
    }

    #[test]
    fn single_precision_accumulates_in_double() {
        let mut m = DenseMatrix::zeros(1, 1, Precision::Binary32).unwrap();
        m.add_block(0, 0, array![[1.0]].view()).unwrap();
        m.add_block(0, 0, array![[1e-9]].view()).unwrap();
        assert_eq!(m.as_f32().unwrap()[[0, 0]], 1.0f32);
        assert_eq!(m.precision(), Precision::Binary32);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(DenseMatrix::from_f64(Array2::zeros((0, 3))).is_err());
        assert!(DenseMatrix::from_f64(array![[1.0, f64::NAN]]).is_err());
        assert!(DenseMatrix::from_row_major(2, 2, vec![1.0; 3], Precision::Binary64).is_err());
    }

    #[test]
    fn widen_then_narrow_is_identity() {
        let a = gaussian(6, 4, 14).mapv(|v| v as f32);
        let m = DenseMatrix::from_f32(a.clone()).unwrap();
        let back = m.into_precision(Precision::Binary64).into_precision(Precision::Binary32);
        assert_eq!(back.as_f32().unwrap(), a.view());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Sine of the largest principal angle, from the residual of projecting b onto a.
        fn principal_sines(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
            let resid = b - &a.dot(&a.t().dot(b));
            spectral_norm(resid.view()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn qr_preserves_column_space(seed in 0u64..10_000, rows in 6usize..40, cols in 1usize..6) {
                let m = gaussian(rows, cols, seed);
                let q = qr_economy(m.view()).unwrap().q;
                let oracle = svd_truncated(m.view(), cols).unwrap().u;
                prop_assert!(principal_sines(&q, &oracle) <= 1e-10);
            }

            #[test]
            fn truncated_svd_beats_random_candidates(seed in 0u64..10_000, r in 1usize..4) {
                let m = gaussian(12, 9, seed);
                let best = frobenius((&m - &svd_truncated(m.view(), r).unwrap().reconstruct()).view());
                for k in 0..5u64 {
                    let cand = gaussian(12, r, seed ^ (k + 100)).dot(&gaussian(r, 9, seed ^ (k + 200)));
                    prop_assert!(best <= frobenius((&m - &cand).view()) + 1e-12);
                }
            }

            #[test]
            fn lstsq_recovers_consistent_solution(seed in 0u64..10_000, cols in 1usize..8) {
                let c = gaussian(20, cols, seed);
                let x0 = gaussian(cols, 3, seed + 1);
                let x = lstsq(c.view(), c.dot(&x0).view()).unwrap().x;
                prop_assert!(frobenius((&x - &x0).view()) <= 1e-10 * frobenius(x0.view()));
            }
        }
    }
}
