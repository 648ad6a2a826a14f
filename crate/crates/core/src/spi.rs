//! Sketch-power iteration: imitate `(A A^T)^q Y` with the wide sketch
//! `Z = A Phi` in place of `A`, giving `(Z Z^T)^q Y` without another pass.
//!
//! Products are always formed as `Z^T * current` followed by `Z * small`, so
//! no m x m matrix is ever built.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::matrix_core::{qr_economy, MatrixError};

#[derive(Debug, Error)]
pub enum SpiError {
    #[error("power sketch has {l} columns; it must be wider than the {s}-column range sketch")]
    SketchTooNarrow { l: usize, s: usize },
    #[error("reduced-storage iteration needs s <= l/2, got s = {s}, l = {l}")]
    VariantTooWide { s: usize, l: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpiParams {
    pub q: usize,
    pub stabilize: bool,
}

impl SpiParams {
    /// Re-orthonormalization is on by default once two or more steps run.
    pub fn new(q: usize) -> Self {
        Self { q, stabilize: q >= 2 }
    }
}

#[derive(Clone, Debug)]
pub struct SpiOutput {
    /// m x s matrix whose columns span the refined range.
    pub basis: Array2<f64>,
    /// Set when an intermediate QR lost rank; the iteration carried on.
    pub rank_collapse: bool,
}

/// Flop and buffer bookkeeping for the iteration kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostMeter {
    pub flops: u64,
    /// Largest intermediate allocated, in entries.
    pub largest_buffer: usize,
}

impl CostMeter {
    fn product(&mut self, a: (usize, usize), b: (usize, usize)) {
        self.flops += 2 * (a.0 * a.1 * b.1) as u64;
        self.largest_buffer = self.largest_buffer.max(a.0 * b.1);
    }

    fn qr(&mut self, rows: usize, cols: usize) {
        // Householder QR plus explicit Q.
        self.flops += (4 * rows * cols * cols) as u64;
        self.largest_buffer = self.largest_buffer.max(rows * cols);
    }
}

fn check_pair(z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(), SpiError> {
    if z.nrows() != y.nrows() {
        return Err(SpiError::Shape(format!(
            "power sketch has {} rows, range sketch {}",
            z.nrows(),
            y.nrows()
        )));
    }
    if z.ncols() <= y.ncols() {
        return Err(SpiError::SketchTooNarrow { l: z.ncols(), s: y.ncols() });
    }
    Ok(())
}

/// `(Z Z^T)^q Y` evaluated as `Z (Z^T ( ... ))`. `q = 0` returns `Y`.
pub fn spi_plain(z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, q: usize) -> Result<Array2<f64>, SpiError> {
    spi_plain_metered(z, y, q, &mut CostMeter::default())
}

pub fn spi_plain_metered(
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    q: usize,
    meter: &mut CostMeter,
) -> Result<Array2<f64>, SpiError> {
    check_pair(z, y)?;
    let mut cur = y.to_owned();
    for _ in 0..q {
        meter.product(z.t().dim(), cur.dim());
        let small = z.t().dot(&cur);
        meter.product(z.dim(), small.dim());
        cur = z.dot(&small);
    }
    Ok(cur)
}

/// Same range as [`spi_plain`], re-orthonormalizing the small factor each
/// step: `X = qr(Z^T Yhat).Q`, `Yhat = Z X`.
pub fn spi_stabilized(z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, q: usize) -> Result<SpiOutput, SpiError> {
    spi_stabilized_metered(z, y, q, &mut CostMeter::default())
}

pub fn spi_stabilized_metered(
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    q: usize,
    meter: &mut CostMeter,
) -> Result<SpiOutput, SpiError> {
    check_pair(z, y)?;
    let mut cur = y.to_owned();
    let mut rank_collapse = false;
    for _ in 0..q {
        meter.product(z.t().dim(), cur.dim());
        let small = z.t().dot(&cur);
        meter.qr(small.nrows(), small.ncols());
        let f = qr_economy(small.view())?;
        rank_collapse |= f.rank_deficient;
        meter.product(z.dim(), f.q.dim());
        cur = z.dot(&f.q);
    }
    Ok(SpiOutput { basis: cur, rank_collapse })
}

/// Dispatches on [`SpiParams::stabilize`].
pub fn spi_apply(z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, params: SpiParams) -> Result<SpiOutput, SpiError> {
    if params.stabilize {
        spi_stabilized(z, y, params.q)
    } else {
        Ok(SpiOutput { basis: spi_plain(z, y, params.q)?, rank_collapse: false })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VariantOptions {
    pub stabilize: bool,
    /// Lift the `s <= l/2` storage restriction.
    pub allow_oversized: bool,
}

/// Reduced-storage iteration `Z (Z^T Z)^q Omega_mix`, with `Omega_mix`
/// l x s. Equals `spi_plain(Z, Z Omega_mix, q)` but never stores a range
/// sketch: only the l x l Gram matrix and l x s iterates are kept.
pub fn spi_variant(
    z: ArrayView2<'_, f64>,
    mix: ArrayView2<'_, f64>,
    q: usize,
    opts: VariantOptions,
) -> Result<SpiOutput, SpiError> {
    spi_variant_metered(z, mix, q, opts, &mut CostMeter::default())
}

pub fn spi_variant_metered(
    z: ArrayView2<'_, f64>,
    mix: ArrayView2<'_, f64>,
    q: usize,
    opts: VariantOptions,
    meter: &mut CostMeter,
) -> Result<SpiOutput, SpiError> {
    let (l, s) = mix.dim();
    if z.ncols() != l {
        return Err(SpiError::Shape(format!("mixer has {l} rows, power sketch {} columns", z.ncols())));
    }
    if 2 * s > l && !opts.allow_oversized {
        return Err(SpiError::VariantTooWide { s, l });
    }
    let mut cur = mix.to_owned();
    let mut rank_collapse = false;
    if q > 0 {
        meter.product(z.t().dim(), z.dim());
        let gram = z.t().dot(&z);
        for _ in 0..q {
            meter.product(gram.dim(), cur.dim());
            let next = gram.dot(&cur);
            cur = if opts.stabilize {
                meter.qr(next.nrows(), next.ncols());
                let f = qr_economy(next.view())?;
                rank_collapse |= f.rank_deficient;
                f.q
            } else {
                next
            };
        }
    }
    meter.product(z.dim(), cur.dim());
    Ok(SpiOutput { basis: z.dot(&cur), rank_collapse })
}
