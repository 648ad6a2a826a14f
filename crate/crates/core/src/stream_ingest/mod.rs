//! Single-pass sketch accumulation under the linear-update model.
//!
//! A [`Sketcher`] owns the test matrices, fixed when the stream opens, and
//! the running sketches. Updates are folded in by linearity and then
//! dropped. [`Sketcher::finalize`] hands back an immutable [`SketchSet`];
//! after that the sketcher refuses further input, so nothing downstream can
//! revisit the data.

mod formats;

pub use formats::{read_matrix, read_row_blocks, write_spim, FileFormat, RowBlockReader, SPIM_MAGIC, SPIM_VERSION};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::matrix_core::{check_finite, DenseMatrix, MatrixError, Precision};
use crate::test_matrices::{generate, SeedSpec, StreamTag, TestMatrix, TestMatrixError, TestMatrixKind};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("update shape mismatch: {0}")]
    Shape(String),
    #[error("sketch stream already finalized")]
    AfterFinalize,
    #[error("update contains a non-finite entry")]
    NonFinite,
    #[error("the A^T A sketch needs whole rows; column-block updates are not accepted")]
    ColumnBlockForGram,
    #[error("the A^T A sketch needs each row exactly once; row {0} arrived twice")]
    RowRevisited(usize),
    #[error("the A^T A sketch accepts rank-one updates only when u selects a single row")]
    RankOneNotRow,
    #[error("sketch plan is invalid: {0}")]
    Plan(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error("dimension overflow: {0}")]
    Overflow(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    TestMatrix(#[from] TestMatrixError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// What a sketch measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SketchRole {
    /// `A * T`, test matrix n x size.
    Range,
    /// `T * A`, test matrix size x m.
    Corange,
    /// `A * T`, test matrix n x size; the wide sketch fed to power iteration.
    Power,
    /// `T1 * A * T2^T`, test matrices size x m and size x n.
    Core,
    /// `A^T A * T`, test matrix n x size; needs row-wise input.
    Gram,
}

/// Small test matrices that never touch the data (l x s and s x l mixers).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixerRole {
    Range,
    Corange,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchSpec {
    pub role: SketchRole,
    pub size: usize,
    pub precision: Precision,
    pub tag: StreamTag,
    /// Right-hand test matrix stream for [`SketchRole::Core`].
    pub second_tag: Option<StreamTag>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixerSpec {
    pub role: MixerRole,
    pub rows: usize,
    pub cols: usize,
    pub tag: StreamTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchPlan {
    pub m: usize,
    pub n: usize,
    pub kind: TestMatrixKind,
    pub sketches: Vec<SketchSpec>,
    pub mixers: Vec<MixerSpec>,
}

/// One additive increment to the streamed matrix.
#[derive(Clone, Debug)]
pub enum LinearUpdate {
    Dense(Array2<f64>),
    RankOne { u: Array1<f64>, v: Array1<f64> },
    RowBlock { start: usize, rows: Array2<f64> },
    ColumnBlock { start: usize, cols: Array2<f64> },
}

impl LinearUpdate {
    fn check(&self, m: usize, n: usize) -> Result<(), IngestError> {
        let ok = match self {
            LinearUpdate::Dense(h) => h.dim() == (m, n),
            LinearUpdate::RankOne { u, v } => u.len() == m && v.len() == n,
            LinearUpdate::RowBlock { start, rows } => {
                rows.ncols() == n && rows.nrows() > 0 && start + rows.nrows() <= m
            }
            LinearUpdate::ColumnBlock { start, cols } => {
                cols.nrows() == m && cols.ncols() > 0 && start + cols.ncols() <= n
            }
        };
        if !ok {
            return Err(IngestError::Shape(format!("{} does not fit a {m}x{n} stream", self.describe())));
        }
        let finite = match self {
            LinearUpdate::Dense(h) => check_finite(h.view()).is_ok(),
            LinearUpdate::RankOne { u, v } => u.iter().chain(v.iter()).all(|x| x.is_finite()),
            LinearUpdate::RowBlock { rows, .. } => check_finite(rows.view()).is_ok(),
            LinearUpdate::ColumnBlock { cols, .. } => check_finite(cols.view()).is_ok(),
        };
        if finite {
            Ok(())
        } else {
            Err(IngestError::NonFinite)
        }
    }

    fn describe(&self) -> String {
        match self {
            LinearUpdate::Dense(h) => format!("dense {}x{} update", h.nrows(), h.ncols()),
            LinearUpdate::RankOne { u, v } => format!("rank-one update ({}, {})", u.len(), v.len()),
            LinearUpdate::RowBlock { start, rows } => {
                format!("{}x{} row block at {start}", rows.nrows(), rows.ncols())
            }
            LinearUpdate::ColumnBlock { start, cols } => {
                format!("{}x{} column block at {start}", cols.nrows(), cols.ncols())
            }
        }
    }
}

/// A finished sketch with the test matrices that produced it.
#[derive(Clone, Debug)]
pub struct Sketch {
    pub spec: SketchSpec,
    pub data: DenseMatrix,
    pub test: TestMatrix,
    pub second_test: Option<TestMatrix>,
}

/// Immutable result of one pass over the data.
#[derive(Clone, Debug)]
pub struct SketchSet {
    m: usize,
    n: usize,
    sketches: Vec<Sketch>,
    mixers: Vec<(MixerSpec, TestMatrix)>,
    pass_count: u32,
    update_count: u64,
}

impl SketchSet {
    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn pass_count(&self) -> u32 {
        self.pass_count
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn get(&self, role: SketchRole) -> Option<&Sketch> {
        self.sketches.iter().find(|s| s.spec.role == role)
    }

    pub fn mixer(&self, role: MixerRole) -> Option<&TestMatrix> {
        self.mixers.iter().find(|(s, _)| s.role == role).map(|(_, t)| t)
    }

    pub fn sketches(&self) -> &[Sketch] {
        &self.sketches
    }

    /// Replaces a sketch's data, keeping its provenance. Used to model
    /// storage-precision effects in tests and experiments.
    pub fn with_data(mut self, role: SketchRole, data: DenseMatrix) -> Result<Self, IngestError> {
        let slot = self
            .sketches
            .iter_mut()
            .find(|s| s.spec.role == role)
            .ok_or_else(|| IngestError::Plan(format!("no {role:?} sketch present")))?;
        if slot.data.shape() != data.shape() {
            return Err(IngestError::Shape("replacement sketch has a different shape".into()));
        }
        slot.data = data;
        Ok(self)
    }
}

/// Accumulates sketches over a stream of [`LinearUpdate`]s.
#[derive(Debug)]
pub struct Sketcher {
    m: usize,
    n: usize,
    sketches: Vec<Sketch>,
    mixers: Vec<(MixerSpec, TestMatrix)>,
    rows_seen: Option<Vec<bool>>,
    finalized: bool,
    update_count: u64,
}

impl Sketcher {
    /// Draws every test matrix for trial `trial` and opens an empty stream.
    pub fn open(plan: &SketchPlan, base_seed: u64, trial: u64) -> Result<Self, IngestError> {
        let (m, n) = (plan.m, plan.n);
        if m == 0 || n == 0 {
            return Err(IngestError::Plan(format!("empty {m}x{n} stream")));
        }
        let mut sketches = Vec::with_capacity(plan.sketches.len());
        for spec in &plan.sketches {
            if spec.size == 0 {
                return Err(IngestError::Plan(format!("{:?} sketch has size zero", spec.role)));
            }
            if sketches.iter().any(|s: &Sketch| s.spec.role == spec.role) {
                return Err(IngestError::Plan(format!("duplicate {:?} sketch", spec.role)));
            }
            let seed = SeedSpec::new(base_seed, spec.tag, trial);
            let (test, second_test, shape) = match spec.role {
                SketchRole::Range | SketchRole::Power => {
                    (generate(plan.kind, n, spec.size, seed)?, None, (m, spec.size))
                }
                SketchRole::Gram => (generate(plan.kind, n, spec.size, seed)?, None, (n, spec.size)),
                SketchRole::Corange => (generate(plan.kind, spec.size, m, seed)?, None, (spec.size, n)),
                SketchRole::Core => {
                    let tag = spec
                        .second_tag
                        .ok_or_else(|| IngestError::Plan("core sketch needs two streams".into()))?;
                    let left = generate(plan.kind, spec.size, m, seed)?;
                    let right = generate(plan.kind, spec.size, n, seed.with_tag(tag))?;
                    (left, Some(right), (spec.size, spec.size))
                }
            };
            let data = DenseMatrix::zeros(shape.0, shape.1, spec.precision)?;
            sketches.push(Sketch { spec: *spec, data, test, second_test });
        }
        let mut mixers = Vec::with_capacity(plan.mixers.len());
        for spec in &plan.mixers {
            let t = generate(plan.kind, spec.rows, spec.cols, SeedSpec::new(base_seed, spec.tag, trial))?;
            mixers.push((*spec, t));
        }
        let rows_seen = plan
            .sketches
            .iter()
            .any(|s| s.role == SketchRole::Gram)
            .then(|| vec![false; m]);
        Ok(Self { m, n, sketches, mixers, rows_seen, finalized: false, update_count: 0 })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn ingest(&mut self, update: &LinearUpdate) -> Result<(), IngestError> {
        if self.finalized {
            return Err(IngestError::AfterFinalize);
        }
        update.check(self.m, self.n)?;
        if let Some(seen) = &mut self.rows_seen {
            mark_rows(seen, update)?;
        }
        for sketch in &mut self.sketches {
            apply(sketch, update)?;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Closes the stream. The pass over the data is complete and the
    /// sketcher rejects any later update.
    pub fn finalize(&mut self) -> Result<SketchSet, IngestError> {
        if self.finalized {
            return Err(IngestError::AfterFinalize);
        }
        self.finalized = true;
        Ok(SketchSet {
            m: self.m,
            n: self.n,
            sketches: std::mem::take(&mut self.sketches),
            mixers: std::mem::take(&mut self.mixers),
            pass_count: 1,
            update_count: self.update_count,
        })
    }
}

fn mark_rows(seen: &mut [bool], update: &LinearUpdate) -> Result<(), IngestError> {
    let range = match update {
        LinearUpdate::Dense(h) => 0..h.nrows(),
        LinearUpdate::RowBlock { start, rows } => *start..start + rows.nrows(),
        LinearUpdate::RankOne { u, .. } => {
            let mut nz = u.iter().enumerate().filter(|(_, x)| **x != 0.0);
            match (nz.next(), nz.next()) {
                (None, _) => return Ok(()),
                (Some((i, _)), None) => i..i + 1,
                _ => return Err(IngestError::RankOneNotRow),
            }
        }
        LinearUpdate::ColumnBlock { .. } => return Err(IngestError::ColumnBlockForGram),
    };
    if let Some(i) = range.clone().find(|&i| seen[i]) {
        return Err(IngestError::RowRevisited(i));
    }
    seen[range].iter_mut().for_each(|s| *s = true);
    Ok(())
}

fn row_vec(v: &Array1<f64>) -> ArrayView2<'_, f64> {
    v.view().insert_axis(Axis(0))
}

fn outer(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Array2<f64> {
    // u is p x 1, v is 1 x q
    u.dot(&v)
}

fn apply(sk: &mut Sketch, update: &LinearUpdate) -> Result<(), IngestError> {
    let test = &sk.test;
    match sk.spec.role {
        SketchRole::Range | SketchRole::Power => match update {
            LinearUpdate::Dense(h) => sk.data.add_block(0, 0, test.right_mul(h.view())?.view())?,
            LinearUpdate::RowBlock { start, rows } => {
                sk.data.add_block(*start, 0, test.right_mul(rows.view())?.view())?
            }
            LinearUpdate::ColumnBlock { start, cols } => {
                let part = test.row_block(*start, cols.ncols());
                sk.data.add_block(0, 0, cols.dot(&part).view())?
            }
            LinearUpdate::RankOne { u, v } => {
                let vt = test.right_mul(row_vec(v))?;
                sk.data.add_block(0, 0, outer(u.view().insert_axis(Axis(1)), vt.view()).view())?
            }
        },
        SketchRole::Corange => match update {
            LinearUpdate::Dense(h) => sk.data.add_block(0, 0, test.left_mul(h.view())?.view())?,
            LinearUpdate::RowBlock { start, rows } => {
                let part = test.col_block(*start, rows.nrows());
                sk.data.add_block(0, 0, part.dot(rows).view())?
            }
            LinearUpdate::ColumnBlock { start, cols } => {
                sk.data.add_block(0, *start, test.left_mul(cols.view())?.view())?
            }
            LinearUpdate::RankOne { u, v } => {
                let tu = test.left_mul(u.view().insert_axis(Axis(1)))?;
                sk.data.add_block(0, 0, outer(tu.view(), row_vec(v)).view())?
            }
        },
        SketchRole::Core => {
            let right = sk.second_test.as_ref().expect("core sketch has two test matrices");
            let inc = match update {
                LinearUpdate::Dense(h) => {
                    let left = test.left_mul(h.view())?;
                    right.left_mul(left.t())?.reversed_axes()
                }
                LinearUpdate::RowBlock { start, rows } => {
                    let left = test.col_block(*start, rows.nrows()).dot(rows);
                    right.left_mul(left.t())?.reversed_axes()
                }
                LinearUpdate::ColumnBlock { start, cols } => {
                    let left = test.left_mul(cols.view())?;
                    left.dot(&right.col_block(*start, cols.ncols()).t())
                }
                LinearUpdate::RankOne { u, v } => {
                    let lu = test.left_mul(u.view().insert_axis(Axis(1)))?;
                    let rv = right.left_mul(v.view().insert_axis(Axis(1)))?;
                    lu.dot(&rv.t())
                }
            };
            sk.data.add_block(0, 0, inc.view())?
        }
        SketchRole::Gram => {
            let rows = match update {
                LinearUpdate::Dense(h) => h.view(),
                LinearUpdate::RowBlock { rows, .. } => rows.view(),
                LinearUpdate::RankOne { u, v } => {
                    let Some(i) = u.iter().position(|x| *x != 0.0) else {
                        return Ok(());
                    };
                    let row = (v * u[i]).insert_axis(Axis(0));
                    let proj = test.right_mul(row.view())?;
                    sk.data.add_block(0, 0, row.t().dot(&proj).view())?;
                    return Ok(());
                }
                LinearUpdate::ColumnBlock { .. } => return Err(IngestError::ColumnBlockForGram),
            };
            let proj = test.right_mul(rows)?;
            sk.data.add_block(0, 0, rows.t().dot(&proj).view())?
        }
    }
    Ok(())
}

/// Row-block size used for file streaming: `max(1, 2^24 / n)` rows.
pub fn default_block_rows(n: usize) -> usize {
    ((1usize << 24) / n.max(1)).max(1)
}

/// Streams a matrix file through a fresh sketcher and finalizes it.
/// Equivalent to row-block ingestion of the whole file.
pub fn ingest_file(
    path: &Path,
    plan: &SketchPlan,
    base_seed: u64,
    trial: u64,
    block_rows: Option<usize>,
) -> Result<SketchSet, IngestError> {
    let mut reader = read_row_blocks(path, block_rows)?;
    let (m, n) = reader.dims();
    if (m, n) != (plan.m, plan.n) {
        return Err(IngestError::Shape(format!(
            "file holds a {m}x{n} matrix but the plan expects {}x{}",
            plan.m, plan.n
        )));
    }
    let mut sketcher = Sketcher::open(plan, base_seed, trial)?;
    while let Some(update) = reader.next_block()? {
        sketcher.ingest(&update)?;
    }
    sketcher.finalize()
}

/// Splits an in-memory matrix into row-block updates of `block_rows` rows.
pub fn row_block_updates(a: ArrayView2<'_, f64>, block_rows: usize) -> Vec<LinearUpdate> {
    let step = block_rows.max(1);
    (0..a.nrows())
        .step_by(step)
        .map(|start| {
            let end = (start + step).min(a.nrows());
            LinearUpdate::RowBlock { start, rows: a.slice(ndarray::s![start..end, ..]).to_owned() }
        })
        .collect()
}

/// Convenience: sketch an in-memory matrix with a single dense update.
pub fn sketch_matrix(
    a: ArrayView2<'_, f64>,
    plan: &SketchPlan,
    base_seed: u64,
    trial: u64,
) -> Result<SketchSet, IngestError> {
    let mut sketcher = Sketcher::open(plan, base_seed, trial)?;
    sketcher.ingest(&LinearUpdate::Dense(a.to_owned()))?;
    sketcher.finalize()
}

#[cfg(test)]
mod tests;
