//! Seeded random test matrices: Gaussian, sparse Rademacher, sparse sign and
//! CountSketch.
//!
//! Every matrix is a pure function of its [`SeedSpec`]. The stream seed is
//! `mix(mix(base ^ tag_salt) ^ trial)` with `mix` the SplitMix64 finalizer,
//! and the generator is ChaCha8. Gaussian entries use the ziggurat sampler
//! of `rand_distr::StandardNormal`. Entries are drawn in row-major order.
//! These choices are frozen: changing any of them changes every CSV.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const DEFAULT_SPARSITY: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TestMatrixError {
    #[error("test matrix dimensions must be positive, got {0}x{1}")]
    Empty(usize, usize),
    #[error("sparsity must lie in (0, 1], got {0}")]
    Sparsity(f64),
    #[error("sparsity {sparsity} leaves a {rows}x{cols} sparse Rademacher matrix with no nonzeros")]
    NoNonzeros { rows: usize, cols: usize, sparsity: f64 },
    #[error("operand shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestMatrixKind {
    Gaussian,
    SparseRademacher { sparsity: f64 },
    SparseSign { sparsity: f64 },
    CountSketch,
}

impl TestMatrixKind {
    pub fn sparse_rademacher() -> Self {
        TestMatrixKind::SparseRademacher { sparsity: DEFAULT_SPARSITY }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestMatrixKind::Gaussian => "gaussian",
            TestMatrixKind::SparseRademacher { .. } => "sparse_rademacher",
            TestMatrixKind::SparseSign { .. } => "sparse_sign",
            TestMatrixKind::CountSketch => "countsketch",
        }
    }
}

/// Independent random streams. The first six name test matrices; the data
/// tags drive the synthetic generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Omega,
    Psi,
    Phi,
    OmegaTilde,
    Gamma,
    GammaTilde,
    DataLeft,
    DataRight,
    DataNoise,
}

impl StreamTag {
    fn salt(self) -> u64 {
        // Arbitrary fixed odd constants; part of the frozen seeding contract.
        match self {
            StreamTag::Omega => 0x6f6d_6567_6100_0001,
            StreamTag::Psi => 0x7073_6900_0000_0003,
            StreamTag::Phi => 0x7068_6900_0000_0005,
            StreamTag::OmegaTilde => 0x6f6d_7469_6c64_0007,
            StreamTag::Gamma => 0x6761_6d6d_6100_0009,
            StreamTag::GammaTilde => 0x676d_7469_6c64_000b,
            StreamTag::DataLeft => 0x6461_7461_4c00_000d,
            StreamTag::DataRight => 0x6461_7461_5200_000f,
            StreamTag::DataNoise => 0x6461_7461_4e00_0011,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub base_seed: u64,
    pub stream_tag: StreamTag,
    pub trial_index: u64,
}

impl SeedSpec {
    pub fn new(base_seed: u64, stream_tag: StreamTag, trial_index: u64) -> Self {
        Self { base_seed, stream_tag, trial_index }
    }

    pub fn with_tag(self, stream_tag: StreamTag) -> Self {
        Self { stream_tag, ..self }
    }

    /// The frozen 64-bit stream seed.
    pub fn stream_seed(&self) -> u64 {
        splitmix64(splitmix64(self.base_seed ^ self.stream_tag.salt()) ^ self.trial_index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed())
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
enum Repr {
    Dense(Array2<f64>),
    /// Nonzeros as (row, col, value), sorted by row then column.
    Sparse(Vec<(usize, usize, f64)>),
}

/// A generated test matrix. Sparse kinds keep only their nonzeros but
/// multiply like dense matrices.
#[derive(Clone, Debug)]
pub struct TestMatrix {
    kind: TestMatrixKind,
    seed: SeedSpec,
    rows: usize,
    cols: usize,
    repr: Repr,
}

pub fn generate(
    kind: TestMatrixKind,
    rows: usize,
    cols: usize,
    seed: SeedSpec,
) -> Result<TestMatrix, TestMatrixError> {
    if rows == 0 || cols == 0 {
        return Err(TestMatrixError::Empty(rows, cols));
    }
    let mut rng = seed.rng();
    let repr = match kind {
        TestMatrixKind::Gaussian => Repr::Dense(Array2::from_shape_simple_fn((rows, cols), || {
            StandardNormal.sample(&mut rng)
        })),
        TestMatrixKind::SparseRademacher { sparsity } => {
            check_sparsity(sparsity)?;
            let total = rows * cols;
            let nnz = (total as f64 * sparsity).round() as usize;
            if nnz == 0 {
                return Err(TestMatrixError::NoNonzeros { rows, cols, sparsity });
            }
            let mut positions = index::sample(&mut rng, total, nnz).into_vec();
            positions.sort_unstable();
            let entries = positions
                .into_iter()
                .map(|p| (p / cols, p % cols, rademacher(&mut rng)))
                .collect();
            Repr::Sparse(entries)
        }
        TestMatrixKind::SparseSign { sparsity } => {
            check_sparsity(sparsity)?;
            let mut entries = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    let u: f64 = rng.random();
                    if u < sparsity / 2.0 {
                        entries.push((i, j, 1.0));
                    } else if u < sparsity {
                        entries.push((i, j, -1.0));
                    }
                }
            }
            Repr::Sparse(entries)
        }
        TestMatrixKind::CountSketch => {
            let mut entries: Vec<_> = (0..cols)
                .map(|j| (rng.random_range(0..rows), j, rademacher(&mut rng)))
                .collect();
            entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
            Repr::Sparse(entries)
        }
    };
    Ok(TestMatrix { kind, seed, rows, cols, repr })
}

fn check_sparsity(sparsity: f64) -> Result<(), TestMatrixError> {
    if sparsity > 0.0 && sparsity <= 1.0 {
        Ok(())
    } else {
        Err(TestMatrixError::Sparsity(sparsity))
    }
}

fn rademacher(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

impl TestMatrix {
    pub fn kind(&self) -> TestMatrixKind {
        self.kind
    }

    pub fn seed(&self) -> SeedSpec {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        match &self.repr {
            Repr::Dense(a) => a.iter().filter(|v| **v != 0.0).count(),
            Repr::Sparse(e) => e.len(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.repr {
            Repr::Dense(a) => a.clone(),
            Repr::Sparse(entries) => {
                let mut a = Array2::zeros((self.rows, self.cols));
                for &(i, j, v) in entries {
                    a[[i, j]] = v;
                }
                a
            }
        }
    }

    /// `self * rhs`.
    pub fn left_mul(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>, TestMatrixError> {
        if rhs.nrows() != self.cols {
            return Err(TestMatrixError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows,
                self.cols,
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        Ok(match &self.repr {
            Repr::Dense(a) => a.dot(&rhs),
            Repr::Sparse(entries) => {
                let mut out = Array2::zeros((self.rows, rhs.ncols()));
                for &(i, j, v) in entries {
                    out.row_mut(i).scaled_add(v, &rhs.row(j));
                }
                out
            }
        })
    }

    /// `lhs * self`.
    pub fn right_mul(&self, lhs: ArrayView2<'_, f64>) -> Result<Array2<f64>, TestMatrixError> {
        if lhs.ncols() != self.rows {
            return Err(TestMatrixError::Shape(format!(
                "{}x{} times {}x{}",
                lhs.nrows(),
                lhs.ncols(),
                self.rows,
                self.cols
            )));
        }
        Ok(match &self.repr {
            Repr::Dense(a) => lhs.dot(a),
            Repr::Sparse(entries) => {
                let mut out = Array2::zeros((lhs.nrows(), self.cols));
                for &(i, j, v) in entries {
                    out.column_mut(j).scaled_add(v, &lhs.column(i));
                }
                out
            }
        })
    }

    /// Rows `start..start+len` as a dense block.
    pub fn row_block(&self, start: usize, len: usize) -> Array2<f64> {
        match &self.repr {
            Repr::Dense(a) => a.slice(ndarray::s![start..start + len, ..]).to_owned(),
            Repr::Sparse(entries) => {
                let mut out = Array2::zeros((len, self.cols));
                let lo = entries.partition_point(|e| e.0 < start);
                for &(i, j, v) in entries[lo..].iter().take_while(|e| e.0 < start + len) {
                    out[[i - start, j]] = v;
                }
                out
            }
        }
    }

    /// Columns `start..start+len` as a dense block.
    pub fn col_block(&self, start: usize, len: usize) -> Array2<f64> {
        match &self.repr {
            Repr::Dense(a) => a.slice(ndarray::s![.., start..start + len]).to_owned(),
            Repr::Sparse(entries) => {
                let mut out = Array2::zeros((self.rows, len));
                for &(i, j, v) in entries {
                    if j >= start && j < start + len {
                        out[[i, j - start]] = v;
                    }
                }
                out
            }
        }
    }
}
