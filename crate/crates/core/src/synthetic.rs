//! Synthetic test matrices `U diag(sigma) V^T` with prescribed spectra and
//! random orthonormal factors.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::matrix_core::{qr_economy, DenseMatrix, MatrixError, Precision};
use crate::stream_ingest::{write_spim, IngestError, LinearUpdate};
use crate::test_matrices::{SeedSpec, StreamTag};

pub const DEFAULT_PLATEAU: usize = 10;
pub const DEFAULT_DIM: usize = 1000;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticFamily {
    /// `R` unit singular values plus Gaussian noise scaled by `gamma R / n^2`.
    LowRankNoise { gamma: f64, rank: usize },
    /// `R` ones, then `2^-alpha, 3^-alpha, ...`.
    PolyDecay { alpha: f64, rank: usize },
    /// `R` ones, then `e^-alpha, e^-2alpha, ...`.
    ExpDecay { alpha: f64, rank: usize },
}

impl SyntheticFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticFamily::LowRankNoise { .. } => "lowrank",
            SyntheticFamily::PolyDecay { .. } => "poly",
            SyntheticFamily::ExpDecay { .. } => "exp",
        }
    }

    /// The decay rate or noise level.
    pub fn parameter(&self) -> f64 {
        match *self {
            SyntheticFamily::LowRankNoise { gamma, .. } => gamma,
            SyntheticFamily::PolyDecay { alpha, .. } | SyntheticFamily::ExpDecay { alpha, .. } => alpha,
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            SyntheticFamily::LowRankNoise { rank, .. }
            | SyntheticFamily::PolyDecay { rank, .. }
            | SyntheticFamily::ExpDecay { rank, .. } => rank,
        }
    }

    /// The `k` leading prescribed singular values, before any noise.
    pub fn spectrum(&self, k: usize) -> Vec<f64> {
        let rank = self.rank();
        (1..=k)
            .map(|i| {
                if i <= rank {
                    return 1.0;
                }
                let j = (i - rank) as f64;
                match *self {
                    SyntheticFamily::LowRankNoise { .. } => 0.0,
                    SyntheticFamily::PolyDecay { alpha, .. } => (j + 1.0).powf(-alpha),
                    SyntheticFamily::ExpDecay { alpha, .. } => (-alpha * j).exp(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub family: SyntheticFamily,
    pub m: usize,
    pub n: usize,
    /// Base seed and trial; the stream tag is ignored.
    pub seed: SeedSpec,
}

impl SyntheticSpec {
    pub fn new(family: SyntheticFamily, m: usize, n: usize, base_seed: u64, trial: u64) -> Self {
        Self { family, m, n, seed: SeedSpec::new(base_seed, StreamTag::DataLeft, trial) }
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        if self.m == 0 || self.n == 0 {
            return Err(SyntheticError::Spec(format!("empty {}x{} matrix", self.m, self.n)));
        }
        let rank = self.family.rank();
        if rank > self.m.min(self.n) {
            return Err(SyntheticError::Spec(format!("plateau rank {rank} exceeds min(m, n)")));
        }
        let p = self.family.parameter();
        if !(p >= 0.0 && p.is_finite()) {
            return Err(SyntheticError::Spec(format!("parameter must be finite and non-negative, got {p}")));
        }
        Ok(())
    }

    /// Number of nonzero prescribed singular values carried by the factors.
    fn factor_width(&self) -> usize {
        match self.family {
            SyntheticFamily::LowRankNoise { rank, .. } => rank,
            _ => self.m.min(self.n),
        }
    }

    pub fn prescribed_spectrum(&self) -> Vec<f64> {
        self.family.spectrum(self.m.min(self.n))
    }

    fn noise_scale(&self) -> f64 {
        match self.family {
            SyntheticFamily::LowRankNoise { gamma, rank } => gamma * rank as f64 / (self.n as f64).powi(2),
            _ => 0.0,
        }
    }
}

/// Orthonormal `rows x cols` basis from QR of a standard Gaussian matrix.
pub fn random_orthonormal(rows: usize, cols: usize, seed: SeedSpec) -> Result<Array2<f64>, SyntheticError> {
    let mut rng = seed.rng();
    let g = Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng));
    Ok(qr_economy(g.view())?.q)
}

/// Left factor already scaled by the spectrum, and the right factor.
struct Factors {
    left: Array2<f64>,
    right: Array2<f64>,
}

fn factors(spec: &SyntheticSpec) -> Result<Factors, SyntheticError> {
    spec.validate()?;
    let k = spec.factor_width();
    if k == 0 {
        return Ok(Factors { left: Array2::zeros((spec.m, 0)), right: Array2::zeros((spec.n, 0)) });
    }
    let u = random_orthonormal(spec.m, k, spec.seed.with_tag(StreamTag::DataLeft))?;
    let v = random_orthonormal(spec.n, k, spec.seed.with_tag(StreamTag::DataRight))?;
    let sigma = Array1::from(spec.family.spectrum(k));
    Ok(Factors { left: &u * &sigma.view().insert_axis(Axis(0)), right: v })
}

/// Materializes the matrix.
pub fn generate_matrix(spec: &SyntheticSpec) -> Result<Array2<f64>, SyntheticError> {
    let f = factors(spec)?;
    let mut a = f.left.dot(&f.right.t());
    let scale = spec.noise_scale();
    if scale != 0.0 {
        let mut rng = spec.seed.with_tag(StreamTag::DataNoise).rng();
        a.iter_mut().for_each(|x| {
            let e: f64 = StandardNormal.sample(&mut rng);
            *x += scale * e;
        });
    }
    Ok(a)
}

pub fn generate_dense(spec: &SyntheticSpec) -> Result<DenseMatrix, SyntheticError> {
    Ok(DenseMatrix::from_f64(generate_matrix(spec)?)?)
}

/// Emits the matrix as row-block updates without assembling it. The noise
/// is drawn in the same row-major order as [`generate_matrix`], so both
/// paths produce the same entries.
pub struct RowBlockStream {
    factors: Factors,
    scale: f64,
    noise: Option<rand_chacha::ChaCha8Rng>,
    m: usize,
    n: usize,
    block: usize,
    next_row: usize,
}

impl Iterator for RowBlockStream {
    type Item = LinearUpdate;

    fn next(&mut self) -> Option<LinearUpdate> {
        if self.next_row >= self.m {
            return None;
        }
        let start = self.next_row;
        let end = (start + self.block).min(self.m);
        let mut rows = self.factors.left.slice(s![start..end, ..]).dot(&self.factors.right.t());
        if rows.is_empty() {
            rows = Array2::zeros((end - start, self.n));
        }
        if let Some(rng) = &mut self.noise {
            let scale = self.scale;
            rows.iter_mut().for_each(|x| {
                let e: f64 = StandardNormal.sample(rng);
                *x += scale * e;
            });
        }
        self.next_row = end;
        Some(LinearUpdate::RowBlock { start, rows })
    }
}

pub fn row_block_stream(spec: &SyntheticSpec, block_rows: usize) -> Result<RowBlockStream, SyntheticError> {
    let factors = factors(spec)?;
    let scale = spec.noise_scale();
    let noise = (scale != 0.0).then(|| spec.seed.with_tag(StreamTag::DataNoise).rng());
    Ok(RowBlockStream { factors, scale, noise, m: spec.m, n: spec.n, block: block_rows.max(1), next_row: 0 })
}

/// Writes the generated matrix as a SPIM file.
pub fn export_spim(spec: &SyntheticSpec, path: &Path, precision: Precision) -> Result<(), SyntheticError> {
    let a = generate_matrix(spec)?;
    write_spim(path, a.view(), precision)?;
    Ok(())
}
