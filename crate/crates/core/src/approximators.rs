//! One-pass low-rank approximation pipelines.
//!
//! Every pipeline is split into two halves: [`Algorithm::sketch_plan`]
//! describes which sketches to accumulate, and [`approximate`] turns a
//! finalized [`SketchSet`] into rank-r factors. The data matrix is never an
//! input to the second half.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::matrix_core::{lstsq, qr_economy, svd_truncated, DenseMatrix, MatrixError, Precision};
use crate::precision_model::{storage_precision, PrecisionError};
use crate::spi::{spi_apply, spi_variant, SpiError, SpiParams, VariantOptions};
use crate::stream_ingest::{
    IngestError, MixerRole, MixerSpec, SketchPlan, SketchRole, SketchSet, SketchSpec,
};
use crate::test_matrices::{StreamTag, TestMatrix, TestMatrixKind};

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("invalid sketch configuration: {0}")]
    Config(String),
    #[error("sketch set lacks the {0:?} sketch")]
    MissingSketch(SketchRole),
    #[error("sketch set lacks the {0:?} mixer")]
    MissingMixer(MixerRole),
    #[error("sketches came from {0} passes over the data; exactly one is required")]
    NotOnePass(u32),
    #[error(transparent)]
    Precision(#[from] PrecisionError),
    #[error(transparent)]
    Spi(#[from] SpiError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Tyuc17,
    Tyuc17Spi,
    Tyuc17SpiVariant,
    RsvdOnepass,
    Tyuc19,
    Tyuc19Spi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Tyuc17,
        Algorithm::Tyuc17Spi,
        Algorithm::Tyuc17SpiVariant,
        Algorithm::RsvdOnepass,
        Algorithm::Tyuc19,
        Algorithm::Tyuc19Spi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tyuc17 => "tyuc17",
            Algorithm::Tyuc17Spi => "tyuc17_spi",
            Algorithm::Tyuc17SpiVariant => "tyuc17_spi_variant",
            Algorithm::RsvdOnepass => "rsvd_onepass",
            Algorithm::Tyuc19 => "tyuc19",
            Algorithm::Tyuc19Spi => "tyuc19_spi",
        }
    }

    /// Whether the pipeline runs sketch-power iteration.
    pub fn uses_spi(self) -> bool {
        matches!(self, Algorithm::Tyuc17Spi | Algorithm::Tyuc17SpiVariant | Algorithm::Tyuc19Spi)
    }

    /// Whether the pipeline uses the power sketch width `l`.
    pub fn uses_l(self) -> bool {
        self.uses_spi()
    }

    /// Whether the pipeline uses a second size `d`.
    pub fn uses_d(self) -> bool {
        !matches!(self, Algorithm::RsvdOnepass)
    }

    /// Storage precision used when the caller does not choose one.
    pub fn default_plan(self) -> PrecisionPlan {
        if self.uses_spi() {
            PrecisionPlan::MixedSingleDouble
        } else {
            PrecisionPlan::AllDouble
        }
    }

    /// The sketches and mixers this pipeline needs for an m x n input.
    pub fn sketch_plan(
        self,
        cfg: &SketchConfig,
        m: usize,
        n: usize,
        kind: TestMatrixKind,
    ) -> Result<SketchPlan, ApproxError> {
        cfg.validate(self, m, n)?;
        let prec = |role| storage_precision(self, cfg.plan, role);
        let spec = |role, size, tag| -> Result<SketchSpec, ApproxError> {
            Ok(SketchSpec { role, size, precision: prec(role)?, tag, second_tag: None })
        };
        let core = |size| -> Result<SketchSpec, ApproxError> {
            Ok(SketchSpec {
                role: SketchRole::Core,
                size,
                precision: prec(SketchRole::Core)?,
                tag: StreamTag::Phi,
                second_tag: Some(StreamTag::Psi),
            })
        };
        let (sketches, mixers) = match self {
            Algorithm::Tyuc17 => (
                vec![spec(SketchRole::Range, cfg.s, StreamTag::Omega)?, spec(SketchRole::Corange, cfg.d, StreamTag::Psi)?],
                vec![],
            ),
            Algorithm::Tyuc17Spi => (
                vec![
                    spec(SketchRole::Range, cfg.s, StreamTag::Omega)?,
                    spec(SketchRole::Corange, cfg.d, StreamTag::Psi)?,
                    spec(SketchRole::Power, cfg.l, StreamTag::Phi)?,
                ],
                vec![],
            ),
            Algorithm::Tyuc17SpiVariant => (
                vec![spec(SketchRole::Corange, cfg.d, StreamTag::Psi)?, spec(SketchRole::Power, cfg.l, StreamTag::Phi)?],
                vec![MixerSpec { role: MixerRole::Range, rows: cfg.l, cols: cfg.s, tag: StreamTag::OmegaTilde }],
            ),
            Algorithm::RsvdOnepass => (
                vec![spec(SketchRole::Range, cfg.s, StreamTag::Omega)?, spec(SketchRole::Gram, cfg.s, StreamTag::Omega)?],
                vec![],
            ),
            Algorithm::Tyuc19 => (
                vec![
                    spec(SketchRole::Range, cfg.s, StreamTag::Omega)?,
                    spec(SketchRole::Corange, cfg.s, StreamTag::Gamma)?,
                    core(cfg.d)?,
                ],
                vec![],
            ),
            Algorithm::Tyuc19Spi => (
                vec![
                    spec(SketchRole::Power, cfg.l, StreamTag::Omega)?,
                    spec(SketchRole::Corange, cfg.l, StreamTag::Gamma)?,
                    core(cfg.d)?,
                ],
                vec![
                    MixerSpec { role: MixerRole::Range, rows: cfg.l, cols: cfg.s, tag: StreamTag::OmegaTilde },
                    MixerSpec { role: MixerRole::Corange, rows: cfg.s, cols: cfg.l, tag: StreamTag::GammaTilde },
                ],
            ),
        };
        Ok(SketchPlan { m, n, kind, sketches, mixers })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ApproxError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrecisionPlan {
    AllDouble,
    MixedSingleDouble,
}

impl PrecisionPlan {
    pub fn name(self) -> &'static str {
        match self {
            PrecisionPlan::AllDouble => "all_double",
            PrecisionPlan::MixedSingleDouble => "mixed_single_double",
        }
    }
}

impl FromStr for PrecisionPlan {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_double" | "double" => Ok(PrecisionPlan::AllDouble),
            "mixed_single_double" | "mixed" => Ok(PrecisionPlan::MixedSingleDouble),
            _ => Err(ApproxError::Config(format!("unknown precision plan {s:?}"))),
        }
    }
}

/// Target rank, sketch sizes and iteration settings for one pipeline run.
/// Sizes an algorithm does not use are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchConfig {
    pub r: usize,
    pub s: usize,
    pub d: usize,
    pub l: usize,
    pub q: usize,
    pub plan: PrecisionPlan,
    /// Overrides the default re-orthonormalization choice of [`SpiParams::new`].
    pub stabilize: Option<bool>,
    /// Lifts the `s <= l/2` rule of the reduced-storage pipelines.
    pub allow_oversized: bool,
}

impl SketchConfig {
    pub fn new(r: usize, s: usize, d: usize, l: usize, q: usize, plan: PrecisionPlan) -> Self {
        Self { r, s, d, l, q, plan, stabilize: None, allow_oversized: false }
    }

    pub fn spi_params(&self) -> SpiParams {
        let mut p = SpiParams::new(self.q);
        if let Some(st) = self.stabilize {
            p.stabilize = st;
        }
        p
    }

    pub fn validate(&self, algo: Algorithm, m: usize, n: usize) -> Result<(), ApproxError> {
        let fail = |msg: String| Err(ApproxError::Config(msg));
        let (r, s, d, l) = (self.r, self.s, self.d, self.l);
        if r == 0 {
            return fail("target rank r must be positive".into());
        }
        if r > s {
            return fail(format!("r = {r} exceeds s = {s}"));
        }
        if s > m.min(n) {
            return fail(format!("s = {s} exceeds min(m, n) = {}", m.min(n)));
        }
        if algo.uses_d() && d <= s {
            return fail(format!("{algo} requires d > s, got d = {d}, s = {s}"));
        }
        match algo {
            Algorithm::Tyuc17Spi if l <= s => fail(format!("{algo} requires l > s, got l = {l}, s = {s}")),
            Algorithm::Tyuc17SpiVariant | Algorithm::Tyuc19Spi if 2 * s > l && !self.allow_oversized => {
                fail(format!("{algo} requires l >= 2s, got l = {l}, s = {s}"))
            }
            Algorithm::Tyuc17SpiVariant | Algorithm::Tyuc19Spi if l <= s => {
                fail(format!("{algo} requires l > s, got l = {l}, s = {s}"))
            }
            Algorithm::Tyuc19Spi if l > m.min(n) => {
                fail(format!("{algo} requires l <= min(m, n), got l = {l}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ApproxFlag {
    /// The orthonormalized range sketch lost rank.
    RangeRankDeficient,
    /// A least-squares solve fell back to the minimum-norm solution.
    IllConditionedSolve,
    /// Re-orthonormalization inside sketch-power iteration lost rank.
    SpiRankCollapse,
    /// The triangular factor of the one-pass RSVD was singular.
    SingularTriangular,
}

/// Intermediate factors kept for error decomposition.
#[derive(Clone, Debug)]
pub enum Factors {
    /// `A ~ Q B`, with `B ~ U_small S V^T` truncated.
    Projection { q: Array2<f64>, b: Array2<f64>, small_u: Array2<f64> },
    /// `A ~ Q C P^T`.
    Core { q: Array2<f64>, c: Array2<f64>, p: Array2<f64> },
}

#[derive(Clone, Debug)]
pub struct ApproxResult {
    pub algorithm: Algorithm,
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
    pub factors: Factors,
    pub flags: Vec<ApproxFlag>,
}

impl ApproxResult {
    /// The rank-r approximation `U diag(S) V^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        (&self.u * &self.s.view().insert_axis(Axis(0))).dot(&self.v.t())
    }

    /// The untruncated approximation `Q B` or `Q C P^T`.
    pub fn untruncated(&self) -> Array2<f64> {
        match &self.factors {
            Factors::Projection { q, b, .. } => q.dot(b),
            Factors::Core { q, c, p } => q.dot(c).dot(&p.t()),
        }
    }

    pub fn range_basis(&self) -> &Array2<f64> {
        match &self.factors {
            Factors::Projection { q, .. } | Factors::Core { q, .. } => q,
        }
    }

    /// True when `B = Q^T A` exactly, so the fit adds no error beyond the range.
    pub fn is_orthogonal_projection(&self) -> bool {
        self.algorithm == Algorithm::RsvdOnepass
    }

    pub fn has_flag(&self, flag: ApproxFlag) -> bool {
        self.flags.contains(&flag)
    }
}

fn sketch_f64(set: &SketchSet, role: SketchRole) -> Result<(Array2<f64>, &TestMatrix, Precision), ApproxError> {
    let sk = set.get(role).ok_or(ApproxError::MissingSketch(role))?;
    Ok((sk.data.to_f64(), &sk.test, sk.data.precision()))
}

fn mixer(set: &SketchSet, role: MixerRole) -> Result<Array2<f64>, ApproxError> {
    Ok(set.mixer(role).ok_or(ApproxError::MissingMixer(role))?.to_dense())
}

/// Stores an iterate in the precision of the sketch it overwrites, then
/// widens it again for the double-precision kernels.
fn store_as(iterate: Array2<f64>, precision: Precision) -> Result<Array2<f64>, ApproxError> {
    match precision {
        Precision::Binary64 => Ok(iterate),
        Precision::Binary32 => Ok(DenseMatrix::from_f64(iterate)?.into_precision(Precision::Binary32).to_f64()),
    }
}

fn push_flag(flags: &mut Vec<ApproxFlag>, flag: ApproxFlag, on: bool) {
    if on && !flags.contains(&flag) {
        flags.push(flag);
    }
}

/// Runs the pipeline's reconstruction stage on a finalized sketch set.
pub fn approximate(algo: Algorithm, set: &SketchSet, cfg: &SketchConfig) -> Result<ApproxResult, ApproxError> {
    if set.pass_count() != 1 {
        return Err(ApproxError::NotOnePass(set.pass_count()));
    }
    let (m, n) = set.dims();
    cfg.validate(algo, m, n)?;
    match algo {
        Algorithm::Tyuc17 => tyuc17(set, cfg.r),
        Algorithm::Tyuc17Spi => tyuc17_spi(set, cfg.spi_params(), cfg.r),
        Algorithm::Tyuc17SpiVariant => tyuc17_spi_variant(set, cfg.spi_params(), cfg.allow_oversized, cfg.r),
        Algorithm::RsvdOnepass => rsvd_onepass(set, cfg.r),
        Algorithm::Tyuc19 => tyuc19(set, cfg.r),
        Algorithm::Tyuc19Spi => tyuc19_spi(set, cfg.spi_params(), cfg.allow_oversized, cfg.r),
    }
}

/// Oblique projection: `Q = qr(range)`, `B = (Psi Q)^+ W`, truncate `B`.
fn projection_fit(
    algo: Algorithm,
    range: ArrayView2<'_, f64>,
    corange: ArrayView2<'_, f64>,
    psi: &TestMatrix,
    r: usize,
    mut flags: Vec<ApproxFlag>,
) -> Result<ApproxResult, ApproxError> {
    let qr = qr_economy(range)?;
    push_flag(&mut flags, ApproxFlag::RangeRankDeficient, qr.rank_deficient);
    let psi_q = psi.left_mul(qr.q.view()).map_err(IngestError::from)?;
    let sol = lstsq(psi_q.view(), corange)?;
    push_flag(&mut flags, ApproxFlag::IllConditionedSolve, sol.ill_conditioned);
    finish_projection(algo, qr.q, sol.x, r, flags)
}

fn finish_projection(
    algorithm: Algorithm,
    q: Array2<f64>,
    b: Array2<f64>,
    r: usize,
    flags: Vec<ApproxFlag>,
) -> Result<ApproxResult, ApproxError> {
    let t = svd_truncated(b.view(), r)?;
    let u = q.dot(&t.u);
    Ok(ApproxResult { algorithm, u, s: t.s, v: t.v, factors: Factors::Projection { q, b, small_u: t.u }, flags })
}

pub fn tyuc17(set: &SketchSet, r: usize) -> Result<ApproxResult, ApproxError> {
    let (y, _, _) = sketch_f64(set, SketchRole::Range)?;
    let (w, psi, _) = sketch_f64(set, SketchRole::Corange)?;
    projection_fit(Algorithm::Tyuc17, y.view(), w.view(), psi, r, Vec::new())
}

pub fn tyuc17_spi(set: &SketchSet, params: SpiParams, r: usize) -> Result<ApproxResult, ApproxError> {
    let (y, _, y_prec) = sketch_f64(set, SketchRole::Range)?;
    let (z, _, _) = sketch_f64(set, SketchRole::Power)?;
    let (w, psi, _) = sketch_f64(set, SketchRole::Corange)?;
    let out = spi_apply(z.view(), y.view(), params)?;
    let mut flags = Vec::new();
    push_flag(&mut flags, ApproxFlag::SpiRankCollapse, out.rank_collapse);
    // The iterate overwrites Y, so it inherits Y's storage precision.
    let iterate = store_as(out.basis, y_prec)?;
    projection_fit(Algorithm::Tyuc17Spi, iterate.view(), w.view(), psi, r, flags)
}

pub fn tyuc17_spi_variant(
    set: &SketchSet,
    params: SpiParams,
    allow_oversized: bool,
    r: usize,
) -> Result<ApproxResult, ApproxError> {
    let (z, _, z_prec) = sketch_f64(set, SketchRole::Power)?;
    let (w, psi, _) = sketch_f64(set, SketchRole::Corange)?;
    let mix = mixer(set, MixerRole::Range)?;
    let opts = VariantOptions { stabilize: params.stabilize, allow_oversized };
    let out = spi_variant(z.view(), mix.view(), params.q, opts)?;
    let mut flags = Vec::new();
    push_flag(&mut flags, ApproxFlag::SpiRankCollapse, out.rank_collapse);
    // The iterate overwrites the leading columns of Z.
    let iterate = store_as(out.basis, z_prec)?;
    projection_fit(Algorithm::Tyuc17SpiVariant, iterate.view(), w.view(), psi, r, flags)
}

/// Orthogonal projection from `Y = A Omega` and `G = A^T A Omega`:
/// `[Q, R] = qr(Y)` and `R^T B = G^T`, so `B = Q^T A`.
///
/// The solve goes through the SVD of `R` and drops directions whose singular
/// value is below `sqrt(eps)` times the largest. Those directions carry only
/// rounding noise when `Y` is rank deficient, and dividing by them would
/// amplify the rounding error in `G` without bound.
pub fn rsvd_onepass(set: &SketchSet, r: usize) -> Result<ApproxResult, ApproxError> {
    let (y, _, _) = sketch_f64(set, SketchRole::Range)?;
    let (g, _, _) = sketch_f64(set, SketchRole::Gram)?;
    let qr = qr_economy(y.view())?;
    let mut flags = Vec::new();
    push_flag(&mut flags, ApproxFlag::RangeRankDeficient, qr.rank_deficient);
    let s = qr.r.ncols();
    let f = svd_truncated(qr.r.view(), s)?;
    let tol = f.s[0] * f64::EPSILON.sqrt();
    let kept = f.s.iter().take_while(|&&v| v > tol).count();
    push_flag(&mut flags, ApproxFlag::SingularTriangular, kept < s);
    // R = U S V^T, so with Q' = Q U the rows of Q'^T A are S^-1 V^T G^T.
    let q = qr.q.dot(&f.u);
    let mut b = f.v.t().dot(&g.t());
    for (i, mut row) in b.outer_iter_mut().enumerate() {
        if i < kept {
            row /= f.s[i];
        } else {
            row.fill(0.0);
        }
    }
    finish_projection(Algorithm::RsvdOnepass, q, b, r, flags)
}

/// Two-sided fit `C = (Phi Q)^+ K ((Psi P)^+)^T`, solved left side first.
fn core_fit(
    algorithm: Algorithm,
    range: ArrayView2<'_, f64>,
    corange: ArrayView2<'_, f64>,
    set: &SketchSet,
    r: usize,
    mut flags: Vec<ApproxFlag>,
) -> Result<ApproxResult, ApproxError> {
    let core = set.get(SketchRole::Core).ok_or(ApproxError::MissingSketch(SketchRole::Core))?;
    let k = core.data.to_f64();
    let right = core.second_test.as_ref().ok_or(ApproxError::MissingSketch(SketchRole::Core))?;
    let qy = qr_economy(range)?;
    let px = qr_economy(corange.t())?;
    push_flag(&mut flags, ApproxFlag::RangeRankDeficient, qy.rank_deficient || px.rank_deficient);
    let phi_q = core.test.left_mul(qy.q.view()).map_err(IngestError::from)?;
    let left = lstsq(phi_q.view(), k.view())?;
    let psi_p = right.left_mul(px.q.view()).map_err(IngestError::from)?;
    let ct = lstsq(psi_p.view(), left.x.t())?;
    push_flag(&mut flags, ApproxFlag::IllConditionedSolve, left.ill_conditioned || ct.ill_conditioned);
    let c = ct.x.reversed_axes().as_standard_layout().into_owned();
    let t = svd_truncated(c.view(), r)?;
    let u = qy.q.dot(&t.u);
    let v = px.q.dot(&t.v);
    Ok(ApproxResult {
        algorithm,
        u,
        s: t.s,
        v,
        factors: Factors::Core { q: qy.q, c, p: px.q },
        flags,
    })
}

pub fn tyuc19(set: &SketchSet, r: usize) -> Result<ApproxResult, ApproxError> {
    let (y, _, _) = sketch_f64(set, SketchRole::Range)?;
    let (x, _, _) = sketch_f64(set, SketchRole::Corange)?;
    core_fit(Algorithm::Tyuc19, y.view(), x.view(), set, r, Vec::new())
}

pub fn tyuc19_spi(
    set: &SketchSet,
    params: SpiParams,
    allow_oversized: bool,
    r: usize,
) -> Result<ApproxResult, ApproxError> {
    let (z, _, z_prec) = sketch_f64(set, SketchRole::Power)?;
    let (w, _, w_prec) = sketch_f64(set, SketchRole::Corange)?;
    let omega_mix = mixer(set, MixerRole::Range)?;
    let gamma_mix = mixer(set, MixerRole::Corange)?;
    let opts = VariantOptions { stabilize: params.stabilize, allow_oversized };
    let y = spi_variant(z.view(), omega_mix.view(), params.q, opts)?;
    // Gamma_mix (W W^T)^q W is the transpose of the same iteration on W^T.
    let xt = spi_variant(w.t(), gamma_mix.t(), params.q, opts)?;
    let mut flags = Vec::new();
    push_flag(&mut flags, ApproxFlag::SpiRankCollapse, y.rank_collapse || xt.rank_collapse);
    let y = store_as(y.basis, z_prec)?;
    let x = store_as(xt.basis.reversed_axes(), w_prec)?;
    core_fit(Algorithm::Tyuc19Spi, y.view(), x.view(), set, r, flags)
}
