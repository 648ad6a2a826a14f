//! Error metrics, subspace angles, spectra and computable error bounds.
//!
//! Every relative error is measured against the optimal rank-r error, so 0
//! means "as good as the truncated SVD".

mod bounds;
mod sweep;

pub use bounds::{
    bound_frobenius_q1, bound_spectral_general_q, ef_inverse_norm, frobenius_coefficients, gamma3, BoundInputsFro,
    BoundInputsSpec, FroCoefficients, SpectralBound,
};
pub use sweep::{oracle_sweep, SweepRow, SweepSpec, SweepTable};

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::approximators::{approximate, Algorithm, ApproxError, ApproxResult, Factors, SketchConfig};
use crate::matrix_core::{frobenius, orthonormalize, singular_values, spectral_norm, MatrixError};
use crate::stream_ingest::{sketch_matrix, IngestError};
use crate::synthetic::SyntheticError;
use crate::test_matrices::TestMatrixKind;

/// Relative errors below `-EXACT_FIT_SLACK` mean the approximation beat the
/// rank-r optimum, which only a higher-rank approximation can do.
pub const EXACT_FIT_SLACK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} is not defined for this pipeline")]
    Unsupported(&'static str),
    #[error("bound hypotheses violated: {0}")]
    Hypothesis(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricFlag {
    /// The rank-r optimum is exact; errors are absolute, not relative.
    ZeroBaseline,
    /// The approximation beat the rank-r optimum; the error was clamped to 0.
    ExactFit,
}

/// Optimal rank-r errors of a matrix, from its full spectrum.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub singular_values: Array1<f64>,
    pub r: usize,
}

impl Baseline {
    /// Singular values below the numerical-rank threshold are stored as
    /// exact zeros, so an exactly low-rank matrix gets a zero baseline.
    pub fn new(a: ArrayView2<'_, f64>, r: usize) -> Result<Self, MetricsError> {
        let mut sv = singular_values(a)?;
        let tol = sv.first().copied().unwrap_or(0.0) * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
        sv.mapv_inplace(|x| if x <= tol { 0.0 } else { x });
        Ok(Self { singular_values: sv, r })
    }

    pub fn from_spectrum(singular_values: Array1<f64>, r: usize) -> Self {
        Self { singular_values, r }
    }

    /// `||A - [A]_r||_F`.
    pub fn frobenius(&self) -> f64 {
        self.singular_values.iter().skip(self.r).map(|s| s * s).sum::<f64>().sqrt()
    }

    /// `||A - [A]_r||_2 = sigma_{r+1}`.
    pub fn spectral(&self) -> f64 {
        self.singular_values.get(self.r).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub s_f: f64,
    pub s_inf: f64,
    pub range_err_f: Option<f64>,
    pub range_err_s: Option<f64>,
    pub extra_err_f: Option<f64>,
    pub extra_err_s: Option<f64>,
    pub canon_angle_sines: Vec<f64>,
    pub wall_ms: Option<f64>,
    pub flags: Vec<MetricFlag>,
}

fn relative(err: f64, base: f64, flags: &mut Vec<MetricFlag>) -> f64 {
    if base == 0.0 {
        if !flags.contains(&MetricFlag::ZeroBaseline) {
            flags.push(MetricFlag::ZeroBaseline);
        }
        return err;
    }
    let rel = err / base - 1.0;
    if rel < -EXACT_FIT_SLACK {
        if !flags.contains(&MetricFlag::ExactFit) {
            flags.push(MetricFlag::ExactFit);
        }
        return 0.0;
    }
    rel
}

/// `S_F` and `S_inf`: `||A - approx|| / ||A - [A]_r|| - 1` in both norms.
pub fn relative_error(
    a: ArrayView2<'_, f64>,
    approx: ArrayView2<'_, f64>,
    baseline: &Baseline,
) -> Result<(f64, f64, Vec<MetricFlag>), MetricsError> {
    if a.dim() != approx.dim() {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", a.dim(), approx.dim())));
    }
    let diff = &a - &approx;
    let mut flags = Vec::new();
    let s_f = relative(frobenius(diff.view()), baseline.frobenius(), &mut flags);
    let s_inf = relative(spectral_norm(diff.view())?, baseline.spectral(), &mut flags);
    Ok((s_f, s_inf, flags))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeExtra {
    pub range_f: f64,
    pub range_s: f64,
    pub extra_f: f64,
    pub extra_s: f64,
}

/// Splits the error into the part due to the range estimate,
/// `||A - U U^T A|| / base - 1`, and the part due to the oblique fit,
/// `||U Ut^T (Q^T A - B)|| / base`, where `Ut` is the small left factor.
pub fn range_extra_errors(
    a: ArrayView2<'_, f64>,
    result: &ApproxResult,
    baseline: &Baseline,
) -> Result<RangeExtra, MetricsError> {
    let Factors::Projection { q, b, small_u } = &result.factors else {
        return Err(MetricsError::Unsupported("range/extra error decomposition"));
    };
    let u = &result.u;
    let resid = &a - &u.dot(&u.t().dot(&a));
    let mut flags = Vec::new();
    let range_f = relative(frobenius(resid.view()), baseline.frobenius(), &mut flags);
    let range_s = relative(spectral_norm(resid.view())?, baseline.spectral(), &mut flags);
    let (extra_f, extra_s) = if result.is_orthogonal_projection() {
        (0.0, 0.0)
    } else {
        // Q Ut has orthonormal columns, so only Ut^T (Q^T A - B) matters.
        let inner = small_u.t().dot(&(q.t().dot(&a) - b));
        let scale = |e: f64, base: f64| if base == 0.0 { e } else { e / base };
        (
            scale(frobenius(inner.view()), baseline.frobenius()),
            scale(spectral_norm(inner.view())?, baseline.spectral()),
        )
    };
    Ok(RangeExtra { range_f, range_s, extra_f, extra_s })
}

fn ensure_orthonormal(u: ArrayView2<'_, f64>, name: &str) -> Result<Array2<f64>, MetricsError> {
    let k = u.ncols();
    let gram = u.t().dot(&u) - Array2::<f64>::eye(k);
    if frobenius(gram.view()) > 1e-8 * (k as f64).sqrt().max(1.0) {
        log::warn!("{name} is not orthonormal; re-orthonormalizing");
        Ok(orthonormalize(u)?)
    } else {
        Ok(u.to_owned())
    }
}

/// Sines of the `how_many` smallest principal angles between the column
/// spaces, ascending. Computed from the residual `(I - Ut Ut^T) Ue`, which
/// stays accurate for tiny angles.
pub fn canonical_angle_sines(
    u_est: ArrayView2<'_, f64>,
    u_true: ArrayView2<'_, f64>,
    how_many: usize,
) -> Result<Vec<f64>, MetricsError> {
    if u_est.nrows() != u_true.nrows() {
        return Err(MetricsError::Shape("bases live in different ambient spaces".into()));
    }
    let ue = ensure_orthonormal(u_est, "estimated basis")?;
    let ut = ensure_orthonormal(u_true, "reference basis")?;
    let resid = &ue - &ut.dot(&ut.t().dot(&ue));
    let mut sines: Vec<f64> = singular_values(resid.view())?.iter().map(|s| s.min(1.0)).collect();
    // The residual has ue.ncols() singular values only when rows >= cols.
    sines.resize(ue.ncols().min(resid.nrows()), 0.0);
    sines.sort_by(f64::total_cmp);
    sines.truncate(how_many);
    Ok(sines)
}

/// `sqrt(sum_{i >= k} sigma_i^2)` with 1-based `k`.
pub fn tail_energy(singular_values: &[f64], k: usize) -> f64 {
    let start = k.max(1) - 1;
    singular_values.get(start..).map_or(0.0, |t| t.iter().map(|s| s * s).sum::<f64>().sqrt())
}

/// `sigma_i(A Phi) / sigma_i(A)` over the shared index range; `None` where
/// `sigma_i(A)` is numerically zero.
pub fn distortion_ratio(a: ArrayView2<'_, f64>, phi: ArrayView2<'_, f64>) -> Result<Vec<Option<f64>>, MetricsError> {
    if a.ncols() != phi.nrows() {
        return Err(MetricsError::Shape(format!("A has {} columns, Phi has {} rows", a.ncols(), phi.nrows())));
    }
    let sa = singular_values(a)?;
    let sk = singular_values(a.dot(&phi).view())?;
    let zero = sa.first().copied().unwrap_or(0.0) * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    Ok(sa.iter().zip(sk.iter()).map(|(&x, &y)| (x > zero).then(|| y / x)).collect())
}

/// Sketches `a`, runs the pipeline and scores it. Wall time covers the
/// reconstruction stage only.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_trial(
    a: ArrayView2<'_, f64>,
    baseline: &Baseline,
    algo: Algorithm,
    cfg: &SketchConfig,
    kind: TestMatrixKind,
    base_seed: u64,
    trial: u64,
    decompose: bool,
) -> Result<(ErrorReport, ApproxResult), MetricsError> {
    let (m, n) = a.dim();
    let plan = algo.sketch_plan(cfg, m, n, kind)?;
    let set = sketch_matrix(a, &plan, base_seed, trial)?;
    let start = Instant::now();
    let result = approximate(algo, &set, cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = score(a, &result, baseline, decompose, Some(wall_ms))?;
    Ok((report, result))
}

/// Scores a finished approximation.
pub fn score(
    a: ArrayView2<'_, f64>,
    result: &ApproxResult,
    baseline: &Baseline,
    decompose: bool,
    wall_ms: Option<f64>,
) -> Result<ErrorReport, MetricsError> {
    let (s_f, s_inf, flags) = relative_error(a, result.reconstruct().view(), baseline)?;
    let mut report = ErrorReport { s_f, s_inf, wall_ms, flags, ..ErrorReport::default() };
    if decompose && matches!(result.factors, Factors::Projection { .. }) {
        let re = range_extra_errors(a, result, baseline)?;
        report.range_err_f = Some(re.range_f);
        report.range_err_s = Some(re.range_s);
        report.extra_err_f = Some(re.extra_f);
        report.extra_err_s = Some(re.extra_s);
    }
    Ok(report)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Left singular vectors of `a` for its `k` largest singular values.
pub fn leading_left_vectors(a: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>, MetricsError> {
    Ok(crate::matrix_core::svd_truncated(a, k)?.u)
}

#[cfg(test)]
mod tests;
