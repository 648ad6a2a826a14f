//! Computable right-hand sides of the expected Frobenius (q = 1) and
//! probabilistic spectral (general q) error bounds for power-iterated sketching.

use std::f64::consts::E;

use ndarray::{s, Array2, ArrayView2, Axis};

use super::{tail_energy, MetricsError};
use crate::matrix_core::{lstsq, singular_values};

/// Inputs of the expected Frobenius bound for one power step.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputsFro {
    /// Rank split point, between r and s.
    pub varrho: usize,
    pub l: usize,
    pub s: usize,
    pub d: usize,
    /// Ceiling on the inverse-term norm, > 1.
    pub xi_hat: f64,
    pub singular_values: Vec<f64>,
}

fn hyp(ok: bool, msg: impl FnOnce() -> String) -> Result<(), MetricsError> {
    if ok {
        Ok(())
    } else {
        Err(MetricsError::Hypothesis(msg()))
    }
}

fn sigma(sv: &[f64], i: usize) -> f64 {
    // 1-based index; zero beyond the stored spectrum.
    sv.get(i - 1).copied().unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FroCoefficients {
    pub eps: f64,
    pub delta: f64,
    pub mu: f64,
}

/// The coefficients of the leading and the two higher-order terms.
pub fn frobenius_coefficients(varrho: usize, s: usize, l: usize) -> FroCoefficients {
    let (rho, lf, sf) = (varrho as f64, l as f64, s as f64);
    let eps = 2.0 * rho / (lf - rho - 1.0);
    let common = (sf - rho).powi(2) * (lf - rho) * (lf - rho - 1.0) * (lf - rho - 3.0);
    let delta = E * E * (sf + rho) * rho * (lf - 1.0) * (lf * lf + 2.0 * lf) / common;
    let mu = E * E * (sf + rho) * rho * (lf - 1.0) * lf / common;
    FroCoefficients { eps, delta, mu }
}

/// Bound on `E ||A - QB||_F^2` conditioned on the inverse-term event.
pub fn bound_frobenius_q1(inp: &BoundInputsFro) -> Result<f64, MetricsError> {
    let BoundInputsFro { varrho, l, s, d, xi_hat, ref singular_values } = *inp;
    hyp(varrho >= 1, || "varrho must be positive".into())?;
    hyp(s >= varrho + 4, || format!("need s >= varrho + 4, got s = {s}, varrho = {varrho}"))?;
    hyp(l > s, || format!("need l > s, got l = {l}, s = {s}"))?;
    hyp(d > s + 1, || format!("need d > s + 1, got d = {d}, s = {s}"))?;
    hyp(xi_hat > 1.0, || format!("need xi_hat > 1, got {xi_hat}"))?;
    let sv = singular_values;
    let sig = sigma(sv, varrho);
    hyp(sig > 0.0, || format!("sigma_{varrho} must be positive"))?;
    let (sf, df) = (s as f64, d as f64);
    let FroCoefficients { eps, delta, mu } = frobenius_coefficients(varrho, s, l);
    let tail2 = tail_energy(sv, varrho + 1).powi(2);
    let tail_sum = |p: i32| sv.iter().skip(varrho).map(|x| x.powi(p)).sum::<f64>();
    let sig4 = sig.powi(4);
    let xi2 = xi_hat * xi_hat;
    let bracket = (1.0 + eps * xi2) * tail2 + delta * xi2 * tail_sum(6) / sig4 + mu * xi2 * tail2 * tail_sum(4) / sig4;
    Ok(df / (df - sf - 1.0) * bracket)
}

/// Inputs of the probabilistic spectral-norm bound for `q` power steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputsSpec {
    pub varrho: usize,
    pub k: usize,
    pub l: usize,
    pub s: usize,
    pub d: usize,
    pub q: usize,
    pub u: f64,
    pub beta: f64,
    pub t: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBound {
    pub bound: f64,
    /// Failure probability of the bound.
    pub p_e: f64,
    /// The power-dependent factor; tends to 1 as q grows.
    pub gamma3: f64,
}

fn check_spec(inp: &BoundInputsSpec) -> Result<(), MetricsError> {
    let BoundInputsSpec { varrho, k, l, s, d, q, u, beta, t, .. } = *inp;
    hyp(varrho < k, || format!("need varrho < k, got {varrho} and {k}"))?;
    hyp(k + 4 <= l, || format!("need k <= l - 4, got k = {k}, l = {l}"))?;
    hyp(varrho + 4 <= s, || format!("need varrho <= s - 4, got varrho = {varrho}, s = {s}"))?;
    hyp(d >= s + 4, || format!("need d >= s + 4, got d = {d}, s = {s}"))?;
    hyp(q >= 1, || "need q >= 1".into())?;
    hyp(u > 0.0 && beta > 0.0, || "need u, beta > 0".into())?;
    hyp(t >= 1.0, || format!("need t >= 1, got {t}"))
}

/// The factor `(1 + t sqrt(3 varrho/(s-varrho+1)) + t e (sqrt(sl) + u sqrt(s))/(s-varrho+1))^(1/(2q+1))`.
pub fn gamma3(inp: &BoundInputsSpec) -> Result<f64, MetricsError> {
    check_spec(inp)?;
    let (rho, s, l) = (inp.varrho as f64, inp.s as f64, inp.l as f64);
    let (t, u) = (inp.t, inp.u);
    let base = 1.0 + t * (3.0 * rho / (s - rho + 1.0)).sqrt() + t * E * ((s * l).sqrt() + u * s.sqrt()) / (s - rho + 1.0);
    Ok(base.powf(1.0 / (2.0 * inp.q as f64 + 1.0)))
}

/// Spectral-norm bound on `||A - QB||_2` and its failure probability.
pub fn bound_spectral_general_q(inp: &BoundInputsSpec) -> Result<SpectralBound, MetricsError> {
    let g3 = gamma3(inp)?;
    let (rho, k) = (inp.varrho, inp.k);
    let (sf, df, lf, kf) = (inp.s as f64, inp.d as f64, inp.l as f64, k as f64);
    let (t, u, beta) = (inp.t, inp.u, inp.beta);
    let sv = &inp.singular_values;

    let eta1 = 1.0 + t * (3.0 * sf / (df - sf + 1.0)).sqrt();
    let eta2 = t * E * df.sqrt() / (df - sf + 1.0);
    let eta3 = E * lf.sqrt() / (lf - kf + 1.0) * t;
    let eta4 = 1.0 + t * (3.0 * kf / (lf - kf + 1.0)).sqrt();
    let gamma1 = 1.0
        + t * (3.0 * sf / (df - sf + 1.0)).sqrt()
        + t * E * (df * lf).sqrt() / (df - sf + 1.0)
        + u * t * E * df.sqrt() / (df - sf + 1.0);
    let gamma2 = E * lf / (lf - kf + 1.0);

    let tau_k1 = tail_energy(sv, k + 1);
    let sig_k1 = sigma(sv, k + 1);
    let sig_r1 = sigma(sv, rho + 1);
    let bound = ((eta1 + u * eta2) * eta3 + eta2 * eta4) * tau_k1
        + ((eta1 + u * eta2) * (eta3 + eta4) + u * eta3) * sig_k1
        + gamma1
            * gamma2
            * g3
            * ((1.0 + (kf / lf).sqrt() + beta / lf.sqrt()) * sig_r1
                + (1.0 + beta / lf.sqrt()) * sig_k1
                + tau_k1 / lf.sqrt());
    let p_e = 3.0 * (-u * u / 2.0).exp()
        + 2.0 * t.powf(-(df - sf))
        + 2.0 * t.powf(-(lf - kf))
        + 2.0 * t.powf(-(sf - rho as f64))
        + (-beta * beta / 2.0).exp();
    Ok(SpectralBound { bound, p_e, gamma3: g3 })
}

/// Norm of the inverse of `I + P1 P2^T S2^2 O2 O1^+ S1^-2 (P1 P1^T)^-1`, where
/// `P1, P2` and `O1, O2` are the power and range test matrices split along
/// the leading `varrho` right singular vectors of A (columns of `v`), and
/// `S1, S2` split the spectrum the same way. The q = 1 Frobenius bound holds
/// conditionally on this norm staying below `xi`.
pub fn ef_inverse_norm(
    v: ArrayView2<'_, f64>,
    spectrum: &[f64],
    omega: ArrayView2<'_, f64>,
    phi: ArrayView2<'_, f64>,
    varrho: usize,
) -> Result<f64, MetricsError> {
    let n = v.nrows();
    if v.ncols() != n || omega.nrows() != n || phi.nrows() != n {
        return Err(MetricsError::Shape("right singular basis must be square and match the test matrices".into()));
    }
    if varrho == 0 || varrho >= n || varrho > omega.ncols() {
        return Err(MetricsError::Hypothesis(format!("varrho = {varrho} out of range")));
    }
    let sig = |i: usize| spectrum.get(i).copied().unwrap_or(0.0);
    let v1 = v.slice(s![.., ..varrho]);
    let v2 = v.slice(s![.., varrho..]);
    let phi1 = v1.t().dot(&phi);
    let phi2 = v2.t().dot(&phi);
    let omega1 = v1.t().dot(&omega);
    let omega2 = v2.t().dot(&omega);
    if (0..varrho).any(|i| sig(i) <= 0.0) {
        return Err(MetricsError::Hypothesis("leading singular values must be positive".into()));
    }
    let s2sq = ndarray::Array1::from_iter((varrho..n).map(|i| sig(i) * sig(i)));
    let s1_inv2 = ndarray::Array1::from_iter((0..varrho).map(|i| 1.0 / (sig(i) * sig(i))));
    // O1^+ = ((O1^T)^+)^T, with O1^T tall.
    let eye_s = Array2::<f64>::eye(omega1.ncols());
    let o1_pinv = lstsq(omega1.t(), eye_s.view())?.x.reversed_axes();
    let gram = phi1.dot(&phi1.t());
    let gram_inv = lstsq(gram.view(), Array2::<f64>::eye(varrho).view())?.x;
    let left = phi1.dot(&(&phi2.t() * &s2sq.view().insert_axis(Axis(0))));
    let right = (&o1_pinv * &s1_inv2.view().insert_axis(Axis(0))).dot(&gram_inv);
    let mut m = left.dot(&omega2).dot(&right);
    for i in 0..varrho {
        m[[i, i]] += 1.0;
    }
    let sv = singular_values(m.view())?;
    let smin = sv.last().copied().unwrap_or(0.0);
    Ok(if smin > 0.0 { 1.0 / smin } else { f64::INFINITY })
}
