//! A-priori sketch sizes from a storage budget and a spectrum-decay model.
//!
//! Budgets are in double-precision words per column of the input: an
//! algorithm holding `W` words on an m x n problem has budget `W / n`.
//! `c = m / n` is the aspect ratio.

use thiserror::Error;

use crate::approximators::{Algorithm, PrecisionPlan};

/// Half-width of the band treated as `alpha = 1/2` for polynomial decay.
pub const HALF_BAND: f64 = 0.05;
/// Fitted decay rates below this count as flat.
pub const FLAT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("Lambert W_-1 is defined on (-1/e, 0), got {0}")]
    Domain(f64),
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("budget T = {t} cannot hold sketches with min(l, d) > s >= r; smallest feasible T is {minimal}")]
    Infeasible { t: f64, minimal: f64 },
    #[error("no automatic sizing for {0}; give sizes explicitly or sweep s")]
    Unsupported(String),
    #[error("spectrum classification needs at least 10 positive values: {0}")]
    Spectrum(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumClass {
    Flat,
    Poly(f64),
    Exp(f64),
}

impl SpectrumClass {
    pub fn validate(self) -> Result<Self, GuidanceError> {
        match self {
            SpectrumClass::Poly(a) | SpectrumClass::Exp(a) if !(a > 0.0 && a.is_finite()) => {
                Err(GuidanceError::Budget(format!("decay rate must be positive, got {a}")))
            }
            _ => Ok(self),
        }
    }
}

/// Storage budget `t` in words per column, column count `n`, aspect ratio
/// `c = m/n` and target rank `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetSpec {
    pub t: f64,
    pub n: usize,
    pub c: f64,
    pub r: usize,
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(GuidanceError::Budget(format!("aspect ratio must be positive, got {}", self.c)));
        }
        if self.r == 0 || self.n == 0 {
            return Err(GuidanceError::Budget("r and n must be positive".into()));
        }
        if !(self.t > 2.0 * self.r as f64) {
            return Err(GuidanceError::Budget(format!("T = {} must exceed 2r = {}", self.t, 2 * self.r)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuidedSizes {
    pub s: usize,
    pub d: usize,
    pub l: usize,
}

/// The `W_-1` branch of the Lambert W function: `w <= -1` with `w e^w = a`.
pub fn lambert_w_minus1(a: f64) -> Result<f64, GuidanceError> {
    let branch = -(-1.0f64).exp();
    if !(a >= branch && a < 0.0) {
        return Err(GuidanceError::Domain(a));
    }
    if a == branch {
        return Ok(-1.0);
    }
    let mut w = if a < -0.25 {
        // Series around the branch point.
        let p = -(2.0 * (1.0 + std::f64::consts::E * a)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
    } else {
        let l1 = (-a).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - a;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        // Halley step.
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).min(-1.0);
        if (next - w).abs() <= 1e-15 * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// Unrounded range-sketch size for the power-iteration storage model.
pub fn raw_range_size(cls: SpectrumClass, b: &BudgetSpec) -> Result<f64, GuidanceError> {
    b.validate()?;
    let (t, c, r, n) = (b.t, b.c, b.r as f64, b.n as f64);
    let cap = t / (c + 1.0);
    let proj = |x: f64| x.clamp(r, cap.max(r));
    Ok(match cls.validate()? {
        SpectrumClass::Flat => r,
        SpectrumClass::Poly(a) if (a - 0.5).abs() <= HALF_BAND => {
            let scale = (t + c) / (c + 1.0);
            let w = lambert_w_minus1(-scale / (n * std::f64::consts::E))?;
            proj(-scale / w - 1.0)
        }
        SpectrumClass::Poly(a) if a < 0.5 => r,
        SpectrumClass::Poly(a) => r.max(((2.0 * a - 1.0) * (t + 3.0) - (c + 1.0)) / (2.0 * (c + 1.0) * a)),
        SpectrumClass::Exp(a) if a < 1.0 / (2.0 * t) => r,
        SpectrumClass::Exp(_) => cap,
    })
}

fn spi_sizes(t: f64, c: f64, s: usize) -> (usize, usize) {
    let l = (t / c).floor() as usize;
    let d = (c * (l as f64 - s as f64)).floor().max(0.0) as usize;
    (d, l)
}

fn spi_feasible(t: f64, c: f64, r: usize) -> bool {
    let (d, l) = spi_sizes(t, c, r);
    d > r && l > r
}

fn minimal_feasible(t: f64, ok: impl Fn(f64) -> bool) -> f64 {
    let mut cand = t.floor() + 1.0;
    while !ok(cand) {
        cand += 1.0;
    }
    cand
}

/// Sizes for the sketch-power-iteration storage model `T = (c(l+s)+d)/2`:
/// `l = T/c`, `d = c(l - s)`, with `s` from [`raw_range_size`].
pub fn select_sizes(cls: SpectrumClass, b: &BudgetSpec) -> Result<GuidedSizes, GuidanceError> {
    let raw = raw_range_size(cls, b)?;
    let cap = (b.t / (b.c + 1.0)).floor() as usize;
    if !spi_feasible(b.t, b.c, b.r) {
        let minimal = minimal_feasible(b.t, |t| spi_feasible(t, b.c, b.r));
        return Err(GuidanceError::Infeasible { t: b.t, minimal });
    }
    let mut s = (raw.floor() as usize).clamp(b.r, cap.max(b.r));
    loop {
        let (d, l) = spi_sizes(b.t, b.c, s);
        if d > s && l > s {
            return Ok(GuidedSizes { s, d, l });
        }
        s -= 1;
    }
}

/// Range-sketch size for the two-sketch method at storage `s + d = T`,
/// chosen by the decay-dependent rule of the original two-sketch analysis.
fn two_sketch_range_size(cls: SpectrumClass, t: f64, r: usize) -> usize {
    let tt = t.floor() as i64;
    let r = r as i64;
    let flat = || {
        // Minimize (T - s)/(T - 2s - 1) * s/(s - r - 1) over admissible s.
        let mut best = (f64::INFINITY, r + 2);
        for s in (r + 2)..=((tt - 2) / 2) {
            let v = (tt - s) as f64 / (tt - 2 * s - 1) as f64 * s as f64 / (s - r - 1) as f64;
            if v < best.0 {
                best = (v, s);
            }
        }
        best.1
    };
    let s = match cls {
        SpectrumClass::Flat => flat(),
        SpectrumClass::Poly(a) if a <= 0.5 => flat(),
        SpectrumClass::Poly(_) => (r + 1).max((tt - 1) / 3),
        SpectrumClass::Exp(a) if a < 1.0 / (2.0 * t) => flat(),
        SpectrumClass::Exp(_) => (tt - 1) / 2,
    };
    s.max(r) as usize
}

/// `(d, l)` that spend budget `t_hat` for an algorithm once `s` is fixed.
/// Returns zero for sizes the algorithm does not use.
pub fn budget_sizes(algo: Algorithm, plan: PrecisionPlan, t_hat: f64, s: usize, n: usize, c: f64) -> (usize, usize) {
    let mixed = plan == PrecisionPlan::MixedSingleDouble;
    let sf = s as f64;
    let nf = n as f64;
    let floor = |x: f64| x.floor().max(0.0) as usize;
    match algo {
        Algorithm::Tyuc17 => {
            let d = if mixed { 2.0 * (t_hat - c * sf) } else { t_hat - c * sf };
            (floor(d), 0)
        }
        Algorithm::Tyuc17Spi => spi_sizes(if mixed { t_hat } else { t_hat / 2.0 }, c, s),
        Algorithm::Tyuc17SpiVariant => {
            let t = if mixed { t_hat } else { t_hat / 2.0 };
            (floor(t), floor(t / c))
        }
        Algorithm::RsvdOnepass => (0, 0),
        Algorithm::Tyuc19 => (floor((nf * (t_hat - (c + 1.0) * sf)).max(0.0).sqrt()), 0),
        Algorithm::Tyuc19Spi => {
            let d = 2 * s + 1;
            let spare = t_hat * nf - (d * d) as f64;
            let l = if mixed { 2.0 * spare / ((c + 1.0) * nf) } else { spare / ((c + 1.0) * nf) };
            (d, floor(l))
        }
    }
}

/// Largest `s` an algorithm can use at budget `t_hat`, before feasibility checks.
pub fn max_range_size(algo: Algorithm, plan: PrecisionPlan, t_hat: f64, c: f64) -> usize {
    let mixed = plan == PrecisionPlan::MixedSingleDouble;
    let floor = |x: f64| x.floor().max(0.0) as usize;
    match algo {
        Algorithm::RsvdOnepass => floor(t_hat / (1.0 + c)),
        Algorithm::Tyuc17 if mixed => floor(t_hat / c),
        Algorithm::Tyuc17 => floor(t_hat / (1.0 + c)),
        Algorithm::Tyuc17Spi => floor(if mixed { t_hat } else { t_hat / 2.0 } / (c + 1.0)),
        Algorithm::Tyuc17SpiVariant => floor(if mixed { t_hat } else { t_hat / 2.0 } / c) / 2,
        Algorithm::Tyuc19 | Algorithm::Tyuc19Spi => floor(t_hat / (c + 1.0)),
    }
}

/// Automatic sizes for an algorithm at total budget `t_hat` words per column.
pub fn guide(
    algo: Algorithm,
    plan: PrecisionPlan,
    cls: SpectrumClass,
    t_hat: f64,
    n: usize,
    c: f64,
    r: usize,
) -> Result<GuidedSizes, GuidanceError> {
    let mixed = plan == PrecisionPlan::MixedSingleDouble;
    match algo {
        Algorithm::Tyuc17Spi => {
            let t = if mixed { t_hat } else { t_hat / 2.0 };
            select_sizes(cls, &BudgetSpec { t, n, c, r })
        }
        Algorithm::Tyuc17 if !mixed => {
            let b = BudgetSpec { t: t_hat, n, c, r };
            b.validate()?;
            cls.validate()?;
            let ok = |t: f64| t - c * (r as f64) > r as f64 + 1.0;
            if !ok(t_hat) {
                return Err(GuidanceError::Infeasible { t: t_hat, minimal: minimal_feasible(t_hat, ok) });
            }
            let mut s = two_sketch_range_size(cls, t_hat, r);
            loop {
                let (d, _) = budget_sizes(algo, plan, t_hat, s, n, c);
                if d > s {
                    return Ok(GuidedSizes { s, d, l: 0 });
                }
                s -= 1;
            }
        }
        Algorithm::RsvdOnepass => {
            let s = max_range_size(algo, plan, t_hat, c);
            if s < r {
                let minimal = ((r as f64) * (1.0 + c)).ceil();
                return Err(GuidanceError::Infeasible { t: t_hat, minimal });
            }
            Ok(GuidedSizes { s, d: 0, l: 0 })
        }
        _ => Err(GuidanceError::Unsupported(format!("{} with {}", algo.name(), plan.name()))),
    }
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let resid: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (my + slope * (a - mx));
            e * e
        })
        .sum();
    (slope, resid)
}

/// Fits `log sigma_i` to `-alpha log i` and to `-alpha i` and keeps the better model.
pub fn classify_spectrum(singular_values: &[f64]) -> Result<SpectrumClass, GuidanceError> {
    if singular_values.len() < 10 {
        return Err(GuidanceError::Spectrum(format!("got {} values", singular_values.len())));
    }
    if let Some(bad) = singular_values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(GuidanceError::Spectrum(format!("value {bad} is not positive")));
    }
    let idx: Vec<f64> = (1..=singular_values.len()).map(|i| i as f64).collect();
    let logi: Vec<f64> = idx.iter().map(|i| i.ln()).collect();
    let logs: Vec<f64> = singular_values.iter().map(|v| v.ln()).collect();
    let (poly_slope, poly_res) = fit_line(&logi, &logs);
    let (exp_slope, exp_res) = fit_line(&idx, &logs);
    let (pa, ea) = (-poly_slope, -exp_slope);
    if pa < FLAT_ALPHA && ea < FLAT_ALPHA {
        return Ok(SpectrumClass::Flat);
    }
    Ok(if poly_res <= exp_res { SpectrumClass::Poly(pa) } else { SpectrumClass::Exp(ea) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn budget(t: f64, r: usize) -> BudgetSpec {
        BudgetSpec { t, n: 1000, c: 1.0, r }
    }

    /// Bisection on `w e^w = a` over `w <= -1`, where `w e^w` decreases in `w`.
    fn bisect_w(a: f64) -> f64 {
        let (mut lo, mut hi) = (-800.0f64, -1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w_minus1(-(-1.0f64).exp()).unwrap(), -1.0);
        let w = lambert_w_minus1(-0.1).unwrap();
        assert!((w * w.exp() + 0.1).abs() <= 1e-12 * 0.1);
        assert!((w - bisect_w(-0.1)).abs() < 1e-9);
        let w2 = lambert_w_minus1(-2.0 * (-2.0f64).exp()).unwrap();
        assert!((w2 + 2.0).abs() < 1e-12);
        assert!(lambert_w_minus1(0.0).is_err());
        assert!(lambert_w_minus1(-0.5).is_err());
    }

    #[test]
    fn table_examples() {
        assert_eq!(select_sizes(SpectrumClass::Flat, &budget(100.0, 10)).unwrap(), GuidedSizes { s: 10, d: 90, l: 100 });
        assert!((raw_range_size(SpectrumClass::Poly(2.0), &budget(97.0, 10)).unwrap() - 37.25).abs() < 1e-12);
        assert_eq!(select_sizes(SpectrumClass::Poly(2.0), &budget(97.0, 10)).unwrap(), GuidedSizes { s: 37, d: 60, l: 97 });
        assert_eq!(raw_range_size(SpectrumClass::Exp(0.1), &budget(100.0, 10)).unwrap(), 50.0);
        // s = 50 leaves d = 50, so feasibility drops s by one.
        assert_eq!(select_sizes(SpectrumClass::Exp(0.1), &budget(100.0, 10)).unwrap(), GuidedSizes { s: 49, d: 51, l: 100 });
        assert_eq!(select_sizes(SpectrumClass::Exp(0.001), &budget(100.0, 10)).unwrap().s, 10);
        assert_eq!(select_sizes(SpectrumClass::Poly(0.3), &budget(100.0, 10)).unwrap().s, 10);
    }

    #[test]
    fn half_decay_uses_lambert_rule() {
        let b = budget(100.0, 5);
        let s = raw_range_size(SpectrumClass::Poly(0.5), &b).unwrap();
        let scale = 101.0 / 2.0;
        let w = bisect_w(-scale / (1000.0 * std::f64::consts::E));
        assert!((s - (-scale / w - 1.0)).abs() < 1e-6);
        assert!(s > 5.0 && s < 50.0);
    }

    #[test]
    fn infeasible_budget_reports_minimum() {
        let err = select_sizes(SpectrumClass::Flat, &budget(20.5, 10)).unwrap_err();
        assert_eq!(err, GuidanceError::Infeasible { t: 20.5, minimal: 21.0 });
        assert!(select_sizes(SpectrumClass::Flat, &budget(21.0, 10)).is_ok());
        assert!(select_sizes(SpectrumClass::Flat, &budget(20.0, 10)).is_err());
    }

    #[test]
    fn two_sketch_rule() {
        let g = |cls, t| guide(Algorithm::Tyuc17, PrecisionPlan::AllDouble, cls, t, 1000, 1.0, 10).unwrap();
        assert_eq!(g(SpectrumClass::Poly(2.0), 100.0), GuidedSizes { s: 33, d: 67, l: 0 });
        assert_eq!(g(SpectrumClass::Exp(0.5), 100.0), GuidedSizes { s: 49, d: 51, l: 0 });
        let flat = g(SpectrumClass::Flat, 100.0);
        assert!(flat.s > 10 && flat.s + flat.d == 100);
    }

    #[test]
    fn unsupported_guidance() {
        for (algo, plan) in [
            (Algorithm::Tyuc17SpiVariant, PrecisionPlan::MixedSingleDouble),
            (Algorithm::Tyuc19, PrecisionPlan::AllDouble),
            (Algorithm::Tyuc19Spi, PrecisionPlan::MixedSingleDouble),
            (Algorithm::Tyuc17, PrecisionPlan::MixedSingleDouble),
        ] {
            let e = guide(algo, plan, SpectrumClass::Flat, 100.0, 1000, 1.0, 5).unwrap_err();
            assert!(matches!(e, GuidanceError::Unsupported(_)));
        }
    }

    #[test]
    fn budget_mappings_spend_the_budget() {
        let (n, c) = (1000usize, 1.0);
        let (d, l) = budget_sizes(Algorithm::Tyuc17Spi, PrecisionPlan::MixedSingleDouble, 96.0, 20, n, c);
        assert_eq!((d, l), (76, 96));
        let (d, _) = budget_sizes(Algorithm::Tyuc19, PrecisionPlan::AllDouble, 96.0, 20, n, c);
        assert_eq!(d, (1000.0f64 * 56.0).sqrt().floor() as usize);
        let (d, l) = budget_sizes(Algorithm::Tyuc19Spi, PrecisionPlan::MixedSingleDouble, 96.0, 10, n, c);
        assert_eq!(d, 21);
        assert_eq!(l, ((96_000.0 - 441.0) / 1000.0f64).floor() as usize);
        assert_eq!(max_range_size(Algorithm::RsvdOnepass, PrecisionPlan::AllDouble, 96.0, 1.0), 48);
    }

    #[test]
    fn classify_examples() {
        let poly: Vec<f64> = (1..=100).map(|i| 1.0 / i as f64).collect();
        match classify_spectrum(&poly).unwrap() {
            SpectrumClass::Poly(a) => assert!((a - 1.0).abs() <= 0.01),
            other => panic!("{other:?}"),
        }
        let exp: Vec<f64> = (1..=100).map(|i| (-0.1 * i as f64).exp()).collect();
        match classify_spectrum(&exp).unwrap() {
            SpectrumClass::Exp(a) => assert!((a - 0.1).abs() <= 0.005),
            other => panic!("{other:?}"),
        }
        assert_eq!(classify_spectrum(&[1.0; 50]).unwrap(), SpectrumClass::Flat);
        assert!(classify_spectrum(&[1.0; 5]).is_err());
        let mut bad = vec![1.0; 20];
        bad[3] = 0.0;
        assert!(classify_spectrum(&bad).is_err());
    }

    proptest! {
        #[test]
        fn lambert_residual(a in -0.3678794f64..-1e-300) {
            let w = lambert_w_minus1(a).unwrap();
            prop_assert!(w <= -1.0);
            prop_assert!((w * w.exp() - a).abs() <= 1e-12 * a.abs());
        }

        #[test]
        fn guided_sizes_respect_budget(t in 25.0f64..400.0, r in 1usize..12, alpha in 0.0f64..3.0, kind in 0u8..3, c in 0.5f64..2.0) {
            let cls = match kind { 0 => SpectrumClass::Flat, 1 => SpectrumClass::Poly(alpha + 0.01), _ => SpectrumClass::Exp(alpha + 0.001) };
            let b = BudgetSpec { t, n: 2000, c, r };
            if let Ok(g) = select_sizes(cls, &b) {
                prop_assert!(g.s >= r && g.d > g.s && g.l > g.s);
                let used = (c * (g.l + g.s) as f64 + g.d as f64) / 2.0;
                prop_assert!(used <= t + 1e-9);
                prop_assert!(t <= used + c + 1.0);
            }
        }

        #[test]
        fn poly_size_monotone_in_budget(t in 30.0f64..400.0, dt in 0.0f64..50.0, alpha in 0.6f64..4.0) {
            let s1 = select_sizes(SpectrumClass::Poly(alpha), &budget(t, 5)).unwrap().s;
            let s2 = select_sizes(SpectrumClass::Poly(alpha), &budget(t + dt, 5)).unwrap().s;
            prop_assert!(s2 >= s1);
        }
    }
}
