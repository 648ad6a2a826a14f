use super::*;
use crate::approximators::PrecisionPlan;
use crate::matrix_core::{qr_economy, svd_truncated};
use crate::synthetic::{SyntheticFamily, SyntheticSpec};
use ndarray::{Array, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DOUBLE: PrecisionPlan = PrecisionPlan::AllDouble;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn orthonormal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    qr_economy(gaussian(rows, cols, seed).view()).unwrap().q
}

fn with_spectrum(m: usize, n: usize, sv: &[f64], seed: u64) -> Array2<f64> {
    let u = orthonormal(m, sv.len(), seed);
    let v = orthonormal(n, sv.len(), seed + 1);
    (&u * &Array1::from(sv.to_vec()).view().insert_axis(Axis(0))).dot(&v.t())
}

fn decaying(k: usize) -> Vec<f64> {
    (1..=k).map(|i| (i as f64).powf(-1.0)).collect()
}

#[test]
fn optimal_truncation_scores_zero() {
    let a = with_spectrum(40, 30, &decaying(30), 1);
    let base = Baseline::new(a.view(), 5).unwrap();
    let best = svd_truncated(a.view(), 5).unwrap().reconstruct();
    let (sf, si, flags) = relative_error(a.view(), best.view(), &base).unwrap();
    assert!(sf.abs() <= 1e-10 && si.abs() <= 1e-10);
    assert!(flags.is_empty());
}

#[test]
fn overfit_is_clamped_and_flagged() {
    let a = with_spectrum(30, 30, &decaying(7), 2);
    let base = Baseline::new(a.view(), 5).unwrap();
    let (sf, _, flags) = relative_error(a.view(), a.view(), &base).unwrap();
    assert_eq!(sf, 0.0);
    assert!(flags.contains(&MetricFlag::ExactFit));
}

#[test]
fn zero_baseline_reports_absolute_error() {
    let a = with_spectrum(20, 20, &[1.0, 0.5], 3);
    let base = Baseline::new(a.view(), 2).unwrap();
    let approx = &a * 0.5;
    let (sf, _, flags) = relative_error(a.view(), approx.view(), &base).unwrap();
    assert!(flags.contains(&MetricFlag::ZeroBaseline));
    assert!((sf - 0.5 * (1.25f64).sqrt()).abs() < 1e-9);
}

fn run(algo: Algorithm, a: &Array2<f64>, cfg: &SketchConfig) -> (ErrorReport, ApproxResult) {
    let base = Baseline::new(a.view(), cfg.r).unwrap();
    evaluate_trial(a.view(), &base, algo, cfg, TestMatrixKind::Gaussian, 7, 0, true).unwrap()
}

#[test]
fn rsvd_has_no_extra_error() {
    let a = gaussian(50, 40, 4);
    let (rep, _) = run(Algorithm::RsvdOnepass, &a, &SketchConfig::new(5, 10, 0, 0, 0, DOUBLE));
    assert_eq!(rep.extra_err_f, Some(0.0));
    assert_eq!(rep.extra_err_s, Some(0.0));
}

#[test]
fn pythagoras_on_oblique_fits() {
    let a = with_spectrum(100, 80, &decaying(80), 5);
    let base = Baseline::new(a.view(), 5).unwrap();
    for algo in [Algorithm::Tyuc17, Algorithm::Tyuc17Spi] {
        let (rep, res) = run(algo, &a, &SketchConfig::new(5, 10, 25, 30, 1, DOUBLE));
        let bf = base.frobenius();
        let total = ((rep.s_f + 1.0) * bf).powi(2);
        let range = ((rep.range_err_f.unwrap() + 1.0) * bf).powi(2);
        let extra = (rep.extra_err_f.unwrap() * bf).powi(2);
        assert!((total - range - extra).abs() <= 1e-8 * total, "{algo}");
        assert!(frobenius((&a - &res.reconstruct()).view()).powi(2) - total <= 1e-8 * total);
    }
}

#[test]
fn perfect_range_has_zero_range_error() {
    let a = with_spectrum(40, 30, &[10.0, 9.0, 8.0, 1e-3, 1e-4], 6);
    let (rep, _) = run(Algorithm::RsvdOnepass, &a, &SketchConfig::new(3, 5, 0, 0, 0, DOUBLE));
    assert!(rep.range_err_f.unwrap().abs() <= 1e-9);
}

#[test]
fn two_sided_pipelines_have_no_decomposition() {
    let a = gaussian(30, 30, 8);
    let base = Baseline::new(a.view(), 3).unwrap();
    let (_, res) = run(Algorithm::Tyuc19, &a, &SketchConfig::new(3, 5, 11, 0, 0, DOUBLE));
    assert!(matches!(range_extra_errors(a.view(), &res, &base), Err(MetricsError::Unsupported(_))));
    let rep = score(a.view(), &res, &base, true, None).unwrap();
    assert!(rep.range_err_f.is_none() && rep.extra_err_s.is_none());
}

#[test]
fn canonical_angle_examples() {
    let u = orthonormal(20, 3, 9);
    let same = canonical_angle_sines(u.view(), u.view(), 3).unwrap();
    assert!(same.iter().all(|&x| x <= 1e-8));

    let basis = orthonormal(20, 6, 10);
    let (a, b) = (basis.slice(ndarray::s![.., ..3]), basis.slice(ndarray::s![.., 3..]));
    let perp = canonical_angle_sines(a, b, 3).unwrap();
    assert!(perp.iter().all(|&x| (x - 1.0).abs() < 1e-12));

    let theta: f64 = 0.3;
    let e0 = basis.column(0).to_owned();
    let e1 = basis.column(1).to_owned();
    let rotated = (&e0 * theta.cos() + &e1 * theta.sin()).insert_axis(Axis(1));
    let sines = canonical_angle_sines(rotated.view(), e0.view().insert_axis(Axis(1)), 1).unwrap();
    assert!((sines[0] - theta.sin()).abs() <= 1e-10);
}

#[test]
fn tiny_angles_stay_accurate() {
    let basis = orthonormal(30, 2, 12);
    let theta: f64 = 1e-12;
    let rotated = (&basis.column(0) * theta.cos() + &basis.column(1) * theta.sin()).insert_axis(Axis(1));
    let sines = canonical_angle_sines(rotated.view(), basis.column(0).insert_axis(Axis(1)), 1).unwrap();
    assert!((sines[0] - theta).abs() <= 1e-15);
}

#[test]
fn tail_energy_examples() {
    assert!((tail_energy(&[3.0, 2.0, 1.0], 2) - 5f64.sqrt()).abs() < 1e-15);
    let a = gaussian(10, 8, 13);
    let sv = singular_values(a.view()).unwrap().to_vec();
    assert!((tail_energy(&sv, 1) - frobenius(a.view())).abs() <= 1e-12 * frobenius(a.view()));
    assert_eq!(tail_energy(&[1.0], 5), 0.0);
    let geo: Vec<f64> = (1..=60).map(|i| 0.9f64.powi(i)).collect();
    let closed = (0.81f64.powi(11) * (1.0 - 0.81f64.powi(50)) / (1.0 - 0.81)).sqrt();
    assert!((tail_energy(&geo, 11) - closed).abs() <= 1e-12 * closed);
}

#[test]
fn distortion_examples() {
    let a = with_spectrum(30, 20, &decaying(10), 14);
    let q = orthonormal(20, 20, 15);
    let r = distortion_ratio(a.view(), q.view()).unwrap();
    assert_eq!(r.iter().flatten().count(), 10);
    assert!(r.iter().flatten().all(|x| (x - 1.0).abs() <= 1e-10));
    let two = Array2::<f64>::eye(20) * 2.0;
    let r = distortion_ratio(a.view(), two.view()).unwrap();
    assert!(r.iter().flatten().all(|x| (x - 2.0).abs() <= 1e-10));
    assert!(r[15].is_none());
}

#[test]
fn frobenius_bound_pieces() {
    assert_eq!(frobenius_coefficients(10, 20, 31).eps, 1.0);
    let exact = BoundInputsFro { varrho: 5, l: 40, s: 10, d: 30, xi_hat: 2.0, singular_values: vec![1.0; 5] };
    assert_eq!(bound_frobenius_q1(&exact).unwrap(), 0.0);
    let sv: Vec<f64> = (1..=50).map(|i| if i <= 5 { 1.0 } else { 1e-3 }).collect();
    let inp = BoundInputsFro { singular_values: sv.clone(), ..exact.clone() };
    let c = frobenius_coefficients(5, 10, 40);
    let tail2 = 45.0 * 1e-6;
    let manual = 30.0 / 19.0
        * ((1.0 + 4.0 * c.eps) * tail2 + c.delta * 4.0 * 45.0 * 1e-18 + c.mu * 4.0 * tail2 * 45.0 * 1e-12);
    assert!((bound_frobenius_q1(&inp).unwrap() - manual).abs() <= 1e-12 * manual);
    assert!(bound_frobenius_q1(&BoundInputsFro { s: 8, ..inp.clone() }).is_err());
    assert!(bound_frobenius_q1(&BoundInputsFro { d: 11, ..inp.clone() }).is_err());
    assert!(bound_frobenius_q1(&BoundInputsFro { l: 10, ..inp }).is_err());
}

#[test]
fn frobenius_bound_shrinks_with_power_width() {
    let sv: Vec<f64> = (1..=200).map(|i| (i as f64).powf(-1.0)).collect();
    let mut last = f64::INFINITY;
    for l in [20, 30, 50, 80, 120] {
        let b = bound_frobenius_q1(&BoundInputsFro { varrho: 5, l, s: 15, d: 40, xi_hat: 2.0, singular_values: sv.clone() })
            .unwrap();
        assert!(b <= last);
        last = b;
    }
}

fn spec_inputs(q: usize, sv: Vec<f64>) -> BoundInputsSpec {
    BoundInputsSpec { varrho: 5, k: 10, l: 30, s: 15, d: 40, q, u: 3.0, beta: 3.0, t: 2.0, singular_values: sv }
}

#[test]
fn gamma3_decreases_to_one() {
    let mut prev = f64::INFINITY;
    for q in 1..=60 {
        let g = gamma3(&spec_inputs(q, vec![1.0; 50])).unwrap();
        assert!(g < prev && g > 1.0);
        prev = g;
    }
    assert!(prev < 1.05);
}

#[test]
fn exact_rank_k_keeps_only_leading_terms() {
    let sv: Vec<f64> = (1..=10).map(|i| 1.0 / i as f64).collect();
    let inp = spec_inputs(2, sv.clone());
    let out = bound_spectral_general_q(&inp).unwrap();
    let (d, s, l, k, t, u, beta) = (40.0f64, 15.0f64, 30.0f64, 10.0f64, 2.0f64, 3.0f64, 3.0f64);
    let gamma1 = 1.0 + t * (3.0 * s / (d - s + 1.0)).sqrt() + t * E * (d * l).sqrt() / (d - s + 1.0)
        + u * t * E * d.sqrt() / (d - s + 1.0);
    let gamma2 = E * l / (l - k + 1.0);
    let want = gamma1 * gamma2 * out.gamma3 * (1.0 + (k / l).sqrt() + beta / l.sqrt()) * sv[5];
    assert!((out.bound - want).abs() <= 1e-12 * want);
    assert!(out.p_e > 0.0 && out.p_e < 0.1);
    assert!(bound_spectral_general_q(&BoundInputsSpec { d: 18, ..inp }).is_err());
}

use std::f64::consts::E;

#[test]
fn inverse_term_is_identity_for_exact_rank() {
    let n = 30;
    let v = orthonormal(n, n, 16);
    let mut sv = vec![0.0; n];
    sv[..4].copy_from_slice(&[4.0, 3.0, 2.0, 1.0]);
    let norm = ef_inverse_norm(v.view(), &sv, gaussian(n, 8, 17).view(), gaussian(n, 12, 18).view(), 4).unwrap();
    assert!((norm - 1.0).abs() < 1e-12);
    sv[4..].iter_mut().for_each(|x| *x = 0.5);
    let noisy = ef_inverse_norm(v.view(), &sv, gaussian(n, 8, 17).view(), gaussian(n, 12, 18).view(), 4).unwrap();
    assert!(noisy.is_finite() && noisy > 0.0);
}

#[test]
fn sweep_rows_cover_feasible_grid() {
    let data = SyntheticSpec::new(SyntheticFamily::PolyDecay { alpha: 1.0, rank: 3 }, 60, 60, 1, 0);
    let spec = SweepSpec {
        data,
        algo: Algorithm::Tyuc17Spi,
        plan: PrecisionPlan::MixedSingleDouble,
        budget: 20.0,
        r: 3,
        q_set: vec![1, 2],
        trials: 2,
        kind: TestMatrixKind::Gaussian,
        base_seed: 3,
    };
    let table = oracle_sweep(&spec).unwrap();
    // s from 3 to 9 keeps d = 20 - s > s.
    assert_eq!(table.rows.len(), 7 * 2);
    let best = table.oracle_row().unwrap();
    assert!(table.rows.iter().all(|r| r.mean_sf >= best.mean_sf));
    assert!(table.find(3, 2).is_some());
}

#[test]
fn mean_std_basics() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn metrics_are_rotation_invariant(seed in 0u64..10_000) {
        let a = with_spectrum(30, 25, &decaying(25), seed);
        let cfg = SketchConfig::new(3, 6, 14, 0, 0, DOUBLE);
        let base = Baseline::new(a.view(), 3).unwrap();
        let (rep, res) = evaluate_trial(a.view(), &base, Algorithm::Tyuc17, &cfg, TestMatrixKind::Gaussian, seed, 0, true).unwrap();
        let g = orthonormal(30, 30, seed + 100);
        let h = orthonormal(25, 25, seed + 200);
        let rotated_a = g.dot(&a).dot(&h.t());
        let rotated_hat = g.dot(&res.reconstruct()).dot(&h.t());
        let rbase = Baseline::new(rotated_a.view(), 3).unwrap();
        let (sf, si, _) = relative_error(rotated_a.view(), rotated_hat.view(), &rbase).unwrap();
        prop_assert!((sf - rep.s_f).abs() <= 1e-9 * (1.0 + rep.s_f.abs()));
        prop_assert!((si - rep.s_inf).abs() <= 1e-9 * (1.0 + rep.s_inf.abs()));
        let s1 = canonical_angle_sines(res.u.view(), base_left(&a).view(), 3).unwrap();
        let s2 = canonical_angle_sines(g.dot(&res.u).view(), base_left(&rotated_a).view(), 3).unwrap();
        for (x, y) in s1.iter().zip(&s2) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn tail_identity(sv in proptest::collection::vec(0.0f64..10.0, 1..40), k in 1usize..45) {
        let head: f64 = sv.iter().take(k - 1).map(|x| x * x).sum();
        let total: f64 = sv.iter().map(|x| x * x).sum();
        let t = tail_energy(&sv, k);
        prop_assert!((t * t + head - total).abs() <= 1e-14 * total.max(1e-300) * 10.0);
    }
}

fn base_left(a: &Array2<f64>) -> Array2<f64> {
    leading_left_vectors(a.view(), 3).unwrap()
}
