use super::*;
use crate::matrix_core::frobenius;
use crate::test_matrices::StreamTag;
use ndarray::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frobenius((a - b).view()) / frobenius(b.view()).max(f64::MIN_POSITIVE)
}

fn spec(role: SketchRole, size: usize, tag: StreamTag) -> SketchSpec {
    SketchSpec { role, size, precision: Precision::Binary64, tag, second_tag: None }
}

fn full_plan(m: usize, n: usize, kind: TestMatrixKind) -> SketchPlan {
    SketchPlan {
        m,
        n,
        kind,
        sketches: vec![
            spec(SketchRole::Range, 5, StreamTag::Omega),
            spec(SketchRole::Corange, 7, StreamTag::Psi),
            spec(SketchRole::Power, 9, StreamTag::Phi),
            SketchSpec { second_tag: Some(StreamTag::Psi), ..spec(SketchRole::Core, 6, StreamTag::Phi) },
        ],
        mixers: vec![MixerSpec { role: MixerRole::Range, rows: 9, cols: 4, tag: StreamTag::OmegaTilde }],
    }
}

fn data(role: SketchRole, set: &SketchSet) -> Array2<f64> {
    set.get(role).unwrap().data.to_f64()
}

fn direct_products(a: &Array2<f64>, set: &SketchSet) -> Vec<(SketchRole, Array2<f64>)> {
    let t = |r| set.get(r).unwrap().test.to_dense();
    let core = set.get(SketchRole::Core).unwrap();
    vec![
        (SketchRole::Range, a.dot(&t(SketchRole::Range))),
        (SketchRole::Corange, t(SketchRole::Corange).dot(a)),
        (SketchRole::Power, a.dot(&t(SketchRole::Power))),
        (
            SketchRole::Core,
            core.test.to_dense().dot(a).dot(&core.second_test.as_ref().unwrap().to_dense().t()),
        ),
    ]
}

#[test]
fn one_shot_matches_direct_products() {
    let a = gaussian(40, 30, 1);
    for kind in [TestMatrixKind::Gaussian, TestMatrixKind::SparseRademacher { sparsity: 0.2 }] {
        let set = sketch_matrix(a.view(), &full_plan(40, 30, kind), 9, 0).unwrap();
        assert_eq!(set.pass_count(), 1);
        for (role, expect) in direct_products(&a, &set) {
            assert!(rel(&data(role, &set), &expect) <= 1e-12, "{role:?}");
        }
        assert_eq!(set.mixer(MixerRole::Range).unwrap().rows(), 9);
    }
}

#[test]
fn row_blocks_match_one_shot() {
    let a = gaussian(50, 20, 2);
    let plan = full_plan(50, 20, TestMatrixKind::Gaussian);
    let whole = sketch_matrix(a.view(), &plan, 3, 1).unwrap();
    let mut s = Sketcher::open(&plan, 3, 1).unwrap();
    for u in row_block_updates(a.view(), 5) {
        s.ingest(&u).unwrap();
    }
    let blocks = s.finalize().unwrap();
    assert_eq!(blocks.update_count(), 10);
    for role in [SketchRole::Range, SketchRole::Corange, SketchRole::Power, SketchRole::Core] {
        assert!(rel(&data(role, &blocks), &data(role, &whole)) <= 1e-12, "{role:?}");
    }
}

#[test]
fn column_blocks_and_rank_one_terms_match() {
    let terms: Vec<_> = (0..5).map(|k| (gaussian(30, 1, 10 + k), gaussian(25, 1, 20 + k))).collect();
    let a = terms.iter().fold(Array2::zeros((30, 25)), |acc, (u, v)| acc + u.dot(&v.t()));
    let plan = full_plan(30, 25, TestMatrixKind::Gaussian);
    let whole = sketch_matrix(a.view(), &plan, 4, 0).unwrap();

    let mut s = Sketcher::open(&plan, 4, 0).unwrap();
    for (u, v) in &terms {
        s.ingest(&LinearUpdate::RankOne { u: u.column(0).to_owned(), v: v.column(0).to_owned() }).unwrap();
    }
    let rank_one = s.finalize().unwrap();

    let mut s = Sketcher::open(&plan, 4, 0).unwrap();
    for start in (0..25).step_by(10) {
        let end = (start + 10).min(25);
        s.ingest(&LinearUpdate::ColumnBlock { start, cols: a.slice(ndarray::s![.., start..end]).to_owned() })
            .unwrap();
    }
    let cols = s.finalize().unwrap();
    for role in [SketchRole::Range, SketchRole::Corange, SketchRole::Power, SketchRole::Core] {
        assert!(rel(&data(role, &rank_one), &data(role, &whole)) <= 1e-12, "{role:?}");
        assert!(rel(&data(role, &cols), &data(role, &whole)) <= 1e-12, "{role:?}");
    }
}

#[test]
fn rejects_bad_updates_and_late_input() {
    let plan = full_plan(10, 8, TestMatrixKind::Gaussian);
    let mut s = Sketcher::open(&plan, 0, 0).unwrap();
    assert!(matches!(s.ingest(&LinearUpdate::Dense(Array2::zeros((8, 10)))), Err(IngestError::Shape(_))));
    assert!(matches!(
        s.ingest(&LinearUpdate::RowBlock { start: 8, rows: Array2::zeros((3, 8)) }),
        Err(IngestError::Shape(_))
    ));
    let mut bad = Array2::zeros((10, 8));
    bad[[1, 1]] = f64::INFINITY;
    assert!(matches!(s.ingest(&LinearUpdate::Dense(bad)), Err(IngestError::NonFinite)));
    s.finalize().unwrap();
    assert!(matches!(s.ingest(&LinearUpdate::Dense(Array2::zeros((10, 8)))), Err(IngestError::AfterFinalize)));
    assert!(matches!(s.finalize(), Err(IngestError::AfterFinalize)));
}

fn gram_plan(m: usize, n: usize, s: usize) -> SketchPlan {
    SketchPlan {
        m,
        n,
        kind: TestMatrixKind::Gaussian,
        sketches: vec![spec(SketchRole::Range, s, StreamTag::Omega), spec(SketchRole::Gram, s, StreamTag::Omega)],
        mixers: vec![],
    }
}

#[test]
fn gram_sketch_from_row_stream() {
    let a = gaussian(200, 100, 5);
    let plan = gram_plan(200, 100, 12);
    let mut s = Sketcher::open(&plan, 1, 0).unwrap();
    for u in row_block_updates(a.view(), 17) {
        s.ingest(&u).unwrap();
    }
    let set = s.finalize().unwrap();
    let omega = set.get(SketchRole::Gram).unwrap().test.to_dense();
    assert_eq!(omega, set.get(SketchRole::Range).unwrap().test.to_dense());
    let expect = a.t().dot(&a.dot(&omega));
    assert!(rel(&data(SketchRole::Gram, &set), &expect) <= 1e-11);
}

#[test]
fn gram_sketch_edge_cases() {
    let plan = gram_plan(6, 4, 2);
    let zero = sketch_matrix(Array2::zeros((6, 4)).view(), &plan, 1, 0).unwrap();
    assert!(data(SketchRole::Gram, &zero).iter().all(|v| *v == 0.0));
    assert!(data(SketchRole::Range, &zero).iter().all(|v| *v == 0.0));

    let row = gaussian(1, 4, 6);
    let mut u = Array1::zeros(6);
    u[2] = 1.0;
    let mut s = Sketcher::open(&plan, 1, 0).unwrap();
    s.ingest(&LinearUpdate::RankOne { u, v: row.row(0).to_owned() }).unwrap();
    let set = s.finalize().unwrap();
    let omega = set.get(SketchRole::Gram).unwrap().test.to_dense();
    let expect = row.t().dot(&row.dot(&omega));
    assert!(rel(&data(SketchRole::Gram, &set), &expect) <= 1e-14);
}

#[test]
fn gram_sketch_enforces_row_access() {
    let plan = gram_plan(6, 4, 2);
    let mut s = Sketcher::open(&plan, 1, 0).unwrap();
    let cols = LinearUpdate::ColumnBlock { start: 0, cols: Array2::ones((6, 1)) };
    assert!(matches!(s.ingest(&cols), Err(IngestError::ColumnBlockForGram)));
    let block = LinearUpdate::RowBlock { start: 1, rows: Array2::ones((2, 4)) };
    s.ingest(&block).unwrap();
    assert!(matches!(s.ingest(&block), Err(IngestError::RowRevisited(1))));
    let spread = LinearUpdate::RankOne { u: Array1::ones(6), v: Array1::ones(4) };
    assert!(matches!(s.ingest(&spread), Err(IngestError::RankOneNotRow)));
}

#[test]
fn single_precision_sketches_round_after_double_accumulation() {
    let a = gaussian(30, 20, 7);
    let mut plan = full_plan(30, 20, TestMatrixKind::Gaussian);
    plan.sketches.iter_mut().for_each(|s| s.precision = Precision::Binary32);
    let single = sketch_matrix(a.view(), &plan, 2, 0).unwrap();
    plan.sketches.iter_mut().for_each(|s| s.precision = Precision::Binary64);
    let double = sketch_matrix(a.view(), &plan, 2, 0).unwrap();
    let y32 = single.get(SketchRole::Range).unwrap();
    assert_eq!(y32.data.precision(), Precision::Binary32);
    let y64 = data(SketchRole::Range, &double);
    assert_eq!(y32.data.as_f32().unwrap(), y64.mapv(|v| v as f32));
}

#[test]
fn spim_file_matches_in_memory_ingest_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.spim");
    let a = gaussian(64, 24, 8);
    write_spim(&path, a.view(), Precision::Binary64).unwrap();
    let plan = full_plan(64, 24, TestMatrixKind::Gaussian);
    let from_file = ingest_file(&path, &plan, 5, 2, Some(10)).unwrap();
    let mut s = Sketcher::open(&plan, 5, 2).unwrap();
    for u in row_block_updates(a.view(), 10) {
        s.ingest(&u).unwrap();
    }
    let memory = s.finalize().unwrap();
    for role in [SketchRole::Range, SketchRole::Corange, SketchRole::Power, SketchRole::Core] {
        assert_eq!(data(role, &from_file), data(role, &memory), "{role:?}");
    }
    assert_eq!(read_matrix(&path).unwrap(), a);
}

#[test]
fn spim_single_precision_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a32.spim");
    let a = gaussian(5, 3, 9);
    write_spim(&path, a.view(), Precision::Binary32).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), a.mapv(|v| f64::from(v as f32)));
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 15 * 4);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(read_matrix(&empty), Err(IngestError::Format(_))));

    let short = dir.path().join("short.spim");
    write_spim(&short, gaussian(4, 4, 1).view(), Precision::Binary64).unwrap();
    let mut bytes = std::fs::read(&short).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&short, &bytes).unwrap();
    assert!(matches!(read_matrix(&short), Err(IngestError::Format(_))));

    let huge = dir.path().join("huge.spim");
    let mut h = Vec::from(&SPIM_MAGIC[..]);
    h.extend_from_slice(&SPIM_VERSION.to_le_bytes());
    h.extend_from_slice(&[0, 0]);
    h.extend_from_slice(&u64::MAX.to_le_bytes());
    h.extend_from_slice(&u64::MAX.to_le_bytes());
    std::fs::write(&huge, &h).unwrap();
    assert!(matches!(read_matrix(&huge), Err(IngestError::Overflow(_))));

    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"hello world").unwrap();
    assert!(read_matrix(&junk).is_err());

    let wrong_dims = dir.path().join("dims.spim");
    write_spim(&wrong_dims, gaussian(4, 4, 1).view(), Precision::Binary64).unwrap();
    let plan = full_plan(5, 4, TestMatrixKind::Gaussian);
    assert!(matches!(ingest_file(&wrong_dims, &plan, 0, 0, None), Err(IngestError::Shape(_))));
}

#[test]
fn matrix_market_array_and_coordinate() {
    let dir = tempfile::tempdir().unwrap();
    let arr = dir.path().join("a.mtx");
    std::fs::write(&arr, "%%MatrixMarket matrix array real general\n% comment\n2 3\n1\n2\n3\n4\n5\n6\n").unwrap();
    let a = read_matrix(&arr).unwrap();
    assert_eq!(a, ndarray::array![[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]]);

    let coo = dir.path().join("c.mtx");
    std::fs::write(&coo, "%%MatrixMarket matrix coordinate real symmetric\n3 3 2\n1 1 2.5\n3 1 -1\n").unwrap();
    let c = read_matrix(&coo).unwrap();
    assert_eq!(c, ndarray::array![[2.5, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);

    let bad = dir.path().join("b.mtx");
    std::fs::write(&bad, "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 2.5\n").unwrap();
    assert!(matches!(read_matrix(&bad), Err(IngestError::Format(_))));
}

#[test]
fn default_block_size() {
    assert_eq!(default_block_rows(1000), 16_777);
    assert_eq!(default_block_rows(1 << 25), 1);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ingestion_is_linear(seed in 0u64..1000, m in 4usize..30, n in 4usize..30) {
            let h1 = gaussian(m, n, seed);
            let h2 = gaussian(m, n, seed + 7);
            let plan = full_plan(m, n, TestMatrixKind::Gaussian);
            let mut s = Sketcher::open(&plan, seed, 0).unwrap();
            s.ingest(&LinearUpdate::Dense(h1.clone())).unwrap();
            s.ingest(&LinearUpdate::Dense(h2.clone())).unwrap();
            let split = s.finalize().unwrap();
            let joint = sketch_matrix((&h1 + &h2).view(), &plan, seed, 0).unwrap();
            for role in [SketchRole::Range, SketchRole::Corange, SketchRole::Power, SketchRole::Core] {
                prop_assert!(rel(&data(role, &split), &data(role, &joint)) <= 1e-12);
            }
        }
    }
}
