//! Trial execution, oracle sweeps, spectra and storage ledgers.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rayon::prelude::*;
use spisketch::approximators::SketchConfig;
use spisketch::guidance::{classify_spectrum, SpectrumClass};
use spisketch::matrix_core::{singular_values, Precision};
use spisketch::metrics::{evaluate_trial, mean_std, oracle_sweep, Baseline, ErrorReport, MetricFlag, SweepSpec, SweepTable};
use spisketch::precision_model::{storage_ledger, LedgerDims, StorageLedger};
use spisketch::stream_ingest::{read_matrix, read_row_blocks};
use spisketch::synthetic::{export_spim, generate_matrix, SyntheticSpec};

use crate::config::{DataSource, GuidanceMode, RunConfig};
use crate::output::{csv_writer, full, opt, short, RUN_HEADER, SWEEP_HEADER};

/// Environment variable holding the worker-pool size.
pub const THREADS_ENV: &str = "SPIBENCH_THREADS";

/// A pool sized by [`THREADS_ENV`], or by rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let k: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?;
        b = b.num_threads(k);
    }
    Ok(b.build()?)
}

fn synthetic_spec(cfg: &RunConfig, trial: u64) -> Option<SyntheticSpec> {
    match cfg.data {
        DataSource::Synthetic { family, m, n } => Some(SyntheticSpec::new(family, m, n, cfg.base_seed, trial)),
        DataSource::File(_) => None,
    }
}

/// Shape of the input without materializing synthetic data.
pub fn data_dims(cfg: &RunConfig) -> Result<(usize, usize)> {
    match &cfg.data {
        DataSource::Synthetic { m, n, .. } => Ok((*m, *n)),
        DataSource::File(p) => Ok(read_row_blocks(p, None)?.dims()),
    }
}

fn file_class(a: &Array2<f64>) -> Result<SpectrumClass> {
    let sv = singular_values(a.view())?;
    let top = sv.first().copied().unwrap_or(0.0);
    let positive: Vec<f64> = sv.iter().copied().filter(|&x| x > top * 1e-14).collect();
    Ok(classify_spectrum(&positive)?)
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub trial: u64,
    pub report: ErrorReport,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub sizes: SketchConfig,
    /// Completed trials in trial order.
    pub records: Vec<TrialRecord>,
    /// Failed trials with their diagnostics.
    pub failures: Vec<(u64, String)>,
}

/// Generates or loads the data, resolves sizes and runs every trial in the
/// worker pool.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let file_data = match &cfg.data {
        DataSource::File(p) => Some(read_matrix(p).with_context(|| format!("reading {}", p.display()))?),
        DataSource::Synthetic { .. } => None,
    };
    let (m, n) = match &file_data {
        Some(a) => a.dim(),
        None => data_dims(cfg)?,
    };
    let sizes = cfg.resolve_sizes(m, n, || match (&file_data, cfg.data.spectrum_class()) {
        (_, Some(c)) => Ok(c),
        (Some(a), None) => file_class(a),
        (None, None) => bail!("no spectrum class available"),
    })?;
    let file_baseline = match &file_data {
        Some(a) => Some(Baseline::new(a.view(), cfg.r)?),
        None => None,
    };
    let one = |trial: u64| -> Result<TrialRecord> {
        let owned;
        let (a, baseline_owned) = match (&file_data, synthetic_spec(cfg, trial)) {
            (Some(a), _) => (a, None),
            (None, Some(spec)) => {
                owned = generate_matrix(&spec)?;
                let b = Baseline::new(owned.view(), cfg.r)?;
                (&owned, Some(b))
            }
            (None, None) => unreachable!("data source is either a file or synthetic"),
        };
        let baseline = baseline_owned.as_ref().or(file_baseline.as_ref()).expect("baseline exists");
        let (mut report, _) =
            evaluate_trial(a.view(), baseline, cfg.algo, &sizes, cfg.kind, cfg.base_seed, trial, true)?;
        if !cfg.timing {
            report.wall_ms = None;
        }
        if report.flags.contains(&MetricFlag::ZeroBaseline) {
            log::info!("trial {trial}: the rank-{} optimum is exact; S_F and S_inf are absolute errors", cfg.r);
        }
        if report.flags.contains(&MetricFlag::ExactFit) {
            log::info!("trial {trial}: beat the rank-{} optimum; relative error clamped to 0", cfg.r);
        }
        Ok(TrialRecord { trial, report })
    };
    let results: Vec<Result<TrialRecord>> =
        worker_pool()?.install(|| (0..cfg.trials as u64).into_par_iter().map(one).collect());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((t as u64, format!("{e:#}"))),
        }
    }
    Ok(RunOutcome { sizes, records, failures })
}

fn prefix(cfg: &RunConfig, s: usize, d: usize, l: usize, q: usize) -> Vec<String> {
    let (param, value) = match &cfg.data {
        DataSource::Synthetic { family, .. } => (Some(family.rank()), Some(family.parameter())),
        DataSource::File(_) => (None, None),
    };
    let algo = cfg.algo;
    vec![
        algo.name().to_string(),
        cfg.data.label(),
        opt(param),
        short(value),
        short(cfg.budget),
        cfg.r.to_string(),
        s.to_string(),
        opt(algo.uses_d().then_some(d)),
        opt(algo.uses_l().then_some(l)),
        opt(algo.uses_spi().then_some(q)),
    ]
}

type Pick = fn(&ErrorReport) -> Option<f64>;

const METRICS: [Pick; 7] = [
    |r| Some(r.s_f),
    |r| Some(r.s_inf),
    |r| r.range_err_f,
    |r| r.range_err_s,
    |r| r.extra_err_f,
    |r| r.extra_err_s,
    |r| r.wall_ms,
];

/// One row per completed trial, then `mean` and `std` rows. A summary cell is
/// empty when any trial lacks that metric.
pub fn write_run<W: Write>(cfg: &RunConfig, outcome: &RunOutcome, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(RUN_HEADER)?;
    let sz = &outcome.sizes;
    let head = prefix(cfg, sz.s, sz.d, sz.l, sz.q);
    let seed = cfg.base_seed.to_string();
    for rec in &outcome.records {
        let mut row = head.clone();
        row.push(rec.trial.to_string());
        row.push(seed.clone());
        row.extend(METRICS.iter().map(|f| full(f(&rec.report))));
        w.write_record(&row)?;
    }
    let stats: Vec<Option<(f64, f64)>> = METRICS
        .iter()
        .map(|f| {
            let vals: Option<Vec<f64>> = outcome.records.iter().map(|r| f(&r.report)).collect();
            vals.filter(|v| !v.is_empty()).map(|v| mean_std(&v))
        })
        .collect();
    for (label, pick) in [("mean", 0usize), ("std", 1)] {
        let mut row = head.clone();
        row.push(label.to_string());
        row.push(seed.clone());
        row.extend(stats.iter().map(|st| full(st.map(|p| if pick == 0 { p.0 } else { p.1 }))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub table: SweepTable,
    /// Index of the row matching automatic guidance, when it applies.
    pub guided: Option<usize>,
}

/// Oracle sweep over every feasible range size at the budget. Synthetic
/// data only, because each trial draws fresh data.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    let budget = cfg.budget.context("a sweep needs --budget")?;
    let Some(data) = synthetic_spec(cfg, 0) else {
        bail!("sweeps run on synthetic data; --input is not supported here");
    };
    let spec = SweepSpec {
        data,
        algo: cfg.algo,
        plan: cfg.plan,
        budget,
        r: cfg.r,
        q_set: cfg.q_set.clone(),
        trials: cfg.trials,
        kind: cfg.kind,
        base_seed: cfg.base_seed,
    };
    let table = worker_pool()?.install(|| oracle_sweep(&spec))?;
    if table.rows.is_empty() {
        bail!("no feasible (s, d, l) at budget {budget} for {} with {}", cfg.algo, cfg.plan.name());
    }
    let auto = RunConfig { guidance: GuidanceMode::Auto, ..cfg.clone() };
    let class = cfg.data.spectrum_class();
    let guided = match auto.resolve_sizes(data.m, data.n, || class.context("no spectrum class")) {
        Ok(g) => table.rows.iter().position(|r| r.s == g.s && r.q == g.q),
        Err(e) => {
            log::info!("no guided row: {e:#}");
            None
        }
    };
    Ok(SweepOutcome { table, guided })
}

pub fn write_sweep<W: Write>(cfg: &RunConfig, sw: &SweepOutcome, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for (i, r) in sw.table.rows.iter().enumerate() {
        let mut row = prefix(cfg, r.s, r.d, r.l, r.q);
        row.extend([r.mean_sf, r.mean_sinf, r.std_sf, r.std_sinf].map(|x| full(Some(x))));
        row.push(u8::from(sw.table.oracle == Some(i)).to_string());
        row.push(u8::from(sw.guided == Some(i)).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Singular values of the input. Synthetic specs give their prescribed
/// spectrum unless `computed`, in which case trial 0 is generated and
/// decomposed.
pub fn spectrum(cfg: &RunConfig, computed: bool) -> Result<Vec<f64>> {
    let sv = match (&cfg.data, synthetic_spec(cfg, 0)) {
        (DataSource::File(p), _) => {
            let a = read_matrix(p).with_context(|| format!("reading {}", p.display()))?;
            singular_values(a.view())?.to_vec()
        }
        (_, Some(spec)) if computed => singular_values(generate_matrix(&spec)?.view())?.to_vec(),
        (_, Some(spec)) => spec.prescribed_spectrum(),
        (_, None) => unreachable!("data source is either a file or synthetic"),
    };
    if sv.is_empty() {
        bail!("the input has no singular values");
    }
    Ok(sv)
}

pub fn write_spectrum<W: Write>(sv: &[f64], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["index", "sigma"])?;
    for (i, s) in sv.iter().enumerate() {
        w.write_record([(i + 1).to_string(), full(Some(*s))])?;
    }
    w.flush()?;
    Ok(())
}

/// Storage ledger for the resolved sizes.
pub fn ledger(cfg: &RunConfig) -> Result<StorageLedger> {
    let (m, n) = data_dims(cfg)?;
    let sizes = cfg.resolve_sizes(m, n, || match &cfg.data {
        DataSource::File(p) => file_class(&read_matrix(p)?),
        DataSource::Synthetic { .. } => cfg.data.spectrum_class().context("no spectrum class"),
    })?;
    let dims = LedgerDims { m, n, s: sizes.s, d: sizes.d, l: sizes.l };
    Ok(storage_ledger(cfg.algo, cfg.plan, dims)?)
}

/// Writes one trial of a synthetic family as a SPIM file.
pub fn export(cfg: &RunConfig, trial: u64, precision: Precision, path: &Path) -> Result<()> {
    let spec = synthetic_spec(cfg, trial).context("export needs --data")?;
    export_spim(&spec, path, precision)?;
    Ok(())
}
