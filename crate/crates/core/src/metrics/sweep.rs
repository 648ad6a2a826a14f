//! Oracle sweeps: enumerate every feasible range-sketch size at a fixed
//! storage budget and record mean errors.

use rayon::prelude::*;

use super::{evaluate_trial, mean_std, Baseline, MetricsError};
use crate::approximators::{Algorithm, PrecisionPlan, SketchConfig};
use crate::guidance::{budget_sizes, max_range_size};
use crate::synthetic::{generate_matrix, SyntheticSpec};
use crate::test_matrices::{SeedSpec, TestMatrixKind};

#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Data family and shape; the trial index is replaced per trial.
    pub data: SyntheticSpec,
    pub algo: Algorithm,
    pub plan: PrecisionPlan,
    /// Budget in double words per column.
    pub budget: f64,
    pub r: usize,
    pub q_set: Vec<usize>,
    pub trials: usize,
    pub kind: TestMatrixKind,
    pub base_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub s: usize,
    pub d: usize,
    pub l: usize,
    pub q: usize,
    pub mean_sf: f64,
    pub mean_sinf: f64,
    pub std_sf: f64,
    pub std_sinf: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the smallest mean `S_F`.
    pub oracle: Option<usize>,
}

impl SweepTable {
    pub fn oracle_row(&self) -> Option<&SweepRow> {
        self.oracle.map(|i| &self.rows[i])
    }

    pub fn find(&self, s: usize, q: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.s == s && r.q == q)
    }
}

impl SweepSpec {
    /// Every feasible configuration at this budget, in (s, q) order.
    pub fn candidates(&self) -> Vec<SketchConfig> {
        let (m, n) = (self.data.m, self.data.n);
        let c = m as f64 / n as f64;
        let smax = max_range_size(self.algo, self.plan, self.budget, c);
        let mut out = Vec::new();
        for s in self.r..=smax {
            let (d, l) = budget_sizes(self.algo, self.plan, self.budget, s, n, c);
            for &q in &self.q_set {
                let cfg = SketchConfig::new(self.r, s, d, l, q, self.plan);
                match cfg.validate(self.algo, m, n) {
                    Ok(()) => out.push(cfg),
                    Err(e) => log::debug!("skipping s = {s}, q = {q}: {e}"),
                }
            }
        }
        out
    }
}

/// Runs every feasible configuration on the same data for each trial and
/// averages. Trials run in parallel; results do not depend on scheduling.
pub fn oracle_sweep(spec: &SweepSpec) -> Result<SweepTable, MetricsError> {
    let cands = spec.candidates();
    if cands.is_empty() {
        log::warn!("no feasible configuration at budget {}", spec.budget);
        return Ok(SweepTable::default());
    }
    let per_trial: Vec<Vec<(f64, f64)>> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let data = SyntheticSpec { seed: SeedSpec { trial_index: trial, ..spec.data.seed }, ..spec.data };
            let a = generate_matrix(&data)?;
            let baseline = Baseline::new(a.view(), spec.r)?;
            cands
                .iter()
                .map(|cfg| {
                    let (rep, _) =
                        evaluate_trial(a.view(), &baseline, spec.algo, cfg, spec.kind, spec.base_seed, trial, false)?;
                    Ok((rep.s_f, rep.s_inf))
                })
                .collect::<Result<Vec<_>, MetricsError>>()
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<SweepRow> = cands
        .iter()
        .enumerate()
        .map(|(j, cfg)| {
            let sf: Vec<f64> = per_trial.iter().map(|t| t[j].0).collect();
            let si: Vec<f64> = per_trial.iter().map(|t| t[j].1).collect();
            let (mean_sf, std_sf) = mean_std(&sf);
            let (mean_sinf, std_sinf) = mean_std(&si);
            SweepRow { s: cfg.s, d: cfg.d, l: cfg.l, q: cfg.q, mean_sf, mean_sinf, std_sf, std_sinf }
        })
        .collect();
    let oracle = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_sf.total_cmp(&b.1.mean_sf))
        .map(|(i, _)| i);
    Ok(SweepTable { rows, oracle })
}
