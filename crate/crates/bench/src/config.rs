//! Run configuration: command-line flags, an optional TOML file that mirrors
//! them key for key, and resolution into concrete sketch sizes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;
use spisketch::approximators::{Algorithm, PrecisionPlan, SketchConfig};
use spisketch::guidance::{budget_sizes, guide, SpectrumClass, FLAT_ALPHA};
use spisketch::synthetic::{SyntheticFamily, DEFAULT_DIM, DEFAULT_PLATEAU};
use spisketch::test_matrices::{TestMatrixKind, DEFAULT_SPARSITY};

/// Every flag shared by the subcommands. All fields are optional so that a
/// config file can fill the gaps; see [`RunArgs::merged`].
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunArgs {
    /// TOML file with the same keys as the long flags; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Synthetic family: lowrank, poly or exp.
    #[arg(long)]
    pub data: Option<String>,
    /// Decay rate of poly and exp data.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Noise level of lowrank data.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Plateau rank R of synthetic data [default: 10].
    #[arg(long)]
    pub rank: Option<usize>,
    /// Rows of synthetic data [default: 1000].
    #[arg(long)]
    pub m: Option<usize>,
    /// Columns of synthetic data [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Matrix file (SPIM or Matrix Market) used instead of synthetic data.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// tyuc17, tyuc17_spi, tyuc17_spi_variant, rsvd_onepass, tyuc19 or tyuc19_spi [default: tyuc17_spi].
    #[arg(long)]
    pub algo: Option<String>,
    /// Storage budget T̂: the sketches hold T̂·n double words in total. Mixed
    /// plans count a single-precision word as half a double word, so the
    /// guided sizes fit about twice as many sketch entries as all_double.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Range sketch size.
    #[arg(long)]
    pub s: Option<usize>,
    /// Co-range (or core) sketch size; derived from the budget when omitted.
    #[arg(long)]
    pub d: Option<usize>,
    /// Power sketch size; derived from the budget when omitted.
    #[arg(long)]
    pub l: Option<usize>,
    /// Sketch-power iterations [default: 1].
    #[arg(long)]
    pub q: Option<usize>,
    /// Comma-separated q values scanned by a sweep [default: q].
    #[arg(long, value_delimiter = ',')]
    pub q_set: Option<Vec<usize>>,
    /// Target rank [default: 10].
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of trials [default: 1].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// all_double or mixed_single_double [default: mixed for SPI pipelines, double otherwise].
    #[arg(long)]
    pub precision: Option<String>,
    /// manual, auto or sweep [default: manual when --s is given, auto otherwise].
    #[arg(long)]
    pub guidance: Option<String>,
    /// gaussian, sparse_rademacher, sparse_sign or countsketch [default: gaussian].
    #[arg(long)]
    pub test_matrix: Option<String>,
    /// Density of the sparse test matrices [default: 0.01].
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Output CSV path [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Leave wall_ms empty so that output is byte-identical across runs.
    #[arg(long)]
    pub no_timing: bool,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        RunArgs { config: $a.config, no_timing: $a.no_timing || $b.no_timing, $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunArgs {
    /// Fills every unset field from `file`.
    pub fn merged(self, file: RunArgs) -> RunArgs {
        prefer!(self, file; data, alpha, gamma, rank, m, n, input, algo, budget, s, d, l, q, q_set, r, trials,
            seed, precision, guidance, test_matrix, sparsity, output)
    }

    /// Applies the `--config` file, if any.
    pub fn with_config_file(self) -> Result<RunArgs> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: RunArgs = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(self.merged(file))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { family: SyntheticFamily, m: usize, n: usize },
    File(PathBuf),
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Synthetic { family, .. } => family.name().to_string(),
            DataSource::File(p) => p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into()),
        }
    }

    /// Decay class implied by a synthetic family, `None` for files.
    pub fn spectrum_class(&self) -> Option<SpectrumClass> {
        let DataSource::Synthetic { family, .. } = self else {
            return None;
        };
        Some(match *family {
            SyntheticFamily::LowRankNoise { .. } => SpectrumClass::Flat,
            SyntheticFamily::PolyDecay { alpha, .. } if alpha < FLAT_ALPHA => SpectrumClass::Flat,
            SyntheticFamily::ExpDecay { alpha, .. } if alpha < FLAT_ALPHA => SpectrumClass::Flat,
            SyntheticFamily::PolyDecay { alpha, .. } => SpectrumClass::Poly(alpha),
            SyntheticFamily::ExpDecay { alpha, .. } => SpectrumClass::Exp(alpha),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuidanceMode {
    Manual,
    Auto,
    Sweep,
}

/// A fully defaulted run description. Sizes are resolved later, once the
/// data shape is known.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub algo: Algorithm,
    pub plan: PrecisionPlan,
    pub budget: Option<f64>,
    pub s: Option<usize>,
    pub d: Option<usize>,
    pub l: Option<usize>,
    pub q: usize,
    pub q_set: Vec<usize>,
    pub r: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub guidance: GuidanceMode,
    pub kind: TestMatrixKind,
    pub output: Option<PathBuf>,
    pub timing: bool,
}

fn parse_family(args: &RunArgs) -> Result<SyntheticFamily> {
    let name = args.data.as_deref().unwrap_or_default();
    let rank = args.rank.unwrap_or(DEFAULT_PLATEAU);
    let need = |v: Option<f64>, flag: &str| v.with_context(|| format!("--data {name} needs --{flag}"));
    let reject = |v: Option<f64>, flag: &str| -> Result<()> {
        if v.is_some() {
            bail!("--{flag} does not apply to --data {name}");
        }
        Ok(())
    };
    Ok(match name {
        "lowrank" => {
            reject(args.alpha, "alpha")?;
            SyntheticFamily::LowRankNoise { gamma: need(args.gamma, "gamma")?, rank }
        }
        "poly" => {
            reject(args.gamma, "gamma")?;
            SyntheticFamily::PolyDecay { alpha: need(args.alpha, "alpha")?, rank }
        }
        "exp" => {
            reject(args.gamma, "gamma")?;
            SyntheticFamily::ExpDecay { alpha: need(args.alpha, "alpha")?, rank }
        }
        other => bail!("unknown data family {other:?}; expected lowrank, poly or exp"),
    })
}

fn parse_kind(name: Option<&str>, sparsity: Option<f64>) -> Result<TestMatrixKind> {
    let sp = sparsity.unwrap_or(DEFAULT_SPARSITY);
    Ok(match name.unwrap_or("gaussian") {
        "gaussian" => TestMatrixKind::Gaussian,
        "sparse_rademacher" => TestMatrixKind::SparseRademacher { sparsity: sp },
        "sparse_sign" => TestMatrixKind::SparseSign { sparsity: sp },
        "countsketch" => TestMatrixKind::CountSketch,
        other => bail!("unknown test matrix {other:?}"),
    })
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let data = match (&args.data, &args.input) {
            (Some(_), Some(_)) => bail!("give either --data or --input, not both"),
            (None, None) => bail!("no data: give --data <family> or --input <file>"),
            (None, Some(p)) => DataSource::File(p.clone()),
            (Some(_), None) => {
                let m = args.m.unwrap_or(DEFAULT_DIM);
                let n = args.n.unwrap_or(DEFAULT_DIM);
                DataSource::Synthetic { family: parse_family(args)?, m, n }
            }
        };
        let algo: Algorithm = args.algo.as_deref().unwrap_or("tyuc17_spi").parse()?;
        let plan = match &args.precision {
            Some(p) => p.parse()?,
            None => algo.default_plan(),
        };
        let guidance = match args.guidance.as_deref() {
            Some("manual") => GuidanceMode::Manual,
            Some("auto") => GuidanceMode::Auto,
            Some("sweep") => GuidanceMode::Sweep,
            Some(other) => bail!("unknown guidance mode {other:?}"),
            None if args.s.is_some() => GuidanceMode::Manual,
            None => GuidanceMode::Auto,
        };
        if let Some(b) = args.budget {
            if !(b > 0.0 && b.is_finite()) {
                bail!("--budget must be positive, got {b}");
            }
        }
        let q = args.q.unwrap_or(1);
        let trials = args.trials.unwrap_or(1);
        if trials == 0 {
            bail!("--trials must be at least 1");
        }
        Ok(RunConfig {
            data,
            algo,
            plan,
            budget: args.budget,
            s: args.s,
            d: args.d,
            l: args.l,
            q,
            q_set: args.q_set.clone().unwrap_or_else(|| vec![q]),
            r: args.r.unwrap_or(10),
            trials,
            base_seed: args.seed.unwrap_or(0),
            guidance,
            kind: parse_kind(args.test_matrix.as_deref(), args.sparsity)?,
            output: args.output.clone(),
            timing: !args.no_timing,
        })
    }

    pub fn output_path(&self) -> Option<&Path> {
        self.output.as_deref()
    }

    /// Concrete sizes for an `m x n` input. `class` supplies the decay class
    /// for automatic guidance and is only called in that mode.
    pub fn resolve_sizes(
        &self,
        m: usize,
        n: usize,
        class: impl FnOnce() -> Result<SpectrumClass>,
    ) -> Result<SketchConfig> {
        let c = m as f64 / n as f64;
        let (s, d, l) = match self.guidance {
            GuidanceMode::Manual => {
                let s = self.s.context("manual guidance needs --s")?;
                let derived = self.budget.map(|t| budget_sizes(self.algo, self.plan, t, s, n, c));
                let pick = |given: Option<usize>, used: bool, from_budget: Option<usize>, flag: &str| -> Result<usize> {
                    match (given, from_budget) {
                        (Some(v), _) => Ok(v),
                        (None, _) if !used => Ok(0),
                        (None, Some(v)) => Ok(v),
                        (None, None) => bail!("{} needs --{flag} or --budget", self.algo),
                    }
                };
                let d = pick(self.d, self.algo.uses_d(), derived.map(|x| x.0), "d")?;
                let l = pick(self.l, self.algo.uses_l(), derived.map(|x| x.1), "l")?;
                (s, d, l)
            }
            GuidanceMode::Auto | GuidanceMode::Sweep => {
                let t = self.budget.context("automatic guidance and sweeps need --budget")?;
                let g = guide(self.algo, self.plan, class()?, t, n, c, self.r)?;
                (g.s, g.d, g.l)
            }
        };
        let cfg = SketchConfig::new(self.r, s, d, l, self.q, self.plan);
        cfg.validate(self.algo, m, n).with_context(|| format!("infeasible sizes s = {s}, d = {d}, l = {l}"))?;
        Ok(cfg)
    }
}
