//! Mixed-precision storage: which sketches live in binary32, when they are
//! widened, and an exact accountant for the words each pipeline holds.
//!
//! Storage is counted in double-precision words. A binary32 entry costs half
//! a word, so the ledger keeps integer half-words internally.

use std::io::Write;

use thiserror::Error;

use crate::approximators::{Algorithm, PrecisionPlan};
use crate::matrix_core::Precision;
use crate::stream_ingest::SketchRole;

#[derive(Debug, Error)]
pub enum PrecisionError {
    #[error("{algorithm} has no {plan} storage strategy")]
    Unsupported { algorithm: &'static str, plan: &'static str },
    #[error("{algorithm} does not use a {role:?} sketch")]
    NoSuchRole { algorithm: &'static str, role: SketchRole },
    #[error("space reuse infeasible for {label}: needs {needed} words, pool holds {available}")]
    SpaceReuse { label: String, needed: f64, available: f64 },
    #[error("ledger has no live buffer named {0}")]
    UnknownBuffer(String),
    #[error("ledger already holds a live buffer named {0}")]
    DuplicateBuffer(String),
    #[error("split of {0} asks for more entries than the buffer has")]
    BadSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn unsupported(algo: Algorithm, plan: PrecisionPlan) -> PrecisionError {
    PrecisionError::Unsupported { algorithm: algo.name(), plan: plan.name() }
}

/// Storage precision of one sketch under a plan.
pub fn storage_precision(algo: Algorithm, plan: PrecisionPlan, role: SketchRole) -> Result<Precision, PrecisionError> {
    use Algorithm::*;
    use SketchRole::*;
    let present = match algo {
        Tyuc17 => matches!(role, Range | Corange),
        Tyuc17Spi => matches!(role, Range | Corange | Power),
        Tyuc17SpiVariant => matches!(role, Corange | Power),
        RsvdOnepass => matches!(role, Range | Gram),
        Tyuc19 => matches!(role, Range | Corange | Core),
        Tyuc19Spi => matches!(role, Power | Corange | Core),
    };
    if !present {
        return Err(PrecisionError::NoSuchRole { algorithm: algo.name(), role });
    }
    if plan == PrecisionPlan::AllDouble {
        return Ok(Precision::Binary64);
    }
    match (algo, role) {
        (RsvdOnepass | Tyuc19, _) => Err(unsupported(algo, plan)),
        // Y stays in double; only the corange sketch is halved.
        (Tyuc17, Range) => Ok(Precision::Binary64),
        (Tyuc19Spi, Core) => Ok(Precision::Binary64),
        _ => Ok(Precision::Binary32),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CastStage {
    /// Power iteration output stored back into a binary32 sketch slot.
    Iterate,
    /// Before orthonormalization.
    Orthonormalize,
    /// Before the least-squares fit.
    Solve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CastPoint {
    pub stage: CastStage,
    pub matrix: &'static str,
    pub from: Precision,
    pub to: Precision,
}

const fn widen(stage: CastStage, matrix: &'static str) -> CastPoint {
    CastPoint { stage, matrix, from: Precision::Binary32, to: Precision::Binary64 }
}

const fn narrow(matrix: &'static str) -> CastPoint {
    CastPoint { stage: CastStage::Iterate, matrix, from: Precision::Binary64, to: Precision::Binary32 }
}

/// Ordered precision conversions a pipeline performs. Kernels always run in
/// binary64; binary32 data is widened on read.
pub fn cast_schedule(plan: PrecisionPlan, algo: Algorithm) -> Result<Vec<CastPoint>, PrecisionError> {
    if plan == PrecisionPlan::AllDouble {
        return Ok(Vec::new());
    }
    use CastStage::*;
    match algo {
        Algorithm::RsvdOnepass | Algorithm::Tyuc19 => Err(unsupported(algo, plan)),
        Algorithm::Tyuc17 => Ok(vec![widen(Solve, "corange")]),
        Algorithm::Tyuc17Spi | Algorithm::Tyuc17SpiVariant => Ok(vec![
            narrow("range_iterate"),
            widen(Orthonormalize, "range_iterate"),
            widen(Solve, "corange"),
        ]),
        Algorithm::Tyuc19Spi => Ok(vec![
            narrow("range_iterate"),
            narrow("corange_iterate"),
            widen(Orthonormalize, "range_iterate"),
            widen(Orthonormalize, "corange_iterate"),
        ]),
    }
}

/// Power sketch width that makes binary32 `{Y, W, Z}` cost exactly what
/// binary64 `{Y, W}` costs: `m l >= m s + d n`.
pub fn plan_mixed(m: usize, n: usize, s: usize, d: usize) -> usize {
    (m * s + d * n).div_ceil(m)
}

/// Expected relative-error floor of a plan.
pub fn accuracy_floor(plan: PrecisionPlan) -> f64 {
    match plan {
        PrecisionPlan::AllDouble => f64::EPSILON,
        PrecisionPlan::MixedSingleDouble => f64::from(f32::EPSILON),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerEvent {
    Alloc,
    Free,
    /// The buffer's words join the reuse pool.
    Retire,
    /// The buffer shrinks in place; the tail joins the pool.
    Split,
    /// A binary32 buffer becomes binary64, taking the extra words from the pool.
    Upcast,
    /// Whatever is left in the pool is returned.
    ReleasePool,
}

impl LedgerEvent {
    pub fn name(self) -> &'static str {
        match self {
            LedgerEvent::Alloc => "alloc",
            LedgerEvent::Free => "free",
            LedgerEvent::Retire => "retire",
            LedgerEvent::Split => "split",
            LedgerEvent::Upcast => "upcast",
            LedgerEvent::ReleasePool => "release_pool",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub precision: Precision,
    pub event: LedgerEvent,
    /// Words the event concerns, in half-words.
    pub half_words: u64,
    /// Live words after the event, in half-words.
    pub live_half_words: u64,
}

impl LedgerEntry {
    pub fn words(&self) -> f64 {
        self.half_words as f64 / 2.0
    }

    pub fn live_words(&self) -> f64 {
        self.live_half_words as f64 / 2.0
    }
}

#[derive(Clone, Debug)]
struct Buffer {
    label: String,
    rows: usize,
    cols: usize,
    precision: Precision,
}

impl Buffer {
    fn half_words(&self) -> u64 {
        (self.rows as u64) * (self.cols as u64) * self.precision.half_words()
    }
}

/// Running account of live buffers. Pool words count as live until released.
#[derive(Clone, Debug, Default)]
pub struct StorageLedger {
    entries: Vec<LedgerEntry>,
    live: Vec<Buffer>,
    pool_half: u64,
    live_half: u64,
    peak_half: u64,
}

impl StorageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn peak_words(&self) -> f64 {
        self.peak_half as f64 / 2.0
    }

    pub fn peak_half_words(&self) -> u64 {
        self.peak_half
    }

    pub fn live_words(&self) -> f64 {
        self.live_half as f64 / 2.0
    }

    pub fn pool_words(&self) -> f64 {
        self.pool_half as f64 / 2.0
    }

    fn record(&mut self, b: &Buffer, event: LedgerEvent, half_words: u64) {
        self.peak_half = self.peak_half.max(self.live_half);
        self.entries.push(LedgerEntry {
            label: b.label.clone(),
            rows: b.rows,
            cols: b.cols,
            precision: b.precision,
            event,
            half_words,
            live_half_words: self.live_half,
        });
    }

    fn index(&self, label: &str) -> Result<usize, PrecisionError> {
        self.live
            .iter()
            .position(|b| b.label == label)
            .ok_or_else(|| PrecisionError::UnknownBuffer(label.to_string()))
    }

    pub fn alloc(&mut self, label: &str, rows: usize, cols: usize, precision: Precision) -> Result<(), PrecisionError> {
        if self.live.iter().any(|b| b.label == label) {
            return Err(PrecisionError::DuplicateBuffer(label.to_string()));
        }
        let b = Buffer { label: label.to_string(), rows, cols, precision };
        let h = b.half_words();
        self.live_half += h;
        self.record(&b, LedgerEvent::Alloc, h);
        self.live.push(b);
        Ok(())
    }

    pub fn free(&mut self, label: &str) -> Result<(), PrecisionError> {
        let b = self.live.remove(self.index(label)?);
        let h = b.half_words();
        self.live_half -= h;
        self.record(&b, LedgerEvent::Free, h);
        Ok(())
    }

    pub fn retire_to_pool(&mut self, label: &str) -> Result<(), PrecisionError> {
        let b = self.live.remove(self.index(label)?);
        let h = b.half_words();
        self.pool_half += h;
        self.record(&b, LedgerEvent::Retire, h);
        Ok(())
    }

    /// Replaces `label` by a smaller buffer `new_label` occupying its head.
    pub fn split_to_pool(&mut self, label: &str, new_label: &str, rows: usize, cols: usize) -> Result<(), PrecisionError> {
        let i = self.index(label)?;
        let old = self.live[i].half_words();
        let b = Buffer { label: new_label.to_string(), rows, cols, precision: self.live[i].precision };
        let h = b.half_words();
        if h > old {
            return Err(PrecisionError::BadSplit(label.to_string()));
        }
        self.pool_half += old - h;
        self.record(&b, LedgerEvent::Split, old - h);
        self.live[i] = b;
        Ok(())
    }

    pub fn upcast_from_pool(&mut self, label: &str) -> Result<(), PrecisionError> {
        let i = self.index(label)?;
        let need = self.live[i].half_words();
        if self.live[i].precision == Precision::Binary64 {
            return Ok(());
        }
        if need > self.pool_half {
            return Err(PrecisionError::SpaceReuse {
                label: label.to_string(),
                needed: need as f64 / 2.0,
                available: self.pool_half as f64 / 2.0,
            });
        }
        self.pool_half -= need;
        self.live[i].precision = Precision::Binary64;
        let b = self.live[i].clone();
        self.record(&b, LedgerEvent::Upcast, need);
        Ok(())
    }

    /// Allocates `half_words` fresh half words straight into the reuse pool,
    /// for an upcast whose recycled space falls short.
    pub fn extend_pool(&mut self, label: &str, half_words: u64) {
        self.live_half += half_words;
        self.pool_half += half_words;
        let b = Buffer { label: label.to_string(), rows: 0, cols: 0, precision: Precision::Binary32 };
        self.record(&b, LedgerEvent::Alloc, half_words);
    }

    pub fn release_pool(&mut self) {
        let h = self.pool_half;
        self.live_half -= h;
        self.pool_half = 0;
        let b = Buffer { label: "pool".into(), rows: 0, cols: 0, precision: Precision::Binary64 };
        self.record(&b, LedgerEvent::ReleasePool, h);
    }

    /// Writes `label,rows,cols,precision,words,event,total_words`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), PrecisionError> {
        writeln!(out, "label,rows,cols,precision,words,event,total_words")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.label,
                e.rows,
                e.cols,
                e.precision.name(),
                e.words(),
                e.event.name(),
                e.live_words()
            )?;
        }
        Ok(())
    }
}

/// Problem and sketch dimensions for [`storage_ledger`]. Unused sizes are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerDims {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub d: usize,
    pub l: usize,
}

/// Widens the corange-derived core `B` (s x n) in the space of the binary32
/// corange sketch when `d >= 2s`, otherwise in a fresh buffer.
fn widen_core_in_corange(led: &mut StorageLedger, s: usize, n: usize) -> Result<(), PrecisionError> {
    led.split_to_pool("corange", "core_factor", s, n)?;
    // With d < 2s the rest of W is too small; only the shortfall is new.
    let need = (s * n) as u64;
    if need > led.pool_half {
        led.extend_pool("core_factor_tail", need - led.pool_half);
    }
    led.upcast_from_pool("core_factor")?;
    led.release_pool();
    Ok(())
}

/// Replays the buffer lifecycle of a pipeline and returns the ledger.
pub fn storage_ledger(algo: Algorithm, plan: PrecisionPlan, dims: LedgerDims) -> Result<StorageLedger, PrecisionError> {
    let LedgerDims { m, n, s, d, l } = dims;
    let p = |role| storage_precision(algo, plan, role);
    let f64_ = Precision::Binary64;
    let mut led = StorageLedger::new();
    match algo {
        Algorithm::Tyuc17 => {
            led.alloc("range", m, s, p(SketchRole::Range)?)?;
            led.alloc("corange", d, n, p(SketchRole::Corange)?)?;
            if plan == PrecisionPlan::MixedSingleDouble {
                widen_core_in_corange(&mut led, s, n)?;
            }
        }
        Algorithm::Tyuc17Spi => {
            led.alloc("range", m, s, p(SketchRole::Range)?)?;
            led.alloc("corange", d, n, p(SketchRole::Corange)?)?;
            led.alloc("power", m, l, p(SketchRole::Power)?)?;
            // The iterate overwrites the range sketch in place.
            led.split_to_pool("range", "range_iterate", m, s)?;
            led.retire_to_pool("power")?;
            led.upcast_from_pool("range_iterate")?;
            led.upcast_from_pool("corange")?;
            led.release_pool();
        }
        Algorithm::Tyuc17SpiVariant => {
            led.alloc("power", m, l, p(SketchRole::Power)?)?;
            led.alloc("corange", d, n, p(SketchRole::Corange)?)?;
            led.alloc("power_gram", l, l, f64_)?;
            led.alloc("row_buffer", 1, s, f64_)?;
            led.split_to_pool("power", "range_iterate", m, s)?;
            led.free("row_buffer")?;
            led.free("power_gram")?;
            led.upcast_from_pool("range_iterate")?;
            led.release_pool();
            if plan == PrecisionPlan::MixedSingleDouble {
                widen_core_in_corange(&mut led, s, n)?;
            }
        }
        Algorithm::RsvdOnepass => {
            led.alloc("range", m, s, p(SketchRole::Range)?)?;
            led.alloc("gram", n, s, p(SketchRole::Gram)?)?;
        }
        Algorithm::Tyuc19 => {
            led.alloc("range", m, s, p(SketchRole::Range)?)?;
            led.alloc("corange", s, n, p(SketchRole::Corange)?)?;
            led.alloc("core", d, d, p(SketchRole::Core)?)?;
        }
        Algorithm::Tyuc19Spi => {
            led.alloc("power", m, l, p(SketchRole::Power)?)?;
            led.alloc("corange", l, n, p(SketchRole::Corange)?)?;
            led.alloc("core", d, d, p(SketchRole::Core)?)?;
            led.alloc("power_gram", l, l, f64_)?;
            led.alloc("row_buffer", 1, s, f64_)?;
            led.split_to_pool("power", "range_iterate", m, s)?;
            led.free("row_buffer")?;
            led.free("power_gram")?;
            led.alloc("power_gram", l, l, f64_)?;
            led.alloc("row_buffer", 1, s, f64_)?;
            led.split_to_pool("corange", "corange_iterate", s, n)?;
            led.free("row_buffer")?;
            led.free("power_gram")?;
            led.upcast_from_pool("range_iterate")?;
            led.upcast_from_pool("corange_iterate")?;
            led.release_pool();
        }
    }
    Ok(led)
}
