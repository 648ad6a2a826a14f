//! CSV emission. Floats that carry measurements are written with 17
//! significant digits; missing values are empty fields.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const RUN_HEADER: [&str; 19] = [
    "algo",
    "dataset",
    "param",
    "alpha_or_gamma",
    "budget_T",
    "r",
    "s",
    "d",
    "l",
    "q",
    "trial",
    "seed",
    "S_F",
    "S_inf",
    "range_err_F",
    "range_err_S",
    "extra_err_F",
    "extra_err_S",
    "wall_ms",
];

pub const SWEEP_HEADER: [&str; 16] = [
    "algo",
    "dataset",
    "param",
    "alpha_or_gamma",
    "budget_T",
    "r",
    "s",
    "d",
    "l",
    "q",
    "mean_SF",
    "mean_Sinf",
    "std_SF",
    "std_Sinf",
    "is_oracle",
    "is_guided",
];

/// `x` with 17 significant digits, or empty when absent or not finite.
pub fn full(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        _ => String::new(),
    }
}

/// Shortest exact form, for parameters the user typed.
pub fn short(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// LF-terminated CSV writer.
pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}
