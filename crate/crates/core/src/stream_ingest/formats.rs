//! Matrix file formats.
//!
//! SPIM layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `SPIM` |
//! | 2 | format version (1) |
//! | 1 | element code: 0 binary64, 1 binary32 |
//! | 1 | reserved, zero |
//! | 8 | rows |
//! | 8 | cols |
//! | .. | row-major payload |
//!
//! Matrix Market `array` and `coordinate` files (real or integer, general
//! or symmetric) are also read. Text files are parsed whole and then
//! replayed as row blocks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::{default_block_rows, IngestError, LinearUpdate};
use crate::matrix_core::Precision;

pub const SPIM_MAGIC: &[u8; 4] = b"SPIM";
pub const SPIM_VERSION: u16 = 1;
const SPIM_HEADER: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Spim,
    MatrixMarket,
}

pub fn write_spim(path: &Path, a: ArrayView2<'_, f64>, precision: Precision) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SPIM_MAGIC)?;
    w.write_all(&SPIM_VERSION.to_le_bytes())?;
    w.write_all(&[match precision {
        Precision::Binary64 => 0u8,
        Precision::Binary32 => 1u8,
    }])?;
    w.write_all(&[0u8])?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for row in a.rows() {
        for &v in row {
            match precision {
                Precision::Binary64 => w.write_all(&v.to_le_bytes())?,
                Precision::Binary32 => w.write_all(&(v as f32).to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Produces the row blocks of a matrix file one at a time.
pub struct RowBlockReader {
    m: usize,
    n: usize,
    block: usize,
    next_row: usize,
    source: Source,
}

enum Source {
    Spim { reader: BufReader<File>, precision: Precision },
    Memory(Array2<f64>),
}

impl RowBlockReader {
    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn next_block(&mut self) -> Result<Option<LinearUpdate>, IngestError> {
        if self.next_row >= self.m {
            return Ok(None);
        }
        let start = self.next_row;
        let len = self.block.min(self.m - start);
        let rows = match &mut self.source {
            Source::Spim { reader, precision } => {
                let width = match precision {
                    Precision::Binary64 => 8,
                    Precision::Binary32 => 4,
                };
                let mut buf = vec![0u8; len * self.n * width];
                reader.read_exact(&mut buf).map_err(|_| {
                    IngestError::Format("payload shorter than the header promises".into())
                })?;
                let values: Vec<f64> = match precision {
                    Precision::Binary64 => buf
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                    Precision::Binary32 => buf
                        .chunks_exact(4)
                        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
                        .collect(),
                };
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(IngestError::NonFinite);
                }
                Array2::from_shape_vec((len, self.n), values)
                    .map_err(|e| IngestError::Format(e.to_string()))?
            }
            Source::Memory(a) => a.slice(ndarray::s![start..start + len, ..]).to_owned(),
        };
        self.next_row += len;
        Ok(Some(LinearUpdate::RowBlock { start, rows }))
    }
}

pub fn detect_format(path: &Path) -> Result<FileFormat, IngestError> {
    let mut head = [0u8; 4];
    let mut f = File::open(path)?;
    let got = f.read(&mut head)?;
    if got == 0 {
        return Err(IngestError::Format("empty file".into()));
    }
    if got == 4 && &head == SPIM_MAGIC {
        Ok(FileFormat::Spim)
    } else if head[..got].starts_with(b"%%") || head[0] == b'%' {
        Ok(FileFormat::MatrixMarket)
    } else {
        Err(IngestError::Format("unrecognized file header".into()))
    }
}

pub fn read_row_blocks(path: &Path, block_rows: Option<usize>) -> Result<RowBlockReader, IngestError> {
    match detect_format(path)? {
        FileFormat::Spim => open_spim(path, block_rows),
        FileFormat::MatrixMarket => {
            let a = read_matrix_market(path)?;
            let (m, n) = a.dim();
            let block = block_rows.unwrap_or_else(|| default_block_rows(n)).max(1);
            Ok(RowBlockReader { m, n, block, next_row: 0, source: Source::Memory(a) })
        }
    }
}

fn open_spim(path: &Path, block_rows: Option<usize>) -> Result<RowBlockReader, IngestError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(file);
    let mut header = [0u8; SPIM_HEADER];
    reader
        .read_exact(&mut header)
        .map_err(|_| IngestError::Format("truncated SPIM header".into()))?;
    if &header[0..4] != SPIM_MAGIC {
        return Err(IngestError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != SPIM_VERSION {
        return Err(IngestError::Format(format!("unsupported SPIM version {version}")));
    }
    let precision = match header[6] {
        0 => Precision::Binary64,
        1 => Precision::Binary32,
        code => return Err(IngestError::Format(format!("unknown element code {code}"))),
    };
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    if rows == 0 || cols == 0 {
        return Err(IngestError::Format(format!("header declares an empty {rows}x{cols} matrix")));
    }
    let width = if precision == Precision::Binary64 { 8u64 } else { 4 };
    let payload = rows
        .checked_mul(cols)
        .and_then(|x| x.checked_mul(width))
        .and_then(|x| x.checked_add(SPIM_HEADER as u64))
        .ok_or_else(|| IngestError::Overflow(format!("{rows}x{cols} payload size")))?;
    if payload != file_len {
        return Err(IngestError::Format(format!(
            "header promises {payload} bytes but the file has {file_len}"
        )));
    }
    let m = usize::try_from(rows).map_err(|_| IngestError::Overflow(format!("{rows} rows")))?;
    let n = usize::try_from(cols).map_err(|_| IngestError::Overflow(format!("{cols} cols")))?;
    let block = block_rows.unwrap_or_else(|| default_block_rows(n)).max(1);
    Ok(RowBlockReader { m, n, block, next_row: 0, source: Source::Spim { reader, precision } })
}

/// Reads a whole matrix file into memory.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, IngestError> {
    match detect_format(path)? {
        FileFormat::MatrixMarket => read_matrix_market(path),
        FileFormat::Spim => {
            let mut reader = open_spim(path, None)?;
            let (m, n) = reader.dims();
            let mut a = Array2::zeros((m, n));
            while let Some(LinearUpdate::RowBlock { start, rows }) = reader.next_block()? {
                a.slice_mut(ndarray::s![start..start + rows.nrows(), ..]).assign(&rows);
            }
            Ok(a)
        }
    }
}

fn read_matrix_market(path: &Path) -> Result<Array2<f64>, IngestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let banner = lines
        .next()
        .ok_or_else(|| IngestError::Format("empty file".into()))??
        .to_ascii_lowercase();
    let words: Vec<&str> = banner.split_whitespace().collect();
    if words.len() < 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(IngestError::Format("missing %%MatrixMarket matrix banner".into()));
    }
    let coordinate = match words[2] {
        "coordinate" => true,
        "array" => false,
        other => return Err(IngestError::Format(format!("unsupported layout {other}"))),
    };
    if !matches!(words[3], "real" | "integer" | "double") {
        return Err(IngestError::Format(format!("unsupported field {}", words[3])));
    }
    let symmetric = match words[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(IngestError::Format(format!("unsupported symmetry {other}"))),
    };

    let mut body = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('%') {
            body.push(line);
        }
    }
    let mut it = body.iter();
    let size_line = it.next().ok_or_else(|| IngestError::Format("missing size line".into()))?;
    let size: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| IngestError::Format(format!("bad size token {t}"))))
        .collect::<Result<_, _>>()?;
    let (m, n) = match size.as_slice() {
        [m, n] if !coordinate => (*m, *n),
        [m, n, _] if coordinate => (*m, *n),
        _ => return Err(IngestError::Format(format!("malformed size line {size_line:?}"))),
    };
    if m == 0 || n == 0 {
        return Err(IngestError::Format(format!("empty {m}x{n} matrix")));
    }
    m.checked_mul(n).ok_or_else(|| IngestError::Overflow(format!("{m}x{n}")))?;
    let mut a = Array2::zeros((m, n));
    let parse = |t: &str| -> Result<f64, IngestError> {
        let v: f64 = t.parse().map_err(|_| IngestError::Format(format!("bad value {t}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(IngestError::NonFinite)
        }
    };
    if coordinate {
        let nnz = size[2];
        let mut count = 0;
        for line in it {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(IngestError::Format(format!("malformed entry {line:?}")));
            }
            let i: usize = tok[0].parse().map_err(|_| IngestError::Format(format!("bad index {}", tok[0])))?;
            let j: usize = tok[1].parse().map_err(|_| IngestError::Format(format!("bad index {}", tok[1])))?;
            if i == 0 || j == 0 || i > m || j > n {
                return Err(IngestError::Format(format!("index ({i}, {j}) out of range")));
            }
            let v = parse(tok[2])?;
            a[[i - 1, j - 1]] += v;
            if symmetric && i != j {
                a[[j - 1, i - 1]] += v;
            }
            count += 1;
        }
        if count != nnz {
            return Err(IngestError::Format(format!("expected {nnz} entries, found {count}")));
        }
    } else {
        // Column-major; symmetric files list the lower triangle only.
        let values: Vec<f64> = it
            .flat_map(|l| l.split_whitespace())
            .map(parse)
            .collect::<Result<_, _>>()?;
        let expected = if symmetric { n * (n + 1) / 2 } else { m * n };
        if values.len() != expected || (symmetric && m != n) {
            return Err(IngestError::Format(format!(
                "expected {expected} array values, found {}",
                values.len()
            )));
        }
        let mut k = 0;
        for j in 0..n {
            let first = if symmetric { j } else { 0 };
            for i in first..m {
                a[[i, j]] = values[k];
                if symmetric {
                    a[[j, i]] = values[k];
                }
                k += 1;
            }
        }
    }
    Ok(a)
}
