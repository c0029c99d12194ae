//! Matrix files.
//!
//! Binary layout: magic `GNRS`, `u32` version (1), `u64` rows, `u64` cols,
//! then `rows * cols` little-endian `f64` values in row-major order.
//!
//! CSV layout: a header line `rows=R,cols=C` followed by `R` lines of `C`
//! comma-separated values.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Real, Result};

pub const MAGIC: &[u8; 4] = b"GNRS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.bin` selects the binary format; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Binary,
            _ => Self::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Binary => "bin",
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "bin" | "binary" | "binary-f64" => Ok(Self::Binary),
            other => Err(Error::InvalidParameter(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn load_matrix<T: Real>(path: &Path, format: MatrixFormat) -> Result<DMatrix<T>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        MatrixFormat::Csv => read_csv(reader),
        MatrixFormat::Binary => read_binary(reader),
    }
}

pub fn save_matrix<T: Real>(m: &DMatrix<T>, path: &Path, format: MatrixFormat) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    match format {
        MatrixFormat::Csv => write_csv(m, &mut writer)?,
        MatrixFormat::Binary => write_binary(m, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

pub fn write_binary<T: Real, W: Write>(m: &DMatrix<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<T: Real, R: Read>(mut r: R) -> Result<DMatrix<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Malformed("bad magic bytes; not a GNRS matrix".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Malformed(format!("unsupported matrix file version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let cols = u64::from_le_bytes(u64buf) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Malformed("matrix header overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Dimension(format!(
            "header declares {rows}x{cols} but payload holds {} bytes",
            payload.len()
        )));
    }
    let values: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_csv<T: Real, W: Write>(m: &DMatrix<T>, mut w: W) -> Result<()> {
    writeln!(w, "rows={},cols={}", m.nrows(), m.ncols())?;
    let mut line = String::new();
    for r in 0..m.nrows() {
        line.clear();
        for c in 0..m.ncols() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&m[(r, c)].as_f64().to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_csv<T: Real, R: BufRead>(r: R) -> Result<DMatrix<T>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })??;
    let (rows, cols) = parse_header(&header)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut row_count = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let start = values.len();
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("`{}` is not a number", tok.trim()),
            })?;
            values.push(T::lit(v));
        }
        if values.len() - start != cols {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {cols} values, found {}", values.len() - start),
            });
        }
        row_count += 1;
    }
    if row_count != rows {
        return Err(Error::Dimension(format!(
            "header declares {rows} rows but file has {row_count}"
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parse {
        line: 1,
        message: format!("expected header `rows=R,cols=C`, found `{header}`"),
    };
    let mut rows = None;
    let mut cols = None;
    for part in header.trim().split(',') {
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        let v: usize = v.trim().parse().map_err(|_| bad())?;
        match k.trim() {
            "rows" => rows = Some(v),
            "cols" => cols = Some(v),
            _ => return Err(bad()),
        }
    }
    Ok((rows.ok_or_else(bad)?, cols.ok_or_else(bad)?))
}
