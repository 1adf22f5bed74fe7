//! On-disk formats: CSV tables, flat binary field snapshots with a text
//! sidecar, and JSON documents.
//!
//! A snapshot `name.bin` holds `nx·ny` little-endian `f64` values in row-major
//! `[ix][iy]` order. Its sidecar `name.txt` holds `key = value` lines naming
//! the grid and the time.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// One file written by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub kind: String,
    /// Data rows (CSV) or values (snapshot); absent for free-form files.
    pub rows: Option<usize>,
    pub bytes: u64,
}

impl OutputRecord {
    /// Re-reads the file and checks byte and row counts.
    pub fn verify(&self) -> Result<()> {
        let meta = fs::metadata(&self.path).map_err(|e| Error::io(&self.path, e))?;
        if meta.len() != self.bytes {
            return Err(Error::Parse(format!(
                "{} has {} bytes, manifest records {}",
                self.path.display(),
                meta.len(),
                self.bytes
            )));
        }
        if let (Some(rows), "csv") = (self.rows, self.kind.as_str()) {
            let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
            let found = text.lines().count().saturating_sub(1);
            if found != rows {
                return Err(Error::Parse(format!(
                    "{} has {found} rows, manifest records {rows}",
                    self.path.display()
                )));
            }
        }
        Ok(())
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<u64> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<OutputRecord> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let bytes = write_bytes(path, text.as_bytes())?;
    Ok(OutputRecord {
        path: path.to_path_buf(),
        kind: "csv".into(),
        rows: Some(rows.len()),
        bytes,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, kind: &str) -> Result<OutputRecord> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    let bytes = write_bytes(path, text.as_bytes())?;
    Ok(OutputRecord {
        path: path.to_path_buf(),
        kind: kind.into(),
        rows: None,
        bytes,
    })
}

pub fn write_text(path: &Path, text: &str, kind: &str) -> Result<OutputRecord> {
    let bytes = write_bytes(path, text.as_bytes())?;
    Ok(OutputRecord {
        path: path.to_path_buf(),
        kind: kind.into(),
        rows: None,
        bytes,
    })
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("txt")
}

/// Writes `bin` and its sidecar header; returns both records.
pub fn write_snapshot(bin: &Path, field: &ScalarField, time: f64, name: &str) -> Result<[OutputRecord; 2]> {
    let g = field.grid();
    let mut bytes = Vec::with_capacity(8 * g.cell_count());
    for v in field.values().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let n = write_bytes(bin, &bytes)?;
    let header = format!(
        "field = {name}\nnx = {}\nny = {}\nt = {time}\ndtype = f64-le\norder = row-major [ix][iy]\nx = cell centres (i+0.5)/nx\ny = cell centres (j+0.5)/ny\n",
        g.nx(),
        g.ny()
    );
    let side = sidecar_path(bin);
    let m = write_bytes(&side, header.as_bytes())?;
    Ok([
        OutputRecord {
            path: bin.to_path_buf(),
            kind: "snapshot".into(),
            rows: Some(g.cell_count()),
            bytes: n,
        },
        OutputRecord {
            path: side,
            kind: "snapshot-header".into(),
            rows: None,
            bytes: m,
        },
    ])
}

/// Reads a snapshot written by [`write_snapshot`]; returns the field and its time.
pub fn read_snapshot(bin: &Path) -> Result<(ScalarField, f64)> {
    let side = sidecar_path(bin);
    let header = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut nx = None;
    let mut ny = None;
    let mut t = 0.0;
    for line in header.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        let bad = |_| Error::Parse(format!("{}: bad value for {k}: {v}", side.display()));
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(bad)?),
            "ny" => ny = Some(v.parse::<usize>().map_err(bad)?),
            "t" => t = v.parse::<f64>().map_err(|_| Error::Parse(format!("{}: bad time {v}", side.display())))?,
            _ => {}
        }
    }
    let (Some(nx), Some(ny)) = (nx, ny) else {
        return Err(Error::Parse(format!("{}: header lacks nx/ny", side.display())));
    };
    let grid = GridSpec::new(nx, ny)?;
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() != 8 * nx * ny {
        return Err(Error::Parse(format!(
            "{} holds {} bytes, header implies {}",
            bin.display(),
            bytes.len(),
            8 * nx * ny
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let values = Array2::from_shape_vec((nx, ny), vals).map_err(|e| Error::Parse(e.to_string()))?;
    Ok((ScalarField::from_values(grid, values)?, t))
}
