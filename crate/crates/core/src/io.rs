//! On-disk formats: binary field snapshots and CSV series.
//!
//! Snapshot: the ASCII line `MIXLAB-FIELD v1 n=<n>\n` followed by `n*n`
//! little-endian `f64` grid values, `x2` outer. CSV floats use the shortest
//! representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::field::{Grid, ScalarField};
use crate::keller_segel::KsRecord;
use crate::solver::{SeriesRecord, Trajectory};

const MAGIC: &str = "MIXLAB-FIELD v1 n=";

pub const SERIES_HEADER: [&str; 5] = ["t", "l2", "h_minus_1", "h1", "cum_dissipation"];

pub fn write_field<W: Write>(mut w: W, f: &ScalarField) -> Result<()> {
    writeln!(w, "{MAGIC}{}", f.grid().n())?;
    let mut buf = Vec::with_capacity(8 * f.values().len());
    for v in f.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_field<R: Read>(r: R) -> Result<ScalarField> {
    let mut r = BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let n: usize = header
        .strip_suffix('\n')
        .and_then(|h| h.strip_prefix(MAGIC))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| MixError::Format(format!("bad snapshot header {:?}", header.trim_end())))?;
    let grid = Grid::new(n)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(MixError::Format(format!(
            "snapshot body has {} bytes, expected {} for n={n}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ScalarField::from_values(grid, values)
}

pub fn save_field(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    write_field(BufWriter::new(File::create(path)?), f)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_field(File::open(path)?)
}

pub fn snapshot_file_name(index: usize, t: f64) -> String {
    format!("snap_{index}_t{t}.mlf")
}

fn csv_err(e: csv::Error) -> MixError {
    MixError::Format(e.to_string())
}

/// Serialize rows under their field names as the header.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_series_csv<W: Write>(w: W, series: &[SeriesRecord]) -> Result<()> {
    if series.is_empty() {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SERIES_HEADER).map_err(csv_err)?;
        wr.flush()?;
        return Ok(());
    }
    write_csv(w, series)
}

/// Read a trajectory series; the header must be exactly
/// `t,l2,h_minus_1,h1,cum_dissipation`.
pub fn read_series_csv<R: Read>(r: R) -> Result<Vec<SeriesRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(SERIES_HEADER.iter().copied()) {
        return Err(MixError::Format(format!(
            "series header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            SERIES_HEADER.join(",")
        )));
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| MixError::Format(format!("series row {}: {e}", i + 2)))
        })
        .collect()
}

pub fn load_series_csv(path: impl AsRef<Path>) -> Result<Vec<SeriesRecord>> {
    read_series_csv(File::open(path)?)
}

/// Writes `<stem>.csv` and the snapshots into `dir`; returns the paths written.
pub fn write_trajectory(dir: impl AsRef<Path>, stem: &str, traj: &Trajectory) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_series_csv(BufWriter::new(File::create(&csv_path)?), &traj.series)?;
    let mut written = vec![csv_path];
    if !traj.snapshots.is_empty() {
        let snap_dir = dir.join(format!("{stem}_snapshots"));
        std::fs::create_dir_all(&snap_dir)?;
        for s in &traj.snapshots {
            let p = snap_dir.join(snapshot_file_name(s.index, s.t));
            save_field(&p, &s.field)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Row of the Keller–Segel CSV.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsRow {
    pub t: f64,
    pub l2_theta: f64,
    pub max_density: f64,
    pub tail_fraction: f64,
    pub blowup: bool,
}

impl From<&KsRecord> for KsRow {
    fn from(r: &KsRecord) -> Self {
        KsRow {
            t: r.t,
            l2_theta: r.l2_theta,
            max_density: r.max_density,
            tail_fraction: r.tail_fraction,
            blowup: r.blowup,
        }
    }
}

pub fn write_ks_csv<W: Write>(w: W, series: &[KsRecord]) -> Result<()> {
    let rows: Vec<KsRow> = series.iter().map(KsRow::from).collect();
    write_csv(w, &rows)
}

/// Row of the Feynman–Kac oracle CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub x1: f64,
    pub x2: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub spectral_value: f64,
    pub abs_diff: f64,
}
