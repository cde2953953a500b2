//! Readers and writers for every emitted file.
//!
//! Floats are written in Rust's shortest round-trip form, so each file reads
//! back bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::diagnostics::{CascadeLevel, HolderFit, OscillationRecord};
use crate::error::{Error, Result};
use crate::mesh::{DensityField, Grid, Trajectory};
use crate::solver::{EnergyLedger, LedgerRow};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{what}: cannot parse {s:?}: {e}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "expected header {:?}, found {:?}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field_header(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["index", "x", "value"]
    } else {
        &["index", "x", "y", "value"]
    }
}

pub fn write_field_csv<W: Write>(field: &DensityField, out: W) -> Result<()> {
    let grid = field.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(field_header(grid.dim())).map_err(csv_err)?;
    for (i, v) in field.values().iter().enumerate() {
        let c = grid.center(i);
        let mut row = vec![i.to_string(), fmt_f64(c[0])];
        if grid.dim() == 2 {
            row.push(fmt_f64(c[1]));
        }
        row.push(fmt_f64(*v));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`]; coordinates must match `grid`.
pub fn read_field_csv<R: Read>(input: R, grid: &Grid) -> Result<DensityField> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, field_header(grid.dim()))?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let idx: usize = rec[0]
            .parse()
            .map_err(|e| Error::Parse(format!("index {:?}: {e}", &rec[0])))?;
        if idx >= grid.len() {
            return Err(Error::Parse(format!(
                "index {idx} outside {} cells",
                grid.len()
            )));
        }
        let c = grid.center(idx);
        for a in 0..grid.dim() {
            let x = parse_f64(&rec[1 + a], "coordinate")?;
            if (x - c[a]).abs() > 1e-9 * (1.0 + c[a].abs()) {
                return Err(Error::Parse(format!(
                    "cell {idx}: coordinate {x} does not match grid centre {}",
                    c[a]
                )));
            }
        }
        values[idx] = parse_f64(&rec[1 + grid.dim()], "value")?;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::Parse(format!(
            "{seen} rows for {} cells",
            grid.len()
        )));
    }
    DensityField::new(grid.clone(), values)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryHeader {
    format: String,
    grid: Grid,
    times: Vec<f64>,
    dtype: String,
}

const TRAJECTORY_FORMAT: &str = "satflow-trajectory-v1";
const DTYPE: &str = "f64-le";

/// One JSON header line, then every snapshot's values as little-endian `f64`
/// in snapshot-major, row-major order.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header = TrajectoryHeader {
        format: TRAJECTORY_FORMAT.into(),
        grid: traj.grid().clone(),
        times: traj.times().to_vec(),
        dtype: DTYPE.into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for f in traj.fields() {
        for v in f {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = BufReader::new(input);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: TrajectoryHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Parse(format!("trajectory header: {e}")))?;
    if header.format != TRAJECTORY_FORMAT || header.dtype != DTYPE {
        return Err(Error::Parse(format!(
            "unsupported trajectory {} / {}",
            header.format, header.dtype
        )));
    }
    let grid = Grid::new(
        &header
            .grid
            .lower()
            .iter()
            .zip(header.grid.upper())
            .map(|(&a, &b)| (a, b))
            .collect::<Vec<_>>(),
        header.grid.cells(),
    )?;
    let n = grid.len();
    let mut buf = vec![0u8; n * 8];
    let mut fields = Vec::with_capacity(header.times.len());
    for k in 0..header.times.len() {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Parse(format!("snapshot {k}: {e}")))?;
        fields.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Parse(
            "trailing bytes after the last snapshot".into(),
        ));
    }
    Trajectory::from_parts(grid, header.times, fields)
}

pub const LEDGER_HEADER: [&str; 7] = ["t", "dt", "mass", "F", "D", "min_rho", "max_rho"];

pub fn write_ledger<W: Write>(ledger: &EnergyLedger, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_HEADER).map_err(csv_err)?;
    for r in &ledger.rows {
        w.write_record(
            [
                r.t,
                r.dt,
                r.mass,
                r.free_energy,
                r.dissipation,
                r.min_rho,
                r.max_rho,
            ]
            .map(fmt_f64),
        )
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ledger<R: Read>(input: R) -> Result<EnergyLedger> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &LEDGER_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let v: Vec<f64> = (0..7)
            .map(|i| parse_f64(&rec[i], LEDGER_HEADER[i]))
            .collect::<Result<_>>()?;
        rows.push(LedgerRow {
            t: v[0],
            dt: v[1],
            mass: v[2],
            free_energy: v[3],
            dissipation: v[4],
            min_rho: v[5],
            max_rho: v[6],
        });
    }
    Ok(EnergyLedger { rows })
}

pub const OSCILLATION_HEADER: [&str; 4] = ["k", "r", "theta", "omega"];

/// Per-level rows `k,r,theta,omega`; `theta` is empty when undefined.
pub fn write_oscillation_csv<W: Write>(rec: &OscillationRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OSCILLATION_HEADER).map_err(csv_err)?;
    for l in &rec.levels {
        w.write_record([
            l.k.to_string(),
            fmt_f64(l.radius),
            l.theta.map(fmt_f64).unwrap_or_default(),
            fmt_f64(l.omega),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `(k, r, theta, omega)` rows.
pub type OscillationRow = (usize, f64, Option<f64>, f64);

pub fn read_oscillation_csv<R: Read>(input: R) -> Result<Vec<OscillationRow>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &OSCILLATION_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let k = rec[0]
            .parse()
            .map_err(|e| Error::Parse(format!("level {:?}: {e}", &rec[0])))?;
        let theta = if rec[2].is_empty() {
            None
        } else {
            Some(parse_f64(&rec[2], "theta")?)
        };
        out.push((
            k,
            parse_f64(&rec[1], "r")?,
            theta,
            parse_f64(&rec[3], "omega")?,
        ));
    }
    Ok(out)
}

/// JSON summary of a cascade fit. `alpha`, `Gamma` and `residual` are null
/// when no fit was possible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationSummary {
    pub alpha: Option<f64>,
    #[serde(rename = "Gamma")]
    pub gamma_const: Option<f64>,
    pub residual: Option<f64>,
    pub levels: usize,
    pub monotone: bool,
    pub truncated: bool,
    pub radius_dominated_levels: Vec<usize>,
}

impl OscillationSummary {
    pub fn from_record(rec: &OscillationRecord) -> Self {
        let fit: Option<&HolderFit> = rec.fit.as_ref();
        Self {
            alpha: fit.map(|f| f.alpha),
            gamma_const: fit.map(|f| f.gamma_const),
            residual: fit.map(|f| f.residual),
            levels: rec.levels.len(),
            monotone: rec.is_monotone(),
            truncated: rec.truncated,
            radius_dominated_levels: rec
                .levels
                .iter()
                .filter(|l: &&CascadeLevel| l.radius_dominated)
                .map(|l| l.k)
                .collect(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(input: R) -> Result<T> {
    Ok(serde_json::from_reader(input)?)
}

pub const DISTANCE_HEADER: [&str; 2] = ["t", "l1_distance"];

pub fn write_distance_csv<W: Write>(series: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DISTANCE_HEADER).map_err(csv_err)?;
    for (t, d) in series {
        w.write_record([fmt_f64(*t), fmt_f64(*d)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distance_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &DISTANCE_HEADER)?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok((parse_f64(&rec[0], "t")?, parse_f64(&rec[1], "l1_distance")?))
        })
        .collect()
}

/// Two-column `(coordinate, value)` table without header; coordinates must
/// increase strictly. Lines starting with `#` are skipped.
pub fn read_table_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let (mut coords, mut values) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!(
                "row {}: expected 2 columns, found {}",
                line + 1,
                rec.len()
            )));
        }
        let x = parse_f64(&rec[0], "coordinate")?;
        if coords.last().is_some_and(|&prev| !(x > prev)) {
            return Err(Error::Parse(format!(
                "row {}: coordinate {x} does not increase",
                line + 1
            )));
        }
        coords.push(x);
        values.push(parse_f64(&rec[1], "value")?);
    }
    if coords.len() < 2 {
        return Err(Error::Parse("a table needs at least two rows".into()));
    }
    Ok((coords, values))
}

/// Opens `path` for writing, creating parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}
