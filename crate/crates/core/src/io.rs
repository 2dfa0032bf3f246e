//! File formats: field snapshots, the diagnostics time series and the run
//! summary that `check` reads back.
//!
//! A snapshot starts with one text line `dim nx ny [nz] lx ly [lz] t`,
//! followed by one record per cell in storage order (x fastest). A record is
//! `n, c, P, u_1 .. u_dim` with the velocity averaged from faces to the cell
//! center. Records are either CSV lines or little-endian `f64` values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::SnapshotFormat;
use crate::diagnostics::{csv_header, DiagnosticsRecord, RunStatus};
use crate::stepper::SimState;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), message: message.into() }
}

/// Cell data of one state, as stored in a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub n_cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub t: f64,
    pub n: Vec<f64>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
    /// Cell-averaged velocity, one vector per axis.
    pub u: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn of(state: &SimState) -> Self {
        let grid = state.grid();
        let dim = grid.dim();
        Snapshot {
            dim,
            n_cells: grid.n_cells()[..dim].to_vec(),
            lengths: grid.lengths()[..dim].to_vec(),
            t: state.t,
            n: state.n.values.clone(),
            c: state.c.values.clone(),
            p: state.p.values.clone(),
            u: (0..dim).map(|a| state.u.cell_average(a).values).collect(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.n_cells.iter().product()
    }

    fn header(&self) -> String {
        let mut parts: Vec<String> = vec![self.dim.to_string()];
        parts.extend(self.n_cells.iter().map(|n| n.to_string()));
        parts.extend(self.lengths.iter().map(|l| format!("{l:e}")));
        parts.push(format!("{:e}", self.t));
        parts.join(" ")
    }

    fn record(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        [self.n[i], self.c[i], self.p[i]].into_iter().chain(self.u.iter().map(move |u| u[i]))
    }
}

pub fn write_snapshot(path: &Path, snap: &Snapshot, format: SnapshotFormat) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{}", snap.header())?;
        for i in 0..snap.num_cells() {
            match format {
                SnapshotFormat::Csv => {
                    let row: Vec<String> = snap.record(i).map(|v| format!("{v:e}")).collect();
                    writeln!(w, "{}", row.join(","))?;
                }
                SnapshotFormat::Bin => {
                    for v in snap.record(i) {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

/// Reads either snapshot format; `.bin` files are binary, anything else CSV.
pub fn read_snapshot(path: &Path) -> Result<Snapshot, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| format_err(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| format_err(path, "header is not text"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let dim: usize = tokens.first().and_then(|t| t.parse().ok()).ok_or_else(|| format_err(path, "bad dimension in header"))?;
    if !(dim == 2 || dim == 3) || tokens.len() != 2 * dim + 2 {
        return Err(format_err(path, format!("header `{header}` does not match `dim nx ny [nz] lx ly [lz] t`")));
    }
    let bad = |what: &str| format_err(path, format!("bad {what} in header `{header}`"));
    let n_cells = tokens[1..=dim].iter().map(|t| t.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("cell count"))?;
    let lengths = tokens[dim + 1..=2 * dim].iter().map(|t| t.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("length"))?;
    let t: f64 = tokens[2 * dim + 1].parse().map_err(|_| bad("time"))?;
    let cells: usize = n_cells.iter().product();
    let width = 3 + dim;
    let rest = &bytes[nl + 1..];

    let values: Vec<f64> = if path.extension().is_some_and(|e| e == "bin") {
        if rest.len() != cells * width * 8 {
            return Err(format_err(path, format!("expected {} bytes of records, found {}", cells * width * 8, rest.len())));
        }
        rest.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect()
    } else {
        let text = std::str::from_utf8(rest).map_err(|_| format_err(path, "records are not text"))?;
        let mut out = Vec::with_capacity(cells * width);
        let mut rows = 0;
        for (k, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| format_err(path, format!("line {}: unparsable record", k + 2)))?;
            if row.len() != width {
                return Err(format_err(path, format!("line {}: expected {width} values, found {}", k + 2, row.len())));
            }
            out.extend(row);
            rows += 1;
        }
        if rows != cells {
            return Err(format_err(path, format!("expected {cells} records, found {rows}")));
        }
        out
    };
    let column = |k: usize| values.iter().skip(k).step_by(width).copied().collect::<Vec<f64>>();
    Ok(Snapshot { dim, n_cells, lengths, t, n: column(0), c: column(1), p: column(2), u: (0..dim).map(|a| column(3 + a)).collect() })
}

/// Appends rows to `diagnostics.csv`.
pub struct DiagnosticsWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", csv_header()).map_err(io_err(path))?;
        Ok(DiagnosticsWriter { path: path.to_path_buf(), out })
    }

    pub fn push(&mut self, record: &DiagnosticsRecord) -> Result<(), IoError> {
        writeln!(self.out, "{}", record.csv_row()).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Verdict slot of the run summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Skipped => "skipped",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "pass" => Some(Verdict::Pass),
            "fail" => Some(Verdict::Fail),
            "skipped" => Some(Verdict::Skipped),
            _ => None,
        }
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::DtAborted => "dt-aborted",
        RunStatus::InvariantAborted => "invariant-aborted",
    }
}

fn status_from_name(s: &str) -> Option<RunStatus> {
    match s {
        "completed" => Some(RunStatus::Completed),
        "dt-aborted" => Some(RunStatus::DtAborted),
        "invariant-aborted" => Some(RunStatus::InvariantAborted),
        _ => None,
    }
}

/// Everything `check` needs besides the time series itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub status: RunStatus,
    pub steps: u64,
    pub t_final: f64,
    pub n0_mass: f64,
    pub c0_integral: f64,
    pub c0_half_l2sq: f64,
    pub slack: f64,
    pub transient_fraction: f64,
    /// Absolute slack for `sup_u` in the late-growth test.
    pub velocity_floor: f64,
    pub cumulative_bounds: Verdict,
    pub boundedness: Verdict,
}

pub const SUMMARY_FILE: &str = "run_summary.txt";

impl RunSummary {
    pub fn to_text(&self) -> String {
        format!(
            "status = {}\nsteps = {}\nt_final = {:e}\nn0_mass = {:e}\nc0_integral = {:e}\nc0_half_l2sq = {:e}\n\
             slack = {:e}\ntransient_fraction = {:e}\nvelocity_floor = {:e}\ncumulative_bounds = {}\nboundedness = {}\n",
            status_name(self.status),
            self.steps,
            self.t_final,
            self.n0_mass,
            self.c0_integral,
            self.c0_half_l2sq,
            self.slack,
            self.transient_fraction,
            self.velocity_floor,
            self.cumulative_bounds.name(),
            self.boundedness.name()
        )
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).cloned().ok_or_else(|| format!("missing `{k}`"));
        let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| format!("`{k}` is not a number"));
        let verdict = |k: &str| get(k).and_then(|v| Verdict::from_name(&v).ok_or_else(|| format!("bad `{k}` value {v:?}")));
        Ok(RunSummary {
            status: get("status").and_then(|s| status_from_name(&s).ok_or_else(|| format!("unknown status {s:?}")))?,
            steps: get("steps")?.parse().map_err(|_| "`steps` is not an integer".to_string())?,
            t_final: num("t_final")?,
            n0_mass: num("n0_mass")?,
            c0_integral: num("c0_integral")?,
            c0_half_l2sq: num("c0_half_l2sq")?,
            slack: num("slack")?,
            transient_fraction: num("transient_fraction")?,
            velocity_floor: num("velocity_floor")?,
            cumulative_bounds: verdict("cumulative_bounds")?,
            boundedness: verdict("boundedness")?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        RunSummary::parse(&text).map_err(|m| format_err(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Grid, ScalarField, VectorField};

    fn state() -> SimState {
        let g = Grid::new(&[5, 4], &[1.0, 0.6]).unwrap();
        let n = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let c = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin().abs() / 7.0);
        let u = VectorField::from_fn(g, |a, x| (a as f64 + 1.0) * x[0] - x[1] / 3.0);
        let mut s = SimState::new(n, c, u);
        s.p = ScalarField::from_fn(g, |x| x[1] - 0.3);
        s.t = 0.25;
        s
    }

    #[test]
    fn snapshot_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let snap = Snapshot::of(&state());
        for (name, format) in [("s.csv", SnapshotFormat::Csv), ("s.bin", SnapshotFormat::Bin)] {
            let path = dir.path().join(name);
            write_snapshot(&path, &snap, format).unwrap();
            assert_eq!(read_snapshot(&path).unwrap(), snap, "{name}");
        }
        let text = fs::read_to_string(dir.path().join("s.csv")).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "2 5 4 1e0 6e-1 2.5e-1");
        assert_eq!(text.lines().count(), 21);
        assert_eq!(fs::metadata(dir.path().join("s.bin")).unwrap().len() as usize, first.len() + 1 + 20 * 5 * 8);
    }

    #[test]
    fn truncated_snapshots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "2 4 4 1 1 0\n1,2,3,4,5\n").unwrap();
        let err = read_snapshot(&path).unwrap_err().to_string();
        assert!(err.contains("expected 16 records, found 1"), "{err}");
        fs::write(&path, "2 4 4 1 1\n").unwrap();
        assert!(read_snapshot(&path).is_err());
    }

    #[test]
    fn summary_round_trip() {
        let s = RunSummary {
            status: RunStatus::DtAborted,
            steps: 12,
            t_final: 0.1 + 0.2,
            n0_mass: 1.0,
            c0_integral: 0.7,
            c0_half_l2sq: 1.0 / 3.0,
            slack: 0.05,
            transient_fraction: 0.3,
            velocity_floor: 7.8125e-11,
            cumulative_bounds: Verdict::Pass,
            boundedness: Verdict::Skipped,
        };
        assert_eq!(RunSummary::parse(&s.to_text()).unwrap(), s);
        assert!(RunSummary::parse("status = done\n").is_err());
    }
}
