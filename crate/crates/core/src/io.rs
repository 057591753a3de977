//! Text file formats: sweeps, dataset manifests, reports, ground-truth and
//! plot tables.
//!
//! Sweeps are stored losslessly (shortest round-trip decimal form). Reports
//! use 9 significant digits. Zero magnitudes in dB are written as `-inf`.
//! Every writer goes through a temporary file in the target directory that
//! is renamed into place, so readers never observe a partial file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{MeasurementPair, PlausibilityBounds};
use crate::spectral::{FrequencyGrid, Role, Sweep, SweepMeta};
use crate::synth::{GridSpec, ScenarioSpec, TruthRow};

/// Largest allowed distance between a file's frequency column and the grid.
pub const GRID_TOLERANCE_GHZ: f64 = 1e-9;

const SWEEP_HEADER: [&str; 3] = ["f_GHz", "re", "im"];

/// Write `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Shortest decimal form that parses back to the same value.
fn lossless(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        special(x).to_string()
    }
}

fn special(x: f64) -> &'static str {
    if x.is_nan() {
        "nan"
    } else if x > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

/// Nine significant digits; fixed notation for moderate exponents.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return special(x).to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("exponent form");
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        sci
    }
}

/// Parse a number, accepting `inf`, `-inf` and `nan`.
pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" | "NaN" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

/// Write a sweep with its metadata block.
pub fn write_sweep(sweep: &Sweep, path: &Path) -> Result<()> {
    write_atomic(path, sweep_to_string(sweep).as_bytes())
}

pub fn sweep_to_string(sweep: &Sweep) -> String {
    let grid = sweep.grid();
    let meta = sweep.meta();
    let mut out = String::with_capacity(64 * sweep.len() + 256);
    let _ = writeln!(out, "# f_start_ghz={}", lossless(grid.f_start()));
    let _ = writeln!(out, "# f_end_ghz={}", lossless(grid.f_end()));
    let _ = writeln!(out, "# n_points={}", grid.n_points());
    let _ = writeln!(out, "# timestamp_s={}", lossless(meta.timestamp_s));
    let _ = writeln!(out, "# role={}", meta.role.as_str());
    if let Some(beta) = meta.bistatic_angle_deg {
        let _ = writeln!(out, "# bistatic_angle_deg={}", lossless(beta));
    }
    if let Some(pol) = &meta.polarization {
        let _ = writeln!(out, "# polarization={pol}");
    }
    out.push_str(&SWEEP_HEADER.join("\t"));
    out.push('\n');
    for (f, z) in grid.values().iter().zip(sweep.samples()) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            lossless(*f),
            lossless(z.re),
            lossless(z.im)
        );
    }
    out
}

#[derive(Debug, Default)]
struct SweepHeader {
    f_start: Option<f64>,
    f_end: Option<f64>,
    n_points: Option<usize>,
    timestamp_s: Option<f64>,
    role: Option<Role>,
    bistatic_angle_deg: Option<f64>,
    polarization: Option<String>,
}

/// Read a sweep; the grid comes from the metadata block, or failing that is
/// derived from the first and last frequency.
pub fn read_sweep(path: &Path) -> Result<Sweep> {
    parse_sweep(&read_text(path)?, path, None)
}

/// Read a sweep that must lie on `grid`.
pub fn read_sweep_on(path: &Path, grid: &FrequencyGrid) -> Result<Sweep> {
    parse_sweep(&read_text(path)?, path, Some(grid))
}

pub fn parse_sweep(text: &str, path: &Path, expected: Option<&FrequencyGrid>) -> Result<Sweep> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut header = SweepHeader::default();
    let mut header_line = None;
    let mut rows: Vec<(usize, f64, Complex64)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if header_line.is_some() {
                continue;
            }
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                parse_f64(v)
                    .ok_or_else(|| parse_err(line_no, format!("bad value for {key}: {v:?}")))
            };
            match key {
                "f_start_ghz" => header.f_start = Some(num(value)?),
                "f_end_ghz" => header.f_end = Some(num(value)?),
                "n_points" => {
                    header.n_points = Some(value.parse().map_err(|_| {
                        parse_err(line_no, format!("bad value for n_points: {value:?}"))
                    })?)
                }
                "timestamp_s" => header.timestamp_s = Some(num(value)?),
                "role" => {
                    header.role = Some(
                        Role::parse(value)
                            .ok_or_else(|| parse_err(line_no, format!("unknown role {value:?}")))?,
                    )
                }
                "bistatic_angle_deg" => header.bistatic_angle_deg = Some(num(value)?),
                "polarization" => header.polarization = Some(value.to_string()),
                _ => {}
            }
            continue;
        }
        if header_line.is_none() {
            if fields(line) != SWEEP_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header {:?}", SWEEP_HEADER.join("\t")),
                ));
            }
            header_line = Some(line_no);
            continue;
        }
        let cols = fields(line);
        if cols.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 columns, found {}", cols.len()),
            ));
        }
        let mut vals = [0.0; 3];
        for (v, c) in vals.iter_mut().zip(&cols) {
            *v = c
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("not a number: {c:?}")))?;
        }
        rows.push((line_no, vals[0], Complex64::new(vals[1], vals[2])));
    }

    let Some(header_no) = header_line else {
        return Err(parse_err(0, "missing header row".into()));
    };
    if rows.len() < 2 {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: header
                .n_points
                .or(expected.map(FrequencyGrid::n_points))
                .unwrap_or(2),
            actual: rows.len(),
        });
    }
    let violation = |line: usize, msg: String| Error::GridViolation {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for w in rows.windows(2) {
        if !(w[1].1 > w[0].1) {
            return Err(violation(
                w[1].0,
                "frequency column is not increasing".into(),
            ));
        }
    }

    let grid = match expected {
        Some(g) => {
            if let Some(n) = header.n_points {
                if n != g.n_points() {
                    return Err(Error::RowCount {
                        path: path.to_path_buf(),
                        expected: g.n_points(),
                        actual: n,
                    });
                }
            }
            g.clone()
        }
        None => match (header.f_start, header.f_end, header.n_points) {
            (Some(a), Some(b), Some(n)) => {
                FrequencyGrid::new(a, b, n).map_err(|e| parse_err(header_no, e.to_string()))?
            }
            (_, _, declared) => {
                let n = declared.unwrap_or(rows.len());
                if n != rows.len() {
                    return Err(Error::RowCount {
                        path: path.to_path_buf(),
                        expected: n,
                        actual: rows.len(),
                    });
                }
                grid_from_ends(rows[0].1, rows[n - 1].1, n)
                    .map_err(|e| violation(rows[0].0, e.to_string()))?
            }
        },
    };
    if rows.len() != grid.n_points() {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: grid.n_points(),
            actual: rows.len(),
        });
    }
    for ((line, f, _), g) in rows.iter().zip(grid.values()) {
        if !((f - g).abs() <= GRID_TOLERANCE_GHZ) {
            return Err(violation(
                *line,
                format!("frequency {f} GHz is off the grid point {g} GHz"),
            ));
        }
    }

    let role = header
        .role
        .ok_or_else(|| parse_err(header_no, "missing metadata key role".into()))?;
    let meta = SweepMeta {
        timestamp_s: header.timestamp_s.unwrap_or(0.0),
        bistatic_angle_deg: header.bistatic_angle_deg,
        polarization: header.polarization,
        role,
    };
    let samples = rows.into_iter().map(|(_, _, z)| z).collect();
    Sweep::new(grid, samples, meta).map_err(|e| parse_err(header_no, e.to_string()))
}

/// Grid whose first and last points are `first` and `last`.
fn grid_from_ends(first: f64, last: f64, n: usize) -> Result<FrequencyGrid> {
    let nn = (n * n) as f64;
    let span = (last - first) * nn / (nn - 1.0);
    FrequencyGrid::new(first, first + span, n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub fg_path: PathBuf,
    pub bg_path: PathBuf,
}

/// JSON list of sweep pairs sharing one grid. Paths are relative to the
/// manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid: GridSpec,
    pub pairs: Vec<PairEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<PlausibilityBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let manifest: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.grid.build()?;
        if let Some(b) = &manifest.bounds {
            b.validate()?;
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Read every pair, in parallel. Each entry fails or succeeds on its own.
    pub fn read_pairs(&self, base_dir: &Path) -> Result<Vec<Result<MeasurementPair>>> {
        let grid = self.grid.build()?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        Ok(self
            .pairs
            .par_iter()
            .map(|entry| {
                let fg = read_sweep_on(&resolve(&entry.fg_path), &grid)?;
                let bg = read_sweep_on(&resolve(&entry.bg_path), &grid)?;
                MeasurementPair::new(fg, bg)
            })
            .collect())
    }
}

/// Directory a manifest's relative paths are resolved against.
pub fn manifest_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_scenario(spec: &ScenarioSpec, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(spec).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Which metadata keys the report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyColumn {
    TimeH,
    BetaDeg,
}

impl KeyColumn {
    pub fn name(self) -> &'static str {
        match self {
            KeyColumn::TimeH => "time_h",
            KeyColumn::BetaDeg => "beta_deg",
        }
    }
}

/// One line of a report. Pairs that failed carry NaN values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub index: usize,
    pub key: f64,
    pub eps_deg_per_ghz: f64,
    pub a: f64,
    pub b: f64,
    pub converged: bool,
    pub plausible: bool,
    pub peak_residue_conventional_db: f64,
    pub peak_residue_corrected_db: f64,
    pub improvement_db: f64,
}

impl ReportRow {
    pub fn failed(index: usize, key: f64) -> Self {
        Self {
            index,
            key,
            eps_deg_per_ghz: f64::NAN,
            a: f64::NAN,
            b: f64::NAN,
            converged: false,
            plausible: false,
            peak_residue_conventional_db: f64::NAN,
            peak_residue_corrected_db: f64::NAN,
            improvement_db: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub key_column: KeyColumn,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: usize = 10;

impl ReportFile {
    pub fn header(&self) -> String {
        [
            "index",
            self.key_column.name(),
            "eps_deg_per_ghz",
            "a",
            "b",
            "converged",
            "plausible",
            "peak_residue_conventional_db",
            "peak_residue_corrected_db",
            "improvement_db",
        ]
        .join("\t")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.index,
                format_sig9(r.key),
                format_sig9(r.eps_deg_per_ghz),
                format_sig9(r.a),
                format_sig9(r.b),
                r.converged,
                r.plausible,
                format_sig9(r.peak_residue_conventional_db),
                format_sig9(r.peak_residue_corrected_db),
                format_sig9(r.improvement_db),
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty report".into()))?;
        let head = fields(head);
        if head.len() != REPORT_COLUMNS {
            return Err(err(1, format!("expected {REPORT_COLUMNS} columns")));
        }
        let key_column = match head[1] {
            "time_h" => KeyColumn::TimeH,
            "beta_deg" => KeyColumn::BetaDeg,
            other => return Err(err(1, format!("unknown key column {other:?}"))),
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let c = fields(line);
            if c.len() != REPORT_COLUMNS {
                return Err(err(
                    n,
                    format!("expected {REPORT_COLUMNS} columns, found {}", c.len()),
                ));
            }
            let num = |s: &str| parse_f64(s).ok_or_else(|| err(n, format!("not a number: {s:?}")));
            let flag = |s: &str| parse_bool(s).ok_or_else(|| err(n, format!("not a flag: {s:?}")));
            rows.push(ReportRow {
                index: c[0]
                    .parse()
                    .map_err(|_| err(n, format!("bad index {:?}", c[0])))?,
                key: num(c[1])?,
                eps_deg_per_ghz: num(c[2])?,
                a: num(c[3])?,
                b: num(c[4])?,
                converged: flag(c[5])?,
                plausible: flag(c[6])?,
                peak_residue_conventional_db: num(c[7])?,
                peak_residue_corrected_db: num(c[8])?,
                improvement_db: num(c[9])?,
            });
        }
        Ok(Self { key_column, rows })
    }
}

pub fn truth_to_tsv(rows: &[TruthRow]) -> String {
    let mut out = String::from("index\ttime_h\teps_deg_per_ghz\ta\tb\tripple\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.index,
            lossless(r.time_h),
            lossless(r.params.eps_deg_per_ghz()),
            lossless(r.params.a),
            lossless(r.params.b),
            u8::from(r.ripple)
        );
    }
    out
}

/// Column-oriented numeric table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    /// One vector per column, all of equal length.
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        debug_assert!(self.data.first().is_none_or(|c| c.len() == values.len()));
        self.columns.push(name.into());
        self.data.push(values);
    }

    pub fn n_rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for r in 0..self.n_rows() {
            for (j, col) in self.data.iter().enumerate() {
                if j > 0 {
                    out.push('\t');
                }
                out.push_str(&format_sig9(col[r]));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty table".into()))?;
        let columns: Vec<String> = fields(head).into_iter().map(String::from).collect();
        let mut data = vec![Vec::new(); columns.len()];
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let c = fields(line);
            if c.len() != columns.len() {
                return Err(err(i + 1, format!("expected {} columns", columns.len())));
            }
            for (col, s) in data.iter_mut().zip(c) {
                col.push(parse_f64(s).ok_or_else(|| err(i + 1, format!("not a number: {s:?}")))?);
            }
        }
        Ok(Self { columns, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}

/// Unwrap a phase sequence in radians along its index.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (k, &p) in phase.iter().enumerate() {
        if k > 0 {
            let d = p - phase[k - 1];
            if d > PI {
                offset -= TAU * ((d - PI) / TAU).ceil();
            } else if d < -PI {
                offset += TAU * ((-d - PI) / TAU).ceil();
            }
        }
        out.push(p + offset);
    }
    out
}
