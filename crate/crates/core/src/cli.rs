//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input, 3 I/O failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::{
    manifest_dir, truth_to_tsv, unwrap_phase, write_atomic, write_sweep, DatasetManifest,
    KeyColumn, PairEntry, ReportFile, ReportRow, Table,
};
use crate::pipeline::{
    batch_process, subtract_conventional, subtract_corrected, CorrectionOptions, MeasurementPair,
    SubtractionMode, TrackKey,
};
use crate::spectral::{amplitude_db, to_impulse_response};
use crate::synth::synth_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable capping the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "DRIFTCAL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "driftcal",
    version,
    about = "Drift-corrected background subtraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subtract every pair of a dataset and write a report.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        /// Half-width of the fitted sample window around the background peak.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        /// Same as `--mode conventional`.
        #[arg(long)]
        no_correct: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write plot-ready tables.
    PlotData {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        what: PlotKind,
        /// Subtraction used by `ir-subtracted` and `params`.
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Conventional,
    PhaseOnly,
    Full,
}

impl From<Mode> for SubtractionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Conventional => SubtractionMode::Conventional,
            Mode::PhaseOnly => SubtractionMode::PhaseOnly,
            Mode::Full => SubtractionMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Ir,
    IrSubtracted,
    PhaseDev,
    MagDev,
    Params,
}

impl PlotKind {
    fn file_name(self) -> &'static str {
        match self {
            PlotKind::Ir => "ir.tsv",
            PlotKind::IrSubtracted => "ir_subtracted.tsv",
            PlotKind::PhaseDev => "phase_dev.tsv",
            PlotKind::MagDev => "mag_dev.tsv",
            PlotKind::Params => "params.tsv",
        }
    }
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_IO
            },
            message: e.to_string(),
        }
    }
}

/// Parse arguments, run, report errors on stderr and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match thread_count() {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn thread_count() -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth { scenario, out } => synth(&scenario, &out),
        Command::Fit {
            manifest,
            window,
            mode,
            no_correct,
            report,
        } => {
            let mode = if no_correct { Mode::Conventional } else { mode };
            fit(&manifest, window, mode, &report)
        }
        Command::PlotData {
            manifest,
            what,
            mode,
            window,
            out,
        } => plot_data(&manifest, what, mode, window, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(scenario: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let spec = crate::io::load_scenario(scenario)?;
    spec.validate()?;
    let data = synth_dataset(&spec)?;
    create_dir(out)?;
    let width = (data.pairs.len().saturating_sub(1))
        .to_string()
        .len()
        .max(4);
    let mut entries = Vec::with_capacity(data.pairs.len());
    for (i, pair) in data.pairs.iter().enumerate() {
        let fg = PathBuf::from(format!("fg_{i:0width$}.tsv"));
        let bg = PathBuf::from(format!("bg_{i:0width$}.tsv"));
        write_sweep(pair.fg(), &out.join(&fg))?;
        write_sweep(pair.bg(), &out.join(&bg))?;
        entries.push(PairEntry {
            fg_path: fg,
            bg_path: bg,
        });
    }
    let manifest = DatasetManifest {
        grid: spec.grid,
        pairs: entries,
        bounds: None,
        window: None,
    };
    manifest.save(&out.join("manifest.json"))?;
    write_atomic(&out.join("truth.tsv"), truth_to_tsv(&data.truth).as_bytes())?;
    Ok(())
}

struct LoadedDataset {
    manifest: DatasetManifest,
    pairs: Vec<Result<MeasurementPair>>,
}

fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::load(path)?;
    let pairs = manifest.read_pairs(&manifest_dir(path))?;
    Ok(LoadedDataset { manifest, pairs })
}

fn options_for(manifest: &DatasetManifest, mode: Mode, window: Option<usize>) -> CorrectionOptions {
    let mut options = CorrectionOptions::with_mode(mode.into());
    if let Some(w) = window.or(manifest.window) {
        options.window = w;
    }
    if let Some(b) = manifest.bounds {
        options.bounds = b;
    }
    options
}

/// Angle keys when every readable pair carries a bistatic angle.
fn key_column(pairs: &[Result<MeasurementPair>]) -> KeyColumn {
    let mut ok = pairs.iter().filter_map(|p| p.as_ref().ok()).peekable();
    if ok.peek().is_some() && ok.all(|p| matches!(p.key(), TrackKey::AngleDeg(_))) {
        KeyColumn::BetaDeg
    } else {
        KeyColumn::TimeH
    }
}

fn fit(
    manifest_path: &Path,
    window: Option<usize>,
    mode: Mode,
    report_path: &Path,
) -> std::result::Result<(), Failure> {
    let data = load_dataset(manifest_path)?;
    let options = options_for(&data.manifest, mode, window);
    let key_column = key_column(&data.pairs);

    let mut rows: Vec<ReportRow> = Vec::with_capacity(data.pairs.len());
    let mut ok_pairs = Vec::new();
    let mut ok_index = Vec::new();
    let mut warnings = 0usize;
    for (i, p) in data.pairs.into_iter().enumerate() {
        match p {
            Ok(pair) => {
                ok_index.push(i);
                ok_pairs.push(pair);
                rows.push(ReportRow::failed(i, f64::NAN));
            }
            Err(e) => {
                warnings += 1;
                eprintln!("warning: pair {i}: {e}");
                rows.push(ReportRow::failed(i, f64::NAN));
            }
        }
    }

    let batch = batch_process(&ok_pairs, &options);
    for ((&i, track), report) in ok_index.iter().zip(&batch.tracks).zip(&batch.reports) {
        let row = &mut rows[i];
        row.key = track.key.value();
        match report {
            Ok(r) => {
                row.eps_deg_per_ghz = track.eps_deg_per_ghz;
                row.a = track.a;
                row.b = track.b;
                row.converged = track.converged;
                row.plausible = track.plausible;
                row.peak_residue_conventional_db = r.conventional_peak_residue_db;
                row.peak_residue_corrected_db = r.peak_residue_db;
                row.improvement_db = r.improvement_db;
            }
            Err(e) => {
                warnings += 1;
                eprintln!("warning: pair {i}: {e}");
            }
        }
    }

    ReportFile { key_column, rows }.save(report_path)?;
    if warnings > 0 {
        eprintln!("{warnings} warning(s)");
    }
    Ok(())
}

fn db_column(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|z| amplitude_db(z.norm())).collect()
}

fn plot_data(
    manifest_path: &Path,
    what: PlotKind,
    mode: Mode,
    window: Option<usize>,
    out: &Path,
) -> std::result::Result<(), Failure> {
    let data = load_dataset(manifest_path)?;
    let options = options_for(&data.manifest, mode, window);
    let mut pairs = Vec::with_capacity(data.pairs.len());
    for (i, p) in data.pairs.into_iter().enumerate() {
        match p {
            Ok(pair) => pairs.push((i, pair)),
            Err(e) => eprintln!("warning: pair {i}: {e}"),
        }
    }
    if pairs.is_empty() {
        return Err(Failure {
            code: EXIT_VALIDATION,
            message: "no readable pairs in the manifest".into(),
        });
    }
    let grid = data.manifest.grid.build()?;
    let mut table = Table::new();
    match what {
        PlotKind::Ir => {
            let step = grid.delay_step_ns();
            table.push(
                "delay_ns",
                (0..grid.n_points()).map(|n| n as f64 * step).collect(),
            );
            let bg_ir = to_impulse_response(pairs[0].1.bg());
            table.push("bg_db", db_column(bg_ir.samples()));
            for (i, pair) in &pairs {
                let ir = to_impulse_response(pair.fg());
                table.push(format!("run_{i}_db"), db_column(ir.samples()));
            }
        }
        PlotKind::IrSubtracted => {
            let step = grid.delay_step_ns();
            table.push(
                "delay_ns",
                (0..grid.n_points()).map(|n| n as f64 * step).collect(),
            );
            for (i, pair) in &pairs {
                let report = match mode {
                    Mode::Conventional => subtract_conventional(pair),
                    _ => subtract_corrected(pair, &options),
                };
                match report {
                    Ok(r) => {
                        let bg_peak = to_impulse_response(pair.bg()).peak_magnitude();
                        let rel: Vec<f64> = r
                            .residual_ir
                            .samples()
                            .iter()
                            .map(|z| amplitude_db(z.norm() / bg_peak))
                            .collect();
                        table.push(format!("run_{i}_db"), rel);
                    }
                    Err(e) => eprintln!("warning: pair {i}: {e}"),
                }
            }
        }
        PlotKind::PhaseDev | PlotKind::MagDev => {
            table.push("f_GHz", grid.values().to_vec());
            let reference = pairs[0].1.fg().samples().to_vec();
            for (i, pair) in &pairs {
                let ratio: Vec<Complex64> = pair
                    .fg()
                    .samples()
                    .iter()
                    .zip(&reference)
                    .map(|(x, r)| x / r)
                    .collect();
                let values = if what == PlotKind::PhaseDev {
                    let phase: Vec<f64> = ratio.iter().map(|z| z.arg()).collect();
                    unwrap_phase(&phase)
                        .into_iter()
                        .map(f64::to_degrees)
                        .collect()
                } else {
                    db_column(&ratio)
                };
                table.push(format!("run_{i}"), values);
            }
        }
        PlotKind::Params => {
            let only: Vec<MeasurementPair> = pairs.iter().map(|(_, p)| p.clone()).collect();
            let batch = batch_process(&only, &options);
            let key_name = if only
                .iter()
                .all(|p| matches!(p.key(), TrackKey::AngleDeg(_)))
            {
                KeyColumn::BetaDeg
            } else {
                KeyColumn::TimeH
            };
            let tracks = &batch.tracks;
            let col = |f: &dyn Fn(&crate::pipeline::TrackPoint) -> f64| -> Vec<f64> {
                tracks.iter().map(f).collect()
            };
            table.push("index", pairs.iter().map(|(i, _)| *i as f64).collect());
            table.push(key_name.name(), col(&|t| t.key.value()));
            table.push("eps_deg_per_ghz", col(&|t| t.eps_deg_per_ghz));
            table.push("a", col(&|t| t.a));
            table.push("b", col(&|t| t.b));
            table.push("plausible", col(&|t| f64::from(u8::from(t.plausible))));
            table.push("converged", col(&|t| f64::from(u8::from(t.converged))));
            table.push("improvement_db", col(&|t| t.improvement_db));
        }
    }
    create_dir(out)?;
    table.save(&out.join(what.file_name()))?;
    Ok(())
}
