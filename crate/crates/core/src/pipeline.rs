//! Pairing, peak selection, fitting, corrected subtraction and residue
//! metrics, for single pairs and whole datasets.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{apply_correction, deg_to_rad, DriftParams, DriftProblem};
use crate::optimizer::{fit_problem, FitConfig, FitResult, SearchBounds};
use crate::spectral::{
    amplitude_db, peak_window, to_impulse_response_with, FourierPlan, ImpulseResponse, Sweep,
};

/// Foreground and background taken at the same angles and polarization.
#[derive(Debug, Clone)]
pub struct MeasurementPair {
    fg: Sweep,
    bg: Sweep,
}

impl MeasurementPair {
    pub fn new(fg: Sweep, bg: Sweep) -> Result<Self> {
        if fg.grid() != bg.grid() {
            return Err(Error::GridMismatch);
        }
        let (f, b) = (fg.meta(), bg.meta());
        if let (Some(x), Some(y)) = (f.bistatic_angle_deg, b.bistatic_angle_deg) {
            if x != y {
                return Err(Error::MetadataMismatch(format!(
                    "bistatic angle {x} deg (foreground) vs {y} deg (background)"
                )));
            }
        }
        if let (Some(x), Some(y)) = (&f.polarization, &b.polarization) {
            if x != y {
                return Err(Error::MetadataMismatch(format!(
                    "polarization {x:?} (foreground) vs {y:?} (background)"
                )));
            }
        }
        Ok(Self { fg, bg })
    }

    pub fn fg(&self) -> &Sweep {
        &self.fg
    }

    pub fn bg(&self) -> &Sweep {
        &self.bg
    }

    /// Roles exchanged: the background becomes the sweep being corrected.
    pub fn swapped(&self) -> Self {
        Self {
            fg: self.bg.clone(),
            bg: self.fg.clone(),
        }
    }

    /// Track key: bistatic angle when known, otherwise time.
    pub fn key(&self) -> TrackKey {
        match self.fg.meta().bistatic_angle_deg {
            Some(beta) => TrackKey::AngleDeg(beta),
            None => TrackKey::TimeH(self.fg.meta().timestamp_s / 3600.0),
        }
    }
}

/// Limits beyond which fitted parameters are considered implausible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityBounds {
    pub eps_max_deg_per_ghz: f64,
    /// Bound on `|a - 1|`.
    pub a_dev_max: f64,
    pub b_max_per_ghz: f64,
}

impl Default for PlausibilityBounds {
    fn default() -> Self {
        Self {
            eps_max_deg_per_ghz: 2.0,
            a_dev_max: 0.05,
            b_max_per_ghz: 0.01,
        }
    }
}

impl PlausibilityBounds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eps_max_deg_per_ghz, self.a_dev_max, self.b_max_per_ghz];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("plausibility bounds must be positive".into()))
        }
    }

    pub fn contains(&self, p: &DriftParams) -> bool {
        p.eps_deg_per_ghz().abs() <= self.eps_max_deg_per_ghz
            && (p.a - 1.0).abs() <= self.a_dev_max
            && p.b.abs() <= self.b_max_per_ghz
    }

    /// The bounded box as search intervals in (rad/GHz, 1, 1/GHz).
    pub fn search_box(&self) -> SearchBounds {
        let e = deg_to_rad(self.eps_max_deg_per_ghz);
        [
            (-e, e),
            (1.0 - self.a_dev_max, 1.0 + self.a_dev_max),
            (-self.b_max_per_ghz, self.b_max_per_ghz),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtractionMode {
    /// Plain `fg - bg`.
    Conventional,
    /// Phase slope only, `a = 1`, `b = 0`.
    PhaseOnly,
    /// Full `(ε, a, b)` model.
    Full,
}

impl SubtractionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubtractionMode::Conventional => "conventional",
            SubtractionMode::PhaseOnly => "phase-only",
            SubtractionMode::Full => "full",
        }
    }

    pub fn is_corrected(self) -> bool {
        self != SubtractionMode::Conventional
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOptions {
    pub mode: SubtractionMode,
    pub fit: FitConfig,
    pub bounds: PlausibilityBounds,
    /// Half-width of the sample window around the background IR peak. A
    /// single sample (0) leaves the full model underdetermined.
    pub window: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        Self {
            mode: SubtractionMode::Full,
            fit: FitConfig::default(),
            bounds: PlausibilityBounds::default(),
            window: 1,
        }
    }
}

impl CorrectionOptions {
    pub fn with_mode(mode: SubtractionMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    fn fit_config(&self) -> FitConfig {
        match self.mode {
            SubtractionMode::PhaseOnly => FitConfig {
                initial: DriftParams::new(self.fit.initial.eps, 1.0, 0.0),
                free: [true, false, false],
                ..self.fit.clone()
            },
            _ => self.fit.clone(),
        }
    }
}

/// Conventional result kept alongside a questionable corrected one.
#[derive(Debug, Clone)]
pub struct ConventionalFallback {
    pub residual_ir: ImpulseResponse,
    pub peak_residue_db: f64,
    pub rms_residue_db: f64,
}

#[derive(Debug, Clone)]
pub struct SubtractionReport {
    pub mode: SubtractionMode,
    /// IR of `corrected fg - bg` (or `fg - bg` in conventional mode).
    pub residual_ir: ImpulseResponse,
    /// Full-IR peak residue relative to the background IR peak.
    pub peak_residue_db: f64,
    /// RMS residue over all samples relative to the background IR peak.
    pub rms_residue_db: f64,
    /// Largest residue over the fitted sample set.
    pub selected_residue_db: f64,
    pub conventional_peak_residue_db: f64,
    pub conventional_selected_residue_db: f64,
    /// Conventional minus this report's peak residue; positive is better.
    pub improvement_db: f64,
    pub fit: Option<FitResult>,
    /// Present when the fit is implausible or did not converge.
    pub fallback: Option<ConventionalFallback>,
}

impl SubtractionReport {
    pub fn plausible(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.plausible)
    }

    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.converged)
    }

    pub fn params(&self) -> DriftParams {
        self.fit
            .as_ref()
            .map_or(DriftParams::IDENTITY, |f| f.params)
    }
}

/// Difference of two dB levels that treats equal levels (including two
/// `-inf`) as zero improvement.
pub fn improvement(conventional_db: f64, corrected_db: f64) -> f64 {
    if conventional_db == corrected_db {
        0.0
    } else {
        conventional_db - corrected_db
    }
}

/// `(peak, rms)` residue in dB relative to the background IR peak.
pub fn residue_metrics(residual_ir: &[Complex64], bg_ir: &[Complex64]) -> Result<(f64, f64)> {
    if residual_ir.len() != bg_ir.len() {
        return Err(Error::LengthMismatch {
            expected: bg_ir.len(),
            actual: residual_ir.len(),
        });
    }
    let bg_peak = bg_ir.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(bg_peak > 0.0) {
        return Err(Error::DegenerateBackground);
    }
    let peak = residual_ir.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rms =
        (residual_ir.iter().map(|z| z.norm_sqr()).sum::<f64>() / residual_ir.len() as f64).sqrt();
    Ok((amplitude_db(peak / bg_peak), amplitude_db(rms / bg_peak)))
}

fn selected_residue(residual_ir: &[Complex64], bg_peak: f64, set: &[usize]) -> f64 {
    let worst = set
        .iter()
        .map(|&n| residual_ir[n].norm())
        .fold(0.0, f64::max);
    amplitude_db(worst / bg_peak)
}

fn difference_ir(plan: &FourierPlan, fg: &[Complex64], bg: &Sweep) -> Result<ImpulseResponse> {
    let diff: Vec<Complex64> = fg.iter().zip(bg.samples()).map(|(x, y)| x - y).collect();
    ImpulseResponse::new(plan.idft(&diff)?, bg.grid().clone())
}

/// Transform-level context shared by all pairs of one grid.
struct Workspace {
    plan: FourierPlan,
}

impl Workspace {
    fn for_pair(pair: &MeasurementPair) -> Self {
        Self {
            plan: FourierPlan::new(pair.fg.len()),
        }
    }

    fn conventional(&self, pair: &MeasurementPair) -> Result<SubtractionReport> {
        let bg_ir = to_impulse_response_with(&self.plan, &pair.bg);
        let residual_ir = difference_ir(&self.plan, pair.fg.samples(), &pair.bg)?;
        let (peak, rms) = residue_metrics(residual_ir.samples(), bg_ir.samples())?;
        let set = peak_window(bg_ir.samples(), 0)?;
        let selected = selected_residue(residual_ir.samples(), bg_ir.peak_magnitude(), &set);
        Ok(SubtractionReport {
            mode: SubtractionMode::Conventional,
            residual_ir,
            peak_residue_db: peak,
            rms_residue_db: rms,
            selected_residue_db: selected,
            conventional_peak_residue_db: peak,
            conventional_selected_residue_db: selected,
            improvement_db: 0.0,
            fit: None,
            fallback: None,
        })
    }

    fn corrected(
        &self,
        pair: &MeasurementPair,
        options: &CorrectionOptions,
    ) -> Result<SubtractionReport> {
        if !options.mode.is_corrected() {
            return self.conventional(pair);
        }
        options.bounds.validate()?;
        let bg_ir = to_impulse_response_with(&self.plan, &pair.bg);
        let bg_peak = bg_ir.peak_magnitude();
        let set = peak_window(bg_ir.samples(), options.window)?;

        let conv_ir = difference_ir(&self.plan, pair.fg.samples(), &pair.bg)?;
        let (conv_peak, conv_rms) = residue_metrics(conv_ir.samples(), bg_ir.samples())?;
        let conv_selected = selected_residue(conv_ir.samples(), bg_peak, &set);

        let problem = DriftProblem::new(&pair.fg, &bg_ir, &set)?;
        let config = options.fit_config();
        let mut fit = match fit_problem(&problem, &config) {
            Ok(fit) => fit,
            Err(_) => FitResult {
                params: config.initial,
                objective_value: f64::NAN,
                iterations: 0,
                converged: false,
                gradient_norm: f64::NAN,
                sample_set: set.clone(),
                plausible: false,
                objective_trace: Vec::new(),
            },
        };
        fit.plausible = fit.plausible && options.bounds.contains(&fit.params);

        let corrected = apply_correction(&pair.fg, &fit.params)
            .map(Sweep::into_samples)
            .unwrap_or_else(|_| pair.fg.samples().to_vec());
        let residual_ir = difference_ir(&self.plan, &corrected, &pair.bg)?;
        let (peak, rms) = residue_metrics(residual_ir.samples(), bg_ir.samples())?;
        let selected = selected_residue(residual_ir.samples(), bg_peak, &set);

        let fallback = (!fit.plausible || !fit.converged).then_some(ConventionalFallback {
            residual_ir: conv_ir,
            peak_residue_db: conv_peak,
            rms_residue_db: conv_rms,
        });
        Ok(SubtractionReport {
            mode: options.mode,
            residual_ir,
            peak_residue_db: peak,
            rms_residue_db: rms,
            selected_residue_db: selected,
            conventional_peak_residue_db: conv_peak,
            conventional_selected_residue_db: conv_selected,
            improvement_db: improvement(conv_peak, peak),
            fit: Some(fit),
            fallback,
        })
    }
}

pub fn subtract_conventional(pair: &MeasurementPair) -> Result<SubtractionReport> {
    Workspace::for_pair(pair).conventional(pair)
}

/// Fit the drift at the background IR peak, correct the foreground and
/// subtract. Fit failures are reported as non-converged, implausible fits.
pub fn subtract_corrected(
    pair: &MeasurementPair,
    options: &CorrectionOptions,
) -> Result<SubtractionReport> {
    Workspace::for_pair(pair).corrected(pair, options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackKey {
    TimeH(f64),
    AngleDeg(f64),
}

impl TrackKey {
    pub fn value(self) -> f64 {
        match self {
            TrackKey::TimeH(v) | TrackKey::AngleDeg(v) => v,
        }
    }
}

/// One point of the parameter tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub index: usize,
    pub key: TrackKey,
    pub eps_deg_per_ghz: f64,
    pub a: f64,
    pub b: f64,
    pub converged: bool,
    pub plausible: bool,
    pub improvement_db: f64,
    /// Error message when the pair could not be processed.
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct BatchOutput {
    pub reports: Vec<Result<SubtractionReport>>,
    pub tracks: Vec<TrackPoint>,
}

impl BatchOutput {
    pub fn failures(&self) -> usize {
        self.reports.iter().filter(|r| r.is_err()).count()
    }
}

/// Process every pair independently (in parallel); output order follows
/// input order and one failing pair never stops the batch.
pub fn batch_process(dataset: &[MeasurementPair], options: &CorrectionOptions) -> BatchOutput {
    let reports: Vec<Result<SubtractionReport>> = dataset
        .par_iter()
        .map_init(
            || None::<(usize, Workspace)>,
            |cache, pair| {
                let n = pair.fg.len();
                if cache.as_ref().map(|(len, _)| *len) != Some(n) {
                    *cache = Some((n, Workspace::for_pair(pair)));
                }
                let (_, ws) = cache.as_ref().expect("workspace initialised");
                ws.corrected(pair, options)
            },
        )
        .collect();
    let tracks = dataset
        .iter()
        .zip(&reports)
        .enumerate()
        .map(|(index, (pair, report))| match report {
            Ok(r) => {
                let p = r.params();
                TrackPoint {
                    index,
                    key: pair.key(),
                    eps_deg_per_ghz: p.eps_deg_per_ghz(),
                    a: p.a,
                    b: p.b,
                    converged: r.converged(),
                    plausible: r.plausible(),
                    improvement_db: r.improvement_db,
                    error: None,
                }
            }
            Err(e) => TrackPoint {
                index,
                key: pair.key(),
                eps_deg_per_ghz: f64::NAN,
                a: f64::NAN,
                b: f64::NAN,
                converged: false,
                plausible: false,
                improvement_db: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    BatchOutput { reports, tracks }
}
