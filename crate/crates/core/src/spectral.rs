//! Frequency grids, sweeps, impulse responses and the transform pair that
//! connects them.
//!
//! The inverse transform follows the measurement convention
//! `z[n] = (1/N) Σ_k Z[k] e^{+j2πkn/N}`; the forward transform is its exact
//! inverse without normalization. Arbitrary `N` is supported (the standard
//! 2–18 GHz sweep has the prime length 1601).

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform frequency axis in GHz.
///
/// Point `k` sits at `f_start + (f_end - f_start) * (k/N) * (1 + 1/N)`, so the
/// last point lands just short of `f_end` and the spacing is
/// `(f_end - f_start)(N + 1) / N²`.
#[derive(Clone)]
pub struct FrequencyGrid {
    f_start: f64,
    f_end: f64,
    values: Arc<[f64]>,
}

impl FrequencyGrid {
    pub fn new(f_start: f64, f_end: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::Domain(format!(
                "grid needs at least 2 points, got {n_points}"
            )));
        }
        if !f_start.is_finite() || !f_end.is_finite() {
            return Err(Error::Domain("grid bounds must be finite".into()));
        }
        if f_end <= f_start {
            return Err(Error::Domain(format!(
                "grid end {f_end} GHz must exceed start {f_start} GHz"
            )));
        }
        let n = n_points as f64;
        let span = f_end - f_start;
        let values = (0..n_points)
            .map(|k| f_start + span * (k as f64 / n) * (1.0 + 1.0 / n))
            .collect();
        Ok(Self {
            f_start,
            f_end,
            values,
        })
    }

    pub fn f_start(&self) -> f64 {
        self.f_start
    }

    pub fn f_end(&self) -> f64 {
        self.f_end
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn shared_values(&self) -> Arc<[f64]> {
        Arc::clone(&self.values)
    }

    /// `f_1 - f_0` in GHz.
    pub fn spacing(&self) -> f64 {
        self.values[1] - self.values[0]
    }

    /// Time step between impulse-response samples in ns, `1 / (N Δf)`.
    pub fn delay_step_ns(&self) -> f64 {
        1.0 / (self.n_points() as f64 * self.spacing())
    }

    /// Unambiguous delay range `N * delay_step` in ns.
    pub fn unambiguous_range_ns(&self) -> f64 {
        self.n_points() as f64 * self.delay_step_ns()
    }
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.f_start == other.f_start
            && self.f_end == other.f_end
            && self.values.len() == other.values.len()
    }
}

impl fmt::Debug for FrequencyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyGrid")
            .field("f_start", &self.f_start)
            .field("f_end", &self.f_end)
            .field("n_points", &self.values.len())
            .finish()
    }
}

pub fn make_grid(f_start: f64, f_end: f64, n_points: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(f_start, f_end, n_points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Foreground,
    Background,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Foreground => "foreground",
            Role::Background => "background",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "foreground" | "fg" => Some(Role::Foreground),
            "background" | "bg" => Some(Role::Background),
            _ => None,
        }
    }
}

/// Acquisition metadata attached to a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMeta {
    /// Seconds since the start of the dataset.
    pub timestamp_s: f64,
    pub bistatic_angle_deg: Option<f64>,
    pub polarization: Option<String>,
    pub role: Role,
}

impl SweepMeta {
    pub fn new(role: Role, timestamp_s: f64) -> Self {
        Self {
            timestamp_s,
            bistatic_angle_deg: None,
            polarization: None,
            role,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestamp_s >= 0.0) || !self.timestamp_s.is_finite() {
            return Err(Error::Domain(format!(
                "timestamp must be finite and non-negative, got {}",
                self.timestamp_s
            )));
        }
        if let Some(beta) = self.bistatic_angle_deg {
            if !(0.0..360.0).contains(&beta) {
                return Err(Error::Domain(format!(
                    "bistatic angle must lie in [0, 360), got {beta}"
                )));
            }
        }
        Ok(())
    }
}

/// One complex frequency-domain measurement.
#[derive(Debug, Clone)]
pub struct Sweep {
    grid: FrequencyGrid,
    samples: Vec<Complex64>,
    meta: SweepMeta,
}

impl Sweep {
    pub fn new(grid: FrequencyGrid, samples: Vec<Complex64>, meta: SweepMeta) -> Result<Self> {
        if samples.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                expected: grid.n_points(),
                actual: samples.len(),
            });
        }
        if let Some(k) = samples.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("sweep sample {k}")));
        }
        meta.validate()?;
        Ok(Self {
            grid,
            samples,
            meta,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn meta(&self) -> &SweepMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut SweepMeta {
        &mut self.meta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same grid and metadata, new samples. Samples must be finite.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        Sweep::new(self.grid.clone(), samples, self.meta.clone())
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }
}

/// Complex time-domain response obtained from a sweep.
#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    samples: Vec<Complex64>,
    delay_step_ns: f64,
    source_grid: FrequencyGrid,
}

impl ImpulseResponse {
    pub fn new(samples: Vec<Complex64>, source_grid: FrequencyGrid) -> Result<Self> {
        if samples.len() != source_grid.n_points() {
            return Err(Error::LengthMismatch {
                expected: source_grid.n_points(),
                actual: samples.len(),
            });
        }
        Ok(Self {
            delay_step_ns: source_grid.delay_step_ns(),
            samples,
            source_grid,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn delay_step_ns(&self) -> f64 {
        self.delay_step_ns
    }

    pub fn source_grid(&self) -> &FrequencyGrid {
        &self.source_grid
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Delay of sample `n` in ns. Presentation only.
    pub fn delay_ns(&self, n: usize) -> f64 {
        n as f64 * self.delay_step_ns
    }

    pub fn peak_magnitude(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Planned transform pair for one length.
#[derive(Clone)]
pub struct FourierPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FourierPlan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: len,
            });
        }
        Ok(())
    }

    /// `out[n] = (1/N) Σ_k x[k] e^{+j2πkn/N}`.
    pub fn idft(&self, spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(spectrum.len())?;
        let mut buf = spectrum.to_vec();
        if self.n > 0 {
            self.inverse.process(&mut buf);
            let scale = 1.0 / self.n as f64;
            buf.iter_mut().for_each(|z| *z *= scale);
        }
        Ok(buf)
    }

    /// `out[k] = Σ_n x[n] e^{-j2πkn/N}`, the exact inverse of [`Self::idft`].
    pub fn dft(&self, time_samples: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(time_samples.len())?;
        let mut buf = time_samples.to_vec();
        if self.n > 0 {
            self.forward.process(&mut buf);
        }
        Ok(buf)
    }
}

impl fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierPlan").field("n", &self.n).finish()
    }
}

pub fn idft(spectrum: &[Complex64], n_points: usize) -> Result<Vec<Complex64>> {
    FourierPlan::new(n_points).idft(spectrum)
}

pub fn dft(time_samples: &[Complex64], n_points: usize) -> Result<Vec<Complex64>> {
    FourierPlan::new(n_points).dft(time_samples)
}

pub fn to_impulse_response(sweep: &Sweep) -> ImpulseResponse {
    to_impulse_response_with(&FourierPlan::new(sweep.len()), sweep)
}

pub(crate) fn to_impulse_response_with(plan: &FourierPlan, sweep: &Sweep) -> ImpulseResponse {
    let samples = plan
        .idft(sweep.samples())
        .expect("plan length matches sweep length");
    ImpulseResponse {
        delay_step_ns: sweep.grid().delay_step_ns(),
        samples,
        source_grid: sweep.grid().clone(),
    }
}

/// Index of the largest-magnitude sample (lowest index on ties).
pub fn argmax_magnitude(samples: &[Complex64]) -> Result<usize> {
    let mut best = None;
    let mut best_mag = 0.0;
    for (n, z) in samples.iter().enumerate() {
        let mag = z.norm();
        if mag > best_mag {
            best_mag = mag;
            best = Some(n);
        }
    }
    best.ok_or(Error::NoPeak)
}

/// Peak sample of `ir` plus `half_width` neighbours on each side.
///
/// Indices wrap modulo N. The result is ordered from `p - w` to `p + w` and
/// never repeats an index, even when `2w + 1 > N`.
pub fn find_peak(ir: &ImpulseResponse, half_width: usize) -> Result<Vec<usize>> {
    peak_window(ir.samples(), half_width)
}

pub(crate) fn peak_window(samples: &[Complex64], half_width: usize) -> Result<Vec<usize>> {
    let p = argmax_magnitude(samples)?;
    let n = samples.len();
    let w = half_width.min(n / 2);
    let mut out = Vec::with_capacity(2 * w + 1);
    for offset in 0..=2 * w {
        let idx = (p + n - w + offset) % n;
        if !out.contains(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

/// `20 log10 |x|`; zero maps to negative infinity.
pub fn magnitude_db(x: Complex64) -> f64 {
    amplitude_db(x.norm())
}

pub fn amplitude_db(amplitude: f64) -> f64 {
    20.0 * amplitude.log10()
}
