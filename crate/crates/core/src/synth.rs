//! Synthetic foreground/background datasets.
//!
//! A scenario is a set of propagation paths (present in every measurement),
//! optional target echoes (foreground only), a drift trajectory over
//! measurement time and an additive noise level. The foreground of each run
//! is drifted so that applying the correction with that run's ground-truth
//! parameters maps it back onto the clean background:
//!
//! ```text
//! fg[k] = (bg_clean[k] + target[k]) · e^{-j r(f_k)} / ((a + b f_k) e^{-jε f_k}) + noise
//! ```
//!
//! Noise is circular complex white noise per frequency bin. Its level is the
//! expected peak magnitude of the noise in the impulse response, relative to
//! the strongest path amplitude.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{deg_to_rad, DriftParams};
use crate::pipeline::MeasurementPair;
use crate::spectral::{make_grid, FrequencyGrid, Role, Sweep, SweepMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_start_ghz: f64,
    pub f_end_ghz: f64,
    pub n_points: usize,
}

impl GridSpec {
    /// 2–18 GHz in 1601 points (10 MHz spacing).
    pub const MEASUREMENT: GridSpec = GridSpec {
        f_start_ghz: 2.0,
        f_end_ghz: 18.0,
        n_points: 1601,
    };

    pub fn build(&self) -> Result<FrequencyGrid> {
        make_grid(self.f_start_ghz, self.f_end_ghz, self.n_points)
    }

    pub fn of(grid: &FrequencyGrid) -> Self {
        Self {
            f_start_ghz: grid.f_start(),
            f_end_ghz: grid.f_end(),
            n_points: grid.n_points(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub delay_ns: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl PathSpec {
    pub fn new(delay_ns: f64, amplitude: f64, phase_rad: f64) -> Self {
        Self {
            delay_ns,
            amplitude,
            phase_rad,
        }
    }
}

/// `(time in hours, value)` node of a piecewise-linear track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub t_h: f64,
    pub value: f64,
}

impl Node {
    pub fn new(t_h: f64, value: f64) -> Self {
        Self { t_h, value }
    }
}

/// Sinusoidal phase ripple across frequency, switched on at `onset_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub amplitude_deg: f64,
    pub period_ghz: f64,
    #[serde(default)]
    pub onset_h: f64,
}

impl Ripple {
    pub fn active_at(&self, t_h: f64) -> bool {
        self.amplitude_deg > 0.0 && t_h >= self.onset_h
    }

    /// Ripple phase in radians at `f_ghz`.
    pub fn phase(&self, f_ghz: f64) -> f64 {
        deg_to_rad(self.amplitude_deg) * (2.0 * PI * f_ghz / self.period_ghz).sin()
    }
}

/// Drift parameters as piecewise-linear functions of measurement time.
///
/// An empty track holds the identity value; times outside the node range
/// clamp to the nearest end node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftTrajectory {
    #[serde(default)]
    pub eps_deg_per_ghz: Vec<Node>,
    #[serde(default)]
    pub a: Vec<Node>,
    #[serde(default)]
    pub b: Vec<Node>,
    #[serde(default)]
    pub ripple: Option<Ripple>,
}

fn interpolate(track: &[Node], t_h: f64, identity: f64) -> f64 {
    match track {
        [] => identity,
        [only] => only.value,
        [first, ..] if t_h <= first.t_h => first.value,
        [.., last] if t_h >= last.t_h => last.value,
        _ => {
            let i = track.partition_point(|n| n.t_h <= t_h);
            let (lo, hi) = (track[i - 1], track[i]);
            let w = (t_h - lo.t_h) / (hi.t_h - lo.t_h);
            lo.value + w * (hi.value - lo.value)
        }
    }
}

impl DriftTrajectory {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Straight-line drift from identity at t = 0 to the given values at `t_end_h`.
    pub fn linear(t_end_h: f64, eps_deg_per_ghz: f64, a: f64, b: f64) -> Self {
        Self {
            eps_deg_per_ghz: vec![Node::new(0.0, 0.0), Node::new(t_end_h, eps_deg_per_ghz)],
            a: vec![Node::new(0.0, 1.0), Node::new(t_end_h, a)],
            b: vec![Node::new(0.0, 0.0), Node::new(t_end_h, b)],
            ripple: None,
        }
    }

    pub fn params_at(&self, t_h: f64) -> DriftParams {
        DriftParams::from_degrees(
            interpolate(&self.eps_deg_per_ghz, t_h, 0.0),
            interpolate(&self.a, t_h, 1.0),
            interpolate(&self.b, t_h, 0.0),
        )
    }

    pub fn ripple_at(&self, t_h: f64) -> Option<Ripple> {
        self.ripple.filter(|r| r.active_at(t_h))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, track) in [
            ("eps_deg_per_ghz", &self.eps_deg_per_ghz),
            ("a", &self.a),
            ("b", &self.b),
        ] {
            if track
                .iter()
                .any(|n| !n.t_h.is_finite() || !n.value.is_finite())
            {
                return Err(Error::Scenario(format!(
                    "track {name} has non-finite nodes"
                )));
            }
            if track.windows(2).any(|w| w[1].t_h <= w[0].t_h) {
                return Err(Error::Scenario(format!(
                    "track {name}: node times must be strictly increasing"
                )));
            }
        }
        if let Some(r) = self.ripple {
            if !(r.amplitude_deg >= 0.0) {
                return Err(Error::Scenario(
                    "ripple amplitude must be non-negative".into(),
                ));
            }
            if !(r.period_ghz > 0.0) || !r.period_ghz.is_finite() {
                return Err(Error::Scenario("ripple period must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    /// Paths present in both foreground and background.
    pub paths: Vec<PathSpec>,
    /// Echoes present in the foreground only.
    #[serde(default)]
    pub targets: Vec<PathSpec>,
    #[serde(default)]
    pub trajectory: DriftTrajectory,
    /// Noise level in dB relative to the strongest path; `None` is noise-free.
    #[serde(default)]
    pub noise_db: Option<f64>,
    pub n_runs: usize,
    /// Time of the last run in hours.
    #[serde(default)]
    pub duration_h: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bistatic_angle_deg: Option<f64>,
    #[serde(default)]
    pub polarization: Option<String>,
}

impl ScenarioSpec {
    /// Direct path near 20 ns at −10 dB with weak chamber clutter, on the
    /// 2–18 GHz grid; 6500 runs over 18 h with noise at −120 dB.
    pub fn static_long_term() -> Self {
        Self {
            grid: GridSpec::MEASUREMENT,
            paths: default_paths(),
            targets: Vec::new(),
            trajectory: DriftTrajectory::linear(18.0, 0.55, 0.995, 0.0005),
            noise_db: Some(-120.0),
            n_runs: 6500,
            duration_h: 18.0,
            seed: 1,
            bistatic_angle_deg: None,
            polarization: None,
        }
    }

    pub fn validate(&self) -> Result<FrequencyGrid> {
        let grid = self.grid.build()?;
        if self.n_runs == 0 {
            return Err(Error::Scenario("n_runs must be at least 1".into()));
        }
        if self.paths.is_empty() {
            return Err(Error::Scenario("at least one path is required".into()));
        }
        if !(self.duration_h >= 0.0) || !self.duration_h.is_finite() {
            return Err(Error::Scenario("duration_h must be non-negative".into()));
        }
        if let Some(db) = self.noise_db {
            if !(db <= 0.0) {
                return Err(Error::Scenario(format!("noise_db must be <= 0, got {db}")));
            }
        }
        if let Some(beta) = self.bistatic_angle_deg {
            if !(0.0..360.0).contains(&beta) {
                return Err(Error::Scenario(format!(
                    "bistatic angle must lie in [0, 360), got {beta}"
                )));
            }
        }
        let range = grid.unambiguous_range_ns();
        let all = self
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("paths[{i}]"), p))
            .chain(
                self.targets
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (format!("targets[{i}]"), p)),
            );
        for (name, p) in all {
            if !(0.0..range).contains(&p.delay_ns) {
                return Err(Error::Scenario(format!(
                    "{name}: delay {} ns outside unambiguous range [0, {range:.6}) ns",
                    p.delay_ns
                )));
            }
            if !(p.amplitude >= 0.0) || !p.amplitude.is_finite() || !p.phase_rad.is_finite() {
                return Err(Error::Scenario(format!(
                    "{name}: amplitude must be finite and non-negative"
                )));
            }
        }
        self.trajectory.validate()?;
        Ok(grid)
    }

    /// Time of run `index` in hours.
    pub fn run_time_h(&self, index: usize) -> f64 {
        if self.n_runs <= 1 {
            0.0
        } else {
            index as f64 * (self.duration_h / (self.n_runs - 1) as f64)
        }
    }

    fn reference_amplitude(&self) -> f64 {
        self.paths.iter().map(|p| p.amplitude).fold(0.0, f64::max)
    }

    /// Per-bin standard deviation of the complex noise, or zero.
    pub fn noise_sigma(&self) -> f64 {
        match self.noise_db {
            None => 0.0,
            Some(db) => {
                let n = self.grid.n_points;
                let peak = self.reference_amplitude() * 10f64.powf(db / 20.0);
                // E[max |z|] over N circular Gaussian IR samples ≈ σ_ir √H_N
                let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
                let sigma_ir = peak / harmonic.sqrt();
                sigma_ir * (n as f64).sqrt()
            }
        }
    }

    fn meta(&self, role: Role, t_h: f64) -> SweepMeta {
        SweepMeta {
            timestamp_s: t_h * 3600.0,
            bistatic_angle_deg: self.bistatic_angle_deg,
            polarization: self.polarization.clone(),
            role,
        }
    }
}

fn default_paths() -> Vec<PathSpec> {
    let db = |x: f64| 10f64.powf(x / 20.0);
    vec![
        PathSpec::new(20.0, db(-10.0), 0.3),
        PathSpec::new(35.2, db(-62.0), 1.1),
        PathSpec::new(47.9, db(-68.0), -2.0),
        PathSpec::new(63.3, db(-75.0), 0.4),
        PathSpec::new(88.6, db(-80.0), 2.7),
    ]
}

/// `Σ_paths A e^{jφ} e^{-j2π f τ}` on the grid.
pub fn path_spectrum(grid: &FrequencyGrid, paths: &[PathSpec]) -> Vec<Complex64> {
    grid.values()
        .iter()
        .map(|&f| {
            paths
                .iter()
                .map(|p| {
                    // reduce f·τ (cycles) before scaling to keep the phase accurate
                    let cycles = (f * p.delay_ns).fract();
                    Complex64::from_polar(p.amplitude, p.phase_rad - 2.0 * PI * cycles)
                })
                .sum()
        })
        .collect()
}

/// Noise stream 0 belongs to the background; run `i` uses stream `i + 1`.
fn add_noise(samples: &mut [Complex64], sigma: f64, seed: u64, stream: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let s = sigma / 2f64.sqrt();
    for z in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += Complex64::new(s * re, s * im);
    }
}

/// Ground truth for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub index: usize,
    pub time_h: f64,
    pub params: DriftParams,
    pub ripple: bool,
}

#[derive(Debug, Clone)]
pub struct SynthRun {
    pub pair: MeasurementPair,
    pub truth: TruthRow,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub pairs: Vec<MeasurementPair>,
    pub truth: Vec<TruthRow>,
}

pub fn synth_background(spec: &ScenarioSpec) -> Result<Sweep> {
    let grid = spec.validate()?;
    background_on(spec, &grid)
}

fn background_on(spec: &ScenarioSpec, grid: &FrequencyGrid) -> Result<Sweep> {
    let mut samples = path_spectrum(grid, &spec.paths);
    add_noise(&mut samples, spec.noise_sigma(), spec.seed, 0);
    Sweep::new(grid.clone(), samples, spec.meta(Role::Background, 0.0))
}

fn foreground_on(
    spec: &ScenarioSpec,
    grid: &FrequencyGrid,
    clean: &[Complex64],
    t_h: f64,
    index: usize,
) -> Result<(Sweep, TruthRow)> {
    let params = spec.trajectory.params_at(t_h);
    let ripple = spec.trajectory.ripple_at(t_h);
    let mut samples: Vec<Complex64> = grid
        .values()
        .iter()
        .zip(clean)
        .map(|(&f, &z)| {
            let mut v = z / params.factor(f);
            if let Some(r) = ripple {
                v *= Complex64::from_polar(1.0, -r.phase(f));
            }
            v
        })
        .collect();
    add_noise(
        &mut samples,
        spec.noise_sigma(),
        spec.seed,
        index as u64 + 1,
    );
    let sweep = Sweep::new(grid.clone(), samples, spec.meta(Role::Foreground, t_h))?;
    let truth = TruthRow {
        index,
        time_h: t_h,
        params,
        ripple: ripple.is_some(),
    };
    Ok((sweep, truth))
}

fn clean_foreground(spec: &ScenarioSpec, grid: &FrequencyGrid) -> Vec<Complex64> {
    let mut clean = path_spectrum(grid, &spec.paths);
    if !spec.targets.is_empty() {
        for (z, t) in clean.iter_mut().zip(path_spectrum(grid, &spec.targets)) {
            *z += t;
        }
    }
    clean
}

/// One foreground/background pair at time `t_h`; `run_index` selects the
/// foreground noise stream.
pub fn synth_run(spec: &ScenarioSpec, t_h: f64, run_index: usize) -> Result<SynthRun> {
    let grid = spec.validate()?;
    let bg = background_on(spec, &grid)?;
    let clean = clean_foreground(spec, &grid);
    let (fg, truth) = foreground_on(spec, &grid, &clean, t_h, run_index)?;
    Ok(SynthRun {
        pair: MeasurementPair::new(fg, bg)?,
        truth,
    })
}

/// All runs of a scenario, sharing the first background measurement.
///
/// Runs are generated in parallel; each has its own noise stream so the
/// result does not depend on scheduling.
pub fn synth_dataset(spec: &ScenarioSpec) -> Result<SynthDataset> {
    let grid = spec.validate()?;
    let bg = background_on(spec, &grid)?;
    let clean = clean_foreground(spec, &grid);
    let runs: Vec<(Sweep, TruthRow)> = (0..spec.n_runs)
        .into_par_iter()
        .map(|i| foreground_on(spec, &grid, &clean, spec.run_time_h(i), i))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::with_capacity(runs.len());
    let mut truth = Vec::with_capacity(runs.len());
    for (fg, row) in runs {
        pairs.push(MeasurementPair::new(fg, bg.clone())?);
        truth.push(row);
    }
    Ok(SynthDataset { pairs, truth })
}
