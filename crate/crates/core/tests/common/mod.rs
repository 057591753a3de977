//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use driftcal::spectral::{make_grid, Role, Sweep, SweepMeta};
use driftcal::DriftParams;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// O(N²) inverse transform, `(1/N) Σ_k x[k] e^{+j2πkn/N}`.
pub fn naive_idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|m| {
            x.iter()
                .enumerate()
                .map(|(k, v)| {
                    v * Complex64::from_polar(1.0, 2.0 * PI * ((k * m) % n) as f64 / n as f64)
                })
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Residual at each selected sample by direct summation.
pub fn oracle_kappa(
    freqs: &[f64],
    fg: &[Complex64],
    bg_ir: &[Complex64],
    set: &[usize],
    p: &DriftParams,
) -> Vec<Complex64> {
    let n = freqs.len();
    set.iter()
        .map(|&s| {
            let mut acc = c(0.0, 0.0);
            for k in 0..n {
                let corr = (p.a + p.b * freqs[k]) * Complex64::from_polar(1.0, -p.eps * freqs[k]);
                let tw = Complex64::from_polar(1.0, 2.0 * PI * ((k * s) % n) as f64 / n as f64);
                acc += corr * fg[k] * tw;
            }
            acc / n as f64 - bg_ir[s]
        })
        .collect()
}

pub fn oracle_objective(
    freqs: &[f64],
    fg: &[Complex64],
    bg_ir: &[Complex64],
    set: &[usize],
    p: &DriftParams,
) -> f64 {
    oracle_kappa(freqs, fg, bg_ir, set, p)
        .iter()
        .map(|k| k.norm_sqr())
        .sum()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn sweep(samples: Vec<Complex64>, role: Role) -> Sweep {
    let grid = make_grid(2.0, 18.0, samples.len()).unwrap();
    Sweep::new(grid, samples, SweepMeta::new(role, 0.0)).unwrap()
}

/// Relative distance `|x - y| / |y|`.
pub fn rel(x: f64, y: f64) -> f64 {
    ((x - y) / y).abs()
}

/// Pair on the 2–18 GHz measurement grid, drifted by `(eps °/GHz, a, b)` with optional noise.
pub fn drifted_pair(
    eps_deg: f64,
    a: f64,
    b: f64,
    noise_db: Option<f64>,
    seed: u64,
) -> driftcal::MeasurementPair {
    use driftcal::synth::{synth_run, DriftTrajectory, ScenarioSpec};
    let mut spec = ScenarioSpec::static_long_term();
    spec.trajectory = DriftTrajectory::linear(1.0, eps_deg, a, b);
    spec.noise_db = noise_db;
    spec.n_runs = 1;
    spec.seed = seed;
    synth_run(&spec, 1.0, 1).unwrap().pair
}

/// Peak sample of the background IR plus one neighbour on each side.
pub fn peak_set(pair: &driftcal::MeasurementPair, half_width: usize) -> Vec<usize> {
    let ir = driftcal::spectral::to_impulse_response(pair.bg());
    driftcal::spectral::find_peak(&ir, half_width).unwrap()
}
