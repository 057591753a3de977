//! The three-parameter drift correction `(a + b f) e^{-jεf}` and the
//! least-squares objective built on it.
//!
//! For a foreground spectrum `Z_fg` and background impulse response `z_bg`,
//! the residual at time sample `n` is
//!
//! ```text
//! κ[n] = (1/N) Σ_k (a + b f_k) e^{-jε f_k} Z_fg[k] e^{+j2πkn/N} - z_bg[n]
//! ```
//!
//! and the objective is `Σ_n |κ[n]|²` over a selected sample set. κ is linear
//! in `a` and `b`, so its second partials in `(a, b)` vanish; only the
//! ε-involving second partials are ever computed.
//!
//! ε is held in rad/GHz. Degrees per GHz exist only at the reporting edge.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{ImpulseResponse, Sweep};

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Parameter index order used by gradients and Hessians.
pub const EPS: usize = 0;
pub const A: usize = 1;
pub const B: usize = 2;

pub fn deg_to_rad(eps_deg_per_ghz: f64) -> f64 {
    eps_deg_per_ghz * PI / 180.0
}

pub fn report_degrees(eps_rad_per_ghz: f64) -> f64 {
    eps_rad_per_ghz * 180.0 / PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    /// Phase slope in rad/GHz.
    pub eps: f64,
    /// Amplitude offset (dimensionless).
    pub a: f64,
    /// Amplitude slope in 1/GHz.
    pub b: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl DriftParams {
    pub const IDENTITY: DriftParams = DriftParams {
        eps: 0.0,
        a: 1.0,
        b: 0.0,
    };

    pub fn new(eps_rad_per_ghz: f64, a: f64, b: f64) -> Self {
        Self {
            eps: eps_rad_per_ghz,
            a,
            b,
        }
    }

    pub fn from_degrees(eps_deg_per_ghz: f64, a: f64, b: f64) -> Self {
        Self::new(deg_to_rad(eps_deg_per_ghz), a, b)
    }

    pub fn eps_deg_per_ghz(&self) -> f64 {
        report_degrees(self.eps)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.eps, self.a, self.b]
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self::new(p[EPS], p[A], p[B])
    }

    pub fn is_finite(&self) -> bool {
        self.eps.is_finite() && self.a.is_finite() && self.b.is_finite()
    }

    /// Complex factor applied at frequency `f_ghz`.
    pub fn factor(&self, f_ghz: f64) -> Complex64 {
        Complex64::from_polar(1.0, -self.eps * f_ghz) * (self.a + self.b * f_ghz)
    }
}

/// `out[k] = (a + b f_k) e^{-jε f_k} fg[k]`.
pub fn apply_correction(fg: &Sweep, params: &DriftParams) -> Result<Sweep> {
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("drift parameters {params:?}")));
    }
    let samples = fg
        .grid()
        .values()
        .iter()
        .zip(fg.samples())
        .map(|(&f, &z)| params.factor(f) * z)
        .collect();
    fg.with_samples(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub kappa: Vec<Complex64>,
    pub sample_set: Vec<usize>,
}

impl Residual {
    pub fn sum_of_squares(&self) -> f64 {
        self.kappa.iter().map(|k| k.re * k.re + k.im * k.im).sum()
    }
}

/// First and second partials of κ at one selected sample.
///
/// The `(a,a)`, `(b,b)` and `(a,b)` second partials are identically zero and
/// have no field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaPartials {
    pub sample: usize,
    pub d_eps: Complex64,
    pub d_a: Complex64,
    pub d_b: Complex64,
    pub d_eps_eps: Complex64,
    pub d_a_eps: Complex64,
    pub d_eps_b: Complex64,
}

impl KappaPartials {
    pub fn first(&self) -> [Complex64; 3] {
        [self.d_eps, self.d_a, self.d_b]
    }

    pub fn second(&self) -> [[Complex64; 3]; 3] {
        let z = Complex64::new(0.0, 0.0);
        [
            [self.d_eps_eps, self.d_a_eps, self.d_eps_b],
            [self.d_a_eps, z, z],
            [self.d_eps_b, z, z],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDerivatives {
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

/// One objective evaluation with everything the optimizer needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub derivatives: ModelDerivatives,
}

/// Precomputed state for evaluating the objective at many parameter points.
///
/// Twiddles `e^{+j2πkn/N}/N` for the selected samples are tabulated once, so
/// each evaluation costs `O(|set| · N)` instead of a full transform.
#[derive(Debug, Clone)]
pub struct DriftProblem {
    freqs: Arc<[f64]>,
    spectrum: Vec<Complex64>,
    sample_set: Vec<usize>,
    targets: Vec<Complex64>,
    twiddles: Vec<Vec<Complex64>>,
    /// Rounding scale of one residual, `64 ε Σ|Z| / N`.
    kappa_noise: f64,
}

/// Neumaier summation. A plain running sum rounds at the scale of the
/// partial sum, which leaves the residual too noisy to resolve the last
/// Newton step near a minimum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    re: (f64, f64),
    im: (f64, f64),
}

impl CompensatedSum {
    fn add(&mut self, z: Complex64) {
        fn step((sum, comp): &mut (f64, f64), x: f64) {
            let t = *sum + x;
            *comp += if sum.abs() >= x.abs() {
                (*sum - t) + x
            } else {
                (x - t) + *sum
            };
            *sum = t;
        }
        step(&mut self.re, z.re);
        step(&mut self.im, z.im);
    }

    fn value(self) -> Complex64 {
        Complex64::new(self.re.0 + self.re.1, self.im.0 + self.im.1)
    }
}

/// Raw spectral moments `Σ_k f_k^m e^{-jεf_k} Z[k] W[k,n] / N`, m = 0..3.
#[derive(Debug, Clone, Copy)]
struct Moments([Complex64; 4]);

impl DriftProblem {
    pub fn new(fg: &Sweep, bg_ir: &ImpulseResponse, sample_set: &[usize]) -> Result<Self> {
        if fg.grid() != bg_ir.source_grid() {
            return Err(Error::GridMismatch);
        }
        Self::from_parts(
            fg.grid().shared_values(),
            fg.samples().to_vec(),
            bg_ir.samples(),
            sample_set,
        )
    }

    pub(crate) fn from_parts(
        freqs: Arc<[f64]>,
        spectrum: Vec<Complex64>,
        bg_ir: &[Complex64],
        sample_set: &[usize],
    ) -> Result<Self> {
        let n = freqs.len();
        if spectrum.len() != n || bg_ir.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: if spectrum.len() != n {
                    spectrum.len()
                } else {
                    bg_ir.len()
                },
            });
        }
        if sample_set.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if let Some(&index) = sample_set.iter().find(|&&s| s >= n) {
            return Err(Error::SampleOutOfRange { index, n });
        }
        let inv_n = 1.0 / n as f64;
        let twiddles = sample_set
            .iter()
            .map(|&s| {
                (0..n)
                    .map(|k| {
                        // reduce k·s mod N before scaling so the angle stays exact
                        let phase = 2.0 * PI * ((k * s) % n) as f64 / n as f64;
                        Complex64::from_polar(inv_n, phase)
                    })
                    .collect()
            })
            .collect();
        let kappa_noise =
            64.0 * f64::EPSILON * spectrum.iter().map(|z| z.norm()).sum::<f64>() * inv_n;
        Ok(Self {
            kappa_noise,
            targets: sample_set.iter().map(|&s| bg_ir[s]).collect(),
            sample_set: sample_set.to_vec(),
            freqs,
            spectrum,
            twiddles,
        })
    }

    pub fn sample_set(&self) -> &[usize] {
        &self.sample_set
    }

    pub fn n_points(&self) -> usize {
        self.freqs.len()
    }

    /// Size of the rounding noise in an objective value near `objective`.
    pub fn objective_noise(&self, objective: f64) -> f64 {
        let m = self.sample_set.len() as f64;
        let d = self.kappa_noise;
        2.0 * (m * objective).sqrt() * d + m * d * d
    }

    fn moments(&self, eps: f64, order: usize) -> Vec<Moments> {
        let rotated: Vec<Complex64> = self
            .freqs
            .iter()
            .zip(&self.spectrum)
            .map(|(&f, &z)| Complex64::from_polar(1.0, -eps * f) * z)
            .collect();
        self.twiddles
            .iter()
            .map(|tw| {
                let mut m = [CompensatedSum::default(); 4];
                for ((&f, &r), &w) in self.freqs.iter().zip(&rotated).zip(tw) {
                    let mut t = r * w;
                    m[0].add(t);
                    for slot in m.iter_mut().take(order + 1).skip(1) {
                        t *= f;
                        slot.add(t);
                    }
                }
                Moments(m.map(CompensatedSum::value))
            })
            .collect()
    }

    pub fn residual(&self, params: &DriftParams) -> Residual {
        let kappa = self
            .moments(params.eps, 1)
            .iter()
            .zip(&self.targets)
            .map(|(Moments(m), &t)| m[0] * params.a + m[1] * params.b - t)
            .collect();
        Residual {
            kappa,
            sample_set: self.sample_set.clone(),
        }
    }

    pub fn objective(&self, params: &DriftParams) -> f64 {
        self.residual(params).sum_of_squares()
    }

    fn partials_from(
        &self,
        params: &DriftParams,
        moments: &[Moments],
    ) -> Vec<(Complex64, KappaPartials)> {
        let DriftParams { a, b, .. } = *params;
        moments
            .iter()
            .zip(&self.targets)
            .zip(&self.sample_set)
            .map(|((Moments(m), &t), &sample)| {
                let kappa = m[0] * a + m[1] * b - t;
                let partials = KappaPartials {
                    sample,
                    d_eps: -J * (m[1] * a + m[2] * b),
                    d_a: m[0],
                    d_b: m[1],
                    d_eps_eps: -(m[2] * a + m[3] * b),
                    d_a_eps: -J * m[1],
                    d_eps_b: -J * m[2],
                };
                (kappa, partials)
            })
            .collect()
    }

    pub fn kappa_partials(&self, params: &DriftParams) -> Vec<KappaPartials> {
        let moments = self.moments(params.eps, 3);
        self.partials_from(params, &moments)
            .into_iter()
            .map(|(_, p)| p)
            .collect()
    }

    /// Objective, gradient and Hessian in one pass over the spectrum.
    pub fn evaluate(&self, params: &DriftParams) -> Evaluation {
        let moments = self.moments(params.eps, 3);
        let mut objective = 0.0;
        let mut gradient = [0.0; 3];
        let mut hessian = [[0.0; 3]; 3];
        for (kappa, partials) in self.partials_from(params, &moments) {
            objective += kappa.re * kappa.re + kappa.im * kappa.im;
            let d1 = partials.first();
            let d2 = partials.second();
            for p in 0..3 {
                gradient[p] += 2.0 * kappa.re * d1[p].re + 2.0 * kappa.im * d1[p].im;
                for nu in p..3 {
                    hessian[p][nu] += 2.0 * d1[nu].re * d1[p].re
                        + 2.0 * kappa.re * d2[p][nu].re
                        + 2.0 * d1[nu].im * d1[p].im
                        + 2.0 * kappa.im * d2[p][nu].im;
                }
            }
        }
        for p in 0..3 {
            for nu in 0..p {
                hessian[p][nu] = hessian[nu][p];
            }
        }
        Evaluation {
            objective,
            derivatives: ModelDerivatives { gradient, hessian },
        }
    }

    pub fn derivatives(&self, params: &DriftParams) -> ModelDerivatives {
        self.evaluate(params).derivatives
    }

    pub fn gradient(&self, params: &DriftParams) -> [f64; 3] {
        let moments = self.moments(params.eps, 2);
        let mut g = [0.0; 3];
        for (Moments(m), &t) in moments.iter().zip(&self.targets) {
            let kappa = m[0] * params.a + m[1] * params.b - t;
            let d = [-J * (m[1] * params.a + m[2] * params.b), m[0], m[1]];
            for p in 0..3 {
                g[p] += 2.0 * kappa.re * d[p].re + 2.0 * kappa.im * d[p].im;
            }
        }
        g
    }
}

pub fn residual(
    fg: &Sweep,
    bg_ir: &ImpulseResponse,
    params: &DriftParams,
    sample_set: &[usize],
) -> Result<Residual> {
    Ok(DriftProblem::new(fg, bg_ir, sample_set)?.residual(params))
}

pub fn objective(
    fg: &Sweep,
    bg_ir: &ImpulseResponse,
    params: &DriftParams,
    sample_set: &[usize],
) -> Result<f64> {
    Ok(DriftProblem::new(fg, bg_ir, sample_set)?.objective(params))
}

/// Partials of κ at each selected sample. The background only shifts κ, so
/// its partials do not depend on it.
pub fn kappa_partials(
    fg: &Sweep,
    params: &DriftParams,
    sample_set: &[usize],
) -> Result<Vec<KappaPartials>> {
    let zeros = vec![Complex64::new(0.0, 0.0); fg.len()];
    let problem = DriftProblem::from_parts(
        fg.grid().shared_values(),
        fg.samples().to_vec(),
        &zeros,
        sample_set,
    )?;
    Ok(problem.kappa_partials(params))
}

pub fn derivatives(
    fg: &Sweep,
    bg_ir: &ImpulseResponse,
    params: &DriftParams,
    sample_set: &[usize],
) -> Result<ModelDerivatives> {
    Ok(DriftProblem::new(fg, bg_ir, sample_set)?.derivatives(params))
}
