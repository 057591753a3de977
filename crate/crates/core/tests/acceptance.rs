//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{c, naive_idft, oracle_objective, random_samples, rng, sweep};
use driftcal::io::{read_sweep, save_scenario, write_sweep};
use driftcal::model::DriftProblem;
use driftcal::pipeline::{
    batch_process, subtract_corrected, CorrectionOptions, PlausibilityBounds, SubtractionMode,
};
use driftcal::spectral::{make_grid, to_impulse_response, Role, Sweep, SweepMeta};
use driftcal::synth::{synth_dataset, synth_run, DriftTrajectory, PathSpec, ScenarioSpec};
use driftcal::{fit, DriftParams, FitConfig, ImpulseResponse};
use num_complex::Complex64;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Max entrywise error over the largest reference magnitude.
fn normwise<const K: usize>(got: &[f64; K], want: &[f64; K]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| m.max((g - w).abs()));
    err / scale
}

fn complex_normwise(got: &[Complex64], want: &[Complex64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| m.max((g - w).norm()));
    err / scale
}

fn derivative_fidelity() -> Outcome {
    let start = Instant::now();
    let sizes = [8usize, 64, 1601];
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for i in 0..100u64 {
        let n = sizes[i as usize % 3];
        let mut r = rng(1000 + i);
        let fg = random_samples(&mut r, n);
        let bg_ir = random_samples(&mut r, n);
        let centre = r.random_range(0..n);
        let width = r.random_range(0..2usize);
        let mut set: Vec<usize> =
            (centre.saturating_sub(width)..=(centre + width).min(n - 1)).collect();
        set.dedup();
        let p = DriftParams::from_degrees(
            r.random_range(-2.0..2.0),
            r.random_range(0.95..1.05),
            r.random_range(-0.01..0.01),
        );
        let grid = make_grid(2.0, 18.0, n).unwrap();
        let freqs = grid.values().to_vec();
        let problem = DriftProblem::new(
            &Sweep::new(
                grid.clone(),
                fg.clone(),
                SweepMeta::new(Role::Foreground, 0.0),
            )
            .unwrap(),
            &ImpulseResponse::new(bg_ir.clone(), grid).unwrap(),
            &set,
        )
        .unwrap();
        let analytic = problem.derivatives(&p);
        let x = p.to_array();

        let obj =
            |q: [f64; 3]| oracle_objective(&freqs, &fg, &bg_ir, &set, &DriftParams::from_array(q));
        let mut fd = [0.0; 3];
        for k in 0..3 {
            let h = 1e-6 * x[k].abs().max(1.0);
            let (mut up, mut dn) = (x, x);
            up[k] += h;
            dn[k] -= h;
            fd[k] = (obj(up) - obj(dn)) / (2.0 * h);
        }
        worst_g = worst_g.max(normwise(&analytic.gradient, &fd));

        let mut fdh = [0.0; 9];
        for j in 0..3 {
            let h = 1e-5 * x[j].abs().max(1.0);
            let (mut up, mut dn) = (x, x);
            up[j] += h;
            dn[j] -= h;
            let gu = problem.gradient(&DriftParams::from_array(up));
            let gd = problem.gradient(&DriftParams::from_array(dn));
            for k in 0..3 {
                fdh[3 * k + j] = (gu[k] - gd[k]) / (2.0 * h);
            }
        }
        let flat: [f64; 9] = std::array::from_fn(|k| analytic.hessian[k / 3][k % 3]);
        worst_h = worst_h.max(normwise(&flat, &fdh));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_g <= 1e-6 && worst_h <= 1e-5 && secs <= 60.0,
        format!("gradient rel err {worst_g:.2e} (<= 1e-6), hessian {worst_h:.2e} (<= 1e-5), {secs:.2} s"),
    )
}

fn exact_recovery() -> Outcome {
    let pair = common::drifted_pair(0.5, 1.002, 0.0005, None, 42);
    let start = Instant::now();
    let r = subtract_corrected(&pair, &CorrectionOptions::default().with_window(1)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let p = r.params();
    let errs = [
        common::rel(p.eps_deg_per_ghz(), 0.5),
        common::rel(p.a, 1.002),
        common::rel(p.b, 0.0005),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        r.converged() && worst <= 1e-6 && r.peak_residue_db <= -250.0 && secs <= 1.0,
        format!(
            "param rel err {worst:.2e} (<= 1e-6), peak residue {:.1} dB (<= -250), {secs:.3} s",
            r.peak_residue_db
        ),
    )
}

struct LongRun {
    times: Vec<f64>,
    conventional: Vec<f64>,
    phase: Vec<f64>,
    full: Vec<f64>,
    improvement: Vec<f64>,
    failures: usize,
    secs: f64,
}

fn long_run() -> LongRun {
    let spec = ScenarioSpec::static_long_term();
    let start = Instant::now();
    let data = synth_dataset(&spec).unwrap();
    let full = batch_process(&data.pairs, &CorrectionOptions::default());
    let secs = start.elapsed().as_secs_f64();
    let phase = batch_process(
        &data.pairs,
        &CorrectionOptions::with_mode(SubtractionMode::PhaseOnly),
    );
    let conventional = batch_process(
        &data.pairs,
        &CorrectionOptions::with_mode(SubtractionMode::Conventional),
    );
    let peak = |b: &driftcal::pipeline::BatchOutput| -> Vec<f64> {
        b.reports
            .iter()
            .map(|r| r.as_ref().map_or(f64::NAN, |r| r.peak_residue_db))
            .collect()
    };
    LongRun {
        times: data.truth.iter().map(|t| t.time_h).collect(),
        conventional: peak(&conventional),
        phase: peak(&phase),
        full: peak(&full),
        improvement: full.tracks.iter().map(|t| t.improvement_db).collect(),
        failures: full.failures() + phase.failures() + conventional.failures(),
        secs,
    }
}

fn forty_db(run: &LongRun) -> Outcome {
    let late: Vec<f64> = run
        .times
        .iter()
        .zip(&run.improvement)
        .filter(|(t, _)| **t > 1.0)
        .map(|(_, i)| *i)
        .collect();
    let min = late.iter().cloned().fold(f64::INFINITY, f64::min);
    let below = late.iter().filter(|i| !(**i >= 40.0)).count();
    outcome(
        run.failures == 0 && below == 0 && run.secs <= 600.0,
        format!(
            "{} runs, {} beyond 1 h, min improvement {min:.1} dB (>= 40), {below} below, {:.1} s (<= 600)",
            run.times.len(),
            late.len(),
            run.secs
        ),
    )
}

fn ordering(run: &LongRun) -> Outcome {
    let n = run.times.len();
    let ok = (0..n)
        .filter(|&i| run.conventional[i] > run.phase[i] && run.phase[i] > run.full[i])
        .count();
    let frac = ok as f64 / n as f64;
    outcome(
        frac >= 0.95,
        format!(
            "conventional > phase-only > full in {ok}/{n} runs ({:.2}%, >= 95%)",
            100.0 * frac
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let bounds = PlausibilityBounds::default().search_box();
    let steps = 21usize;
    let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (steps - 1) as f64;
    let n = 32;
    let grid = make_grid(2.0, 18.0, n).unwrap();
    let freqs = grid.values().to_vec();
    let (mut worst_margin, mut slowest, mut pass) = (f64::NEG_INFINITY, 0.0f64, true);
    for i in 0..20u64 {
        let start = Instant::now();
        let mut r = rng(5000 + i);
        let bg = random_samples(&mut r, n);
        let truth = DriftParams::from_degrees(
            r.random_range(-1.6..1.6),
            r.random_range(0.96..1.04),
            r.random_range(-0.008..0.008),
        );
        let noise = random_samples(&mut r, n);
        let fg: Vec<Complex64> = bg
            .iter()
            .zip(&freqs)
            .zip(&noise)
            .map(|((z, &f), e)| z / truth.factor(f) + e * 1e-3)
            .collect();
        let bg_ir = naive_idft(&bg);
        let peak = (0..n)
            .max_by(|&x, &y| bg_ir[x].norm().total_cmp(&bg_ir[y].norm()))
            .unwrap();
        let set: Vec<usize> = {
            let mut s = vec![(peak + n - 1) % n, peak, (peak + 1) % n];
            s.sort_unstable();
            s
        };

        let fg_sweep = Sweep::new(
            grid.clone(),
            fg.clone(),
            SweepMeta::new(Role::Foreground, 0.0),
        )
        .unwrap();
        let bg_sweep = Sweep::new(
            grid.clone(),
            bg.clone(),
            SweepMeta::new(Role::Background, 0.0),
        )
        .unwrap();
        let result = fit(&fg_sweep, &bg_sweep, &set, &FitConfig::default()).unwrap();
        let newton = oracle_objective(&freqs, &fg, &bg_ir, &set, &result.params);

        let mut lattice = f64::INFINITY;
        for ie in 0..steps {
            for ia in 0..steps {
                for ib in 0..steps {
                    let q = DriftParams::new(
                        axis(bounds[0], ie),
                        axis(bounds[1], ia),
                        axis(bounds[2], ib),
                    );
                    lattice = lattice.min(oracle_objective(&freqs, &fg, &bg_ir, &set, &q));
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        worst_margin = worst_margin.max((newton - lattice) / lattice);
        pass &= newton <= lattice && secs <= 5.0;
    }
    outcome(
        pass,
        format!("worst (newton - lattice)/lattice {worst_margin:.2e} (<= 0), slowest {slowest:.3} s (<= 5)"),
    )
}

fn forward_scattering() -> Outcome {
    let mut spec = ScenarioSpec::static_long_term();
    spec.trajectory = DriftTrajectory::linear(1.0, 0.3, 1.001, 0.0002);
    spec.noise_db = Some(-100.0);
    spec.n_runs = 1;
    spec.seed = 3;
    spec.targets = vec![PathSpec::new(20.0, 0.25, 1.9)];
    let pair = synth_run(&spec, 1.0, 1).unwrap().pair;
    let r = subtract_corrected(&pair, &CorrectionOptions::default()).unwrap();
    let p = r.params();
    outcome(
        !r.plausible() || r.fallback.is_some(),
        format!(
            "plausible={} fallback={} (eps {:.3} deg/GHz, a {:.4}, b {:.5})",
            r.plausible(),
            r.fallback.is_some(),
            p.eps_deg_per_ghz(),
            p.a,
            p.b
        ),
    )
}

fn transform_correctness() -> Outcome {
    let (mut worst, mut parseval) = (0.0f64, 0.0f64);
    for (i, n) in [7usize, 8, 1601].into_iter().enumerate() {
        let mut r = rng(77 + i as u64);
        let x = random_samples(&mut r, n);
        let ir = to_impulse_response(&sweep(x.clone(), Role::Background));
        worst = worst.max(complex_normwise(ir.samples(), &naive_idft(&x)));
        let time: f64 = ir.samples().iter().map(|z| z.norm_sqr()).sum();
        let freq: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        parseval = parseval.max(((time - freq) / freq).abs());
    }
    outcome(
        worst <= 1e-12 && parseval <= 1e-10,
        format!("idft rel err {worst:.2e} (<= 1e-12), parseval {parseval:.2e} (<= 1e-10)"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_driftcal"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn synth_fit(dir: &Path, scenario: &Path) -> Option<Vec<u8>> {
    let data = dir.join("data");
    let report = dir.join("report.tsv");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let ok = run_cli(&["synth", "--scenario", &s(scenario), "--out", &s(&data)])
        && run_cli(&[
            "fit",
            "--manifest",
            &s(&data.join("manifest.json")),
            "--report",
            &s(&report),
        ]);
    ok.then(|| std::fs::read(report).ok()).flatten()
}

fn determinism_and_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::static_long_term();
    spec.n_runs = 40;
    let scenario = dir.path().join("scenario.json");
    save_scenario(&spec, &scenario).unwrap();
    let first = synth_fit(&dir.path().join("a"), &scenario);
    let second = synth_fit(&dir.path().join("b"), &scenario);
    let identical = first.is_some() && first == second;

    let mut r = rng(8);
    let mut x = random_samples(&mut r, 1601);
    x[5] = c(1e-300, -3e300);
    let s = sweep(x, Role::Foreground);
    let path = dir.path().join("sweep.tsv");
    write_sweep(&s, &path).unwrap();
    let back = read_sweep(&path).unwrap();
    let worst = back
        .samples()
        .iter()
        .zip(s.samples())
        .map(|(g, w)| (g - w).norm() / w.norm())
        .fold(0.0, f64::max);
    outcome(
        identical && worst <= 1e-12 && back.grid() == s.grid(),
        format!(
            "reports byte-identical={identical}, sweep round trip rel err {worst:.2e} (<= 1e-12)"
        ),
    )
}

fn main() {
    let mut all = true;
    let mut report = |k: usize, name: &str, o: Outcome| {
        all &= o.pass;
        println!(
            "criterion {k} {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "derivative fidelity", derivative_fidelity());
    report(2, "exact recovery", exact_recovery());
    let run = long_run();
    report(3, "40 dB over 18 h", forty_db(&run));
    report(4, "residue ordering", ordering(&run));
    report(5, "grid-search oracle", oracle_equivalence());
    report(6, "forward scattering", forward_scattering());
    report(7, "transform", transform_correctness());
    report(
        8,
        "determinism and round trip",
        determinism_and_round_trip(),
    );
    if !all {
        std::process::exit(1);
    }
}
