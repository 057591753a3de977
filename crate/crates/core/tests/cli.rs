use driftcal::io::{save_scenario, ReportFile, Table};
use driftcal::synth::ScenarioSpec;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn driftcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftcal"))
        .args(args)
        .env("DRIFTCAL_THREADS", "2")
        .output()
        .expect("spawn driftcal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenario(dir: &Path, n_runs: usize) -> PathBuf {
    let mut spec = ScenarioSpec::static_long_term();
    spec.n_runs = n_runs;
    spec.duration_h = 6.0;
    let path = dir.join("scenario.json");
    save_scenario(&spec, &path).unwrap();
    path
}

fn synth(dir: &Path, n_runs: usize) -> PathBuf {
    let sc = scenario(dir, n_runs);
    let out = dir.join("data");
    let o = driftcal(&["synth", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    out
}

fn fit(manifest: &Path, report: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--manifest", s(manifest), "--report", s(report)];
    args.extend_from_slice(extra);
    driftcal(&args)
}

#[test]
fn synth_writes_pairs_manifest_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 3);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names
            .iter()
            .filter(|n| n.ends_with(".tsv") && !n.starts_with("truth"))
            .count(),
        6
    );
    assert!(names.contains(&"manifest.json".to_string()));
    assert!(names.contains(&"truth.tsv".to_string()));

    let again = dir.path().join("again");
    let o = driftcal(&[
        "synth",
        "--scenario",
        s(&dir.path().join("scenario.json")),
        "--out",
        s(&again),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for n in &names {
        assert_eq!(
            fs::read(out.join(n)).unwrap(),
            fs::read(again.join(n)).unwrap(),
            "{n}"
        );
    }
}

#[test]
fn out_of_range_path_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::static_long_term();
    spec.n_runs = 2;
    spec.paths[1].delay_ns = 147.9;
    let sc = dir.path().join("bad.json");
    save_scenario(&spec, &sc).unwrap();
    let o = driftcal(&[
        "synth",
        "--scenario",
        s(&sc),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unambiguous"));
}

#[test]
fn fit_reports_improvement_and_modes_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 3);
    let manifest = out.join("manifest.json");
    let mut reports = Vec::new();
    for mode in ["conventional", "phase-only", "full"] {
        let path = dir.path().join(format!("{mode}.tsv"));
        let o = fit(&manifest, &path, &["--mode", mode]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        reports.push(ReportFile::load(&path).unwrap());
    }
    let truth = Table::load(&out.join("truth.tsv")).unwrap();
    for i in 0..3 {
        let (c, p, f) = (
            &reports[0].rows[i],
            &reports[1].rows[i],
            &reports[2].rows[i],
        );
        assert_eq!(c.improvement_db, 0.0);
        // run 0 carries no drift, so only later runs separate the modes
        if truth.column("time_h").unwrap()[i] > 1.0 {
            assert!(p.improvement_db < f.improvement_db);
            assert!(f.improvement_db >= 40.0);
        }
        assert!((f.eps_deg_per_ghz - truth.column("eps_deg_per_ghz").unwrap()[i]).abs() < 1e-4);
        assert!((f.a - truth.column("a").unwrap()[i]).abs() < 1e-5);
    }
    let legacy = dir.path().join("legacy.tsv");
    assert_eq!(
        fit(&manifest, &legacy, &["--no-correct"]).status.code(),
        Some(0)
    );
    assert_eq!(
        fs::read(&legacy).unwrap(),
        fs::read(dir.path().join("conventional.tsv")).unwrap()
    );
}

#[test]
fn identical_sweeps_give_minus_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 1);
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let same = text.replace("bg_0000.tsv", "fg_0000.tsv");
    let manifest = out.join("same.json");
    fs::write(&manifest, same).unwrap();
    let report = dir.path().join("r.tsv");
    assert_eq!(
        fit(&manifest, &report, &["--mode", "conventional"])
            .status
            .code(),
        Some(0)
    );
    let text = fs::read_to_string(&report).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[7], "-inf");
    assert_eq!(row[8], "-inf");
    assert_eq!(row[9].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn unreadable_pair_becomes_an_error_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 3);
    fs::write(out.join("fg_0001.tsv"), "garbage\n").unwrap();
    let report = dir.path().join("r.tsv");
    let o = fit(&out.join("manifest.json"), &report, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let file = ReportFile::load(&report).unwrap();
    assert_eq!(file.rows.len(), 3);
    assert!(file.rows[1].eps_deg_per_ghz.is_nan());
    assert!(file.rows[0].improvement_db > 40.0 || file.rows[2].improvement_db > 40.0);
}

#[test]
fn broken_manifest_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(&manifest, "{ not json").unwrap();
    let o = fit(&manifest, &dir.path().join("r.tsv"), &[]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!dir.path().join("r.tsv").exists());
}

#[test]
fn plot_data_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 3);
    let manifest = out.join("manifest.json");
    let plot = dir.path().join("plot");
    for what in ["ir", "ir-subtracted", "phase-dev", "mag-dev", "params"] {
        let o = driftcal(&[
            "plot-data",
            "--manifest",
            s(&manifest),
            "--what",
            what,
            "--out",
            s(&plot),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{what}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let ir = Table::load(&plot.join("ir.tsv")).unwrap();
    let delay = ir.column("delay_ns").unwrap();
    assert_eq!(delay.len(), 1601);
    let step = 1.0 / (16.0 * 1602.0 / 1601.0);
    assert!(
        (delay[1600] - 1600.0 * step).abs() < 1e-6,
        "{}",
        delay[1600]
    );

    let phase = Table::load(&plot.join("phase_dev.tsv")).unwrap();
    assert!(phase.column("run_0").unwrap().iter().all(|&x| x == 0.0));
    let mag = Table::load(&plot.join("mag_dev.tsv")).unwrap();
    assert!(mag.column("run_0").unwrap().iter().all(|&x| x == 0.0));

    let params = Table::load(&plot.join("params.tsv")).unwrap();
    let truth = Table::load(&out.join("truth.tsv")).unwrap();
    for (x, y) in params
        .column("eps")
        .or(params.column("eps_deg_per_ghz"))
        .unwrap()
        .iter()
        .zip(truth.column("eps_deg_per_ghz").unwrap())
    {
        assert!((x - y).abs() < 1e-4);
    }

    let o = driftcal(&[
        "plot-data",
        "--manifest",
        s(&manifest),
        "--what",
        "bogus",
        "--out",
        s(&plot),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn usage_errors() {
    assert_eq!(driftcal(&[]).status.code(), Some(1));
    assert_eq!(driftcal(&["fit"]).status.code(), Some(1));
    assert_eq!(driftcal(&["--help"]).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_driftcal"))
        .args(["fit", "--manifest", "m.json", "--report", "r.tsv"])
        .env("DRIFTCAL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
