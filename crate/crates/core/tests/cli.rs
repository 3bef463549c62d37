use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use platoon_mpc::experiment::{self, Figure, SweepSpec};
use platoon_mpc::io;
use platoon_mpc::metrics;
use platoon_mpc::mpc::Mode;
use platoon_mpc::sim::{self, LeaderProfile, ScenarioConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn small(mode: Mode) -> ScenarioConfig {
    ScenarioConfig {
        mode,
        n_vehicles: 4,
        per: 0.3,
        seed: 2,
        duration: 20.0,
        leader_profile: LeaderProfile::time_varying(),
        ..ScenarioConfig::default()
    }
}

#[test]
fn run_writes_parseable_and_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", &small(Mode::Cacc));
    for out in ["a", "b"] {
        let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(out)).status().unwrap();
        assert!(st.success());
    }
    for f in ["trace.csv", "report.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }

    let rows = io::read_trace_file(&dir.path().join("a/trace.csv")).unwrap();
    let trace = sim::run(&small(Mode::Cacc)).unwrap();
    assert_eq!(rows.len(), trace.steps.len() * 4);
    for row in &rows {
        let log = &trace.steps[row.step].vehicles[row.vehicle_id];
        assert_eq!(row.x, log.state.x);
        assert_eq!(row.v, log.state.v);
        assert_eq!(row.a_cmd, log.input.a);
        assert_eq!(row.gap, log.gap);
        assert_eq!(row.rx.iter().flatten().count(), row.vehicle_id);
        assert_eq!(row.rx.iter().flatten().cloned().collect::<Vec<_>>(), log.delivered);
    }
    let report = io::read_reports_file(&dir.path().join("a/report.csv")).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].p95_error, Some(metrics::report(&trace).unwrap().p95_error));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", &small(Mode::Platooning));
    let st = bin().args(["run", "--seed", "9", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert!(st.success());
    let row = &io::read_reports_file(&dir.path().join("report.csv")).unwrap()[0];
    assert_eq!(row.seed, 9);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", &small(Mode::Acc));
    let out = dir.path().join("env_out");
    let st = bin().args(["run", "--config"]).arg(&cfg).env("PLATOON_OUT_DIR", &out).status().unwrap();
    assert!(st.success());
    assert!(out.join("trace.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_vehicles": 1}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_vehicles"));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, "{\n  \"mode\": \"cacc\",\n  \"perr\": 0.2\n}").unwrap();
    let out = bin().args(["run", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // A follower that may not brake runs into the slowing leader.
    let mut crash = small(Mode::Acc);
    crash.bounds.a_min = 0.0;
    crash.per = 0.0;
    crash.duration = 60.0;
    crash.leader_profile = LeaderProfile::StepTest {
        initial: 20.0,
        low: 0.0,
        high: 0.0,
        decel_start: 1.0,
        accel_start: 50.0,
        ramp_rate: 1.0,
    };
    let cfg = write_json(dir.path(), "crash.json", &crash);
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("c")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collision at step"));
    let row = &io::read_reports_file(&dir.path().join("c/report.csv")).unwrap()[0];
    assert_eq!(row.status, "collision");
}

#[test]
fn presets_parse() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("fig2") || name == "constant.json" {
            experiment::load_config(&path).unwrap();
        } else {
            SweepSpec::load(&path).unwrap();
        }
    }
}

#[test]
fn one_cell_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let template = small(Mode::Cacc);
    let spec = SweepSpec { modes: vec![Mode::Platooning], lengths: vec![4], pers: vec![0.3], seeds: vec![2], template };
    let spec_path = write_json(dir.path(), "sweep.json", &spec);
    let st = bin().args(["sweep", "--workers", "1", "--config"]).arg(&spec_path).arg("--out").arg(dir.path().join("s")).status().unwrap();
    assert!(st.success());
    let agg = io::read_reports_file(&dir.path().join("s/aggregate.csv")).unwrap();

    let single = experiment::run_scenario(&small(Mode::Platooning), &dir.path().join("r")).unwrap();
    assert_eq!(agg, vec![single]);
}

#[test]
fn sweep_resumes_from_cell_files_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        modes: vec![Mode::Acc, Mode::Cacc, Mode::Platooning],
        lengths: vec![3, 4],
        pers: vec![0.0, 0.6],
        seeds: vec![1],
        template: ScenarioConfig { duration: 10.0, leader_profile: LeaderProfile::time_varying(), ..ScenarioConfig::default() },
    };
    let out = dir.path().join("sweep");
    let first = experiment::run_sweep(&spec, &out, Some(1)).unwrap();
    assert_eq!(first.len(), 12);
    assert!(first.iter().all(|r| r.is_ok()));

    // Tamper with one cell file: a resumed sweep must reuse it rather than recompute.
    let cell = spec.cells()[0];
    let path = out.join("cells").join(cell.file_name());
    let mut rows = io::read_reports_file(&path).unwrap();
    rows[0].mean_speed_diff = Some(123.0);
    io::write_reports_file(&rows, &path).unwrap();
    let second = experiment::run_sweep(&spec, &out, Some(1)).unwrap();
    assert_eq!(second[0].mean_speed_diff, Some(123.0));
    assert_eq!(&second[1..], &first[1..]);

    let agg = experiment::aggregate_path(&out);
    let plot = bin().args(["plotdata", "--figure", "fig7", "--input"]).arg(&agg).output().unwrap();
    assert!(plot.status.success());
    let points = experiment::read_plot_data(&plot.stdout[..]).unwrap();
    let labels: std::collections::BTreeSet<String> = points.iter().map(|p| p.series.clone()).collect();
    assert_eq!(labels.len(), 5);
    assert!(points.iter().all(|p| p.x == 3.0 || p.x == 4.0));

    let fig5 = experiment::emit_plot_data(&second, Figure::Fig5).unwrap();
    assert_eq!(fig5.points.len(), 2 * 2 * 2);
    assert!(fig5.missing.is_empty());
}

#[test]
fn plotdata_reports_missing_cells_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    io::write_reports_file(&[], &empty).unwrap();
    let out = bin().args(["plotdata", "--figure", "fig5", "--input"]).arg(&empty).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "series,x,y,samples\n");

    let rows = vec![io::ReportRow {
        status: "ok".into(),
        error: None,
        mean_speed_diff: Some(1.0),
        ..io::ReportRow::failed(Mode::Cacc, 5, 0.6, 0, "ok", String::new())
    }];
    let partial = dir.path().join("partial.csv");
    io::write_reports_file(&rows, &partial).unwrap();
    let out = bin().args(["plotdata", "--figure", "fig7", "--input"]).arg(&partial).output().unwrap();
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing cell: acc at x=5"), "{err}");

    let out = bin().args(["plotdata", "--figure", "fig9", "--input"]).arg(&partial).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn fig4_from_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment::load_config(&configs().join("fig2_platooning.json")).unwrap();
    let short = ScenarioConfig { duration: 15.0, ..cfg };
    experiment::run_scenario(&short, &dir.path().join("platooning")).unwrap();
    let trace = dir.path().join("platooning/trace.csv");
    let out = bin().args(["plotdata", "--figure", "fig4", "--input"]).arg(&trace).output().unwrap();
    assert!(out.status.success());
    let points = experiment::read_plot_data(&out.stdout[..]).unwrap();
    assert_eq!(points.len(), 150);
    assert!(points.iter().all(|p| p.series == "platooning" && p.y >= 0.0));
    assert_eq!(points[0].y, 0.0);
    assert!(points.iter().any(|p| p.y > 0.5));
}
