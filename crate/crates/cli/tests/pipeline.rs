use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use aqgwr::gwr::read_models;
use aqgwr::eval::{loocv, split_days};
use aqgwr::{generate, CovariateSet, DaySet, KernelSpec, ModelFamily, ModelKind, SplitSpec, SynthSpec, WlsOptions};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn aqgwr(config: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_aqgwr"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(config: &Path, args: &[&str]) -> Run {
    let r = aqgwr(config, args);
    assert_eq!(r.code, 0, "aqgwr {args:?} failed: {}", r.stderr);
    r
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const EXACT: &str = r#"
[synth]
seed = 11
[synth.spec]
stations = 4
deployed = 2
hours = 480
noise_sigma = 0.0
site_variation = 0.0
coefficients = [
  { kind = "constant", value = 4.0 },
  { kind = "constant", value = 0.2 },
  { kind = "constant", value = 0.05 },
  { kind = "constant", value = -0.1 },
  { kind = "constant", value = 0.3 },
  { kind = "constant", value = 0.6 },
]
"#;

#[test]
fn noiseless_panel_gives_exact_models_for_all_families() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXACT);
    ok(&cfg, &["synth"]);
    let fit = ok(&cfg, &["fit"]);
    assert!(fit.stdout.contains("sgwr"), "{}", fit.stdout);
    let beta = [4.0, 0.2, 0.05, -0.1, 0.3, 0.6];
    for family in ModelFamily::ALL {
        let models = read_models(&dir.path().join(format!("out/models/models_{}.csv", family.token()))).unwrap();
        assert!(!models.is_empty(), "{family}");
        for m in &models {
            for (b, t) in m.beta.iter().zip(beta) {
                assert!((b - t).abs() < 1e-6, "{family} {}: {:?}", m.target_id, m.beta);
            }
        }
    }
}

#[test]
fn bandwidth_flag_changes_gwr_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "panel_dir = \"panel\"\n[synth]\nseed = 2\n[synth.spec]\nhours = 240\n");
    ok(&cfg, &["synth"]);
    let out = |b: &str| dir.path().join(format!("b{b}"));
    for b in ["1460", "3000"] {
        ok(&cfg, &["fit", "--model", "gwr", "--bandwidth", b, "--out", out(b).to_str().unwrap()]);
    }
    let a = fs::read(out("1460").join("models/models_gwr.csv")).unwrap();
    let b = fs::read(out("3000").join("models/models_gwr.csv")).unwrap();
    assert_ne!(a, b);
    assert!(!out("3000").join("models/models_c.csv").exists());
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[validate]
candidates = [800, 1460, 3000]

[grid]
bbox = { min_x = 0, min_y = 0, max_x = 6000, max_y = 6000 }
cell_size = 3000

[synth]
seed = 5
[synth.spec]
hours = 720
gain_spread = 0.2
offset_spread = 0.2
"#;
    let cfg = write_config(dir.path(), body);
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(dir.path().join("out"));
        ok(&cfg, &["synth"]);
        ok(&cfg, &["fit", "--jobs", "2"]);
        let v = ok(&cfg, &["validate", "--bandwidth-search"]);
        assert!(v.stdout.contains("S2"), "{}", v.stdout);
        let g = ok(&cfg, &["grid"]);
        assert!(g.stdout.contains("2 x 2 nodes, 6 layers"), "{}", g.stdout);
        snapshots.push(read_tree(&dir.path().join("out")));
    }
    assert_eq!(snapshots[0], snapshots[1]);

    let out = dir.path().join("out");
    let curve = fs::read_to_string(out.join("validation/bandwidth_curve.csv")).unwrap();
    assert!(curve.lines().count() >= 4, "{curve}");
    let split = fs::read_to_string(out.join("validation/split.csv")).unwrap();
    assert!(split.contains("S0") && split.contains("S2"));
    let layers: Vec<_> = fs::read_dir(out.join("grid")).unwrap().collect();
    assert_eq!(layers.len(), 6);
    let intercept = fs::read_to_string(out.join("grid/coef_intercept.csv")).unwrap();
    assert_eq!(intercept.lines().count(), 1 + 4);
}

#[test]
fn validation_report_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[fit]\nmodels = [\"sgwr\"]\n[synth]\nseed = 9\n[synth.spec]\nhours = 480\n");
    ok(&cfg, &["synth"]);
    ok(&cfg, &["validate"]);

    let (panel, _) = generate(&SynthSpec { hours: 480, ..SynthSpec::default() }, 9).unwrap();
    let split = split_days(&SplitSpec::covering(&panel).unwrap()).unwrap();
    let cv = loocv(
        &panel,
        ModelKind::Sgwr,
        &KernelSpec::gaussian(1460.0).unwrap(),
        &CovariateSet::gwr5(),
        &split.hours_in(&panel, DaySet::S1),
        &split.hours_in(&panel, DaySet::S2),
        WlsOptions::default(),
    )
    .unwrap();
    let summary = fs::read_to_string(dir.path().join("out/validation/cv_summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "sgwr");
    let reported: f64 = row[3].parse().unwrap();
    assert!((reported - cv.cv_rmse).abs() < 1e-9 * cv.cv_rmse, "{reported} vs {}", cv.cv_rmse);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "unknown_key = 1\n");
    assert_eq!(aqgwr(&cfg, &["fit"]).code, 1);
    let cfg = write_config(dir.path(), "[kernel]\nbandwidth = -5\n");
    assert_eq!(aqgwr(&cfg, &["fit"]).code, 1);
    let cfg = write_config(dir.path(), "");
    assert_eq!(aqgwr(&cfg, &["grid"]).code, 1);
    assert_eq!(aqgwr(&cfg, &["fit", "--kernel", "triangle"]).code, 1);
    assert_eq!(aqgwr(&dir.path().join("absent.toml"), &["fit"]).code, 1);
}

#[test]
fn missing_panel_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(aqgwr(&cfg, &["fit"]).code, 2);
}

#[test]
fn absent_covariate_or_reference_fails_before_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nseed = 1\n[synth.spec]\nhours = 48\n");
    ok(&cfg, &["synth"]);
    let panel = dir.path().join("out/panel/panel.csv");
    let original = fs::read_to_string(&panel).unwrap();

    let without_col = |name: &str| {
        let mut lines = original.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let i = header.iter().position(|h| *h == name).unwrap();
        let mut out = String::new();
        for line in std::iter::once(header.join(",")).chain(lines.map(String::from)) {
            let mut cells: Vec<&str> = line.split(',').collect();
            cells.remove(i);
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    };
    fs::write(&panel, without_col("co_na")).unwrap();
    let r = aqgwr(&cfg, &["fit"]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("co_na"));
    assert!(!dir.path().join("out/models").exists());

    fs::write(&panel, without_col("ref_no2")).unwrap();
    let r = aqgwr(&cfg, &["fit"]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("reference"));
}

fn raw_fixture(dir: &Path, short_first_hour: bool) -> PathBuf {
    let mut text = String::from("device,time,flag,no2,no,co,rh,t,p,ref\n");
    for minute in 0..1440u32 {
        let (h, m) = (minute / 60, minute % 60);
        let ts = format!("2020-07-01 {h:02}:{m:02}:00");
        let x = minute as f64;
        if !(short_first_hour && h == 0 && m % 15 >= 11) {
            let _ = writeln!(
                text,
                "SENSOR_1,{ts},0,{:.3},{:.3},{:.3},{:.2},{:.2},1013,",
                20.0 + (x / 90.0).sin(),
                10.0 + (x / 50.0).cos(),
                300.0 + x / 10.0,
                60.0 - x / 100.0,
                18.0 + (x / 200.0).sin()
            );
        }
        let flag = u8::from(minute == 7);
        let _ = writeln!(text, "STATION_1,{ts},{flag},,,,,,,{:.3}", 30.0 + (x / 70.0).sin());
    }
    let path = dir.join("raw.csv");
    fs::write(&path, text).unwrap();
    path
}

const INGEST: &str = r#"
[ingest]
sites = "sites.csv"
flags = [1]
rename = { SENSOR_1 = "S1" }
keep = ["STATION_1"]
reference_unit = "ugm3"

[ingest.schema]
device_column = "device"
timestamp_column = "time"
flag_column = "flag"
channels = { no2 = "no2_na", no = "no_na", co = "co_na", rh = "rh_pct", t = "t_c", p = "p_mbar", ref = "ref_no2" }
"#;

fn ingest_setup(short_first_hour: bool) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sites.csv"),
        "id,x,y,role,typology,reference\nSTATION_1,0,0,reference,urban_background,\nS1,0,0,collocated_sensor,urban_background,STATION_1\n",
    )
    .unwrap();
    let raw = raw_fixture(dir.path(), short_first_hour);
    let cfg = write_config(dir.path(), INGEST);
    (dir, cfg, raw)
}

fn sensor_hours(dir: &Path) -> usize {
    fs::read_to_string(dir.join("out/panel/panel.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("S1,"))
        .count()
}

#[test]
fn one_clean_day_gives_24_hours_and_reruns_identically() {
    let (dir, cfg, raw) = ingest_setup(false);
    let first = ok(&cfg, &["ingest", raw.to_str().unwrap()]);
    assert!(first.stdout.contains("flags: removed 1"), "{}", first.stdout);
    assert_eq!(sensor_hours(dir.path()), 24);
    let snapshot = read_tree(&dir.path().join("out"));
    let second = ok(&cfg, &["ingest", raw.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(snapshot, read_tree(&dir.path().join("out")));
}

#[test]
fn eleven_minute_quarters_are_dropped_and_reported() {
    let (dir, cfg, raw) = ingest_setup(true);
    let run = ok(&cfg, &["ingest", raw.to_str().unwrap()]);
    // Four short quarters for each of the six sensor channels.
    assert!(run.stdout.contains("dropped 24"), "{}", run.stdout);
    assert_eq!(sensor_hours(dir.path()), 23);
}

#[test]
fn unmapped_device_is_a_data_error() {
    let (dir, _, raw) = ingest_setup(false);
    let cfg = write_config(dir.path(), &INGEST.replace("keep = [\"STATION_1\"]", "keep = []"));
    assert_eq!(aqgwr(&cfg, &["ingest", raw.to_str().unwrap()]).code, 2);
}
