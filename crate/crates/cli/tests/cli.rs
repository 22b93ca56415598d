use parabola_cli::experiments::exponent_table;
use parabola_cli::{emit, run, Bundle, Experiment, ExperimentConfig, Format, Report};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ALL_FORMATS: [Format; 3] = [Format::Json, Format::Csv, Format::Md];

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("parabola-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn parabola(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parabola")).args(args).output().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// `(estimate, peak)` in MB from the binary's stderr.
fn memory_line(out: &Output) -> (f64, f64) {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("memory:")).expect("memory line");
    let nums: Vec<f64> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    (nums[0], nums[1])
}

#[test]
fn config_file_round_trip_is_byte_identical() {
    for exp in Experiment::ALL {
        let mut cfg = ExperimentConfig::defaults(exp);
        cfg.kappa = Some(1.0 / 3.0);
        cfg.lambda = Some(0.3);
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }
}

#[test]
fn config_file_drives_the_binary() {
    let dir = scratch("config");
    let path = dir.join("scan.conf");
    std::fs::write(&path, "# H = 1\nexperiment = kappa-scan\nfamily = constant\nR = 64\np = 2, 4\n").unwrap();
    let out = parabola(&["run", path.to_str().unwrap(), "--out", dir.join("rep").to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::from_json(&std::fs::read_to_string(dir.join("rep/kappa-scan.json")).unwrap()).unwrap();
    assert_eq!(report.config.p, vec![2.0, 4.0]);
    assert_eq!(report.rows.len(), 2);
}

#[test]
fn kappa_scan_constant_weight_at_64_passes() {
    let dir = scratch("h1");
    let out = parabola(&["kappa-scan", "--family", "constant", "--R", "64", "--out", dir.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.starts_with("PASS kappa identities"), "{stdout}");
    let report = Report::from_json(&std::fs::read_to_string(dir.join("kappa-scan.json")).unwrap()).unwrap();
    assert!(report.rows.iter().all(|r| r.measured == 1.0));
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.content_hash, report.compute_hash());
}

#[test]
fn identical_runs_give_identical_files() {
    let mut cfg = ExperimentConfig::defaults(Experiment::BroadNarrow);
    cfg.r = vec![16, 64];
    cfg.trials = 3;
    cfg.points = 300;
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    emit(&run(&cfg).unwrap(), &ALL_FORMATS, &a).unwrap();
    emit(&run(&cfg).unwrap(), &ALL_FORMATS, &b).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, fb);
}

#[test]
fn empty_report_emits_valid_empty_tables() {
    let mut report = Report::new(&ExperimentConfig::defaults(Experiment::Certificates));
    report.seal();
    let dir = scratch("empty");
    let paths = emit(&Bundle { report: report.clone(), sidecars: Vec::new() }, &ALL_FORMATS, &dir).unwrap();
    assert_eq!(paths.len(), 4);
    assert_eq!(std::fs::read_to_string(dir.join("certificates.csv")).unwrap().lines().count(), 1);
    assert_eq!(std::fs::read_to_string(dir.join("certificates_fits.csv")).unwrap().lines().count(), 1);
    let back = Report::from_json(&std::fs::read_to_string(dir.join("certificates.json")).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = scratch("unwritable");
    let blocker = dir.join("file");
    std::fs::write(&blocker, "").unwrap();
    let mut report = Report::new(&ExperimentConfig::defaults(Experiment::KappaScan));
    report.seal();
    assert!(emit(&Bundle { report, sidecars: Vec::new() }, &ALL_FORMATS, &blocker.join("sub")).is_err());
}

#[test]
fn examples_suite_emits_one_fit_per_example_and_matches_golden() {
    let cfg = ExperimentConfig::defaults(Experiment::ExamplesSuite);
    assert_eq!(cfg.r, vec![64, 256]);
    let report = run(&cfg).unwrap().report;
    for example in ["ex_ball", "ex_alpha", "ex_Y"] {
        for &p in &cfg.p {
            assert!(report.fits.iter().any(|f| f.family == example && f.p == p), "{example} p={p}");
        }
    }
    assert!(report.notes.iter().any(|n| n.contains("[64, 256, 1024]")));
    let table = exponent_table(&report, "ex_ball");
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ex_ball_exponents.csv");
    if std::env::var_os("PARABOLA_UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &table).unwrap();
    }
    assert_eq!(table, std::fs::read_to_string(&golden).unwrap());
}

#[test]
fn exit_status_reflects_errors() {
    assert_eq!(parabola(&["defaults", "nope"]).status.code(), Some(2));
    assert_eq!(parabola(&["kappa-scan", "--family", "nope"]).status.code(), Some(2));
    assert_eq!(parabola(&["kappa-scan", "--R", "8"]).status.code(), Some(2));
    let out = parabola(&["square-verify", "--set", "memory_cap_mb=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimated peak memory"));
}

#[test]
fn defaults_print_a_parseable_config() {
    let out = parabola(&["defaults", "bilinear"]);
    assert!(out.status.success());
    let cfg = ExperimentConfig::parse(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(cfg, ExperimentConfig::defaults(Experiment::Bilinear));
}

#[test]
fn memory_estimate_is_within_a_factor_two_of_the_peak() {
    let dir = scratch("mem");
    let d = dir.to_str().unwrap();
    let runs: [&[&str]; 4] = [
        &["bilinear", "--R", "256", "--set", "trials=4", "--out", d],
        &["examples-suite", "--out", d],
        &["broad-narrow", "--R", "256", "--set", "trials=4", "--out", d],
        &["kappa-scan", "--family", "constant", "--R", "256", "--p", "2", "--out", d],
    ];
    for args in runs {
        let out = parabola(args);
        assert!(out.status.success(), "{args:?}");
        let (est, peak) = memory_line(&out);
        assert!(est <= 2.0 * peak && peak <= 2.0 * est, "{args:?}: estimate {est} MB, peak {peak} MB");
    }
}
