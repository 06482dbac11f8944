use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gfcsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfcsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("GFCSIM_OUT_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_names_every_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = gfcsim(dir.path(), &["list-scenarios"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    for want in [
        "website-block",
        "dirauth",
        "reachability-2819",
        "block-lifecycle-12h",
        "scanner-attraction-17d",
        "downtime",
        "evasion-fragmentation",
        "evasion-window-rewrite",
        "evasion-syn-filter",
        "evasion-spa",
        "evasion-obfsproxy",
    ] {
        assert!(names.iter().any(|n| n == want), "{want} missing");
    }
}

#[test]
fn run_writes_log_header_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = gfcsim(dir.path(), &["run", "dpi-context", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("a");
    let log = fs::read_to_string(out.join("events.log")).unwrap();
    assert!(log.contains("\tscan-started\t"));
    let header = fs::read_to_string(out.join("header.toml")).unwrap();
    assert!(header.starts_with("[run]\n"));
    assert!(header.contains("expiry-threshold-s = 43200"));
    assert!(header.contains("smoothing-alpha = 0.05"));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("detect-scans = 2"));
    assert_eq!(stdout(&o), summary);
}

#[test]
fn same_command_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["x", "y"] {
        assert_eq!(
            code(&gfcsim(
                dir.path(),
                &["run", "block-lifecycle-12h", "--seed", "9", "--out", out]
            )),
            0
        );
        let r = gfcsim(
            dir.path(),
            &[
                "report",
                &format!("{out}/events.log"),
                "timing",
                "--out",
                &format!("{out}/rep"),
            ],
        );
        assert_eq!(code(&r), 0);
    }
    for file in [
        "events.log",
        "header.toml",
        "summary.txt",
        "rep/timing.csv",
        "rep/timing.txt",
    ] {
        let a = fs::read(dir.path().join("x").join(file)).unwrap();
        let b = fs::read(dir.path().join("y").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn zero_duration_is_an_empty_successful_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = gfcsim(dir.path(), &["run", "plain-client", "--duration-s", "0", "--out", "z"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("z/events.log")).unwrap(), "");
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gfcsim"))
        .args(["run", "website-block"])
        .current_dir(dir.path())
        .env("GFCSIM_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("from-env/events.log").exists());
}

#[test]
fn sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = gfcsim(
        dir.path(),
        &[
            "run",
            "dpi-context",
            "--seed",
            "5",
            "--sweep",
            "3",
            "--jobs",
            "2",
            "--out",
            "s",
        ],
    );
    assert_eq!(code(&o), 0);
    for seed in 5..8 {
        let header = fs::read_to_string(dir.path().join(format!("s/seed-{seed}/header.toml"))).unwrap();
        assert!(header.contains(&format!("seed = {seed}\n")));
    }
    // A sweep member matches the corresponding single run.
    assert_eq!(
        code(&gfcsim(
            dir.path(),
            &["run", "dpi-context", "--seed", "6", "--out", "one"]
        )),
        0
    );
    assert_eq!(
        fs::read(dir.path().join("s/seed-6/events.log")).unwrap(),
        fs::read(dir.path().join("one/events.log")).unwrap()
    );
}

#[test]
fn validation_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let good = gfcsim_core::bundled::source("website-block").unwrap();
    fs::write(dir.path().join("good.toml"), good).unwrap();
    let o = gfcsim(dir.path(), &["validate", "good.toml"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("ok: website-block"));

    let bad = good.replacen("hops = 4\n", "hops = 4\nloss = 1.5\n", 1);
    fs::write(dir.path().join("bad.toml"), &bad).unwrap();
    let line = bad.lines().position(|l| l == "loss = 1.5").unwrap() + 1;
    let o = gfcsim(dir.path(), &["validate", "bad.toml"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("line {line}")), "{err}");
    assert_eq!(code(&gfcsim(dir.path(), &["run", "bad.toml"])), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gfcsim(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&gfcsim(dir.path(), &["run", "no-such-scenario"])), 2);
    fs::write(dir.path().join("e.log"), "").unwrap();
    assert_eq!(code(&gfcsim(dir.path(), &["report", "e.log", "histogram"])), 2);
    assert_eq!(
        code(&gfcsim(dir.path(), &["report", "e.log", "smooth", "--alpha", "2"])),
        2
    );
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gfcsim(dir.path(), &["report", "missing.log", "timing"])), 1);
    fs::write(dir.path().join("garbage.log"), "not a log line\n").unwrap();
    assert_eq!(code(&gfcsim(dir.path(), &["report", "garbage.log", "timing"])), 1);
    // The output directory cannot be created under a regular file.
    fs::write(dir.path().join("file"), "").unwrap();
    assert_eq!(
        code(&gfcsim(dir.path(), &["run", "website-block", "--out", "file/sub"])),
        1
    );
}

#[test]
fn reports_write_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gfcsim(dir.path(), &["run", "timing-december", "--out", "t"])), 0);
    let o = gfcsim(
        dir.path(),
        &["report", "t/events.log", "smooth", "--alpha", "0.05", "--out", "sm"],
    );
    assert_eq!(code(&o), 0);
    for k in 0..4 {
        let csv = fs::read_to_string(dir.path().join(format!("sm/smooth-k{k}.csv"))).unwrap();
        assert!(csv.starts_with("index,time_s,minute,smoothed\n"));
        assert!(csv.lines().count() > 1);
    }
    let o = gfcsim(dir.path(), &["report", "t/events.log", "scanner-stats", "--out", "ss"]);
    assert!(stdout(&o).lines().any(|l| l.starts_with("master-fraction = ")));
    let o = gfcsim(
        dir.path(),
        &["report", "t/events.log", "usage", "--bucket", "3600", "--out", "u"],
    );
    assert_eq!(code(&o), 0);
    let usage = fs::read_to_string(dir.path().join("u/usage.csv")).unwrap();
    assert!(usage.starts_with("bucket_start_s,count\n"));
    assert_eq!(usage.lines().count(), 1 + 72);
    let o = gfcsim(dir.path(), &["report", "t/events.log", "timing", "--out", "tm"]);
    assert!(stdout(&o).contains("max-minute-offset = 3.000000"));
}
