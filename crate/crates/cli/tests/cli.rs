use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sjtlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("sjtlab-{}-{name}", std::process::id()));
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn scenario_files_run_clean() {
    for (cmd, file) in [
        ("boxpromo", "boxpromo_honest.toml"),
        ("boxpromo", "boxpromo_scripted.toml"),
        ("boxpromo", "boxpromo_random.toml"),
        ("synth", "synth_halting.toml"),
        ("synth", "synth_requirement.toml"),
    ] {
        let path = scenario(file);
        let out = run(&[cmd, "run", path.to_str().unwrap()]);
        assert_eq!(
            code(&out),
            0,
            "{file}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!stdout(&out).contains("FAIL"), "{file}");
    }
}

#[test]
fn halting_scenario_reports_halt() {
    let out = run(&[
        "synth",
        "run",
        scenario("synth_halting.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("halted at stage 3"));
}

#[test]
fn scripted_oracle_shows_conflict_and_promotion() {
    let out = run(&[
        "--format",
        "machine",
        "boxpromo",
        "run",
        scenario("boxpromo_scripted.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let levels = v["levels"].as_array().unwrap();
    assert_eq!(levels[0]["promoted"].as_array().unwrap().len(), 1);
    assert_eq!(levels[1]["conflicts"].as_array().unwrap().len(), 1);
}

#[test]
fn machine_output_is_deterministic() {
    let a = run(&[
        "--format", "machine", "--seed", "5", "synth", "fuzz", "--count", "6",
    ]);
    let b = run(&[
        "--format", "machine", "--seed", "5", "synth", "fuzz", "--count", "6",
    ]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&[
        "--format", "machine", "--seed", "5", "boxpromo", "fuzz", "--count", "6",
    ]);
    let d = run(&[
        "--format", "machine", "--seed", "5", "boxpromo", "fuzz", "--count", "6",
    ]);
    assert_eq!(code(&c), 0);
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn zero_count_is_rejected() {
    assert_eq!(code(&run(&["boxpromo", "fuzz", "--count", "0"])), 1);
    assert_eq!(code(&run(&["synth", "fuzz", "--count", "0"])), 1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&["boxpromo"])), 1);
    assert_eq!(code(&run(&["nonsense"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn malformed_toml_is_a_parse_error() {
    let p = scratch("bad.toml", "kind = \"synth\"\nhorizon = [\n");
    let out = run(&["synth", "run", p.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn unknown_field_is_rejected() {
    let p = scratch("extra.toml", "kind = \"synth\"\ncolour = 3\n");
    assert_eq!(code(&run(&["synth", "run", p.to_str().unwrap()])), 1);
}

#[test]
fn kind_mismatch_is_rejected() {
    let out = run(&[
        "boxpromo",
        "run",
        scenario("synth_halting.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_file_is_rejected() {
    assert_eq!(code(&run(&["synth", "run", "/nonexistent/x.toml"])), 1);
}

#[test]
fn failing_bound_exits_2() {
    let path = scenario("costfn_check.toml");
    let ok = run(&["costfn", "check-benign", path.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let bad = run(&[
        "costfn",
        "check-benign",
        path.to_str().unwrap(),
        "--bound",
        "2",
    ]);
    assert_eq!(code(&bad), 2);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn markers_and_sum_on_cost_tables() {
    let decay = scenario("decay.cost");
    let out = run(&["--eps", "1/2", "costfn", "markers", decay.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("eps=1/2"));
    let d = decay.to_str().unwrap();
    assert_eq!(code(&run(&["costfn", "sum", d, d])), 0);
}

#[test]
fn change_set_of_flip_file() {
    let out = run(&[
        "approx",
        "change-set",
        scenario("flip.approx").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let pairs: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(pairs.len(), 6);
    assert_eq!(pairs[0], "1 0 1");
}

#[test]
fn bad_threshold_is_rejected() {
    let decay = scenario("decay.cost");
    let out = run(&[
        "--eps",
        "-1/2",
        "costfn",
        "markers",
        decay.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn quick_verify_passes() {
    let out = run(&["verify", "all", "--quick"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn out_flag_writes_file() {
    let dest = std::env::temp_dir().join(format!("sjtlab-{}-out.json", std::process::id()));
    let out = run(&[
        "--format",
        "machine",
        "--out",
        dest.to_str().unwrap(),
        "synth",
        "run",
        scenario("synth_halting.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert!(v.is_object());
}
