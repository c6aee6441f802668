use std::path::Path;
use std::process::{Command, Output};

fn zeronoise(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeronoise"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.toml"), "epsilon = [not toml").unwrap();
    std::fs::write(dir.path().join("unknown.toml"), "no_such_key = 1\n").unwrap();
    std::fs::write(dir.path().join("negative.toml"), "epsilon = -0.1\n").unwrap();
    for cfg in [
        "broken.toml",
        "unknown.toml",
        "negative.toml",
        "missing.toml",
    ] {
        let out = zeronoise(&["verify", "--config", cfg, "--only", "cdf"], dir.path());
        assert_eq!(
            code(&out),
            2,
            "{cfg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = zeronoise(&["verify", "--only", "no_such_check"], dir.path());
    assert_eq!(code(&out), 2);
    let out = zeronoise(&["solve", "--format", "xml"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_writes_a_report_and_exits_zero_on_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = zeronoise(&["verify", "--only", "cdf", "--out", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS  cdf_inequality"));
    let text = std::fs::read_to_string(dir.path().join("run/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 1);
    assert_eq!(report[0]["check_name"], "cdf_inequality");
    assert_eq!(report[0]["status"], "pass");
    assert_eq!(report[0]["observed"]["violations"], 0);
}

#[test]
fn classical_tables_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("one.toml"),
        "classical_drifts = [{ kind = \"zero\" }]\n",
    )
    .unwrap();
    for format in ["csv", "json"] {
        let out = zeronoise(
            &[
                "classical",
                "--config",
                "one.toml",
                "--format",
                format,
                "--out",
                format,
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let table = dir
            .path()
            .join(format)
            .join(format!("classical_zero.{format}"));
        assert!(table.exists(), "{}", table.display());
        assert!(dir
            .path()
            .join(format)
            .join("classical_zero.meta.json")
            .exists());
    }
    let text = std::fs::read_to_string(dir.path().join("csv/classical_zero.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("s,y,p,lambda"));
}
