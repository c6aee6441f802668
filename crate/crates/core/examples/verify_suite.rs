//! Runs part of the verification suite from the library and prints the
//! report. Pass a check-name prefix to choose which checks run.

use zeronoise::config::RunConfig;
use zeronoise::verify::{run_all, Status};

fn main() -> zeronoise::Result<()> {
    let only = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "classical".into());
    let dir = tempfile_dir();
    let cfg = RunConfig {
        out_dir: Some(dir.clone()),
        ..RunConfig::default()
    };
    for r in run_all(&cfg, Some(&only))? {
        let tag = if r.status == Status::Pass {
            "pass"
        } else {
            "FAIL"
        };
        println!("{tag}  {}  ({})", r.check_name, r.anchor);
        println!("      {}", r.observed);
    }
    println!("report written to {}", dir.join("report.json").display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("zeronoise-verify-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
