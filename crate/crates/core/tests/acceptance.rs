//! Runs every acceptance criterion on the desk profile and prints one line per
//! criterion. Exits non-zero when any criterion fails.

use std::process::ExitCode;

use devae::config::ExperimentConfig;
use devae::pipeline::{reproduce_acceptance, AcceptanceOptions};

fn main() -> ExitCode {
    let out = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out);
    let started = std::time::Instant::now();
    let summary = match reproduce_acceptance(&ExperimentConfig::desk(), &out, &AcceptanceOptions::default()) {
        Ok(s) => s,
        Err(e) => {
            println!("acceptance run aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    print!("{}", summary.table());
    let passed = summary.criteria.iter().filter(|c| c.passed).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s; artifacts in {}",
        summary.criteria.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    if summary.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
