//! Acceptance gate: every criterion at full resolution, one line each.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Pass criterion ids as arguments to run a subset.

use std::process::ExitCode;

use sasaki_lab::criteria::{run, Status, SuiteOptions, CRITERIA};

const N: usize = 256;

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let opts = SuiteOptions::at(N);
    let mut failed = Vec::new();
    println!("acceptance at N = {N}, {} Monte Carlo samples", opts.mc_samples);
    for &(id, ..) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let report = run(id, &opts);
        println!("{}", report.line());
        if report.status() != Status::Pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
