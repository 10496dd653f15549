//! Runs every built-in verification suite and prints its report.
//!
//! cargo run --release --example verification_suites -- [seed]

use lowrank_fusion::verify::{run_suite, Suite};

fn main() -> lowrank_fusion::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut failed = 0;
    for suite in Suite::ALL {
        let report = run_suite(suite, seed)?;
        println!("{report}\n");
        failed += report.failures().count();
    }
    if failed > 0 {
        eprintln!("{failed} properties failed");
        std::process::exit(1);
    }
    Ok(())
}
