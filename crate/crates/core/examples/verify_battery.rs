//! Run a reduced Monte Carlo verification battery of the closed-form
//! pushforward, acquisition and expected-posterior computations.

use surro::verify::{run_verification, VerifyOptions};

fn main() -> surro::Result<()> {
    let opts = VerifyOptions {
        instances: 6,
        draws: 6000,
        ..VerifyOptions::default()
    };
    let report = run_verification(&opts)?;
    for item in &report.items {
        println!(
            "{} {:22} max deviation {:.3} (tolerance {})",
            if item.passed { "PASS" } else { "FAIL" },
            item.name,
            item.max_deviation,
            item.tolerance
        );
    }
    println!("overall: {}", if report.passed { "pass" } else { "fail" });
    Ok(())
}
