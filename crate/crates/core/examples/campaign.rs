//! Runs a small Monte-Carlo campaign on the built-in synthetic surface and
//! prints per-algorithm success rates.
//!
//!     cargo run --release -p hsaicp --example campaign -- [trials] [overlap...]

use hsaicp::bench::{run_monte_carlo, synthetic_surface, CampaignConfig};
use hsaicp::Algorithm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let trials = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mut overlaps: Vec<f64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if overlaps.is_empty() {
        overlaps = vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
    }
    let source = synthetic_surface(5000, 2024)?;
    let config = CampaignConfig {
        overlaps,
        trials,
        algorithms: Algorithm::ALL.to_vec(),
        seed: 1,
        ..CampaignConfig::default()
    };
    let report = run_monte_carlo(&source, &config)?;
    println!(
        "{:>6} {:>7} {:>8} {:>12} {:>12} {:>10}",
        "xi", "algo", "success", "med eps_r", "med eps_t/d", "runtime"
    );
    for s in &report.summaries {
        let d = report
            .trials
            .iter()
            .find(|t| t.xi_target == s.xi_target)
            .map(|t| t.d)
            .unwrap_or(1.0);
        println!(
            "{:>6.3} {:>7} {:>8.2} {:>12.2e} {:>12.3} {:>9.3}s",
            s.xi_true,
            s.algorithm.name(),
            s.success_rate,
            s.median_eps_r,
            s.median_eps_t / d,
            s.mean_runtime_secs
        );
    }
    Ok(())
}
