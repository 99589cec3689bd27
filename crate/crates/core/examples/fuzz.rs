//! Random actors against the demo fixture with the invariants checked after
//! every step. Pass a seed and a step count to override the defaults.

use subsidy::sim::fuzz;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);

    let report = fuzz(seed, steps)?;
    println!("seed {seed}: {} steps, {} journal events", report.steps, report.journal_events);
    println!("delivered {} cancelled {} open sessions {}", report.delivered, report.cancelled, report.open_sessions);
    for (step, violation) in &report.violations {
        println!("step {step}: {violation}");
    }
    println!("{}", if report.clean() { "clean" } else { "VIOLATIONS" });
    Ok(())
}
