//! Runs a toy adaptation scenario and prints source-only and adapted mIoU.
//!
//! `cargo run --release -p didex-core --example color_shift [scenario.json] [seed...]`
//!
//! Without arguments the committed color-shift scenario runs at its own seed;
//! this run is the oracle for the committed adaptation margin.

use std::time::Instant;

use didex_core::adapt::{run_scenario, Scenario, ScenarioData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut scenario = match args.next() {
        Some(path) => Scenario::load(path.as_ref())?,
        None => Scenario::color_shift(),
    };
    let seeds: Vec<u64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![scenario.seed] } else { seeds };
    println!("{:>8} {:>12} {:>12} {:>8} {:>8}", "seed", "source_only", "adapted", "gain", "secs");
    for seed in seeds {
        scenario.seed = seed;
        let start = Instant::now();
        let data = ScenarioData::build(&scenario)?;
        let (r, _, _) = run_scenario(&scenario, &data)?;
        println!(
            "{:>8} {:>12.4} {:>12.4} {:>8.4} {:>8.2}",
            seed,
            r.source_only_miou,
            r.adapted_miou,
            r.gain(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
