//! Run a miniature planner comparison sweep and print the normalized report.

use kinoforge::bench::{normalize, report_to_csv, run_benchmark, BenchConfig, BenchInputs};
use kinoforge::dataset::{ControlDataset, GenerateConfig};
use kinoforge::dynamics::{Epsilons, SystemSpec};
use kinoforge::maps::{generate_problems, synth_city_map};
use kinoforge::planner::Strategy;

fn main() -> kinoforge::Result<()> {
    let spec = SystemSpec::first_order_default();
    let eps = Epsilons::first_order_default();
    let gen = GenerateConfig {
        durations: vec![0.5, 1.0, 2.0, 3.0],
        max_random_samples: 10_000,
        seed: 9,
        ..GenerateConfig::default()
    };
    let (ds, _) = ControlDataset::generate(&spec, &eps, &gen)?;

    let map = synth_city_map(64, 64, 4);
    let problems = generate_problems(&map, "city64", 2, 25.0, 0.5, 1)?.problems;
    let inputs = BenchInputs {
        spec: &spec,
        map: &map,
        problems: &problems,
        controller: None, // lookup steering straight from the dataset
        dataset: Some(&ds),
    };
    let cfg = BenchConfig {
        strategies: vec![
            Strategy::Random,
            Strategy::LearnedSample,
            Strategy::LearnedMedialAxis,
        ],
        blossoms: vec![8],
        seeds: 3,
        time_budget: 8.0,
        max_iterations: 15_000,
        ..BenchConfig::default()
    };
    let mut stream = Vec::new();
    let records = run_benchmark(&inputs, &cfg, Some(&mut stream))?;
    println!(
        "{} runs, {} solved, {} record rows streamed",
        records.len(),
        records.iter().filter(|r| r.solved()).count(),
        String::from_utf8(stream).unwrap().lines().count() - 1
    );
    print!("{}", report_to_csv(&normalize(&records)?));
    Ok(())
}
