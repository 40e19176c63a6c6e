//! Generate a small first-order control dataset and inspect its structure:
//! pruning statistics, nearest-neighbor lookups, and CSV round-tripping.

use kinoforge::dataset::{ControlDataset, GenerateConfig};
use kinoforge::dynamics::{Epsilons, StateDelta, SystemSpec};

fn main() -> kinoforge::Result<()> {
    let spec = SystemSpec::first_order_default();
    let eps = Epsilons::first_order_default();
    let cfg = GenerateConfig {
        durations: vec![0.5, 1.0, 2.0, 3.0, 4.0],
        max_random_samples: 20_000,
        seed: 7,
        ..GenerateConfig::default()
    };
    let (ds, report) = ControlDataset::generate(&spec, &eps, &cfg)?;
    println!(
        "candidates: {}  after grid prune: {}  retained: {}",
        report.candidates, report.retained_after_grid, report.retained
    );
    println!(
        "pruning ratio: {:.3}  bang-bang fraction: {:.3}",
        report.pruning_ratio(),
        report.bang_bang_fraction
    );

    // Ask for the control that reaches 2 m ahead, slightly left, turned left.
    let query = StateDelta::pose(2.0, 0.5, 0.4);
    let entry = ds.nearest(&query)?;
    println!(
        "nearest entry for (2.0, 0.5, 0.4): wheels ({:.2}, {:.2}) held {:.1} s, endpoint ({:.2}, {:.2}, {:.2})",
        entry.step.control.a,
        entry.step.control.b,
        entry.step.duration,
        entry.key.dx,
        entry.key.dy,
        entry.key.dtheta,
    );

    let csv = ds.to_csv();
    let back = ControlDataset::from_csv(&csv, &spec)?;
    println!(
        "csv round trip: {} -> {} entries, {} bytes",
        ds.len(),
        back.len(),
        csv.len()
    );
    Ok(())
}
