//! Solve one planning query on a synthetic city block with each expansion
//! strategy and compare their anytime improvement streams.

use std::fs;

use kinoforge::dataset::{ControlDataset, GenerateConfig};
use kinoforge::dynamics::{Epsilons, SystemSpec};
use kinoforge::maps::{generate_problems, synth_city_map};
use kinoforge::medial_axis::{attach_goal, compute_medial_axis};
use kinoforge::planner::{render_solution_svg, Planner, PlannerConfig, Steer, Strategy};

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
    // Take the first generated problem whose start can actually reach the
    // goal (the sampler checks clearance, not connectivity).
    let candidates = generate_problems(&map, "city64", 8, 30.0, 0.5, 1)?.problems;
    let mut picked = None;
    for (start, goal) in candidates {
        let mut field = compute_medial_axis(&map, 0.5)?;
        attach_goal(&mut field, goal)?;
        if field.heuristic_cost_cells(start.x, start.y).is_finite() {
            picked = Some((start, goal, field));
            break;
        }
    }
    let (start, goal, field) = picked.expect("no connected problem found");
    println!(
        "start ({:.1}, {:.1}) -> goal ({:.1}, {:.1})",
        start.x, start.y, goal.0, goal.1
    );

    for strategy in [
        Strategy::Random,
        Strategy::LearnedSample,
        Strategy::LearnedMedialAxis,
    ] {
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: Some(Steer::Lookup(&ds)),
            dataset: Some(&ds),
            config: PlannerConfig {
                time_budget: 10.0,
                max_iterations: 20_000,
                seed: 1,
                ..PlannerConfig::new(strategy)
            },
        };
        let res = planner.plan(&start, goal)?;
        match res.best {
            Some(sol) => {
                println!(
                    "{strategy:>15}: cost {:7.2} s after {} improvements ({} iterations, {} nodes)",
                    sol.cost,
                    res.improvements.len(),
                    res.iterations,
                    res.nodes_created
                );
                if strategy == Strategy::LearnedMedialAxis {
                    let out = std::env::temp_dir().join("kinoforge_path.svg");
                    fs::write(&out, render_solution_svg(&spec, &field, &sol)?)?;
                    println!("{:>17}wrote {}", "", out.display());
                }
            }
            None => println!(
                "{strategy:>15}: no solution ({} iterations)",
                res.iterations
            ),
        }
    }
    Ok(())
}
