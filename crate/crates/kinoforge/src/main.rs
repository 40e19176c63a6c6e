//! Command-line front end for the library: dataset generation, controller
//! training and evaluation, medial-axis fields, single planning queries, and
//! the benchmark sweep. All logic lives in the library; this file only maps
//! arguments onto it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kinoforge::bench::{
    best_solutions, normalize, render_cost_bars, render_solved_curves, report_to_csv,
    run_benchmark, BenchConfig, BenchInputs,
};
use kinoforge::controller::{default_hidden, eval_controller, MlpController, TrainConfig};
use kinoforge::dataset::{ControlDataset, GenerateConfig};
use kinoforge::dynamics::{Epsilons, State, SystemOrder, SystemSpec};
use kinoforge::maps::{generate_problems, GridMap, ProblemSet};
use kinoforge::medial_axis::{attach_goal, compute_medial_axis, render_field_svg};
use kinoforge::planner::{
    improvements_to_csv, render_solution_svg, solution_to_csv, Planner, PlannerConfig, Steer,
    Strategy,
};
use kinoforge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kinoforge",
    about = "Kinodynamic planning toolkit for differential-drive robots",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dispersion-bounded constant-control dataset.
    GenData {
        /// `fo`, `so`, or a path to a key=value system file.
        #[arg(long, default_value = "fo")]
        system: String,
        /// Position tolerance; defaults to the per-order standard value.
        #[arg(long)]
        eps_e: Option<f64>,
        /// Heading tolerance (radians).
        #[arg(long)]
        eps_r: Option<f64>,
        /// Velocity tolerance (second order only).
        #[arg(long)]
        eps_v: Option<f64>,
        /// Comma-separated propagation durations in seconds.
        #[arg(long)]
        durations: Option<String>,
        /// Minimum per-cell resolution floor.
        #[arg(long, default_value_t = 1)]
        nmin: usize,
        /// Random-refinement sample cap per anchor.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; a `.hist.csv` sibling is written for second order.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the steering network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// `fo`, `so`, or a path to a key=value system file.
        #[arg(long, default_value = "fo")]
        arch: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop endpoint evaluation of a trained model on dataset keys.
    EvalController {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// `fo`, `so`, or a path to a key=value system file.
        #[arg(long, default_value = "fo")]
        arch: String,
        /// Number of dataset keys to evaluate.
        #[arg(long, default_value_t = 500)]
        limit: usize,
        /// Per-query error CSV.
        #[arg(long)]
        report: PathBuf,
    },
    /// Compute a medial-axis field for a map and goal.
    MedialAxis {
        #[arg(long)]
        map: PathBuf,
        /// Goal position as `x,y`.
        #[arg(long)]
        goal: String,
        /// Robot radius in cells.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Field CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG overlay of axis cells and integrated vectors.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Repulsive blend weight for the SVG vector overlay.
        #[arg(long, default_value_t = 0.3)]
        blend: f64,
    },
    /// Solve one planning query.
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// Start as `x,y,theta` or `x,y,theta,vl,vr`.
        #[arg(long)]
        start: String,
        /// Goal position as `x,y`.
        #[arg(long)]
        goal: String,
        /// `fo`, `so`, or a path to a key=value system file.
        #[arg(long, default_value = "fo")]
        system: String,
        /// random | learned-sample | learned-ma
        #[arg(long, default_value = "random")]
        expansion: Strategy,
        #[arg(long, default_value_t = 8)]
        blossom: usize,
        /// Wall-clock budget in seconds.
        #[arg(long, default_value_t = 20.0)]
        time: f64,
        /// Iteration cap; 0 means unlimited.
        #[arg(long, default_value_t = 0)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trained model for learned expansions.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset for waypoint sampling and the lookup fallback.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = 0.5)]
        goal_radius: f64,
        /// Solution CSV: improvement events, then the step list.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the full planner comparison sweep.
    Bench {
        /// key=value sweep config (strategies, blossoms, seeds, budgets).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// `fo`, `so`, or a path to a key=value system file.
        #[arg(long, default_value = "fo")]
        system: String,
        /// Problem CSV; omit to generate problems into the output directory.
        #[arg(long)]
        problems: Option<PathBuf>,
        /// Problems to generate when no file is given.
        #[arg(long, default_value_t = 5)]
        gen_problems: usize,
        /// Minimum start-goal separation for generated problems.
        #[arg(long, default_value_t = 30.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        problem_seed: u64,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_system(arg: &str) -> Result<SystemSpec> {
    match arg {
        "fo" => Ok(SystemSpec::first_order_default()),
        "so" => Ok(SystemSpec::second_order_default()),
        path => SystemSpec::load(Path::new(path)),
    }
}

fn default_eps(spec: &SystemSpec) -> Epsilons {
    match spec.order {
        SystemOrder::First => Epsilons::first_order_default(),
        SystemOrder::Second => Epsilons::second_order_default(spec.v_min, spec.v_max),
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidConfig(format!("expected `x,y`, got '{s}'")));
    }
    let f = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|e| Error::InvalidConfig(format!("bad coordinate '{p}': {e}")))
    };
    Ok((f(parts[0])?, f(parts[1])?))
}

fn parse_start(s: &str) -> Result<State> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad start component '{p}': {e}")))
        })
        .collect::<Result<_>>()?;
    match vals.len() {
        3 => Ok(State::pose(vals[0], vals[1], vals[2])),
        5 => Ok(State::with_velocities(
            vals[0], vals[1], vals[2], vals[3], vals[4],
        )),
        n => Err(Error::InvalidConfig(format!(
            "start needs 3 or 5 comma-separated values, got {n}"
        ))),
    }
}

fn parse_durations(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad duration '{p}': {e}")))
        })
        .collect()
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            system,
            eps_e,
            eps_r,
            eps_v,
            durations,
            nmin,
            samples,
            seed,
            out,
        } => {
            let spec = load_system(&system)?;
            let defaults = default_eps(&spec);
            let eps = Epsilons::new(
                eps_e.unwrap_or(defaults.eps_e),
                eps_r.unwrap_or(defaults.eps_r),
                eps_v.unwrap_or(defaults.eps_v),
            )?;
            let mut cfg = GenerateConfig {
                n_min: nmin,
                max_random_samples: samples,
                seed,
                ..GenerateConfig::default()
            };
            if let Some(d) = durations {
                cfg.durations = parse_durations(&d)?;
            }
            let (ds, report) = ControlDataset::generate(&spec, &eps, &cfg)?;
            fs::write(&out, ds.to_csv())?;
            if let Some(hist) = ds.histogram() {
                let hist_path = out.with_extension("hist.csv");
                fs::write(&hist_path, hist.to_csv())?;
                println!("histogram: {}", hist_path.display());
            }
            println!(
                "entries: {}  candidates: {}  pruning ratio: {:.4}  random samples: {}",
                ds.len(),
                report.candidates,
                report.pruning_ratio(),
                report.random_samples
            );
            println!("dataset: {}", out.display());
        }
        Command::Train {
            dataset,
            arch,
            epochs,
            lr,
            seed,
            out,
        } => {
            let spec = load_system(&arch)?;
            let text = fs::read_to_string(&dataset)?;
            let ds = ControlDataset::from_csv(&text, &spec)?;
            let mut cfg = TrainConfig::for_order(spec.order);
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            if let Some(l) = lr {
                cfg.learning_rate = l;
            }
            cfg.seed = seed;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = MlpController::new(&spec, default_hidden(spec.order), &mut rng);
            let report = net.train(&ds, &cfg)?;
            net.save(&out)?;
            println!(
                "epochs: {}  best epoch: {}  best val loss: {:.6}",
                report.epochs_run, report.best_epoch, report.best_val_loss
            );
            println!("model: {}", out.display());
        }
        Command::EvalController {
            model,
            dataset,
            arch,
            limit,
            report,
        } => {
            let spec = load_system(&arch)?;
            let eps = default_eps(&spec);
            let text = fs::read_to_string(&dataset)?;
            let ds = ControlDataset::from_csv(&text, &spec)?;
            let net = MlpController::load(&model)?;
            let eval = eval_controller(&spec, &eps, &ds, limit, |q| Ok(net.predict(q)))?;
            fs::write(&report, eval.rows_to_csv())?;
            println!(
                "queries: {}  within eps: {:.1}%  mean d_E: {:.4}  mean d_R: {:.4}",
                eval.queries,
                100.0 * eval.within_eps,
                eval.mean_d_e,
                eval.mean_d_r
            );
            println!("report: {}", report.display());
        }
        Command::MedialAxis {
            map,
            goal,
            radius,
            out,
            svg,
            blend,
        } => {
            let grid = GridMap::load(&map)?;
            let goal = parse_pair(&goal)?;
            let mut field = compute_medial_axis(&grid, radius)?;
            attach_goal(&mut field, goal)?;
            fs::write(&out, field.to_csv())?;
            println!(
                "map {}x{}  axis cells: {}",
                grid.width,
                grid.height,
                field.ma_cells().count()
            );
            if let Some(svg_path) = svg {
                let reach = 5.0;
                fs::write(&svg_path, render_field_svg(&grid, &field, blend, reach))?;
                println!("svg: {}", svg_path.display());
            }
            println!("field: {}", out.display());
        }
        Command::Plan {
            map,
            start,
            goal,
            system,
            expansion,
            blossom,
            time,
            iterations,
            seed,
            model,
            dataset,
            radius,
            goal_radius,
            out,
            svg,
        } => {
            let spec = load_system(&system)?;
            let grid = GridMap::load(&map)?;
            let start = parse_start(&start)?;
            let goal = parse_pair(&goal)?;
            let mut field = compute_medial_axis(&grid, radius)?;
            attach_goal(&mut field, goal)?;
            let net = model.map(|p| MlpController::load(&p)).transpose()?;
            let ds = dataset
                .map(|p| -> Result<ControlDataset> {
                    ControlDataset::from_csv(&fs::read_to_string(&p)?, &spec)
                })
                .transpose()?;
            let steer = match (&net, &ds) {
                (Some(n), _) => Some(Steer::Network(n)),
                (None, Some(d)) => Some(Steer::Lookup(d)),
                (None, None) => None,
            };
            let planner = Planner {
                spec: &spec,
                field: &field,
                steer,
                dataset: ds.as_ref(),
                config: PlannerConfig {
                    blossom,
                    goal_radius,
                    robot_radius: radius,
                    time_budget: time,
                    max_iterations: if iterations == 0 {
                        usize::MAX
                    } else {
                        iterations
                    },
                    seed,
                    ..PlannerConfig::new(expansion)
                },
            };
            let result = planner.plan(&start, goal)?;
            let mut csv = improvements_to_csv(&result.improvements, true);
            if let Some(best) = &result.best {
                csv.push_str("# solution\n");
                csv.push_str(&solution_to_csv(best));
            }
            fs::write(&out, csv)?;
            match &result.best {
                Some(best) => println!(
                    "solved: cost {:.3} s in {} steps ({} iterations, {} nodes)",
                    best.cost,
                    best.edges.len(),
                    result.iterations,
                    result.nodes_created
                ),
                None => println!(
                    "no solution ({} iterations, {} nodes)",
                    result.iterations, result.nodes_created
                ),
            }
            if let (Some(svg_path), Some(best)) = (svg, &result.best) {
                fs::write(&svg_path, render_solution_svg(&spec, &field, best)?)?;
                println!("svg: {}", svg_path.display());
            }
            println!("solution: {}", out.display());
        }
        Command::Bench {
            config,
            out_dir,
            map,
            system,
            problems,
            gen_problems,
            separation,
            problem_seed,
            dataset,
            model,
        } => {
            let cfg = match config {
                Some(p) => BenchConfig::parse(&fs::read_to_string(&p)?)?,
                None => BenchConfig::default(),
            };
            let spec = load_system(&system)?;
            let grid = GridMap::load(&map)?;
            let map_id = map
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "map".into());
            fs::create_dir_all(&out_dir)?;
            fs::create_dir_all(out_dir.join("plots"))?;
            let problem_set = match problems {
                Some(p) => ProblemSet::parse_csv(&map_id, &fs::read_to_string(&p)?)?,
                None => {
                    let set = generate_problems(
                        &grid,
                        &map_id,
                        gen_problems,
                        separation,
                        cfg.robot_radius,
                        problem_seed,
                    )?;
                    fs::write(out_dir.join("problems.csv"), set.to_csv())?;
                    set
                }
            };
            let net = model.map(|p| MlpController::load(&p)).transpose()?;
            let ds = dataset
                .map(|p| -> Result<ControlDataset> {
                    ControlDataset::from_csv(&fs::read_to_string(&p)?, &spec)
                })
                .transpose()?;
            let inputs = BenchInputs {
                spec: &spec,
                map: &grid,
                problems: &problem_set.problems,
                controller: net.as_ref(),
                dataset: ds.as_ref(),
            };
            let mut records_file = fs::File::create(out_dir.join("records.csv"))?;
            let records = run_benchmark(&inputs, &cfg, Some(&mut records_file))?;
            let report = normalize(&records)?;
            fs::write(out_dir.join("report.csv"), report_to_csv(&report))?;
            fs::write(
                out_dir.join("plots/cost_bars.svg"),
                render_cost_bars(&report),
            )?;
            fs::write(
                out_dir.join("plots/solved_vs_time.svg"),
                render_solved_curves(&report, false),
            )?;
            fs::write(
                out_dir.join("plots/solved_vs_iter.svg"),
                render_solved_curves(&report, true),
            )?;
            let fields = kinoforge::bench::fields_for_problems(
                &grid,
                &problem_set.problems,
                cfg.robot_radius,
            )?;
            for (p, best) in best_solutions(&inputs, &cfg, &records)?.iter().enumerate() {
                if let Some((strategy, blossom, sol)) = best {
                    let path = out_dir.join(format!("plots/problem_{p}_best.svg"));
                    fs::write(&path, render_solution_svg(&spec, &fields[p], sol)?)?;
                    println!(
                        "problem {p}: best cost {:.3} s ({strategy} B{blossom}) -> {}",
                        sol.cost,
                        path.display()
                    );
                } else {
                    println!("problem {p}: unsolved");
                }
            }
            for line in report_to_csv(&report).lines() {
                println!("{line}");
            }
            println!("results: {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
