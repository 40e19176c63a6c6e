//! Acceptance gate: ten end-to-end criteria over the full pipeline, each
//! printing a single PASS line (a failed assert is the FAIL line). Shared
//! artifacts (datasets, trained controllers) are built once and reused; run
//! with `--nocapture` to see the lines as they complete.
//!
//! Tests are named a01..a10 so the single-threaded harness builds the cheap
//! artifacts first.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use kinoforge::bench::{normalize, run_benchmark, BenchConfig, BenchInputs};
use kinoforge::controller::{default_hidden, MlpController, TrainConfig, TrainReport};
use kinoforge::dataset::{ControlDataset, GenerateConfig, GenerationReport};
use kinoforge::dynamics::{
    angle_diff, d_e, propagate, Control, Epsilons, PropagationStep, State, SystemSpec,
};
use kinoforge::maps::{GridMap, ProblemSet};
use kinoforge::medial_axis::{attach_goal, compute_medial_axis, RIDGE_SLACK};
use kinoforge::planner::{
    improvements_to_csv, solution_to_csv, Planner, PlannerConfig, Steer, Strategy,
};

struct SystemArtifacts {
    spec: SystemSpec,
    eps: Epsilons,
    ds: ControlDataset,
    report: GenerationReport,
    net: MlpController,
    train_report: TrainReport,
}

fn build(spec: SystemSpec, eps: Epsilons, gen: GenerateConfig) -> SystemArtifacts {
    let (ds, report) = ControlDataset::generate(&spec, &eps, &gen).expect("dataset generation");
    let cfg = TrainConfig::for_order(spec.order);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut net = MlpController::new(&spec, default_hidden(spec.order), &mut rng);
    let train_report = net.train(&ds, &cfg).expect("training");
    SystemArtifacts {
        spec,
        eps,
        ds,
        report,
        net,
        train_report,
    }
}

fn fo() -> &'static SystemArtifacts {
    static FO: OnceLock<SystemArtifacts> = OnceLock::new();
    FO.get_or_init(|| {
        build(
            SystemSpec::first_order_default(),
            Epsilons::first_order_default(),
            GenerateConfig {
                // Whole-second durations: short-arc coverage comes from the
                // random pass, and the candidate grid stays near the paper's
                // ~5% retention scale.
                durations: (1..=5).map(|i| i as f64).collect(),
                random_compare_target: 12,
                max_random_samples: 400_000,
                seed: 1,
                ..GenerateConfig::default()
            },
        )
    })
}

fn so() -> &'static SystemArtifacts {
    static SO: OnceLock<SystemArtifacts> = OnceLock::new();
    SO.get_or_init(|| {
        let spec = SystemSpec::second_order_default();
        build(
            spec,
            Epsilons::second_order_default(spec.v_min, spec.v_max),
            GenerateConfig {
                // Desk-scale second-order run: a 3x3 initial-velocity anchor
                // grid instead of 5x5 keeps the gate in the minutes range,
                // and whole-second durations keep the candidate grid near the
                // paper's ~5% retention scale.
                durations: (1..=4).map(|i| i as f64).collect(),
                anchor_grid: 3,
                max_random_samples: 30_000,
                seed: 2,
                ..GenerateConfig::default()
            },
        )
    })
}

fn assets_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

fn pass(n: usize, name: &str, detail: String, t: Instant) {
    println!(
        "ACCEPTANCE {n:02} {name}: PASS ({detail}, {:.1}s)",
        t.elapsed().as_secs_f64()
    );
}

/// 1: >= 95% of random reachable endpoints have a dataset neighbor within
/// eps_E planar and 2*eps_R heading.
#[test]
fn a01_dispersion_audit() {
    let t = Instant::now();
    let a = fo();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let origin = State::pose(0.0, 0.0, 0.0);
    let mut covered = 0usize;
    let n = 1000;
    for _ in 0..n {
        let step = PropagationStep::new(
            Control::new(
                rng.gen_range(a.spec.u_min..=a.spec.u_max),
                rng.gen_range(a.spec.u_min..=a.spec.u_max),
            ),
            rng.gen_range(a.spec.t_min..=a.spec.t_max),
        );
        let end = propagate(&a.spec, &origin, &step).unwrap();
        let q = kinoforge::dynamics::transform_to_origin(&origin, &end);
        let hit = |nb: &State| {
            d_e(&end, nb) <= a.eps.eps_e && a.spec.d_r(&end, nb) <= 2.0 * a.eps.eps_r
        };
        // The nearest lookup optimizes a combined metric; fall back to a full
        // scan so the audit measures the dataset, not the lookup heuristic.
        if hit(&a.ds.nearest(&q).unwrap().endpoint())
            || a.ds.entries().any(|e| hit(&e.endpoint()))
        {
            covered += 1;
        }
    }
    let frac = covered as f64 / n as f64;
    assert!(frac >= 0.95, "dispersion coverage {frac:.3} < 0.95");
    pass(1, "dispersion audit", format!("coverage {frac:.3}"), t);
}

/// 2: no brute-force (control, duration) sample beats a dataset entry to its
/// own key by more than the time needed to close the residual gap. A flat
/// integration-slack bound alone is unsatisfiable: any entry can be shaved by
/// up to eps_E / v_max (cut the arc short, stay within epsilon), so the
/// allowed slack is the bridge time d_E/v_max + d_R/omega_max plus h.
#[test]
fn a02_quality_audit() {
    let t = Instant::now();
    let a = fo();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = a.spec.integ_step;
    let v_max = a.spec.u_max;
    let omega_max = (a.spec.u_max - a.spec.u_min) / a.spec.axle_length;
    let mut checked = 0usize;
    for _ in 0..200 {
        let e = a.ds.entry(rng.gen_range(0..a.ds.len()));
        let goal = e.endpoint();
        let start = State::with_velocities(0.0, 0.0, 0.0, e.key.v_l_init, e.key.v_r_init);
        for _ in 0..10_000 {
            let dt = rng.gen_range(a.spec.t_min..=a.spec.t_max);
            let ua = rng.gen_range(a.spec.u_min..=a.spec.u_max);
            let ub = rng.gen_range(a.spec.u_min..=a.spec.u_max);
            if dt >= e.cost - h {
                continue; // only shorter alternatives can violate quality
            }
            let alt = propagate(
                &a.spec,
                &start,
                &PropagationStep::new(Control::new(ua, ub), dt),
            )
            .unwrap();
            if !a.spec.within_eps(&alt, &goal, &a.eps) {
                continue;
            }
            let bridge = d_e(&alt, &goal) / v_max + a.spec.d_r(&alt, &goal) / omega_max;
            // One h of slack per propagated trajectory in the comparison.
            assert!(
                dt >= e.cost - 2.0 * h - bridge,
                "entry with cost {} beaten by ({ua:.3}, {ub:.3}) held {dt:.3} (bridge {bridge:.3})",
                e.cost
            );
        }
        checked += 1;
    }
    pass(2, "quality audit", format!("{checked} entries clean"), t);
}

/// 3: pruning keeps 2-15% of the discretized candidates for both systems.
#[test]
fn a03_pruning_ratio() {
    let t = Instant::now();
    let r_fo = fo().report.pruning_ratio();
    let r_so = so().report.pruning_ratio();
    for (label, r) in [("first", r_fo), ("second", r_so)] {
        assert!(
            (0.02..=0.15).contains(&r),
            "{label}-order pruning ratio {r:.4} outside [0.02, 0.15]"
        );
    }
    pass(
        3,
        "pruning ratio",
        format!("first {r_fo:.3}, second {r_so:.3}"),
        t,
    );
}

/// 4: validation loss under 0.02 (first order, combined) / 0.08 (second
/// order, control-duration MSE).
#[test]
fn a04_training_error() {
    let t = Instant::now();
    let v_fo = fo().train_report.best_val_loss;
    let v_so = so().train_report.best_val_loss;
    assert!(v_fo < 0.02, "first-order val loss {v_fo:.4} >= 0.02");
    assert!(v_so < 0.08, "second-order val loss {v_so:.4} >= 0.08");
    pass(
        4,
        "training error",
        format!("val loss first {v_fo:.4}, second {v_so:.4}"),
        t,
    );
}

fn fidelity(a: &SystemArtifacts, n: usize) -> f64 {
    let second = a.spec.order == kinoforge::dynamics::SystemOrder::Second;
    let mut ok = 0usize;
    let n = n.min(a.ds.len());
    for i in 0..n {
        let e = a.ds.entry(i);
        let step = a.net.predict(&e.key);
        let step = PropagationStep::new(
            step.control,
            step.duration.clamp(a.spec.t_min, a.spec.t_max),
        );
        let start = State::with_velocities(0.0, 0.0, 0.0, e.key.v_l_init, e.key.v_r_init);
        let end = propagate(&a.spec, &start, &step).unwrap();
        let goal = e.endpoint();
        let mut within = (end.x - goal.x).abs() <= 2.0 * a.eps.eps_e
            && (end.y - goal.y).abs() <= 2.0 * a.eps.eps_e
            && angle_diff(end.theta, goal.theta).abs() <= 2.0 * a.eps.eps_r;
        if second {
            within = within
                && (end.v_l - goal.v_l).abs() <= 2.0 * a.eps.eps_v
                && (end.v_r - goal.v_r).abs() <= 2.0 * a.eps.eps_v;
        }
        if within {
            ok += 1;
        }
    }
    ok as f64 / n as f64
}

/// 5: closed-loop endpoints land within 2*eps component-wise for >= 85%
/// (first order) / 70% (second order) of 500 dataset keys.
#[test]
fn a05_controller_fidelity() {
    let t = Instant::now();
    let f_fo = fidelity(fo(), 500);
    let f_so = fidelity(so(), 500);
    assert!(f_fo >= 0.85, "first-order fidelity {f_fo:.3} < 0.85");
    assert!(f_so >= 0.70, "second-order fidelity {f_so:.3} < 0.70");
    pass(
        5,
        "controller fidelity",
        format!("first {f_fo:.3}, second {f_so:.3}"),
        t,
    );
}

/// 6: analytic gradients match central differences on 20 random slices.
#[test]
fn a06_gradient_check() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (a, w_state, seed) in [(fo(), 0.5, 606u64), (so(), 0.0, 607)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed + 1);
        let probe = MlpController::new(&a.spec, default_hidden(a.spec.order), &mut rng2);
        let err = probe
            .gradient_check(&a.ds, 16, 10, w_state, &mut rng)
            .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst gradient relative error {worst:.2e}");
    pass(6, "gradient check", format!("worst rel err {worst:.2e}"), t);
}

fn audit_maps() -> Vec<(&'static str, GridMap)> {
    let from = |w: usize, h: usize, f: &dyn Fn(usize, usize) -> bool| {
        let occ = (0..h)
            .flat_map(|y| (0..w).map(move |x| f(x, y)))
            .collect();
        GridMap::from_occupancy(w, h, occ)
    };
    vec![
        ("empty 16", from(16, 16, &|_, _| false)),
        ("empty 48", from(48, 48, &|_, _| false)),
        (
            "center block",
            from(32, 32, &|x, y| (12..20).contains(&x) && (12..20).contains(&y)),
        ),
        (
            "two blocks",
            from(40, 24, &|x, y| {
                ((6..14).contains(&x) || (26..34).contains(&x)) && (8..16).contains(&y)
            }),
        ),
        (
            "corridor",
            from(40, 12, &|_, y| !(3..9).contains(&y)),
        ),
        (
            "width-1 corridor",
            from(24, 7, &|_, y| y != 3),
        ),
        (
            "ring",
            from(33, 33, &|x, y| {
                (10..23).contains(&x) && (10..23).contains(&y)
            }),
        ),
        (
            "l-shape",
            from(36, 36, &|x, y| x >= 14 && y >= 14),
        ),
        (
            "staircase",
            from(40, 40, &|x, y| x + 4 < y),
        ),
        (
            "pillars",
            from(45, 45, &|x, y| x % 9 < 2 && y % 9 < 2),
        ),
    ]
}

/// Every obstacle distance relevant to a cell, including the out-of-bounds
/// ring one step beyond the map edge.
fn oracle_sites(map: &GridMap) -> Vec<(f64, f64)> {
    let mut sites = Vec::new();
    for y in -1..=map.height as i64 {
        for x in -1..=map.width as i64 {
            if map.occupied(x, y) {
                sites.push((x as f64, y as f64));
            }
        }
    }
    sites
}

/// 7: medial-axis cells are near-equidistant to two distinct walls, and the
/// integrated vector reproduces the pure fields at blend 0 and 1.
#[test]
fn a07_medial_axis_correctness() {
    let t = Instant::now();
    let mut audited_cells = 0usize;
    for (name, map) in audit_maps() {
        let field = compute_medial_axis(&map, 0.5).unwrap();
        let sites = oracle_sites(&map);
        for (x, y) in field.ma_cells() {
            let (cx, cy) = (x as f64, y as f64);
            let d = |s: &(f64, f64)| ((s.0 - cx).powi(2) + (s.1 - cy).powi(2)).sqrt();
            let s0 = *sites
                .iter()
                .min_by(|a, b| d(a).partial_cmp(&d(b)).unwrap())
                .unwrap();
            // Closest wall distance among walls that are not the same wall
            // as s0 (same-wall sites sit within one diagonal step chain).
            let second = sites
                .iter()
                .filter(|s| ((s.0 - s0.0).powi(2) + (s.1 - s0.1).powi(2)).sqrt() > 2.5)
                .map(d)
                .fold(f64::INFINITY, f64::min);
            let pinched = (map.occupied(x as i64 - 1, y as i64)
                && map.occupied(x as i64 + 1, y as i64))
                || (map.occupied(x as i64, y as i64 - 1)
                    && map.occupied(x as i64, y as i64 + 1));
            assert!(
                second - d(&s0) <= RIDGE_SLACK || pinched,
                "{name}: axis cell ({x},{y}) has walls at {:.3} and {second:.3}",
                d(&s0)
            );
            audited_cells += 1;
        }
        // Blend endpoints reproduce the pure attractive/repulsive fields.
        let mut f2 = compute_medial_axis(&map, 0.5).unwrap();
        let goal = (0..map.width * map.height)
            .filter(|i| !map.occupied((i % map.width) as i64, (i / map.width) as i64))
            .map(|i| ((i % map.width) as f64, (i / map.width) as f64))
            .max_by(|a, b| {
                let da = f2.dist[a.1 as usize * map.width + a.0 as usize];
                let db = f2.dist[b.1 as usize * map.width + b.0 as usize];
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        attach_goal(&mut f2, goal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        for _ in 0..20 {
            let p = (
                rng.gen_range(0.0..map.width as f64),
                rng.gen_range(0.0..map.height as f64),
            );
            if !map.passable(p.0.round() as i64, p.1.round() as i64) {
                continue;
            }
            let att = f2.attractive(p.0, p.1);
            let rep = f2.repulsive(p.0, p.1);
            let v0 = f2.integrated_vector(p, 0.0, 5.0);
            let v1 = f2.integrated_vector(p, 1.0, 5.0);
            let close = |a: (f64, f64), b: (f64, f64)| {
                (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9
            };
            if att != (0.0, 0.0) {
                assert!(
                    close(v0.direction, att),
                    "{name}: blend 0 is not attractive at ({:.1}, {:.1})",
                    p.0,
                    p.1
                );
            }
            if rep != (0.0, 0.0) {
                assert!(
                    close(v1.direction, rep),
                    "{name}: blend 1 is not repulsive at ({:.1}, {:.1})",
                    p.0,
                    p.1
                );
            }
        }
    }
    pass(
        7,
        "medial-axis correctness",
        format!("10 maps, {audited_cells} axis cells audited"),
        t,
    );
}

type Problems = Vec<(State, (f64, f64))>;

fn city() -> (GridMap, Problems) {
    let map = GridMap::load(&assets_path("city128.map")).unwrap();
    let set = ProblemSet::parse_csv(
        "city128",
        &std::fs::read_to_string(assets_path("city128_problems.csv")).unwrap(),
    )
    .unwrap();
    (map, set.problems)
}

/// 8: on the city map the learned planners find first solutions in fewer
/// iterations than random, and match or beat its normalized cost.
#[test]
fn a08_planner_trends() {
    let t = Instant::now();
    let a = fo();
    let (map, problems) = city();
    let inputs = BenchInputs {
        spec: &a.spec,
        map: &map,
        problems: &problems,
        controller: Some(&a.net),
        dataset: Some(&a.ds),
    };
    let cfg = BenchConfig {
        strategies: vec![
            Strategy::Random,
            Strategy::LearnedSample,
            Strategy::LearnedMedialAxis,
        ],
        blossoms: vec![8],
        seeds: 10,
        time_budget: 20.0,
        max_iterations: 0,
        ..BenchConfig::default()
    };
    let records = run_benchmark(&inputs, &cfg, None).unwrap();
    let report = normalize(&records).unwrap();
    let cell = |s: Strategy| report.cells.iter().find(|c| c.strategy == s).unwrap();
    let (rand, lc, ma) = (
        cell(Strategy::Random),
        cell(Strategy::LearnedSample),
        cell(Strategy::LearnedMedialAxis),
    );
    assert!(
        lc.median_first_iter < rand.median_first_iter,
        "learned-sample median first iteration {} >= random {}",
        lc.median_first_iter,
        rand.median_first_iter
    );
    assert!(
        ma.median_first_iter < rand.median_first_iter,
        "learned-ma median first iteration {} >= random {}",
        ma.median_first_iter,
        rand.median_first_iter
    );
    assert!(
        lc.mean_norm_cost <= rand.mean_norm_cost,
        "learned-sample cost {} > random {}",
        lc.mean_norm_cost,
        rand.mean_norm_cost
    );
    assert!(
        ma.mean_norm_cost <= lc.mean_norm_cost * 1.10,
        "learned-ma cost {} > 1.10 * learned-sample {}",
        ma.mean_norm_cost,
        lc.mean_norm_cost
    );
    pass(
        8,
        "planner trends",
        format!(
            "median first iters random {} / lc {} / ma {}; norm cost {:.3} / {:.3} / {:.3}",
            rand.median_first_iter,
            lc.median_first_iter,
            ma.median_first_iter,
            rand.mean_norm_cost,
            lc.mean_norm_cost,
            ma.mean_norm_cost
        ),
        t,
    );
}

/// 9: with the random-control safeguard, every expansion mode solves an
/// empty 32x32 map for 20/20 seeds.
#[test]
fn a09_completeness_smoke() {
    let t = Instant::now();
    let a = fo();
    let map = GridMap::from_occupancy(32, 32, vec![false; 32 * 32]);
    let goal = (27.0, 27.0);
    let mut field = compute_medial_axis(&map, 0.5).unwrap();
    attach_goal(&mut field, goal).unwrap();
    for strategy in [
        Strategy::Random,
        Strategy::LearnedSample,
        Strategy::LearnedMedialAxis,
    ] {
        for seed in 0..20 {
            let planner = Planner {
                spec: &a.spec,
                field: &field,
                steer: Some(Steer::Network(&a.net)),
                dataset: Some(&a.ds),
                config: PlannerConfig {
                    time_budget: 20.0,
                    stop_at_first: true,
                    seed,
                    ..PlannerConfig::new(strategy)
                },
            };
            let res = planner.plan(&State::pose(4.0, 4.0, 0.0), goal).unwrap();
            assert!(res.solved(), "{strategy} seed {seed} failed");
        }
    }
    pass(9, "completeness smoke", "3 modes x 20/20 seeds".into(), t);
}

/// 10: every stage is byte-reproducible under fixed seeds (wall-clock
/// columns excluded).
#[test]
fn a10_determinism() {
    let t = Instant::now();
    let spec = SystemSpec::first_order_default();
    let eps = Epsilons::first_order_default();
    let gen = GenerateConfig {
        durations: vec![0.5, 1.0, 2.0],
        max_random_samples: 3_000,
        seed: 10,
        ..GenerateConfig::default()
    };
    let (ds1, _) = ControlDataset::generate(&spec, &eps, &gen).unwrap();
    let (ds2, _) = ControlDataset::generate(&spec, &eps, &gen).unwrap();
    assert_eq!(ds1.to_csv(), ds2.to_csv(), "gen-data not reproducible");

    let train = |seed: u64| {
        let mut cfg = TrainConfig::for_order(spec.order);
        cfg.max_epochs = 25;
        cfg.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpController::new(&spec, default_hidden(spec.order), &mut rng);
        net.train(&ds1, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        net.save(&p).unwrap();
        std::fs::read(&p).unwrap()
    };
    assert_eq!(train(4), train(4), "train not reproducible");

    let map = GridMap::from_occupancy(20, 20, vec![false; 400]);
    let goal = (16.0, 16.0);
    let mut field = compute_medial_axis(&map, 0.5).unwrap();
    attach_goal(&mut field, goal).unwrap();
    let plan = || {
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: Some(Steer::Lookup(&ds1)),
            dataset: Some(&ds1),
            config: PlannerConfig {
                time_budget: f64::INFINITY,
                max_iterations: 1500,
                seed: 5,
                ..PlannerConfig::new(Strategy::LearnedSample)
            },
        };
        let res = planner.plan(&State::pose(3.0, 3.0, 0.0), goal).unwrap();
        (
            improvements_to_csv(&res.improvements, false),
            res.best.map(|s| solution_to_csv(&s)),
        )
    };
    assert_eq!(plan(), plan(), "plan not reproducible");

    let problems = vec![(State::pose(3.0, 3.0, 0.0), goal)];
    let inputs = BenchInputs {
        spec: &spec,
        map: &map,
        problems: &problems,
        controller: None,
        dataset: Some(&ds1),
    };
    let cfg = BenchConfig {
        strategies: vec![Strategy::Random, Strategy::LearnedSample],
        blossoms: vec![4],
        seeds: 2,
        time_budget: f64::INFINITY,
        max_iterations: 1000,
        ..BenchConfig::default()
    };
    let sweep = || {
        run_benchmark(&inputs, &cfg, None)
            .unwrap()
            .iter()
            .map(|r| {
                format!(
                    "{} {} {} {} {:?} {:?}",
                    r.strategy,
                    r.blossom,
                    r.problem,
                    r.seed,
                    r.final_cost,
                    r.events.iter().map(|e| (e.iteration, e.cost)).collect::<Vec<_>>()
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(sweep(), sweep(), "bench not reproducible");
    pass(10, "determinism", "gen-data, train, plan, bench".into(), t);
}
