//! Anytime kinodynamic tree planner. One search loop supports three
//! expansion strategies: uniform random controls, learned steering toward
//! dataset waypoints, and learned steering toward medial-axis waypoints.
//! Sparse witness pruning keeps the tree small and makes the solution stream
//! improve over time.

use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::controller::MlpController;
use crate::dataset::ControlDataset;
use crate::dynamics::{
    self, propagate_with, transform_to_origin, Control, PropagationStep, State, StateDelta,
    SystemSpec,
};
use crate::error::{Error, Result};
use crate::medial_axis::MedialAxisField;

/// Expansion strategy of the planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Uniform random (control, duration) samples.
    Random,
    /// Steer toward waypoints drawn from the control dataset.
    LearnedSample,
    /// Steer toward waypoints built from the medial-axis vector field.
    LearnedMedialAxis,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::LearnedSample => "learned-sample",
            Strategy::LearnedMedialAxis => "learned-ma",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "learned-sample" => Ok(Strategy::LearnedSample),
            "learned-ma" => Ok(Strategy::LearnedMedialAxis),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy '{other}' (random | learned-sample | learned-ma)"
            ))),
        }
    }
}

/// Steering backend for the learned strategies.
pub enum Steer<'a> {
    Network(&'a MlpController),
    /// Nearest-entry lookup; exact on dataset keys, no training required.
    Lookup(&'a ControlDataset),
}

impl Steer<'_> {
    pub fn predict(&self, q: &StateDelta) -> Result<PropagationStep> {
        match self {
            Steer::Network(net) => Ok(net.predict(q)),
            Steer::Lookup(ds) => Ok(ds.nearest(q)?.step),
        }
    }
}

/// Search parameters.
#[derive(Clone, Debug)]
pub struct PlannerConfig {
    pub strategy: Strategy,
    /// Children generated per expansion; the best collision-free one is kept.
    pub blossom: usize,
    /// Probability of exploiting the lowest-f node (the rest picks uniformly).
    pub exploit: f64,
    /// Witness ball radius in the plane.
    pub witness_radius: f64,
    /// Witness ball radius in heading.
    pub witness_radius_theta: f64,
    /// Planar distance at which the goal counts as reached.
    pub goal_radius: f64,
    /// Probability that a learned expansion steers straight for the goal.
    pub goal_bias: f64,
    /// Repulsive blend weight for medial-axis waypoints.
    pub blend: f64,
    pub robot_radius: f64,
    /// Trajectory collision sub-sampling period, seconds.
    pub collision_step: f64,
    /// Wall-clock budget in seconds.
    pub time_budget: f64,
    /// Iteration cap; use this for reproducible runs.
    pub max_iterations: usize,
    /// Expansions that come back fully blocked before a node is retired from
    /// selection.
    pub retire_after: u32,
    /// Add one uniformly random candidate to every learned expansion, so the
    /// search stays probabilistically complete even when the steering function
    /// is misleading.
    pub random_safeguard: bool,
    /// Return as soon as any solution is found instead of spending the whole
    /// budget on anytime improvement.
    pub stop_at_first: bool,
    pub seed: u64,
}

impl PlannerConfig {
    pub fn new(strategy: Strategy) -> Self {
        PlannerConfig {
            strategy,
            blossom: 8,
            exploit: 0.9,
            witness_radius: 1.0,
            witness_radius_theta: std::f64::consts::FRAC_PI_4,
            goal_radius: 0.5,
            goal_bias: 0.1,
            blend: 0.5,
            robot_radius: 0.5,
            collision_step: 0.1,
            time_budget: 20.0,
            max_iterations: usize::MAX,
            retire_after: 16,
            random_safeguard: true,
            stop_at_first: false,
            seed: 0,
        }
    }
}

/// A solved trajectory: states[0] is the start, edges[i] drives states[i] to
/// states[i+1].
#[derive(Clone, Debug)]
pub struct Solution {
    pub states: Vec<State>,
    pub edges: Vec<PropagationStep>,
    pub cost: f64,
}

/// One improvement in the anytime stream.
#[derive(Clone, Copy, Debug)]
pub struct Improvement {
    pub wall_time: f64,
    pub iteration: usize,
    pub cost: f64,
}

/// Outcome of a planning run.
#[derive(Debug, Default)]
pub struct PlanResult {
    pub improvements: Vec<Improvement>,
    pub best: Option<Solution>,
    pub iterations: usize,
    pub nodes_created: usize,
    pub nodes_active: usize,
    pub witnesses: usize,
}

impl PlanResult {
    pub fn solved(&self) -> bool {
        self.best.is_some()
    }
}

struct Node {
    state: State,
    parent: u32,
    step: PropagationStep,
    cost: f64,
    f: f64,
    blocked: u32,
    active: bool,
    retired: bool,
}

struct WitnessSet {
    radius: f64,
    radius_theta: f64,
    grid: HashMap<(i64, i64), Vec<u32>>,
    /// Best node per witness.
    best: Vec<u32>,
    anchor: Vec<(f64, f64, f64)>,
}

impl WitnessSet {
    fn new(radius: f64, radius_theta: f64) -> Self {
        WitnessSet {
            radius,
            radius_theta,
            grid: HashMap::new(),
            best: Vec::new(),
            anchor: Vec::new(),
        }
    }

    fn cell(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.radius).floor() as i64,
            (y / self.radius).floor() as i64,
        )
    }

    /// Scaled max-norm ball membership around a witness anchor.
    fn covers(&self, w: usize, s: &State) -> bool {
        let (ax, ay, ath) = self.anchor[w];
        let d = ((s.x - ax) / self.radius)
            .abs()
            .max(((s.y - ay) / self.radius).abs())
            .max((dynamics::angle_diff(s.theta, ath) / self.radius_theta).abs());
        d <= 1.0
    }

    fn find(&self, s: &State) -> Option<u32> {
        let (cx, cy) = self.cell(s.x, s.y);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(v) = self.grid.get(&(cx + dx, cy + dy)) {
                    for &w in v {
                        if self.covers(w as usize, s) {
                            return Some(w);
                        }
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, s: &State, node: u32) -> u32 {
        let w = self.best.len() as u32;
        self.best.push(node);
        self.anchor.push((s.x, s.y, s.theta));
        let c = self.cell(s.x, s.y);
        self.grid.entry(c).or_default().push(w);
        w
    }
}

/// Planner over one map/goal; borrow the precomputed field with the goal
/// attached plus whatever the strategy needs.
pub struct Planner<'a> {
    pub spec: &'a SystemSpec,
    pub field: &'a MedialAxisField,
    pub steer: Option<Steer<'a>>,
    pub dataset: Option<&'a ControlDataset>,
    pub config: PlannerConfig,
}

impl<'a> Planner<'a> {
    fn heuristic(&self, s: &State, goal: (f64, f64)) -> f64 {
        let v = self.spec.v_max.abs().max(self.spec.v_min.abs()).max(1e-9);
        let h = self.field.heuristic_cost_cells(s.x, s.y);
        if h.is_finite() {
            h / v
        } else {
            ((s.x - goal.0).powi(2) + (s.y - goal.1).powi(2)).sqrt() / v
        }
    }

    /// Propagates and collision-checks one candidate edge. Returns the end
    /// state if the swept disc stays clear.
    fn try_edge(&self, from: &State, step: &PropagationStep) -> Result<Option<State>> {
        let period = self.config.collision_step.max(self.spec.integ_step);
        let mut next_check = 0.0;
        let mut clear = true;
        let end = propagate_with(self.spec, from, step, |t, s| {
            if !clear {
                return;
            }
            if t + 1e-9 >= next_check {
                next_check = t + period;
                if self.field.clearance(s.x, s.y) < self.config.robot_radius {
                    clear = false;
                }
            }
        })?;
        if clear && self.field.clearance(end.x, end.y) >= self.config.robot_radius {
            Ok(Some(end))
        } else {
            Ok(None)
        }
    }

    /// Candidate steps for one expansion, according to the strategy.
    fn candidate_steps(
        &self,
        from: &State,
        goal: (f64, f64),
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<PropagationStep>> {
        let b = self.config.blossom.max(1);
        let mut steps = Vec::with_capacity(b);
        match self.config.strategy {
            Strategy::Random => {
                for _ in 0..b {
                    steps.push(PropagationStep::new(
                        Control::new(
                            rng.gen_range(self.spec.u_min..=self.spec.u_max),
                            rng.gen_range(self.spec.u_min..=self.spec.u_max),
                        ),
                        rng.gen_range(self.spec.t_min..=self.spec.t_max),
                    ));
                }
            }
            Strategy::LearnedSample | Strategy::LearnedMedialAxis => {
                let steer = self.steer.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("learned strategy requires a steering backend".into())
                })?;
                let hist = self.dataset.and_then(|d| d.histogram());
                for _ in 0..b {
                    let q = if rng.gen::<f64>() < self.config.goal_bias {
                        self.goal_delta(from, goal, rng, hist)?
                    } else {
                        match self.config.strategy {
                            Strategy::LearnedSample => {
                                let ds = self.dataset.ok_or_else(|| {
                                    Error::InvalidConfig(
                                        "learned-sample strategy requires a dataset".into(),
                                    )
                                })?;
                                let mut d = ds.sample_waypoint(rng)?.key;
                                d.v_l_init = from.v_l;
                                d.v_r_init = from.v_r;
                                d
                            }
                            _ => self.ma_waypoint(from, rng, hist)?,
                        }
                    };
                    steps.push(steer.predict(&q)?);
                }
                if self.config.random_safeguard {
                    steps.push(PropagationStep::new(
                        Control::new(
                            rng.gen_range(self.spec.u_min..=self.spec.u_max),
                            rng.gen_range(self.spec.u_min..=self.spec.u_max),
                        ),
                        rng.gen_range(self.spec.t_min..=self.spec.t_max),
                    ));
                }
            }
        }
        Ok(steps)
    }

    /// Waypoint that follows the medial-axis vector field for a sampled
    /// distance. Single integrated vectors stop at the first axis cell, which
    /// is too short to escape a witness ball, so this chains them: march,
    /// re-evaluate the field, march again, until the sampled travel is spent
    /// or the field stalls.
    fn ma_waypoint(
        &self,
        from: &State,
        rng: &mut ChaCha8Rng,
        hist: Option<&crate::dataset::VelocityHistogram>,
    ) -> Result<StateDelta> {
        let reach = self.spec.max_reach();
        let travel = rng.gen_range(self.config.witness_radius.min(reach)..=reach);
        let mut p = (from.x, from.y);
        let mut heading = from.theta;
        let mut remaining = travel;
        while remaining > 1e-9 {
            let v = self.field.integrated_vector(p, self.config.blend, remaining);
            let m = v.magnitude.min(remaining);
            if m < 1e-9 {
                break;
            }
            p = (p.0 + v.direction.0 * m, p.1 + v.direction.1 * m);
            heading = v.direction.1.atan2(v.direction.0);
            remaining -= m;
            // The field's march quantum; anything shorter means it stalled.
            if m < 0.3 {
                break;
            }
        }
        // Jitter the target across neighboring witness balls; otherwise every
        // expansion from this node fights over the same incumbent.
        let r = self.config.witness_radius;
        let target = State::pose(
            p.0 + rng.gen_range(-r..=r),
            p.1 + rng.gen_range(-r..=r),
            heading + rng.gen_range(-0.4..=0.4),
        );
        let mut d = transform_to_origin(from, &target);
        d.v_l_init = from.v_l;
        d.v_r_init = from.v_r;
        if let Some(h) = hist {
            let (vl, vr) = h.sample(rng)?;
            d.v_l_goal = vl;
            d.v_r_goal = vr;
        }
        Ok(d)
    }

    /// Body-frame delta pointing straight at the goal position.
    fn goal_delta(
        &self,
        from: &State,
        goal: (f64, f64),
        rng: &mut ChaCha8Rng,
        hist: Option<&crate::dataset::VelocityHistogram>,
    ) -> Result<StateDelta> {
        let goal_state = State::pose(goal.0, goal.1, (goal.1 - from.y).atan2(goal.0 - from.x));
        let mut d = transform_to_origin(from, &goal_state);
        // Cap the request to the one-step reachable range.
        let r = d.planar_norm();
        let reach = self.spec.max_reach();
        if r > reach {
            let k = reach / r;
            d.dx *= k;
            d.dy *= k;
        }
        if let Some(h) = hist {
            let (vl, vr) = h.sample(rng)?;
            d.v_l_goal = vl;
            d.v_r_goal = vr;
        }
        Ok(d)
    }

    /// Runs the search from `start`. The goal position must match the one the
    /// field was attached to.
    pub fn plan(&self, start: &State, goal: (f64, f64)) -> Result<PlanResult> {
        if let Some(g) = self.field.goal {
            if (g.0 - goal.0).abs() > 1e-9 || (g.1 - goal.1).abs() > 1e-9 {
                return Err(Error::InvalidQuery(
                    "field was attached to a different goal".into(),
                ));
            }
        } else {
            return Err(Error::InvalidQuery(
                "field has no goal attached".into(),
            ));
        }
        if self.field.clearance(start.x, start.y) < self.config.robot_radius {
            return Err(Error::InvalidQuery("start is in collision".into()));
        }
        if self.field.clearance(goal.0, goal.1) < self.config.robot_radius {
            return Err(Error::InvalidQuery("goal is in collision".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut nodes: Vec<Node> = Vec::new();
        let mut witnesses = WitnessSet::new(
            self.config.witness_radius,
            self.config.witness_radius_theta,
        );
        // Lazy-deletion heap over (f, id); f is fixed per node.
        let mut exploit_heap: BinaryHeap<std::cmp::Reverse<(u64, u32)>> = BinaryHeap::new();
        // Selectable ids with O(1) removal for uniform picks.
        let mut selectable: Vec<u32> = Vec::new();
        let mut sel_pos: Vec<usize> = Vec::new();

        let h0 = self.heuristic(start, goal);
        witnesses.insert(start, 0);
        nodes.push(Node {
            state: *start,
            parent: u32::MAX,
            step: PropagationStep::new(Control::new(0.0, 0.0), 0.0),
            cost: 0.0,
            f: h0,
            blocked: 0,
            active: true,
            retired: false,
        });
        exploit_heap.push(std::cmp::Reverse((h0.to_bits(), 0)));
        selectable.push(0);
        sel_pos.push(0);

        let mut result = PlanResult::default();
        let mut best_goal_node: Option<u32> = None;
        let mut best_cost = f64::INFINITY;
        let clock = Instant::now();

        let remove_selectable = |id: u32, selectable: &mut Vec<u32>, sel_pos: &mut Vec<usize>| {
            let pos = sel_pos[id as usize];
            if pos == usize::MAX {
                return;
            }
            let last = *selectable.last().unwrap();
            selectable.swap_remove(pos);
            if pos < selectable.len() {
                sel_pos[last as usize] = pos;
            }
            sel_pos[id as usize] = usize::MAX;
        };

        while result.iterations < self.config.max_iterations
            && clock.elapsed().as_secs_f64() < self.config.time_budget
        {
            result.iterations += 1;
            if selectable.is_empty() {
                // Every node is retired; forgive the counters and continue.
                for (id, n) in nodes.iter_mut().enumerate() {
                    if n.active {
                        n.retired = false;
                        n.blocked = 0;
                        sel_pos[id] = selectable.len();
                        selectable.push(id as u32);
                        exploit_heap.push(std::cmp::Reverse((n.f.to_bits(), id as u32)));
                    }
                }
                if selectable.is_empty() {
                    break;
                }
            }
            // Selection: epsilon-greedy on f = cost-so-far + heuristic.
            let pick = if rng.gen::<f64>() < self.config.exploit {
                let mut found = None;
                while let Some(&std::cmp::Reverse((fb, id))) = exploit_heap.peek() {
                    let n = &nodes[id as usize];
                    if !n.active || n.retired || n.f.to_bits() != fb {
                        exploit_heap.pop();
                        continue;
                    }
                    found = Some(id);
                    break;
                }
                match found {
                    Some(id) => id,
                    None => selectable[rng.gen_range(0..selectable.len())],
                }
            } else {
                selectable[rng.gen_range(0..selectable.len())]
            };

            // Expansion: blossom of candidates, keep the best clear child.
            let from = nodes[pick as usize].state;
            let steps = self.candidate_steps(&from, goal, &mut rng)?;
            let mut best_child: Option<(f64, State, PropagationStep)> = None;
            for step in steps {
                let step = PropagationStep::new(
                    step.control,
                    step.duration.clamp(self.spec.t_min, self.spec.t_max),
                );
                if let Some(end) = self.try_edge(&from, &step)? {
                    let f = nodes[pick as usize].cost + step.duration + self.heuristic(&end, goal);
                    if best_child.map(|(bf, _, _)| f < bf).unwrap_or(true) {
                        best_child = Some((f, end, step));
                    }
                }
            }
            // Witness pruning: accept only if the child's region is new or
            // beaten on cost. An expansion that adds no node — all children in
            // collision, or the survivor losing to a witness incumbent — counts
            // toward retiring the parent from selection; otherwise the
            // lowest-f node would be re-expanded forever once its neighborhood
            // saturates.
            let accepted = best_child.and_then(|(_, end, step)| {
                let cost = nodes[pick as usize].cost + step.duration;
                match witnesses.find(&end) {
                    Some(w) => {
                        let incumbent = witnesses.best[w as usize];
                        if nodes[incumbent as usize].cost <= cost {
                            None
                        } else {
                            Some((end, step, cost, w, Some(incumbent)))
                        }
                    }
                    None => Some((end, step, cost, witnesses.insert(&end, 0), None)),
                }
            });
            let Some((end, step, cost, wid, displaced)) = accepted else {
                let n = &mut nodes[pick as usize];
                n.blocked += 1;
                if n.blocked >= self.config.retire_after {
                    n.retired = true;
                    remove_selectable(pick, &mut selectable, &mut sel_pos);
                }
                continue;
            };
            nodes[pick as usize].blocked = 0;
            if let Some(incumbent) = displaced {
                nodes[incumbent as usize].active = false;
                remove_selectable(incumbent, &mut selectable, &mut sel_pos);
            }
            let id = nodes.len() as u32;
            let f = cost + self.heuristic(&end, goal);
            nodes.push(Node {
                state: end,
                parent: pick,
                step,
                cost,
                f,
                blocked: 0,
                active: true,
                retired: false,
            });
            witnesses.best[wid as usize] = id;
            exploit_heap.push(std::cmp::Reverse((f.to_bits(), id)));
            sel_pos.push(selectable.len());
            selectable.push(id);

            // Goal test and anytime improvement stream.
            let d_goal = ((end.x - goal.0).powi(2) + (end.y - goal.1).powi(2)).sqrt();
            if d_goal <= self.config.goal_radius && cost < best_cost - 1e-12 {
                best_cost = cost;
                best_goal_node = Some(id);
                result.improvements.push(Improvement {
                    wall_time: clock.elapsed().as_secs_f64(),
                    iteration: result.iterations,
                    cost,
                });
                if self.config.stop_at_first {
                    break;
                }
            }
        }

        result.nodes_created = nodes.len();
        result.nodes_active = nodes.iter().filter(|n| n.active).count();
        result.witnesses = witnesses.best.len();
        if let Some(gid) = best_goal_node {
            let mut states = Vec::new();
            let mut edges = Vec::new();
            let mut cur = gid;
            while cur != u32::MAX {
                let n = &nodes[cur as usize];
                states.push(n.state);
                if n.parent != u32::MAX {
                    edges.push(n.step);
                }
                cur = n.parent;
            }
            states.reverse();
            edges.reverse();
            result.best = Some(Solution {
                states,
                edges,
                cost: best_cost,
            });
        }
        Ok(result)
    }
}

/// Serializes a solution as CSV: one row per state with the edge that leaves
/// it (empty control fields on the final state).
pub fn solution_to_csv(sol: &Solution) -> String {
    let mut out = String::from("x,y,theta,v_l,v_r,ctrl_a,ctrl_b,duration\n");
    for (i, s) in sol.states.iter().enumerate() {
        if let Some(e) = sol.edges.get(i) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.x, s.y, s.theta, s.v_l, s.v_r, e.control.a, e.control.b, e.duration
            ));
        } else {
            out.push_str(&format!(
                "{},{},{},{},{},,,\n",
                s.x, s.y, s.theta, s.v_l, s.v_r
            ));
        }
    }
    out
}

/// Serializes the anytime improvement stream as CSV.
pub fn improvements_to_csv(improvements: &[Improvement], include_wall_time: bool) -> String {
    let mut out = if include_wall_time {
        String::from("wall_time,iteration,cost\n")
    } else {
        String::from("iteration,cost\n")
    };
    for imp in improvements {
        if include_wall_time {
            out.push_str(&format!(
                "{:.3},{},{}\n",
                imp.wall_time, imp.iteration, imp.cost
            ));
        } else {
            out.push_str(&format!("{},{}\n", imp.iteration, imp.cost));
        }
    }
    out
}

/// Renders the map, the dense trajectory, and waypoint states as SVG.
pub fn render_solution_svg(
    spec: &SystemSpec,
    field: &MedialAxisField,
    sol: &Solution,
) -> Result<String> {
    let (w, h) = (field.width, field.height);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1 -1 {} {}\" width=\"{}\" height=\"{}\">\n",
        w + 2,
        h + 2,
        (w + 2) * 6,
        (h + 2) * 6
    );
    svg.push_str("<rect x=\"-1\" y=\"-1\" width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n");
    for y in 0..h {
        for x in 0..w {
            if !field.passable_cell(x as i64, y as i64) {
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"1\" height=\"1\" fill=\"#444\"/>\n",
                    x as f64 - 0.5,
                    y as f64 - 0.5
                ));
            }
        }
    }
    // Dense polyline by re-propagating each edge.
    let mut pts = String::new();
    for (s, e) in sol.states.iter().zip(&sol.edges) {
        propagate_with(spec, s, e, |_, p| {
            pts.push_str(&format!("{:.2},{:.2} ", p.x, p.y));
        })?;
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#c22\" stroke-width=\"0.3\"/>\n",
        pts.trim_end()
    ));
    for s in &sol.states {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"0.35\" fill=\"#22c\"/>\n",
            s.x, s.y
        ));
    }
    if let Some((sx, sy)) = sol.states.first().map(|s| (s.x, s.y)) {
        svg.push_str(&format!(
            "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"0.6\" fill=\"none\" stroke=\"#2a2\" stroke-width=\"0.25\"/>\n"
        ));
    }
    if let Some((gx, gy)) = sol.states.last().map(|s| (s.x, s.y)) {
        svg.push_str(&format!(
            "<circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"0.6\" fill=\"none\" stroke=\"#a2a\" stroke-width=\"0.25\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Replays a solution's edges and confirms continuity, cost, clearance, and
/// the goal condition. Used by tests and the benchmark harness.
pub fn validate_solution(
    spec: &SystemSpec,
    field: &MedialAxisField,
    sol: &Solution,
    goal: (f64, f64),
    goal_radius: f64,
    robot_radius: f64,
) -> Result<()> {
    if sol.states.len() != sol.edges.len() + 1 {
        return Err(Error::InvalidQuery("solution shape mismatch".into()));
    }
    let mut cost = 0.0;
    for (i, e) in sol.edges.iter().enumerate() {
        let mut clear = true;
        let end = propagate_with(spec, &sol.states[i], e, |_, p| {
            if field.clearance(p.x, p.y) < robot_radius {
                clear = false;
            }
        })?;
        if !clear {
            return Err(Error::InvalidQuery(format!("edge {i} collides")));
        }
        let next = &sol.states[i + 1];
        if dynamics::d_e(&end, next) > 1e-6
            || dynamics::angle_diff(end.theta, next.theta).abs() > 1e-6
        {
            return Err(Error::InvalidQuery(format!("edge {i} breaks continuity")));
        }
        cost += e.duration;
    }
    if (cost - sol.cost).abs() > 1e-6 {
        return Err(Error::InvalidQuery("cost mismatch".into()));
    }
    let last = sol.states.last().unwrap();
    let d = ((last.x - goal.0).powi(2) + (last.y - goal.1).powi(2)).sqrt();
    if d > goal_radius + 1e-9 {
        return Err(Error::InvalidQuery("final state misses the goal".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GenerateConfig;
    use crate::dynamics::Epsilons;
    use crate::maps::GridMap;
    use crate::medial_axis::{attach_goal, compute_medial_axis};

    fn open_map(n: usize) -> GridMap {
        GridMap::from_occupancy(n, n, vec![false; n * n])
    }

    fn corridor_map() -> GridMap {
        // 30x12, free band y in [1, 10] with a wall at x=15 pierced by a gap.
        let (w, h) = (30, 12);
        let mut occ = vec![false; w * h];
        for x in 0..w {
            occ[x] = true;
            occ[(h - 1) * w + x] = true;
        }
        for y in 0..h {
            occ[y * w] = true;
            occ[y * w + w - 1] = true;
        }
        for y in 1..h - 1 {
            if !(4..=7).contains(&y) {
                occ[y * w + 15] = true;
            }
        }
        GridMap::from_occupancy(w, h, occ)
    }

    fn field_for(map: &GridMap, goal: (f64, f64)) -> MedialAxisField {
        let mut f = compute_medial_axis(map, 0.5).unwrap();
        attach_goal(&mut f, goal).unwrap();
        f
    }

    fn quick_config(strategy: Strategy, seed: u64) -> PlannerConfig {
        PlannerConfig {
            time_budget: 30.0,
            max_iterations: 4000,
            seed,
            ..PlannerConfig::new(strategy)
        }
    }

    fn fo_dataset() -> (SystemSpec, ControlDataset) {
        let spec = SystemSpec::first_order_default();
        let eps = Epsilons::first_order_default();
        let cfg = GenerateConfig {
            durations: vec![0.5, 1.0, 2.0, 3.0],
            max_random_samples: 5_000,
            seed: 42,
            ..GenerateConfig::default()
        };
        let (ds, _) = ControlDataset::generate(&spec, &eps, &cfg).unwrap();
        (spec, ds)
    }

    #[test]
    fn random_strategy_solves_open_map() {
        let spec = SystemSpec::first_order_default();
        let map = open_map(20);
        let goal = (15.0, 15.0);
        let field = field_for(&map, goal);
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: None,
            dataset: None,
            config: quick_config(Strategy::Random, 1),
        };
        let start = State::pose(3.0, 3.0, 0.0);
        let res = planner.plan(&start, goal).unwrap();
        assert!(res.solved(), "no solution in {} iterations", res.iterations);
        let sol = res.best.unwrap();
        validate_solution(&spec, &field, &sol, goal, 0.5, 0.5).unwrap();
        // Straight-line lower bound: at top speed 1, ~17 seconds.
        assert!(sol.cost >= 16.0, "cost {} beats physics", sol.cost);
    }

    #[test]
    fn learned_strategies_solve_corridor() {
        let (spec, ds) = fo_dataset();
        let map = corridor_map();
        let goal = (26.0, 6.0);
        let field = field_for(&map, goal);
        for strategy in [Strategy::LearnedSample, Strategy::LearnedMedialAxis] {
            let planner = Planner {
                spec: &spec,
                field: &field,
                steer: Some(Steer::Lookup(&ds)),
                dataset: Some(&ds),
                config: quick_config(strategy, 3),
            };
            let start = State::pose(3.0, 6.0, 0.0);
            let res = planner.plan(&start, goal).unwrap();
            assert!(res.solved(), "{strategy}: unsolved");
            validate_solution(&spec, &field, &res.best.unwrap(), goal, 0.5, 0.5).unwrap();
        }
    }

    #[test]
    fn improvement_stream_is_strictly_decreasing() {
        let spec = SystemSpec::first_order_default();
        let map = open_map(16);
        let goal = (12.0, 12.0);
        let field = field_for(&map, goal);
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: None,
            dataset: None,
            config: quick_config(Strategy::Random, 7),
        };
        let res = planner.plan(&State::pose(3.0, 3.0, 0.0), goal).unwrap();
        let costs: Vec<f64> = res.improvements.iter().map(|i| i.cost).collect();
        assert!(!costs.is_empty());
        for pair in costs.windows(2) {
            assert!(pair[1] < pair[0], "stream not decreasing: {costs:?}");
        }
        assert_eq!(res.best.unwrap().cost, *costs.last().unwrap());
    }

    #[test]
    fn runs_are_deterministic_for_fixed_seed() {
        let spec = SystemSpec::first_order_default();
        let map = corridor_map();
        let goal = (26.0, 6.0);
        let field = field_for(&map, goal);
        let run = |seed: u64| {
            let planner = Planner {
                spec: &spec,
                field: &field,
                steer: None,
                dataset: None,
                config: PlannerConfig {
                    max_iterations: 1500,
                    time_budget: f64::INFINITY,
                    seed,
                    ..PlannerConfig::new(Strategy::Random)
                },
            };
            let res = planner.plan(&State::pose(3.0, 6.0, 0.0), goal).unwrap();
            (
                improvements_to_csv(&res.improvements, false),
                res.best.map(|s| solution_to_csv(&s)),
                res.nodes_created,
            )
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a, run(12));
    }

    #[test]
    fn witness_pruning_bounds_active_nodes() {
        let spec = SystemSpec::first_order_default();
        let map = open_map(14);
        let goal = (10.0, 10.0);
        let field = field_for(&map, goal);
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: None,
            dataset: None,
            config: PlannerConfig {
                max_iterations: 2000,
                time_budget: f64::INFINITY,
                seed: 5,
                ..PlannerConfig::new(Strategy::Random)
            },
        };
        let res = planner.plan(&State::pose(3.0, 3.0, 0.0), goal).unwrap();
        assert!(res.nodes_active <= res.witnesses, "one active node per witness region");
        assert!(res.nodes_created > res.nodes_active, "pruning replaced nothing");
    }

    #[test]
    fn rejects_bad_queries() {
        let spec = SystemSpec::first_order_default();
        let map = corridor_map();
        let goal = (26.0, 6.0);
        let field = field_for(&map, goal);
        let planner = Planner {
            spec: &spec,
            field: &field,
            steer: None,
            dataset: None,
            config: quick_config(Strategy::Random, 1),
        };
        // Start inside a wall.
        assert!(planner.plan(&State::pose(15.0, 2.0, 0.0), goal).is_err());
        // Goal mismatch with the attached field.
        assert!(planner
            .plan(&State::pose(3.0, 6.0, 0.0), (5.0, 5.0))
            .is_err());
        // Learned strategy without a backend.
        let p2 = Planner {
            spec: &spec,
            field: &field,
            steer: None,
            dataset: None,
            config: quick_config(Strategy::LearnedSample, 1),
        };
        assert!(p2.plan(&State::pose(3.0, 6.0, 0.0), goal).is_err());
    }

    #[test]
    fn csv_shapes() {
        let sol = Solution {
            states: vec![State::pose(0.0, 0.0, 0.0), State::pose(1.0, 0.0, 0.0)],
            edges: vec![PropagationStep::new(Control::new(1.0, 1.0), 1.0)],
            cost: 1.0,
        };
        let csv = solution_to_csv(&sol);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",,,"));
        let imps = vec![
            Improvement {
                wall_time: 0.5,
                iteration: 10,
                cost: 9.0,
            },
            Improvement {
                wall_time: 1.0,
                iteration: 50,
                cost: 7.5,
            },
        ];
        assert_eq!(improvements_to_csv(&imps, true).lines().count(), 3);
        assert!(improvements_to_csv(&imps, false).starts_with("iteration,cost\n"));
    }
}
