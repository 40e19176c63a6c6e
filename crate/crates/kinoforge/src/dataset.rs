//! Training-data generation: control-space discretization sized by endpoint
//! dispersion, propagate-and-prune into a spatial index keeping only the
//! shortest-duration control per epsilon-neighborhood, and a random refinement
//! pass. Also the goal-velocity histogram used for biased sampling.

use std::collections::HashMap;
use std::path::Path;

use rand::prelude::*;

use crate::dynamics::{
    self, propagate, transform_to_origin, Control, Epsilons, PropagationStep, State, StateDelta,
    SystemOrder, SystemSpec,
};
use crate::error::{Error, Result};

/// One retained (state-delta, control, duration) record.
#[derive(Clone, Debug)]
pub struct DatasetEntry {
    /// Endpoint of `step` from the canonical anchor, in the anchor frame.
    pub key: StateDelta,
    pub step: PropagationStep,
    /// Equals the step duration: propagation time is the edge cost.
    pub cost: f64,
}

impl DatasetEntry {
    /// The endpoint as a state (anchor at the origin pose).
    pub fn endpoint(&self) -> State {
        State {
            x: self.key.dx,
            y: self.key.dy,
            theta: self.key.dtheta,
            v_l: self.key.v_l_goal,
            v_r: self.key.v_r_goal,
        }
    }
}

/// Which control dimension a resolution query varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtrlDim {
    A,
    B,
}

/// Knobs for [`ControlDataset::generate`].
#[derive(Clone, Debug)]
pub struct GenerateConfig {
    /// Propagation durations for the discretized grid.
    pub durations: Vec<f64>,
    pub n_min: usize,
    /// Abort threshold for the per-dimension resolution search.
    pub resolution_cap: usize,
    /// Use the verbatim pseudocode form of the resolution search (fixed first
    /// endpoint) instead of the consecutive-pair form.
    pub literal_resolution: bool,
    /// Target comparison count per retained entry for the random pass.
    pub random_compare_target: usize,
    /// Hard cap on random samples per anchor.
    pub max_random_samples: usize,
    /// Duration polish stops probing an entry after this many consecutive
    /// misses (0 disables the pass).
    pub polish_miss_streak: usize,
    /// Hard cap on polish probes per entry.
    pub polish_max_probes: usize,
    /// Initial-velocity anchors per axis (second order).
    pub anchor_grid: usize,
    pub histogram_buckets: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            durations: (1..=10).map(|i| i as f64 * 0.5).collect(),
            n_min: 1,
            resolution_cap: 512,
            literal_resolution: false,
            random_compare_target: 5,
            max_random_samples: 200_000,
            polish_miss_streak: 600,
            polish_max_probes: 6_000,
            anchor_grid: 5,
            histogram_buckets: 10,
            seed: 0,
        }
    }
}

/// Counters reported by generation; the comparison counter distinguishes
/// neighborhood checks from actual within-epsilon hits.
#[derive(Clone, Debug, Default)]
pub struct GenerationReport {
    pub candidates: usize,
    pub retained_after_grid: usize,
    pub retained: usize,
    pub random_samples: usize,
    pub comparisons: u64,
    pub within_eps_hits: u64,
    /// Entries shortened by the duration-polish pass.
    pub polish_improvements: usize,
    /// Fraction of entries with a control component within 5% of a bound.
    pub bang_bang_fraction: f64,
}

impl GenerationReport {
    /// Final dataset size relative to the discretized candidate count. The
    /// refinement pass both adds coverage entries and displaces grid entries,
    /// so this is the retention of the pipeline as a whole, not of the grid
    /// prune alone (see `retained_after_grid` for that).
    pub fn pruning_ratio(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.retained as f64 / self.candidates as f64
        }
    }
}

/// Smallest grid resolution for one control dimension such that endpoints of
/// adjacent grid controls are closer than `eps_e`, per the consecutive-pair
/// reading. The other dimension is held at its minimum.
pub fn ctrl_resolution(
    spec: &SystemSpec,
    anchor: &State,
    dim: CtrlDim,
    eps_e: f64,
    dt: f64,
    cfg: &GenerateConfig,
) -> Result<usize> {
    let (n_min, cap, literal) = (cfg.n_min, cfg.resolution_cap, cfg.literal_resolution);
    let make = |u: f64| match dim {
        CtrlDim::A => Control::new(u, spec.u_min),
        CtrlDim::B => Control::new(spec.u_min, u),
    };
    let endpoint = |u: f64| -> Result<State> {
        propagate(spec, anchor, &PropagationStep::new(make(u), dt))
    };
    if literal {
        // Verbatim pseudocode: the first endpoint never moves.
        let x1 = endpoint(spec.u_min)?;
        let mut n = n_min.max(1) - 1;
        let mut u = spec.u_min;
        loop {
            n += 1;
            if n > cap {
                return Err(Error::ResolutionOverflow { cap });
            }
            u += (spec.u_max - spec.u_min) / n as f64;
            let x2 = endpoint(u.min(spec.u_max))?;
            if dynamics::d_e(&x1, &x2) < eps_e {
                return Ok(n);
            }
        }
    }
    for n in n_min.max(1)..=cap {
        let mut prev = endpoint(spec.u_min)?;
        let mut ok = true;
        for i in 1..=n {
            let u = spec.u_min + (spec.u_max - spec.u_min) * i as f64 / n as f64;
            let cur = endpoint(u)?;
            if dynamics::d_e(&prev, &cur) >= eps_e {
                ok = false;
                break;
            }
            prev = cur;
        }
        if ok {
            return Ok(n);
        }
    }
    Err(Error::ResolutionOverflow { cap })
}

/// Full control grid crossed with every duration. The per-duration resolution
/// is the max over the two dimensions (symmetric control space).
pub fn discretize_ctrls(
    spec: &SystemSpec,
    eps: &Epsilons,
    cfg: &GenerateConfig,
    anchor: &State,
) -> Result<Vec<PropagationStep>> {
    if cfg.durations.is_empty() {
        return Err(Error::InvalidConfig("durations list is empty".into()));
    }
    let mut steps = Vec::new();
    for &dt in &cfg.durations {
        if dt < spec.t_min || dt > spec.t_max {
            return Err(Error::InvalidConfig(format!(
                "duration {dt} outside [{}, {}]",
                spec.t_min, spec.t_max
            )));
        }
        let na = ctrl_resolution(spec, anchor, CtrlDim::A, eps.eps_e, dt, cfg)?;
        let nb = ctrl_resolution(spec, anchor, CtrlDim::B, eps.eps_e, dt, cfg)?;
        let n = na.max(nb);
        for i in 0..=n {
            for j in 0..=n {
                let a = spec.u_min + (spec.u_max - spec.u_min) * i as f64 / n as f64;
                let b = spec.u_min + (spec.u_max - spec.u_min) * j as f64 / n as f64;
                steps.push(PropagationStep::new(Control::new(a, b), dt));
            }
        }
    }
    Ok(steps)
}

/// Pruned entries for one canonical anchor (one initial-velocity pair),
/// indexed by a uniform grid over (dx, dy) with cell size eps_E.
pub struct AnchorData {
    pub init_vel: (f64, f64),
    slots: Vec<Option<DatasetEntry>>,
    counters: Vec<u64>,
    grid: HashMap<(i64, i64), Vec<u32>>,
    cell: f64,
    alive: usize,
}

enum InsertOutcome {
    Inserted,
    Dominated,
}

impl AnchorData {
    fn new(init_vel: (f64, f64), eps: &Epsilons) -> Self {
        AnchorData {
            init_vel,
            slots: Vec::new(),
            counters: Vec::new(),
            grid: HashMap::new(),
            cell: eps.eps_e,
            alive: 0,
        }
    }

    fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    /// Slot indices in the 3x3 cell neighborhood, in deterministic order.
    fn neighborhood(&self, x: f64, y: f64) -> Vec<u32> {
        let (cx, cy) = self.cell_of(x, y);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(v) = self.grid.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.alive
    }

    pub fn is_empty(&self) -> bool {
        self.alive == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }

    fn remove(&mut self, slot: u32) {
        let e = self.slots[slot as usize].take().expect("live slot");
        let c = self.cell_of(e.key.dx, e.key.dy);
        self.grid.get_mut(&c).unwrap().retain(|&s| s != slot);
        self.alive -= 1;
    }

    fn push(&mut self, entry: DatasetEntry) -> u32 {
        let slot = self.slots.len() as u32;
        let c = self.cell_of(entry.key.dx, entry.key.dy);
        self.grid.entry(c).or_default().push(slot);
        self.slots.push(Some(entry));
        self.counters.push(0);
        self.alive += 1;
        slot
    }

    /// Swaps the entry in a live slot, keeping the grid index consistent.
    fn replace_slot(&mut self, slot: u32, entry: DatasetEntry) {
        let old = self.slots[slot as usize].take().expect("live slot");
        let oc = self.cell_of(old.key.dx, old.key.dy);
        let nc = self.cell_of(entry.key.dx, entry.key.dy);
        if oc != nc {
            self.grid.get_mut(&oc).unwrap().retain(|&s| s != slot);
            self.grid.entry(nc).or_default().push(slot);
        }
        self.slots[slot as usize] = Some(entry);
    }

    /// Prune rule: within epsilon of an incumbent, the shorter duration wins;
    /// equal durations keep the incumbent.
    fn insert_pruned(
        &mut self,
        spec: &SystemSpec,
        eps: &Epsilons,
        entry: DatasetEntry,
        stats: Option<&mut SampleStats>,
    ) -> InsertOutcome {
        let endpoint = entry.endpoint();
        let nbrs = self.neighborhood(entry.key.dx, entry.key.dy);
        let mut within = Vec::new();
        let mut hits = 0u64;
        for slot in &nbrs {
            let other = self.slots[*slot as usize].as_ref().expect("indexed slot");
            self.counters[*slot as usize] += 1;
            if spec.within_eps(&endpoint, &other.endpoint(), eps) {
                hits += 1;
                within.push(*slot);
            }
        }
        if let Some(stats) = stats {
            stats.comparisons += nbrs.len() as u64;
            stats.within_eps_hits += hits;
        }
        if within.iter().any(|&s| {
            self.slots[s as usize].as_ref().unwrap().cost <= entry.cost
        }) {
            return InsertOutcome::Dominated;
        }
        for s in within {
            self.remove(s);
        }
        self.push(entry);
        InsertOutcome::Inserted
    }
}

#[derive(Clone, Debug, Default)]
pub struct SampleStats {
    pub samples: usize,
    pub comparisons: u64,
    pub within_eps_hits: u64,
}

/// Propagates every candidate from the canonical anchor and prunes into the
/// index.
pub fn propagate_and_prune(
    spec: &SystemSpec,
    eps: &Epsilons,
    candidates: &[PropagationStep],
    init_vel: (f64, f64),
) -> Result<AnchorData> {
    let anchor = State::with_velocities(0.0, 0.0, 0.0, init_vel.0, init_vel.1);
    let mut data = AnchorData::new(init_vel, eps);
    for step in candidates {
        let end = propagate(spec, &anchor, step)?;
        let key = transform_to_origin(&anchor, &end);
        data.insert_pruned(
            spec,
            eps,
            DatasetEntry {
                key,
                step: *step,
                cost: step.duration,
            },
            None,
        );
    }
    Ok(data)
}

/// Random refinement: draws (control, duration) pairs uniformly from the
/// continuous box until every retained entry has been compared against at
/// least `n_target` samples, inserting each under the prune rule.
pub fn sample_prop_prune(
    data: &mut AnchorData,
    spec: &SystemSpec,
    eps: &Epsilons,
    n_target: usize,
    max_samples: usize,
    rng: &mut impl Rng,
) -> Result<SampleStats> {
    let anchor = State::with_velocities(0.0, 0.0, 0.0, data.init_vel.0, data.init_vel.1);
    let mut stats = SampleStats::default();
    let below_target = |data: &AnchorData| {
        data.slots
            .iter()
            .zip(&data.counters)
            .filter(|(s, &c)| s.is_some() && (c as usize) < n_target)
            .count()
    };
    if n_target == 0 {
        return Ok(stats);
    }
    let mut pending = below_target(data);
    while pending > 0 && stats.samples < max_samples {
        let u = Control::new(
            rng.gen_range(spec.u_min..=spec.u_max),
            rng.gen_range(spec.u_min..=spec.u_max),
        );
        let dt = rng.gen_range(spec.t_min..=spec.t_max);
        let step = PropagationStep::new(u, dt);
        let end = propagate(spec, &anchor, &step)?;
        let key = transform_to_origin(&anchor, &end);
        stats.samples += 1;
        data.insert_pruned(
            spec,
            eps,
            DatasetEntry {
                key,
                step,
                cost: dt,
            },
            Some(&mut stats),
        );
        // Counter bookkeeping changes on insert/remove; recount lazily.
        if stats.samples % 256 == 0 || pending <= 8 {
            pending = below_target(data);
        }
    }
    Ok(stats)
}

/// Duration polish: targeted probes that try to reach each retained endpoint
/// faster. The prune passes guarantee the shortest duration only among the
/// candidates that happened to be compared; an entry accepted in a coverage
/// gap can carry duration slack. Probes mix local control jitter with
/// bang-bang-biased global draws (time-optimal constant controls tend to sit
/// on the control bounds); a hit replaces the entry in place, moving its
/// endpoint within the same epsilon ball.
pub fn polish_durations(
    data: &mut AnchorData,
    spec: &SystemSpec,
    eps: &Epsilons,
    miss_streak: usize,
    max_probes: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if miss_streak == 0 {
        return Ok(0);
    }
    let anchor = State::with_velocities(0.0, 0.0, 0.0, data.init_vel.0, data.init_vel.1);
    let jitter = 0.15 * (spec.u_max - spec.u_min);
    // First order only: scaling both wheel velocities by s and holding the
    // control for duration/s traverses the identical trajectory faster, so
    // any entry without a wheel at its bound carries pure duration slack.
    let speed_up = |e: DatasetEntry| -> Result<(DatasetEntry, bool)> {
        if spec.order != SystemOrder::First {
            return Ok((e, false));
        }
        let headroom = |u: f64| {
            if u > 1e-9 {
                spec.u_max / u
            } else if u < -1e-9 {
                spec.u_min / u
            } else {
                f64::INFINITY
            }
        };
        let s = headroom(e.step.control.a)
            .min(headroom(e.step.control.b))
            .min(e.cost / spec.t_min);
        if s <= 1.0 + 1e-9 {
            return Ok((e, false));
        }
        let step = PropagationStep::new(
            Control::new(e.step.control.a * s, e.step.control.b * s),
            e.cost / s,
        );
        let end = propagate(spec, &anchor, &step)?;
        Ok((
            DatasetEntry {
                key: transform_to_origin(&anchor, &end),
                step,
                cost: step.duration,
            },
            true,
        ))
    };
    let mut improved = 0usize;
    for slot in 0..data.slots.len() as u32 {
        let Some(mut e) = data.slots[slot as usize].clone() else {
            continue;
        };
        let (sped, mut touched) = speed_up(e)?;
        e = sped;
        // The target stays fixed: accepting vs. the current endpoint would
        // let entries drift inward indefinitely (duration always shrinks by
        // ~eps_E/v per hop), collapsing dataset coverage.
        let target = e.endpoint();
        let mut misses = 0usize;
        let mut probes = 0usize;
        // Deterministic self-shave first: the commonest slack is the entry's
        // own arc cut short, so walk the duration down (coarse then fine)
        // while the endpoint stays within epsilon of the target.
        let mut shaved = e.cost;
        for step_down in [0.05, spec.integ_step] {
            loop {
                let dt = shaved - step_down;
                if dt < spec.t_min {
                    break;
                }
                let step = PropagationStep::new(e.step.control, dt);
                let end = propagate(spec, &anchor, &step)?;
                if !spec.within_eps(&end, &target, eps) {
                    break;
                }
                shaved = dt;
                e = DatasetEntry {
                    key: transform_to_origin(&anchor, &end),
                    step,
                    cost: dt,
                };
                touched = true;
            }
        }
        while misses < miss_streak && probes < max_probes {
            let hi = e.cost - spec.integ_step;
            if hi <= spec.t_min {
                break;
            }
            probes += 1;
            let u = if rng.gen_bool(0.3) {
                let draw = |rng: &mut dyn RngCore| {
                    if rng.gen_bool(0.5) {
                        if rng.gen_bool(0.5) {
                            spec.u_min
                        } else {
                            spec.u_max
                        }
                    } else {
                        rng.gen_range(spec.u_min..=spec.u_max)
                    }
                };
                Control::new(draw(rng), draw(rng))
            } else {
                Control::new(
                    (e.step.control.a + rng.gen_range(-jitter..=jitter))
                        .clamp(spec.u_min, spec.u_max),
                    (e.step.control.b + rng.gen_range(-jitter..=jitter))
                        .clamp(spec.u_min, spec.u_max),
                )
            };
            // Half the probes concentrate just below the current cost: for
            // long-duration entries the winning shave is a sliver of the
            // whole duration range and uniform draws rarely land there.
            let dt = if rng.gen_bool(0.5) {
                let span = (hi - spec.t_min).min(0.5);
                rng.gen_range(hi - span..hi)
            } else {
                rng.gen_range(spec.t_min..hi)
            };
            let step = PropagationStep::new(u, dt);
            let end = propagate(spec, &anchor, &step)?;
            if spec.within_eps(&end, &target, eps) && dt < e.cost {
                let (sped, _) = speed_up(DatasetEntry {
                    key: transform_to_origin(&anchor, &end),
                    step,
                    cost: dt,
                })?;
                e = sped;
                touched = true;
                misses = 0;
            } else {
                misses += 1;
            }
        }
        if touched {
            data.replace_slot(slot, e);
            improved += 1;
        }
    }
    Ok(improved)
}

/// 2D histogram of goal wheel velocities over [v_min, v_max]^2.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityHistogram {
    pub buckets: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl VelocityHistogram {
    pub fn new(buckets: usize, v_min: f64, v_max: f64) -> Self {
        VelocityHistogram {
            buckets,
            v_min,
            v_max,
            counts: vec![0; buckets * buckets],
            total: 0,
        }
    }

    fn bucket_of(&self, v: f64) -> usize {
        let t = (v - self.v_min) / (self.v_max - self.v_min);
        ((t * self.buckets as f64) as usize).min(self.buckets - 1)
    }

    pub fn add(&mut self, v_l: f64, v_r: f64) {
        let i = self.bucket_of(v_r) * self.buckets + self.bucket_of(v_l);
        self.counts[i] += 1;
        self.total += 1;
    }

    /// Bucket selection by count mass, then a uniform point inside it.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
        if self.total == 0 {
            return Err(Error::EmptyHistogram);
        }
        let mut r = RngCore::next_u64(rng) % self.total;
        let mut idx = self.counts.len() - 1;
        for (i, &c) in self.counts.iter().enumerate() {
            if r < c {
                idx = i;
                break;
            }
            r -= c;
        }
        let step = (self.v_max - self.v_min) / self.buckets as f64;
        let (bl, br) = (idx % self.buckets, idx / self.buckets);
        let mut unit = || (RngCore::next_u64(rng) >> 11) as f64 / (1u64 << 53) as f64;
        Ok((
            self.v_min + (bl as f64 + unit()) * step,
            self.v_min + (br as f64 + unit()) * step,
        ))
    }

    /// Bucket bounds of a velocity pair (for frequency audits).
    pub fn bucket_index(&self, v_l: f64, v_r: f64) -> usize {
        self.bucket_of(v_r) * self.buckets + self.bucket_of(v_l)
    }

    pub fn to_csv(&self) -> String {
        let step = (self.v_max - self.v_min) / self.buckets as f64;
        let mut out = String::from("vl_lo,vl_hi,vr_lo,vr_hi,count\n");
        for br in 0..self.buckets {
            for bl in 0..self.buckets {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.v_min + bl as f64 * step,
                    self.v_min + (bl + 1) as f64 * step,
                    self.v_min + br as f64 * step,
                    self.v_min + (br + 1) as f64 * step,
                    self.counts[br * self.buckets + bl]
                ));
            }
        }
        out
    }
}

/// The finished dataset: per-anchor pruned entries, spatial index, and the
/// goal-velocity histogram (second order).
pub struct ControlDataset {
    pub system: SystemSpec,
    pub epsilons: Epsilons,
    anchors: Vec<AnchorData>,
    histogram: Option<VelocityHistogram>,
    /// Flat (anchor, slot) list of live entries for uniform sampling.
    flat: Vec<(u32, u32)>,
}

impl ControlDataset {
    fn finalize(
        system: SystemSpec,
        epsilons: Epsilons,
        anchors: Vec<AnchorData>,
        histogram_buckets: usize,
    ) -> Self {
        let mut flat = Vec::new();
        for (ai, a) in anchors.iter().enumerate() {
            for (si, s) in a.slots.iter().enumerate() {
                if s.is_some() {
                    flat.push((ai as u32, si as u32));
                }
            }
        }
        let histogram = match system.order {
            SystemOrder::First => None,
            SystemOrder::Second => {
                let mut h = VelocityHistogram::new(histogram_buckets, system.v_min, system.v_max);
                for &(ai, si) in &flat {
                    let e = anchors[ai as usize].slots[si as usize].as_ref().unwrap();
                    h.add(e.key.v_l_goal, e.key.v_r_goal);
                }
                Some(h)
            }
        };
        ControlDataset {
            system,
            epsilons,
            anchors,
            histogram,
            flat,
        }
    }

    /// Runs the full pipeline: discretize, propagate-and-prune, random
    /// refinement; for the second order, repeated over the initial-velocity
    /// anchor grid.
    pub fn generate(
        spec: &SystemSpec,
        eps: &Epsilons,
        cfg: &GenerateConfig,
    ) -> Result<(Self, GenerationReport)> {
        spec.validate()?;
        let anchor_vels: Vec<(f64, f64)> = match spec.order {
            SystemOrder::First => vec![(0.0, 0.0)],
            SystemOrder::Second => {
                let g = cfg.anchor_grid.max(1);
                let mut v = Vec::new();
                for i in 0..g {
                    for j in 0..g {
                        let f = |k: usize| {
                            if g == 1 {
                                0.5 * (spec.v_min + spec.v_max)
                            } else {
                                spec.v_min + (spec.v_max - spec.v_min) * k as f64 / (g - 1) as f64
                            }
                        };
                        v.push((f(j), f(i)));
                    }
                }
                v
            }
        };
        let mut report = GenerationReport::default();
        let mut anchors = Vec::with_capacity(anchor_vels.len());
        for (ai, &init_vel) in anchor_vels.iter().enumerate() {
            let anchor_state =
                State::with_velocities(0.0, 0.0, 0.0, init_vel.0, init_vel.1);
            let candidates = discretize_ctrls(spec, eps, cfg, &anchor_state)?;
            report.candidates += candidates.len();
            let mut data = propagate_and_prune(spec, eps, &candidates, init_vel)?;
            report.retained_after_grid += data.len();
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(ai as u64));
            let stats = sample_prop_prune(
                &mut data,
                spec,
                eps,
                cfg.random_compare_target,
                cfg.max_random_samples,
                &mut rng,
            )?;
            report.random_samples += stats.samples;
            report.comparisons += stats.comparisons;
            report.within_eps_hits += stats.within_eps_hits;
            report.polish_improvements += polish_durations(
                &mut data,
                spec,
                eps,
                cfg.polish_miss_streak,
                cfg.polish_max_probes,
                &mut rng,
            )?;
            anchors.push(data);
        }
        let ds = Self::finalize(*spec, *eps, anchors, cfg.histogram_buckets);
        report.retained = ds.len();
        let tol = 0.05 * (spec.u_max - spec.u_min);
        let near_bound = |u: f64| u - spec.u_min < tol || spec.u_max - u < tol;
        let bb = ds
            .entries()
            .filter(|e| near_bound(e.step.control.a) || near_bound(e.step.control.b))
            .count();
        report.bang_bang_fraction = if !ds.is_empty() {
            bb as f64 / ds.len() as f64
        } else {
            0.0
        };
        Ok((ds, report))
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.flat
            .iter()
            .map(|&(ai, si)| self.anchors[ai as usize].slots[si as usize].as_ref().unwrap())
    }

    pub fn entry(&self, i: usize) -> &DatasetEntry {
        let (ai, si) = self.flat[i];
        self.anchors[ai as usize].slots[si as usize].as_ref().unwrap()
    }

    pub fn histogram(&self) -> Option<&VelocityHistogram> {
        self.histogram.as_ref()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    fn anchor_for(&self, init_vel: (f64, f64)) -> Result<&AnchorData> {
        self.anchors
            .iter()
            .filter(|a| !a.is_empty())
            .min_by(|a, b| {
                let da = (a.init_vel.0 - init_vel.0).powi(2) + (a.init_vel.1 - init_vel.1).powi(2);
                let db = (b.init_vel.0 - init_vel.0).powi(2) + (b.init_vel.1 - init_vel.1).powi(2);
                da.partial_cmp(&db).unwrap()
            })
            .ok_or(Error::EmptyDataset)
    }

    /// Entry minimizing planar distance to the query delta, ties broken by
    /// rotational distance, then duration, then insertion order. For the
    /// second order the search is restricted to the anchor nearest the
    /// query's initial velocities.
    pub fn nearest(&self, query: &StateDelta) -> Result<&DatasetEntry> {
        let anchor = match self.system.order {
            SystemOrder::First => self.anchors.first().ok_or(Error::EmptyDataset)?,
            SystemOrder::Second => self.anchor_for((query.v_l_init, query.v_r_init))?,
        };
        if anchor.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (cx, cy) = anchor.cell_of(query.dx, query.dy);
        let mut best: Option<(f64, f64, f64, u32)> = None;
        let qs = State {
            x: query.dx,
            y: query.dy,
            theta: query.dtheta,
            v_l: query.v_l_goal,
            v_r: query.v_r_goal,
        };
        let max_ring = {
            let span = 2.0 * self.system.max_reach() / anchor.cell + 2.0;
            span as i64 + 1
        };
        for ring in 0..=max_ring {
            if let Some((bd, _, _, _)) = best {
                // Entries in farther rings are at least this close.
                let floor = (ring - 1).max(0) as f64 * anchor.cell;
                if bd < floor {
                    break;
                }
            }
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dy.abs()) != ring {
                        continue;
                    }
                    let Some(slots) = anchor.grid.get(&(cx + dx, cy + dy)) else {
                        continue;
                    };
                    for &slot in slots {
                        let e = anchor.slots[slot as usize].as_ref().unwrap();
                        let cand = (
                            dynamics::d_e(&qs, &e.endpoint()),
                            self.system.d_r(&qs, &e.endpoint()),
                            e.cost,
                            slot,
                        );
                        let better = match best {
                            None => true,
                            Some(b) => {
                                (cand.0, cand.1, cand.2, cand.3)
                                    < (b.0, b.1, b.2, b.3)
                            }
                        };
                        if better {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        let (_, _, _, slot) = best.ok_or(Error::EmptyDataset)?;
        Ok(anchor.slots[slot as usize].as_ref().unwrap())
    }

    /// Uniformly random retained entry: a waypoint in the reachable set that
    /// is high quality by construction.
    pub fn sample_waypoint(&self, rng: &mut dyn RngCore) -> Result<&DatasetEntry> {
        if self.flat.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let i = (RngCore::next_u64(rng) % self.flat.len() as u64) as usize;
        Ok(self.entry(i))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# kinoforge-dataset v1; order={}; eps_E={}; eps_R={}; eps_V={}\n",
            self.system.order, self.epsilons.eps_e, self.epsilons.eps_r, self.epsilons.eps_v
        );
        for e in self.entries() {
            match self.system.order {
                SystemOrder::First => out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.key.dx, e.key.dy, e.key.dtheta, e.step.control.a, e.step.control.b,
                    e.step.duration
                )),
                SystemOrder::Second => out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    e.key.dx,
                    e.key.dy,
                    e.key.dtheta,
                    e.key.v_l_goal,
                    e.key.v_r_goal,
                    e.key.v_l_init,
                    e.key.v_r_init,
                    e.step.control.a,
                    e.step.control.b,
                    e.step.duration
                )),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path, spec: &SystemSpec) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, spec)
    }

    pub fn from_csv(text: &str, spec: &SystemSpec) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty dataset file".into(),
        })?;
        if !header.starts_with("# kinoforge-dataset v1;") {
            return Err(Error::Parse {
                line: 1,
                msg: "bad dataset header".into(),
            });
        }
        let mut eps = Epsilons {
            eps_e: 0.0,
            eps_r: 0.0,
            eps_v: f64::INFINITY,
        };
        let mut order = SystemOrder::First;
        for part in header.trim_start_matches("# kinoforge-dataset v1;").split(';') {
            if let Some((k, v)) = part.trim().split_once('=') {
                let v = v.trim();
                match k.trim() {
                    "order" => order = if v == "2" { SystemOrder::Second } else { SystemOrder::First },
                    "eps_E" => eps.eps_e = v.parse().unwrap_or(0.0),
                    "eps_R" => eps.eps_r = v.parse().unwrap_or(0.0),
                    "eps_V" => eps.eps_v = v.parse().unwrap_or(f64::INFINITY),
                    _ => {}
                }
            }
        }
        if order != spec.order {
            return Err(Error::InvalidConfig(
                "dataset order does not match system spec".into(),
            ));
        }
        let want = match order {
            SystemOrder::First => 6,
            SystemOrder::Second => 10,
        };
        // Group rows by initial velocity into anchors, preserving order.
        let mut anchors: Vec<AnchorData> = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 2,
                    msg: e.to_string(),
                })?;
            if f.len() != want {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("expected {want} fields, got {}", f.len()),
                });
            }
            let (key, step) = match order {
                SystemOrder::First => (
                    StateDelta::pose(f[0], f[1], f[2]),
                    PropagationStep::new(Control::new(f[3], f[4]), f[5]),
                ),
                SystemOrder::Second => (
                    StateDelta {
                        dx: f[0],
                        dy: f[1],
                        dtheta: f[2],
                        v_l_goal: f[3],
                        v_r_goal: f[4],
                        v_l_init: f[5],
                        v_r_init: f[6],
                    },
                    PropagationStep::new(Control::new(f[7], f[8]), f[9]),
                ),
            };
            let init_vel = (key.v_l_init, key.v_r_init);
            let ai = match anchors.iter().position(|a| a.init_vel == init_vel) {
                Some(ai) => ai,
                None => {
                    anchors.push(AnchorData::new(init_vel, &eps));
                    anchors.len() - 1
                }
            };
            anchors[ai].push(DatasetEntry {
                key,
                cost: step.duration,
                step,
            });
        }
        Ok(Self::finalize(*spec, eps, anchors, 10))
    }
}
