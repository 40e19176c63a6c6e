//! Workspace medial axis: exact distance transform, repulsive and attractive
//! vector fields, goal cost-to-go, and waypoint construction for the
//! exploitative planner expansion.
//!
//! All per-cell data uses row-major indexing (`idx = y * width + x`). Cell
//! centers sit at integer coordinates for distance purposes; the one-cell ring
//! just outside the grid counts as obstacles.

use std::collections::BinaryHeap;
use std::sync::Mutex;

use rand::RngCore;

use crate::dataset::VelocityHistogram;
use crate::dynamics::{wrap_angle, State, StateDelta};
use crate::error::{Error, Result};
use crate::maps::GridMap;

/// Axis cells are detected as site discontinuities: a free cell whose nearest
/// boundary site sits farther than this from an 8-neighbor's nearest site
/// faces a different wall than that neighbor, so the equidistant ridge runs
/// between them. Along a single flat or staircase wall the site moves by at
/// most sqrt(2) per cell step, so 2.5 leaves a comfortable margin while still
/// catching ridges between walls three cells apart.
const SITE_JUMP: f64 = 2.5;

/// Grid quantization bound used by tests auditing ridge cells: a discrete
/// ridge cell sits within one diagonal cell step of the true equidistant
/// locus, so its two wall distances agree to within 2 * sqrt(2).
pub const RIDGE_SLACK: f64 = 2.8285;

/// Blended steering direction with a reach-limited magnitude.
#[derive(Clone, Copy, Debug)]
pub struct IntegratedVector {
    pub direction: (f64, f64),
    pub magnitude: f64,
}

/// Precomputed medial-axis data for one map (and, after [`attach_goal`], one
/// goal).
pub struct MedialAxisField {
    pub width: usize,
    pub height: usize,
    pub robot_radius: f64,
    /// Euclidean distance to the nearest obstacle cell.
    pub dist: Vec<f64>,
    /// Nearest obstacle cell per cell (boundary ring cells may lie outside).
    pub site: Vec<(i32, i32)>,
    pub ma_mask: Vec<bool>,
    /// Unit vector from the nearest obstacle toward the cell; (0,0) on obstacles.
    pub u_rep: Vec<(f64, f64)>,
    pub map_hash: u64,
    pub goal: Option<(f64, f64)>,
    /// Shortest-path distance to the goal along the medial-axis graph, in
    /// cells; infinite off the axis or on components the goal cannot reach.
    pub cost_to_go: Vec<f64>,
    /// Per passable cell: min over finite-cost cells of (grid distance there +
    /// its cost_to_go). Used as the planner heuristic. Infinite off-map.
    pub heuristic_cells: Vec<f64>,
    /// Finite-cost cells sorted by ascending cost_to_go.
    by_cost: Vec<u32>,
    /// Attractive-target memo per cell: u32::MAX unknown, u32::MAX-1 fallback.
    att_cache: Mutex<Vec<u32>>,
    occupancy: Vec<bool>,
}

const CACHE_UNKNOWN: u32 = u32::MAX;
const CACHE_FALLBACK: u32 = u32::MAX - 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Obstacle cells that can be the nearest site of some free cell: in-grid
/// obstacles adjacent to free space, plus the ring just outside the border.
fn boundary_sites(map: &GridMap) -> Vec<(i32, i32)> {
    let mut sites = Vec::new();
    let (w, h) = (map.width as i32, map.height as i32);
    for x in -1..=w {
        sites.push((x, -1));
        sites.push((x, h));
    }
    for y in 0..h {
        sites.push((-1, y));
        sites.push((w, y));
    }
    for y in 0..h {
        for x in 0..w {
            if map.occupied(x as i64, y as i64) {
                let near_free = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| map.passable((x + dx) as i64, (y + dy) as i64))
                });
                if near_free {
                    sites.push((x, y));
                }
            }
        }
    }
    sites
}

/// Exact Euclidean distance transform over cell centers, with the nearest
/// obstacle site per cell. Obstacle cells get distance 0 and themselves.
pub fn distance_transform(map: &GridMap) -> (Vec<f64>, Vec<(i32, i32)>) {
    let sites = boundary_sites(map);
    let n = map.width * map.height;
    let mut dist = vec![0.0; n];
    let mut site = vec![(0, 0); n];
    // Coarse buckets so the per-cell scan only touches nearby sites.
    let bucket = 8usize;
    let bw = (map.width + 2).div_ceil(bucket) + 1;
    let bh = (map.height + 2).div_ceil(bucket) + 1;
    let mut buckets: Vec<Vec<(i32, i32)>> = vec![Vec::new(); bw * bh];
    for &(sx, sy) in &sites {
        let bx = ((sx + 1) as usize) / bucket;
        let by = ((sy + 1) as usize) / bucket;
        buckets[by * bw + bx].push((sx, sy));
    }
    for y in 0..map.height {
        for x in 0..map.width {
            let idx = y * map.width + x;
            if map.occupied(x as i64, y as i64) {
                site[idx] = (x as i32, y as i32);
                continue;
            }
            let (cx, cy) = (x as f64, y as f64);
            let (bx, by) = (((x + 1) / bucket) as i64, ((y + 1) / bucket) as i64);
            let mut best = f64::INFINITY;
            let mut best_site = (0, 0);
            let max_ring = bw.max(bh) as i64;
            for ring in 0..max_ring {
                // Cells in this bucket ring are at least this far away.
                let ring_floor = ((ring - 1).max(0) as f64) * bucket as f64;
                if best < ring_floor {
                    break;
                }
                for byy in (by - ring).max(0)..=(by + ring).min(bh as i64 - 1) {
                    for bxx in (bx - ring).max(0)..=(bx + ring).min(bw as i64 - 1) {
                        if (byy - by).abs().max((bxx - bx).abs()) != ring {
                            continue;
                        }
                        for &(sx, sy) in &buckets[byy as usize * bw + bxx as usize] {
                            let d =
                                ((sx as f64 - cx).powi(2) + (sy as f64 - cy).powi(2)).sqrt();
                            if d < best {
                                best = d;
                                best_site = (sx, sy);
                            }
                        }
                    }
                }
            }
            dist[idx] = best;
            site[idx] = best_site;
        }
    }
    (dist, site)
}

impl MedialAxisField {
    #[inline]
    fn idx(&self, x: i64, y: i64) -> Option<usize> {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            Some(y as usize * self.width + x as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn passable_cell(&self, x: i64, y: i64) -> bool {
        self.idx(x, y).map(|i| !self.occupancy[i]).unwrap_or(false)
    }

    /// Clearance at a continuous position (distance of its cell to obstacles).
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        match self.idx(x.round() as i64, y.round() as i64) {
            Some(i) => self.dist[i],
            None => 0.0,
        }
    }

    pub fn ma_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.ma_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Cells on a supercover raster of the segment, endpoints included.
    fn raster_segment(a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize * 2).max(1);
        let mut cells = Vec::with_capacity(steps + 1);
        let mut last = (i64::MIN, i64::MIN);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = (a.0 + t * (b.0 - a.0)).round() as i64;
            let y = (a.1 + t * (b.1 - a.1)).round() as i64;
            if (x, y) != last {
                cells.push((x, y));
                last = (x, y);
            }
        }
        cells
    }

    /// Line of sight with clearance: every raster cell passable and at least
    /// `clearance` away from obstacles.
    pub fn visible(&self, from: (f64, f64), to: (f64, f64), clearance: f64) -> bool {
        Self::raster_segment(from, to).into_iter().all(|(x, y)| {
            self.idx(x, y)
                .map(|i| !self.occupancy[i] && self.dist[i] >= clearance)
                .unwrap_or(false)
        })
    }

    /// Unit repulsive direction at a continuous position.
    pub fn repulsive(&self, x: f64, y: f64) -> (f64, f64) {
        match self.idx(x.round() as i64, y.round() as i64) {
            Some(i) => self.u_rep[i],
            None => (0.0, 0.0),
        }
    }

    /// Unit vector toward the visible medial-axis cell with minimum
    /// cost-to-go; falls back to the nearest finite-cost cell when nothing is
    /// visible. Requires [`attach_goal`].
    pub fn attractive(&self, x: f64, y: f64) -> (f64, f64) {
        let target = self.attractive_target(x, y);
        let (tx, ty) = target;
        let (dx, dy) = (tx - x, ty - y);
        let n = (dx * dx + dy * dy).sqrt();
        if n < 1e-9 {
            // Standing on the target: aim along its best graph neighbor.
            (0.0, 0.0)
        } else {
            (dx / n, dy / n)
        }
    }

    /// The medial-axis cell the attractive field aims at from this position.
    pub fn attractive_target(&self, x: f64, y: f64) -> (f64, f64) {
        assert!(self.goal.is_some(), "attach_goal must run first");
        let cell = self.idx(x.round() as i64, y.round() as i64);
        if let Some(ci) = cell {
            let cached = self.att_cache.lock().unwrap()[ci];
            if cached == CACHE_FALLBACK {
                return self.nearest_finite_cell(x, y);
            } else if cached != CACHE_UNKNOWN {
                let i = cached as usize;
                return ((i % self.width) as f64, (i / self.width) as f64);
            }
        }
        // Finite-cost cells in ascending cost order: the first visible one is
        // the minimum-cost visible target.
        let mut found: Option<u32> = None;
        for &i in &self.by_cost {
            let (tx, ty) = ((i as usize % self.width) as f64, (i as usize / self.width) as f64);
            if self.visible((x, y), (tx, ty), self.robot_radius) {
                found = Some(i);
                break;
            }
        }
        if let Some(ci) = cell {
            self.att_cache.lock().unwrap()[ci] = found.unwrap_or(CACHE_FALLBACK);
        }
        match found {
            Some(i) => ((i as usize % self.width) as f64, (i as usize / self.width) as f64),
            None => self.nearest_finite_cell(x, y),
        }
    }

    fn nearest_finite_cell(&self, x: f64, y: f64) -> (f64, f64) {
        let mut best = f64::INFINITY;
        let mut out = (x, y);
        for &i in &self.by_cost {
            let (tx, ty) = ((i as usize % self.width) as f64, (i as usize / self.width) as f64);
            let d = (tx - x).powi(2) + (ty - y).powi(2);
            if d < best {
                best = d;
                out = (tx, ty);
            }
        }
        out
    }

    /// Blend of the repulsive and attractive directions, extended until it
    /// reaches the medial axis or the reachability radius `r_max`.
    pub fn integrated_vector(&self, p: (f64, f64), w: f64, r_max: f64) -> IntegratedVector {
        let rep = self.repulsive(p.0, p.1);
        let att = self.attractive(p.0, p.1);
        let mut dir = (
            w * rep.0 + (1.0 - w) * att.0,
            w * rep.1 + (1.0 - w) * att.1,
        );
        let norm = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        if norm < 1e-9 {
            // Opposing fields cancel: follow the attraction.
            dir = if att.0.abs() + att.1.abs() > 1e-12 {
                att
            } else {
                (1.0, 0.0)
            };
        } else {
            dir = (dir.0 / norm, dir.1 / norm);
        }
        // March until the medial axis, an obstacle, or the reach limit.
        let step = 0.25;
        let mut mag = r_max;
        let mut t = step;
        let start_idx = self.idx(p.0.round() as i64, p.1.round() as i64);
        while t <= r_max {
            let (qx, qy) = (p.0 + t * dir.0, p.1 + t * dir.1);
            match self.idx(qx.round() as i64, qy.round() as i64) {
                Some(i) if !self.occupancy[i] => {
                    if self.ma_mask[i] && Some(i) != start_idx {
                        mag = t;
                        break;
                    }
                }
                _ => {
                    mag = (t - step).max(step);
                    break;
                }
            }
            t += step;
        }
        IntegratedVector {
            direction: dir,
            magnitude: mag.min(r_max).max(step),
        }
    }

    /// Builds the exploitative waypoint for a robot state: one integrated
    /// vector to the next ideal position, a second to orient the heading.
    pub fn waypoint(
        &self,
        s: &State,
        w: f64,
        r_max: f64,
        rng: &mut dyn RngCore,
        hist: Option<&VelocityHistogram>,
    ) -> StateDelta {
        let p = (s.x, s.y);
        let v1 = self.integrated_vector(p, w, r_max);
        let s1 = (p.0 + v1.direction.0 * v1.magnitude, p.1 + v1.direction.1 * v1.magnitude);
        let v2 = if self.passable_cell(s1.0.round() as i64, s1.1.round() as i64) {
            self.integrated_vector(s1, w, r_max)
        } else {
            v1
        };
        let s2 = (
            s1.0 + v2.direction.0 * v2.magnitude,
            s1.1 + v2.direction.1 * v2.magnitude,
        );
        let (wx, wy) = (s1.0 - p.0, s1.1 - p.1);
        let (sin, cos) = s.theta.sin_cos();
        let dtheta = wrap_angle((s2.1 - s1.1).atan2(s2.0 - s1.0) - s.theta);
        let mut delta = StateDelta {
            dx: cos * wx + sin * wy,
            dy: -sin * wx + cos * wy,
            dtheta,
            v_l_init: s.v_l,
            v_r_init: s.v_r,
            v_l_goal: 0.0,
            v_r_goal: 0.0,
        };
        if let Some(h) = hist {
            if let Ok((vl, vr)) = h.sample(rng) {
                delta.v_l_goal = vl;
                delta.v_r_goal = vr;
            }
        }
        delta
    }

    /// Planner heuristic support: min over finite-cost MA cells of grid
    /// distance plus that cell's cost-to-go, for the cell containing (x, y).
    pub fn heuristic_cost_cells(&self, x: f64, y: f64) -> f64 {
        match self.idx(x.round() as i64, y.round() as i64) {
            Some(i) => self.heuristic_cells[i],
            None => f64::INFINITY,
        }
    }

    /// Serializes the field (header + one row per cell).
    pub fn to_csv(&self) -> String {
        let goal = self.goal.unwrap_or((f64::NAN, f64::NAN));
        let mut out = format!(
            "# kinoforge-field v1; w={}; h={}; map_hash={}; goal={},{}; radius={}\n",
            self.width, self.height, self.map_hash, goal.0, goal.1, self.robot_radius
        );
        for i in 0..self.width * self.height {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.dist[i],
                self.site[i].0,
                self.site[i].1,
                self.ma_mask[i] as u8,
                self.cost_to_go[i]
            ));
        }
        out
    }

    /// Loads a serialized field, checking it matches the map.
    pub fn from_csv(text: &str, map: &GridMap, robot_radius: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty field file".into(),
        })?;
        if !header.starts_with("# kinoforge-field v1;") {
            return Err(Error::Parse {
                line: 1,
                msg: "bad field header".into(),
            });
        }
        let mut fields = std::collections::HashMap::new();
        for part in header.trim_start_matches("# kinoforge-field v1;").split(';') {
            if let Some((k, v)) = part.trim().split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let map_hash = fnv1a(map.serialize().as_bytes());
        if fields.get("map_hash").map(|v| v.as_str()) != Some(map_hash.to_string().as_str()) {
            return Err(Error::Map("field file does not match this map".into()));
        }
        let goal: Option<(f64, f64)> = fields.get("goal").and_then(|g| {
            let (a, b) = g.split_once(',')?;
            let (a, b) = (a.parse().ok()?, b.parse().ok()?);
            Some((a, b))
        });
        let n = map.width * map.height;
        let mut dist = Vec::with_capacity(n);
        let mut site = Vec::with_capacity(n);
        let mut ma_mask = Vec::with_capacity(n);
        let mut cost_to_go = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "expected 5 fields".into(),
                });
            }
            let p = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: format!("bad number {s:?}"),
                })
            };
            dist.push(p(parts[0])?);
            site.push((p(parts[1])? as i32, p(parts[2])? as i32));
            ma_mask.push(parts[3] == "1");
            cost_to_go.push(p(parts[4])?);
        }
        if dist.len() != n {
            return Err(Error::Parse {
                line: 0,
                msg: format!("cell count {} != {}", dist.len(), n),
            });
        }
        let mut field = Self::assemble(map, robot_radius, dist, site, ma_mask);
        field.goal = goal;
        field.cost_to_go = cost_to_go;
        field.finalize_goal_caches();
        Ok(field)
    }

    fn assemble(
        map: &GridMap,
        robot_radius: f64,
        dist: Vec<f64>,
        site: Vec<(i32, i32)>,
        ma_mask: Vec<bool>,
    ) -> Self {
        let n = map.width * map.height;
        let mut u_rep = vec![(0.0, 0.0); n];
        let mut occupancy = vec![false; n];
        for y in 0..map.height {
            for x in 0..map.width {
                let i = y * map.width + x;
                occupancy[i] = map.occupied(x as i64, y as i64);
                if !occupancy[i] {
                    let (sx, sy) = site[i];
                    let (dx, dy) = (x as f64 - sx as f64, y as f64 - sy as f64);
                    let d = (dx * dx + dy * dy).sqrt();
                    if d > 1e-12 {
                        u_rep[i] = (dx / d, dy / d);
                    }
                }
            }
        }
        MedialAxisField {
            width: map.width,
            height: map.height,
            robot_radius,
            dist,
            site,
            ma_mask,
            u_rep,
            map_hash: fnv1a(map.serialize().as_bytes()),
            goal: None,
            cost_to_go: vec![f64::INFINITY; n],
            heuristic_cells: vec![f64::INFINITY; n],
            by_cost: Vec::new(),
            att_cache: Mutex::new(vec![CACHE_UNKNOWN; n]),
            occupancy,
        }
    }

    fn finalize_goal_caches(&mut self) {
        let n = self.width * self.height;
        self.by_cost = (0..n as u32)
            .filter(|&i| self.cost_to_go[i as usize].is_finite())
            .collect();
        self.by_cost.sort_by(|&a, &b| {
            self.cost_to_go[a as usize]
                .partial_cmp(&self.cost_to_go[b as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        self.att_cache = Mutex::new(vec![CACHE_UNKNOWN; n]);
        // Dijkstra over passable cells seeded with cost_to_go at finite cells:
        // yields min (grid distance + cost_to_go) per cell. Nonnegative f64
        // bit patterns order like the floats, so to_bits works as a heap key.
        let mut h = vec![f64::INFINITY; n];
        let mut heap2: BinaryHeap<std::cmp::Reverse<(u64, u32)>> = BinaryHeap::new();
        for &i in &self.by_cost {
            h[i as usize] = self.cost_to_go[i as usize];
            heap2.push(std::cmp::Reverse((h[i as usize].to_bits(), i)));
        }
        while let Some(std::cmp::Reverse((dbits, i))) = heap2.pop() {
            let d = f64::from_bits(dbits);
            if d > h[i as usize] + 1e-12 {
                continue;
            }
            let (x, y) = ((i as usize % self.width) as i64, (i as usize / self.width) as i64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if let Some(j) = self.idx(x + dx, y + dy) {
                        if self.occupancy[j] {
                            continue;
                        }
                        let step = ((dx * dx + dy * dy) as f64).sqrt();
                        let nd = d + step;
                        if nd < h[j] - 1e-12 {
                            h[j] = nd;
                            heap2.push(std::cmp::Reverse((nd.to_bits(), j as u32)));
                        }
                    }
                }
            }
        }
        self.heuristic_cells = h;
    }
}

/// Computes the medial axis and repulsive field for a map. The goal-dependent
/// parts are filled by [`attach_goal`].
pub fn compute_medial_axis(map: &GridMap, robot_radius: f64) -> Result<MedialAxisField> {
    if map.count_passable() == 0 {
        return Err(Error::Map("map has no passable cells".into()));
    }
    let (dist, site) = distance_transform(map);
    let n = map.width * map.height;
    let mut ma = vec![false; n];
    for y in 0..map.height as i64 {
        for x in 0..map.width as i64 {
            let i = y as usize * map.width + x as usize;
            if map.occupied(x, y) {
                continue;
            }
            // Ridge detection by site discontinuity: an 8-neighbor whose
            // nearest boundary site jumps farther than SITE_JUMP means the
            // two cells face different walls.
            let (sx, sy) = site[i];
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx == 0 && dy == 0) || map.occupied(x + dx, y + dy) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= map.width as i64 || ny >= map.height as i64 {
                        continue;
                    }
                    let j = ny as usize * map.width + nx as usize;
                    let (ox, oy) = site[j];
                    let jump = (((ox - sx).pow(2) + (oy - sy).pow(2)) as f64).sqrt();
                    // Only the higher-clearance side of the jump is on the
                    // ridge; ties mark both cells and thinning picks one.
                    if jump > SITE_JUMP && dist[i] >= dist[j] - 1e-9 {
                        ma[i] = true;
                        break 'scan;
                    }
                }
            }
            // Width-one corridors have no free neighbor across the ridge;
            // mark cells walled in on both sides of an axis.
            if !ma[i]
                && ((map.occupied(x - 1, y) && map.occupied(x + 1, y))
                    || (map.occupied(x, y - 1) && map.occupied(x, y + 1)))
            {
                ma[i] = true;
            }
        }
    }
    Ok(MedialAxisField::assemble(map, robot_radius, dist, site, ma))
}

/// Connects the goal to the medial axis and fills the cost-to-go field by
/// shortest path over the axis graph.
pub fn attach_goal(field: &mut MedialAxisField, goal: (f64, f64)) -> Result<()> {
    let (gx, gy) = (goal.0.round() as i64, goal.1.round() as i64);
    if !field.passable_cell(gx, gy) {
        return Err(Error::InvalidQuery(format!(
            "goal ({}, {}) is not in free space",
            goal.0, goal.1
        )));
    }
    let gi = field.idx(gx, gy).unwrap();
    let w = field.width;
    // Attachment: straight segment to the nearest MA cell if passable, else a
    // shortest passable grid path (BFS) to any MA cell.
    let mut graph_mask: Vec<bool> = field.ma_mask.clone();
    if !graph_mask[gi] {
        let mut nearest: Option<(usize, f64)> = None;
        for (mx, my) in field.ma_cells() {
            let d = (mx as f64 - gx as f64).powi(2) + (my as f64 - gy as f64).powi(2);
            if nearest.map(|(_, bd)| d < bd).unwrap_or(true) {
                nearest = Some((my * w + mx, d));
            }
        }
        let Some((ni, _)) = nearest else {
            return Err(Error::Map("map has no medial-axis cells".into()));
        };
        let target = ((ni % w) as f64, (ni / w) as f64);
        let seg = MedialAxisField::raster_segment((gx as f64, gy as f64), target);
        let seg_ok = seg
            .iter()
            .all(|&(x, y)| field.passable_cell(x, y));
        if seg_ok {
            for (x, y) in seg {
                graph_mask[y as usize * w + x as usize] = true;
            }
        } else {
            // BFS from the goal over passable cells until the axis is reached.
            let mut prev: Vec<i32> = vec![-1; field.width * field.height];
            let mut queue = std::collections::VecDeque::new();
            prev[gi] = gi as i32;
            queue.push_back(gi);
            let mut hit = None;
            'bfs: while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        if let Some(j) = field.idx(x + dx, y + dy) {
                            if !field.occupancy[j] && prev[j] < 0 {
                                prev[j] = i as i32;
                                if field.ma_mask[j] {
                                    hit = Some(j);
                                    break 'bfs;
                                }
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
            let Some(mut cur) = hit else {
                return Err(Error::Map("goal cannot reach the medial axis".into()));
            };
            while cur != gi {
                graph_mask[cur] = true;
                cur = prev[cur] as usize;
            }
            graph_mask[gi] = true;
        }
    }
    // Dijkstra from the goal over the axis + attachment graph.
    let n = field.width * field.height;
    let mut cost = vec![f64::INFINITY; n];
    let mut heap: BinaryHeap<std::cmp::Reverse<(u64, u32)>> = BinaryHeap::new();
    cost[gi] = 0.0;
    heap.push(std::cmp::Reverse((0u64, gi as u32)));
    while let Some(std::cmp::Reverse((dbits, i))) = heap.pop() {
        let d = f64::from_bits(dbits);
        if d > cost[i as usize] + 1e-12 {
            continue;
        }
        let (x, y) = ((i as usize % w) as i64, (i as usize / w) as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                if let Some(j) = field.idx(x + dx, y + dy) {
                    if !graph_mask[j] {
                        continue;
                    }
                    let nd = d + ((dx * dx + dy * dy) as f64).sqrt();
                    if nd < cost[j] - 1e-12 {
                        cost[j] = nd;
                        heap.push(std::cmp::Reverse((nd.to_bits(), j as u32)));
                    }
                }
            }
        }
    }
    field.goal = Some(goal);
    field.cost_to_go = cost;
    field.finalize_goal_caches();
    Ok(())
}

/// Renders the axis, distance field and a sampling of integrated vectors as
/// an SVG overlay.
pub fn render_field_svg(map: &GridMap, field: &MedialAxisField, w_blend: f64, r_max: f64) -> String {
    let (w, h) = (map.width, map.height);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {2} {3}\">\n",
        w * 4,
        h * 4,
        w,
        h
    );
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    for (x, y) in map.cells() {
        if map.occupied(x as i64, y as i64) {
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill=\"#444\"/>\n"
            ));
        }
    }
    for (x, y) in field.ma_cells() {
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill=\"#2a2\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    if let Some((gx, gy)) = field.goal {
        let stride = (w / 24).max(2);
        for y in (stride / 2..h).step_by(stride) {
            for x in (stride / 2..w).step_by(stride) {
                if !field.passable_cell(x as i64, y as i64) {
                    continue;
                }
                let v = field.integrated_vector((x as f64, y as f64), w_blend, r_max);
                let scale = v.magnitude.min(stride as f64 * 0.8);
                svg.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#c33\" stroke-width=\"0.3\"/>\n",
                    x,
                    y,
                    x as f64 + v.direction.0 * scale,
                    y as f64 + v.direction.1 * scale
                ));
            }
        }
        svg.push_str(&format!(
            "<circle cx=\"{gx}\" cy=\"{gy}\" r=\"1.5\" fill=\"#33c\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
