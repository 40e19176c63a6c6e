//! MovingAI-format grid maps, conservative downscaling, and planning problem
//! generation with a minimum start-goal separation.

use std::f64::consts::PI;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::State;
use crate::error::{Error, Result};

/// Occupancy grid. `true` means obstacle. Out-of-bounds queries are obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    occupancy: Vec<bool>,
    /// Original map characters, kept so serialization is byte-exact.
    chars: Vec<u8>,
}

/// MovingAI passable terrain: ground, swamp, start markers.
fn passable_char(c: u8) -> bool {
    matches!(c, b'.' | b'G' | b'S')
}

impl GridMap {
    pub fn from_occupancy(width: usize, height: usize, occupancy: Vec<bool>) -> Self {
        assert_eq!(occupancy.len(), width * height);
        let chars = occupancy.iter().map(|&o| if o { b'@' } else { b'.' }).collect();
        GridMap {
            width,
            height,
            occupancy,
            chars,
        }
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Cell occupancy; anything outside the grid counts as an obstacle.
    #[inline]
    pub fn occupied(&self, x: i64, y: i64) -> bool {
        if !self.in_bounds(x, y) {
            return true;
        }
        self.occupancy[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn passable(&self, x: i64, y: i64) -> bool {
        !self.occupied(x, y)
    }

    /// Cell containing a continuous position.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (x.floor() as i64, y.floor() as i64)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        (0..self.width * self.height).map(move |i| (i % w, i / w))
    }

    pub fn count_passable(&self) -> usize {
        self.occupancy.iter().filter(|&&o| !o).count()
    }

    /// Parses the MovingAI octile map format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut expect = |prefix: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: "unexpected end of header".into(),
            })?;
            if !line.trim_end().starts_with(prefix) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {prefix:?}, got {line:?}"),
                });
            }
            Ok((i, line.trim_end().to_string()))
        };
        let (i, type_line) = expect("type")?;
        if type_line != "type octile" {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("unknown version line {type_line:?}"),
            });
        }
        let parse_dim = |line: &str, i: usize, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("bad {key} line {line:?}"),
                })
        };
        let (i, h_line) = expect("height")?;
        let height = parse_dim(&h_line, i, "height")?;
        let (i, w_line) = expect("width")?;
        let width = parse_dim(&w_line, i, "width")?;
        expect("map")?;

        let mut chars = Vec::with_capacity(width * height);
        let mut rows = 0usize;
        for (i, line) in lines {
            let row = line.trim_end_matches(['\r', '\n']);
            if row.is_empty() && rows == height {
                continue;
            }
            if row.len() != width {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("row length {} != width {}", row.len(), width),
                });
            }
            for &c in row.as_bytes() {
                if !matches!(c, b'.' | b'G' | b'@' | b'O' | b'T' | b'S' | b'W') {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown terrain character {:?}", c as char),
                    });
                }
                chars.push(c);
            }
            rows += 1;
        }
        if rows != height {
            return Err(Error::Parse {
                line: 0,
                msg: format!("row count {rows} != height {height}"),
            });
        }
        let occupancy = chars.iter().map(|&c| !passable_char(c)).collect();
        Ok(GridMap {
            width,
            height,
            occupancy,
            chars,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        GridMap::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the MovingAI format; the body reproduces the parsed
    /// bytes exactly.
    pub fn serialize(&self) -> String {
        let mut out = format!(
            "type octile\nheight {}\nwidth {}\nmap\n",
            self.height, self.width
        );
        for row in self.chars.chunks(self.width) {
            out.push_str(std::str::from_utf8(row).unwrap());
            out.push('\n');
        }
        out
    }

    /// Block-max pooling: a downscaled cell is an obstacle if any source cell
    /// in its block is.
    pub fn downscale(&self, factor: usize) -> GridMap {
        assert!(factor >= 1);
        let width = self.width.div_ceil(factor);
        let height = self.height.div_ceil(factor);
        let mut occupancy = vec![false; width * height];
        for (x, y) in self.cells() {
            if self.occupancy[y * self.width + x] {
                occupancy[(y / factor) * width + x / factor] = true;
            }
        }
        GridMap::from_occupancy(width, height, occupancy)
    }
}

/// A batch of start/goal planning queries on one map.
#[derive(Clone, Debug)]
pub struct ProblemSet {
    pub map_id: String,
    pub problems: Vec<(State, (f64, f64))>,
    pub separation: f64,
    pub seed: u64,
}

impl ProblemSet {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_x,start_y,start_theta,goal_x,goal_y\n");
        for (s, g) in &self.problems {
            out.push_str(&format!("{},{},{},{},{}\n", s.x, s.y, s.theta, g.0, g.1));
        }
        out
    }

    pub fn parse_csv(map_id: &str, text: &str) -> Result<Self> {
        let mut problems = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if f.len() != 5 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 5 fields, got {}", f.len()),
                });
            }
            problems.push((State::pose(f[0], f[1], f[2]), (f[3], f[4])));
        }
        Ok(ProblemSet {
            map_id: map_id.to_string(),
            problems,
            separation: 0.0,
            seed: 0,
        })
    }
}

/// True when a disc of `radius` centered at the (continuous) position touches
/// only passable cells.
pub fn clear_at(map: &GridMap, x: f64, y: f64, radius: f64) -> bool {
    let r = radius.max(0.0);
    let (x0, y0) = ((x - r).floor() as i64, (y - r).floor() as i64);
    let (x1, y1) = ((x + r).floor() as i64, (y + r).floor() as i64);
    for cy in y0..=y1 {
        for cx in x0..=x1 {
            // Distance from the disc center to the cell's square.
            let dx = (cx as f64 - x).max(x - (cx + 1) as f64).max(0.0);
            let dy = (cy as f64 - y).max(y - (cy + 1) as f64).max(0.0);
            if dx * dx + dy * dy < r * r && map.occupied(cx, cy) {
                return false;
            }
        }
    }
    true
}

/// Rejection-samples `count` problems with start/goal clearance and a minimum
/// planar separation `m`. Deterministic per seed.
pub fn generate_problems(
    map: &GridMap,
    map_id: &str,
    count: usize,
    m: f64,
    robot_radius: f64,
    seed: u64,
) -> Result<ProblemSet> {
    let diag = ((map.width * map.width + map.height * map.height) as f64).sqrt();
    if m > diag {
        return Err(Error::ProblemGeneration(format!(
            "separation {m} exceeds map diagonal {diag:.1}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(count);
    let mut rejections = 0usize;
    let sample_clear = |rng: &mut ChaCha8Rng| -> Option<(f64, f64)> {
        let x = rng.gen_range(0.0..map.width as f64);
        let y = rng.gen_range(0.0..map.height as f64);
        clear_at(map, x, y, robot_radius).then_some((x, y))
    };
    while problems.len() < count {
        if rejections > 100_000 {
            return Err(Error::ProblemGeneration(format!(
                "gave up after {rejections} rejections (map too constrained for M={m})"
            )));
        }
        let Some(start) = sample_clear(&mut rng) else {
            rejections += 1;
            continue;
        };
        let Some(goal) = sample_clear(&mut rng) else {
            rejections += 1;
            continue;
        };
        if (start.0 - goal.0).hypot(start.1 - goal.1) < m {
            rejections += 1;
            continue;
        }
        let theta = rng.gen_range(-PI..PI);
        problems.push((State::pose(start.0, start.1, theta), goal));
    }
    Ok(ProblemSet {
        map_id: map_id.to_string(),
        problems,
        separation: m,
        seed,
    })
}

/// Deterministic city-style map: rectangular building blocks separated by
/// streets of varying width, a few plazas, and a diagonal arterial. Used for
/// desk-scale benchmark runs.
pub fn synth_city_map(width: usize, height: usize, seed: u64) -> GridMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occ = vec![true; width * height];
    let carve = |occ: &mut Vec<bool>, x0: usize, y0: usize, x1: usize, y1: usize| {
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                occ[y * width + x] = false;
            }
        }
    };
    // Street grid with irregular spacing.
    let mut xs = vec![0usize];
    let mut x = 0;
    while x < width {
        x += rng.gen_range(12..22);
        xs.push(x.min(width));
    }
    let mut ys = vec![0usize];
    let mut y = 0;
    while y < height {
        y += rng.gen_range(12..22);
        ys.push(y.min(height));
    }
    for &sx in &xs[1..] {
        let w = rng.gen_range(4..8);
        carve(&mut occ, sx.saturating_sub(w), 0, sx, height);
    }
    for &sy in &ys[1..] {
        let w = rng.gen_range(4..8);
        carve(&mut occ, 0, sy.saturating_sub(w), width, sy);
    }
    // Plazas.
    for _ in 0..(width * height / 4000).max(2) {
        let px = rng.gen_range(0..width.saturating_sub(16));
        let py = rng.gen_range(0..height.saturating_sub(16));
        let pw = rng.gen_range(10..16);
        let ph = rng.gen_range(10..16);
        carve(&mut occ, px, py, px + pw, py + ph);
    }
    // Diagonal arterial road.
    for i in 0..width.max(height) {
        let cx = i * width / width.max(height);
        let cy = i * height / width.max(height);
        carve(
            &mut occ,
            cx.saturating_sub(3),
            cy.saturating_sub(3),
            cx + 3,
            cy + 3,
        );
    }
    GridMap::from_occupancy(width, height, occ)
}
