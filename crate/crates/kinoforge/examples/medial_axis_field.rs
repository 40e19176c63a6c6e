//! Compute a medial-axis field on a synthetic city block, attach a goal, and
//! render the axis plus integrated steering vectors to an SVG.

use std::fs;

use kinoforge::maps::synth_city_map;
use kinoforge::medial_axis::{attach_goal, compute_medial_axis, render_field_svg};

fn main() -> kinoforge::Result<()> {
    let map = synth_city_map(64, 64, 4);
    let mut field = compute_medial_axis(&map, 0.5)?;

    // Pick a passable goal near the south-east corner.
    let goal = (0..map.height)
        .rev()
        .flat_map(|y| (0..map.width).rev().map(move |x| (x, y)))
        .find(|&(x, y)| map.passable(x as i64, y as i64) && field.dist[y * map.width + x] > 1.5)
        .map(|(x, y)| (x as f64, y as f64))
        .expect("map has open space");
    attach_goal(&mut field, goal)?;

    println!(
        "{}x{} map, {} axis cells, goal {:?}",
        map.width,
        map.height,
        field.ma_cells().count(),
        goal
    );
    let reachable = field.cost_to_go.iter().filter(|c| c.is_finite()).count();
    println!("axis cells with a finite route to the goal: {reachable}");

    let out = std::env::temp_dir().join("kinoforge_field.svg");
    fs::write(&out, render_field_svg(&map, &field, 0.3, 5.0))?;
    println!("wrote {}", out.display());
    Ok(())
}
