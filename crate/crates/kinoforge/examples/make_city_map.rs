//! Regenerate the committed benchmark assets: the 128x128 synthetic city map
//! and a matching problem set. Output is deterministic, so running this
//! should reproduce `assets/` byte for byte.

use std::fs;
use std::path::Path;

use kinoforge::maps::{generate_problems, synth_city_map};

fn main() -> kinoforge::Result<()> {
    let dir = Path::new("assets");
    fs::create_dir_all(dir)?;
    let map = synth_city_map(128, 128, 0);
    let map_path = dir.join("city128.map");
    fs::write(&map_path, map.serialize())?;
    println!(
        "wrote {} ({}x{}, {} passable cells)",
        map_path.display(),
        map.width,
        map.height,
        map.count_passable()
    );

    let problems = generate_problems(&map, "city128", 5, 40.0, 0.5, 0)?;
    let prob_path = dir.join("city128_problems.csv");
    fs::write(&prob_path, problems.to_csv())?;
    println!("wrote {} ({} problems)", prob_path.display(), problems.problems.len());
    Ok(())
}
