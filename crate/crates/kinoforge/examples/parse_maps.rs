//! Parse and serialize grid maps, downscale them, and generate planning
//! problems with clearance and separation constraints.

use kinoforge::maps::{generate_problems, synth_city_map, GridMap};

fn main() -> kinoforge::Result<()> {
    // Round-trip a small map through the text format.
    let text = "type octile\nheight 4\nwidth 6\nmap\n......\n.@@...\n...T..\n......\n";
    let map = GridMap::parse(text)?;
    println!(
        "parsed {}x{}, {} passable cells",
        map.width,
        map.height,
        map.count_passable()
    );
    assert_eq!(map.serialize(), text);
    println!("serialization is byte-exact");

    // City-style map and a 2x downscale.
    let city = synth_city_map(128, 128, 0);
    let small = city.downscale(2);
    println!(
        "city 128x128 ({} passable) -> downscaled {}x{} ({} passable)",
        city.count_passable(),
        small.width,
        small.height,
        small.count_passable()
    );

    // Problems: clear start/goal, minimum separation, deterministic per seed.
    let set = generate_problems(&small, "city64", 3, 25.0, 0.5, 42)?;
    for (i, (start, goal)) in set.problems.iter().enumerate() {
        let d = (start.x - goal.0).hypot(start.y - goal.1);
        println!(
            "problem {i}: ({:5.1}, {:5.1}, {:5.2}) -> ({:5.1}, {:5.1})  separation {d:5.1}",
            start.x, start.y, start.theta, goal.0, goal.1
        );
    }
    print!("{}", set.to_csv());
    Ok(())
}
