//! Propagate both systems under constant controls and print the resulting
//! trajectories and pairwise distances.

use kinoforge::dynamics::{
    d_e, propagate, propagate_with, Control, PropagationStep, State, SystemSpec,
};

fn main() -> kinoforge::Result<()> {
    let fo = SystemSpec::first_order_default();
    let start = State::pose(0.0, 0.0, 0.0);

    // First order: an arc (left wheel slower than right).
    let arc = PropagationStep::new(Control::new(0.6, 1.0), 3.0);
    println!("first-order arc, sampled every 0.5 s:");
    let mut next = 0.5;
    let end = propagate_with(&fo, &start, &arc, |t, s| {
        if t + 1e-9 >= next {
            next += 0.5;
            println!("  t={t:4.1}  x={:6.3}  y={:6.3}  theta={:6.3}", s.x, s.y, s.theta);
        }
    })?;

    // Same control, two half-duration legs: constant controls compose.
    let half = PropagationStep::new(arc.control, 1.5);
    let mid = propagate(&fo, &start, &half)?;
    let end2 = propagate(&fo, &mid, &half)?;
    println!("split-propagation endpoint gap: {:.2e}", d_e(&end, &end2));

    // Second order: wheel accelerations ramp the velocities, which saturate.
    let so = SystemSpec::second_order_default();
    let ramp = PropagationStep::new(Control::new(1.0, 0.8), 4.0);
    println!("second-order ramp, wheel velocities saturate at {:.1}:", so.v_max);
    let mut next = 1.0;
    propagate_with(&so, &start, &ramp, |t, s| {
        if t + 1e-9 >= next {
            next += 1.0;
            println!(
                "  t={t:4.1}  x={:6.3}  y={:6.3}  v_l={:5.3}  v_r={:5.3}",
                s.x, s.y, s.v_l, s.v_r
            );
        }
    })?;
    Ok(())
}
