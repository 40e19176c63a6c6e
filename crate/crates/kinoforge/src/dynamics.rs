//! Differential-drive dynamics, numerical propagation, and the componentwise
//! distance functions used by the dataset, controller and planner.
//!
//! Two systems are supported: a first-order model whose controls are the wheel
//! velocities, and a second-order model whose controls are wheel accelerations
//! with the wheel velocities as extra state. Units are map cells and seconds.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Wraps an angle to the interval (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Minimal absolute angular difference on the circle, in [0, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SystemOrder {
    First,
    Second,
}

impl fmt::Display for SystemOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemOrder::First => write!(f, "1"),
            SystemOrder::Second => write!(f, "2"),
        }
    }
}

/// Robot state. For the first-order system `v_l`/`v_r` are unused and kept at
/// zero; for the second-order system they are the wheel velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v_l: f64,
    pub v_r: f64,
}

impl State {
    pub fn pose(x: f64, y: f64, theta: f64) -> Self {
        State {
            x,
            y,
            theta: wrap_angle(theta),
            v_l: 0.0,
            v_r: 0.0,
        }
    }

    pub fn with_velocities(x: f64, y: f64, theta: f64, v_l: f64, v_r: f64) -> Self {
        State {
            x,
            y,
            theta: wrap_angle(theta),
            v_l,
            v_r,
        }
    }
}

/// Constant actuation for one propagation: wheel velocities (first order) or
/// wheel accelerations (second order). `a` is the left wheel, `b` the right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Control {
    pub a: f64,
    pub b: f64,
}

impl Control {
    pub fn new(a: f64, b: f64) -> Self {
        Control { a, b }
    }
}

/// A (control, duration) pair: the planner's edge primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationStep {
    pub control: Control,
    pub duration: f64,
}

impl PropagationStep {
    pub fn new(control: Control, duration: f64) -> Self {
        PropagationStep { control, duration }
    }
}

/// Per-component pruning thresholds.
#[derive(Clone, Copy, Debug)]
pub struct Epsilons {
    pub eps_e: f64,
    pub eps_r: f64,
    /// Velocity threshold; ignored for the first-order system.
    pub eps_v: f64,
}

impl Epsilons {
    pub fn new(eps_e: f64, eps_r: f64, eps_v: f64) -> Result<Self> {
        if eps_e <= 0.0 || eps_r <= 0.0 || eps_v <= 0.0 {
            return Err(Error::InvalidConfig(
                "epsilons must be strictly positive".into(),
            ));
        }
        Ok(Epsilons {
            eps_e,
            eps_r,
            eps_v,
        })
    }

    /// Paper-tuned first-order defaults.
    pub fn first_order_default() -> Self {
        Epsilons {
            eps_e: 0.1,
            eps_r: PI / 6.0,
            eps_v: f64::INFINITY,
        }
    }

    /// Paper-tuned second-order defaults for the given velocity bounds.
    pub fn second_order_default(v_min: f64, v_max: f64) -> Self {
        Epsilons {
            eps_e: 0.2,
            eps_r: PI / 6.0,
            eps_v: (v_max - v_min) / 4.0,
        }
    }
}

/// System parameters: bounds, axle length and integration step.
#[derive(Clone, Copy, Debug)]
pub struct SystemSpec {
    pub order: SystemOrder,
    /// Control bounds (wheel velocity for first order, acceleration for second).
    pub u_min: f64,
    pub u_max: f64,
    /// Wheel velocity bounds (second order state constraint).
    pub v_min: f64,
    pub v_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub axle_length: f64,
    /// RK4 step in seconds.
    pub integ_step: f64,
    /// Literal mod-pi reading of the rotational distance (identifies theta
    /// with theta + pi). Off by default.
    pub identify_antipodal_headings: bool,
}

impl SystemSpec {
    pub fn first_order_default() -> Self {
        SystemSpec {
            order: SystemOrder::First,
            u_min: -1.0,
            u_max: 1.0,
            v_min: -1.0,
            v_max: 1.0,
            t_min: 0.5,
            t_max: 5.0,
            axle_length: 1.0,
            integ_step: 0.02,
            identify_antipodal_headings: false,
        }
    }

    pub fn second_order_default() -> Self {
        SystemSpec {
            order: SystemOrder::Second,
            ..Self::first_order_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min >= self.u_max || self.v_min >= self.v_max {
            return Err(Error::InvalidConfig("empty control/velocity bounds".into()));
        }
        if self.t_min <= 0.0 || self.t_min > self.t_max {
            return Err(Error::InvalidConfig("need 0 < t_min <= t_max".into()));
        }
        if self.integ_step <= 0.0 || self.integ_step > self.t_min {
            return Err(Error::InvalidConfig("need 0 < integ_step <= t_min".into()));
        }
        if self.axle_length <= 0.0 {
            return Err(Error::InvalidConfig("axle_length must be positive".into()));
        }
        Ok(())
    }

    /// Maximum displacement achievable by a single propagation step.
    pub fn max_reach(&self) -> f64 {
        self.v_max.abs().max(self.v_min.abs()) * self.t_max
    }

    /// Rotational distance between two states, honoring the antipodal flag.
    pub fn d_r(&self, s: &State, s2: &State) -> f64 {
        if self.identify_antipodal_headings {
            let d = (s.theta - s2.theta).rem_euclid(PI);
            d.min(PI - d)
        } else {
            d_r(s, s2)
        }
    }

    /// Componentwise threshold test used for dataset pruning.
    pub fn within_eps(&self, s: &State, s2: &State, eps: &Epsilons) -> bool {
        let ok = d_e(s, s2) < eps.eps_e && self.d_r(s, s2) < eps.eps_r;
        match self.order {
            SystemOrder::First => ok,
            SystemOrder::Second => ok && d_v(s, s2) < eps.eps_v,
        }
    }

    /// Loads a spec from a plain `key=value` file. Unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SystemSpec::first_order_default();
        let mut saw_u = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("invalid number {value:?} for {key}"),
                })
            };
            match key {
                "order" => {
                    spec.order = match value {
                        "1" | "first" => SystemOrder::First,
                        "2" | "second" => SystemOrder::Second,
                        _ => {
                            return Err(Error::Parse {
                                line: i + 1,
                                msg: format!("unknown order {value:?}"),
                            })
                        }
                    }
                }
                "v_min" => spec.v_min = num()?,
                "v_max" => spec.v_max = num()?,
                "u_min" => {
                    spec.u_min = num()?;
                    saw_u = true;
                }
                "u_max" => {
                    spec.u_max = num()?;
                    saw_u = true;
                }
                "t_min" => spec.t_min = num()?,
                "t_max" => spec.t_max = num()?,
                "axle_length" => spec.axle_length = num()?,
                "integ_step" => spec.integ_step = num()?,
                "identify_antipodal_headings" => {
                    spec.identify_antipodal_headings = value == "true" || value == "1"
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        // First order drives the wheels directly: control bounds default to
        // the velocity bounds unless given explicitly.
        if spec.order == SystemOrder::First && !saw_u {
            spec.u_min = spec.v_min;
            spec.u_max = spec.v_max;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Euclidean distance on the planar position.
pub fn d_e(s: &State, s2: &State) -> f64 {
    ((s.x - s2.x).powi(2) + (s.y - s2.y).powi(2)).sqrt()
}

/// Rotational distance: minimal absolute heading difference, in [0, pi].
pub fn d_r(s: &State, s2: &State) -> f64 {
    angle_diff(s.theta, s2.theta)
}

/// Wheel-velocity distance (second order only).
pub fn d_v(s: &State, s2: &State) -> f64 {
    ((s.v_l - s2.v_l).powi(2) + (s.v_r - s2.v_r).powi(2)).sqrt()
}

fn derivative(spec: &SystemSpec, s: &State, u: &Control) -> [f64; 5] {
    match spec.order {
        SystemOrder::First => {
            let v = 0.5 * (u.a + u.b);
            [
                v * s.theta.cos(),
                v * s.theta.sin(),
                (u.b - u.a) / spec.axle_length,
                0.0,
                0.0,
            ]
        }
        SystemOrder::Second => {
            let v = 0.5 * (s.v_l + s.v_r);
            [
                v * s.theta.cos(),
                v * s.theta.sin(),
                (s.v_r - s.v_l) / spec.axle_length,
                u.a,
                u.b,
            ]
        }
    }
}

fn rk4_substep(spec: &SystemSpec, s: &State, u: &Control, h: f64) -> State {
    let add = |s: &State, k: &[f64; 5], f: f64| State {
        x: s.x + f * k[0],
        y: s.y + f * k[1],
        theta: s.theta + f * k[2],
        v_l: s.v_l + f * k[3],
        v_r: s.v_r + f * k[4],
    };
    let k1 = derivative(spec, s, u);
    let k2 = derivative(spec, &add(s, &k1, 0.5 * h), u);
    let k3 = derivative(spec, &add(s, &k2, 0.5 * h), u);
    let k4 = derivative(spec, &add(s, &k3, h), u);
    let mut next = State {
        x: s.x + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y: s.y + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        theta: s.theta + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        v_l: s.v_l + h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        v_r: s.v_r + h / 6.0 * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]),
    };
    next.theta = wrap_angle(next.theta);
    if spec.order == SystemOrder::Second {
        next.v_l = next.v_l.clamp(spec.v_min, spec.v_max);
        next.v_r = next.v_r.clamp(spec.v_min, spec.v_max);
    }
    next
}

/// Integrates the dynamics under a constant control, invoking `visit` with
/// `(elapsed_seconds, state)` after every substep. The final partial substep
/// is shortened so the total time is exact.
pub fn propagate_with(
    spec: &SystemSpec,
    start: &State,
    step: &PropagationStep,
    mut visit: impl FnMut(f64, &State),
) -> Result<State> {
    if !(step.duration >= spec.t_min && step.duration <= spec.t_max) {
        return Err(Error::InvalidDuration {
            duration: step.duration,
            t_min: spec.t_min,
            t_max: spec.t_max,
        });
    }
    let mut s = *start;
    let h = spec.integ_step;
    let mut t = 0.0;
    while t < step.duration {
        let dt = h.min(step.duration - t);
        if dt <= 1e-12 {
            break;
        }
        s = rk4_substep(spec, &s, &step.control, dt);
        t += dt;
        visit(t, &s);
    }
    Ok(s)
}

/// Integrates the dynamics under a constant control and returns the end state.
pub fn propagate(spec: &SystemSpec, start: &State, step: &PropagationStep) -> Result<State> {
    propagate_with(spec, start, step, |_, _| {})
}

/// Body-frame state difference: the target expressed relative to the anchor.
/// Velocities (second order) are carried through unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub v_l_init: f64,
    pub v_r_init: f64,
    pub v_l_goal: f64,
    pub v_r_goal: f64,
}

impl StateDelta {
    pub fn pose(dx: f64, dy: f64, dtheta: f64) -> Self {
        StateDelta {
            dx,
            dy,
            dtheta: wrap_angle(dtheta),
            v_l_init: 0.0,
            v_r_init: 0.0,
            v_l_goal: 0.0,
            v_r_goal: 0.0,
        }
    }

    /// Planar norm of the translation component.
    pub fn planar_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Expresses `target` in `anchor`'s body frame (translate by the anchor
/// position, rotate by minus the anchor heading).
pub fn transform_to_origin(anchor: &State, target: &State) -> StateDelta {
    let tx = target.x - anchor.x;
    let ty = target.y - anchor.y;
    let (sin, cos) = anchor.theta.sin_cos();
    StateDelta {
        dx: cos * tx + sin * ty,
        dy: -sin * tx + cos * ty,
        dtheta: wrap_angle(target.theta - anchor.theta),
        v_l_init: anchor.v_l,
        v_r_init: anchor.v_r,
        v_l_goal: target.v_l,
        v_r_goal: target.v_r,
    }
}

/// Inverse of [`transform_to_origin`]: maps a body-frame delta back to a world
/// state relative to the anchor.
pub fn apply_delta(anchor: &State, delta: &StateDelta) -> State {
    let (sin, cos) = anchor.theta.sin_cos();
    State {
        x: anchor.x + cos * delta.dx - sin * delta.dy,
        y: anchor.y + sin * delta.dx + cos * delta.dy,
        theta: wrap_angle(anchor.theta + delta.dtheta),
        v_l: delta.v_l_goal,
        v_r: delta.v_r_goal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fo() -> SystemSpec {
        SystemSpec::first_order_default()
    }

    fn so() -> SystemSpec {
        SystemSpec::second_order_default()
    }

    #[test]
    fn zero_control_stays_put() {
        let s = State::pose(0.0, 0.0, 0.0);
        let end = propagate(
            &fo(),
            &s,
            &PropagationStep::new(Control::new(0.0, 0.0), 2.0),
        )
        .unwrap();
        assert_eq!(end, s);
    }

    #[test]
    fn equal_wheels_drive_straight() {
        let end = propagate(
            &fo(),
            &State::pose(0.0, 0.0, 0.0),
            &PropagationStep::new(Control::new(1.0, 1.0), 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(end.x, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn second_order_ramp_matches_euler_oracle() {
        // Closed form: v(t) = t, x(t) = t^2/2, so x(1) = 0.5.
        let spec = so();
        let start = State::with_velocities(0.0, 0.0, 0.0, 0.0, 0.0);
        let step = PropagationStep::new(Control::new(1.0, 1.0), 1.0);
        let end = propagate(&spec, &start, &step).unwrap();
        assert_abs_diff_eq!(end.x, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(end.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.theta, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.v_l, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.v_r, 1.0, epsilon = 1e-9);

        // Independent fine-step Euler oracle.
        let mut s = start;
        let h = 1e-5;
        let mut t = 0.0;
        while t < step.duration - h / 2.0 {
            let k = derivative(&spec, &s, &step.control);
            s.x += h * k[0];
            s.y += h * k[1];
            s.theta += h * k[2];
            s.v_l = (s.v_l + h * k[3]).clamp(spec.v_min, spec.v_max);
            s.v_r = (s.v_r + h * k[4]).clamp(spec.v_min, spec.v_max);
            t += h;
        }
        assert_abs_diff_eq!(end.x, s.x, epsilon = 1e-3);
    }

    #[test]
    fn rejects_out_of_range_duration() {
        let s = State::pose(0.0, 0.0, 0.0);
        for bad in [0.0, 0.4, 5.1] {
            let r = propagate(&fo(), &s, &PropagationStep::new(Control::new(1.0, 0.0), bad));
            assert!(matches!(r, Err(Error::InvalidDuration { .. })), "{bad}");
        }
    }

    #[test]
    fn distance_basics() {
        let a = State::pose(0.0, 0.0, 1.2);
        let b = State::pose(3.0, 4.0, 1.2);
        assert_eq!(d_e(&a, &a), 0.0);
        assert_abs_diff_eq!(d_e(&a, &b), 5.0);
        assert_eq!(d_r(&a, &b), 0.0);
        // eps_E boundary used for first-order pruning.
        let c = State::pose(0.1, 0.0, 0.0);
        assert_abs_diff_eq!(d_e(&c, &State::pose(0.0, 0.0, 0.0)), 0.1);
    }

    #[test]
    fn d_r_wraps_around() {
        let a = State::pose(0.0, 0.0, PI - 0.01);
        let b = State::pose(0.0, 0.0, -PI + 0.01);
        // Brute force over 2pi-shifted representatives.
        let mut best = f64::INFINITY;
        for k in -3..=3 {
            best = best.min((a.theta - b.theta + 2.0 * PI * k as f64).abs());
        }
        assert_abs_diff_eq!(d_r(&a, &b), best, epsilon = 1e-12);
        assert_abs_diff_eq!(d_r(&a, &b), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn d_v_basics() {
        let a = State::with_velocities(0.0, 0.0, 0.0, 0.0, 0.0);
        let b = State::with_velocities(0.0, 0.0, 0.0, 1.0, 1.0);
        assert_eq!(d_v(&a, &a), 0.0);
        assert_abs_diff_eq!(d_v(&a, &b), 2f64.sqrt());
    }

    #[test]
    fn within_eps_componentwise() {
        let spec = fo();
        let eps = Epsilons::first_order_default();
        let a = State::pose(0.0, 0.0, 0.0);
        assert!(spec.within_eps(&a, &a, &eps));
        let rot_heavy = State::pose(0.05, 0.0, PI / 4.0);
        assert!(!spec.within_eps(&a, &rot_heavy, &eps));
        let ok = State::pose(0.05, 0.0, PI / 12.0);
        assert!(spec.within_eps(&a, &ok, &eps));
    }

    #[test]
    fn transform_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let anchor = State::with_velocities(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-PI..PI),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let target = State::with_velocities(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-PI..PI),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let delta = transform_to_origin(&anchor, &target);
            let back = apply_delta(&anchor, &delta);
            assert_abs_diff_eq!(back.x, target.x, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y, target.y, epsilon = 1e-9);
            assert!(angle_diff(back.theta, target.theta) < 1e-9);
        }
    }

    #[test]
    fn transform_body_frame_example() {
        let anchor = State::pose(1.0, 0.0, PI / 2.0);
        let target = State::pose(1.0, 1.0, PI / 2.0);
        let d = transform_to_origin(&anchor, &target);
        assert_abs_diff_eq!(d.dx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dy, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dtheta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn propagation_is_deterministic_and_composes() {
        let spec = fo();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = State::pose(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-PI..PI),
            );
            let u = Control::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // t1, t2 multiples of the integration step so substep boundaries align.
            let t1 = 0.02 * rng.gen_range(25..125) as f64;
            let t2 = 0.02 * rng.gen_range(25..125) as f64;
            let whole = propagate(&spec, &s, &PropagationStep::new(u, t1 + t2)).unwrap();
            let first = propagate(&spec, &s, &PropagationStep::new(u, t1)).unwrap();
            let split = propagate(&spec, &first, &PropagationStep::new(u, t2)).unwrap();
            assert_abs_diff_eq!(whole.x, split.x, epsilon = 1e-6);
            assert_abs_diff_eq!(whole.y, split.y, epsilon = 1e-6);
            assert!(angle_diff(whole.theta, split.theta) < 1e-6);

            let again = propagate(&spec, &s, &PropagationStep::new(u, t1 + t2)).unwrap();
            assert_eq!(whole, again, "bit-identical re-run");
        }
    }

    #[test]
    fn first_order_frame_invariance() {
        // The reachable set relative to the initial state is anchor-independent.
        let spec = fo();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let u = Control::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dt = rng.gen_range(0.5..5.0);
            let step = PropagationStep::new(u, dt);
            let origin = State::pose(0.0, 0.0, 0.0);
            let base = transform_to_origin(&origin, &propagate(&spec, &origin, &step).unwrap());
            let anchor = State::pose(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-PI..PI),
            );
            let moved = transform_to_origin(&anchor, &propagate(&spec, &anchor, &step).unwrap());
            assert_abs_diff_eq!(base.dx, moved.dx, epsilon = 1e-6);
            assert_abs_diff_eq!(base.dy, moved.dy, epsilon = 1e-6);
            assert!(angle_diff(base.dtheta, moved.dtheta) < 1e-6);
        }
    }

    #[test]
    fn metric_properties_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let s: Vec<State> = (0..3)
                .map(|_| {
                    State::with_velocities(
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-PI..PI),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            assert_abs_diff_eq!(d_e(&s[0], &s[1]), d_e(&s[1], &s[0]), epsilon = 1e-12);
            assert_abs_diff_eq!(d_v(&s[0], &s[1]), d_v(&s[1], &s[0]), epsilon = 1e-12);
            assert!(d_e(&s[0], &s[2]) <= d_e(&s[0], &s[1]) + d_e(&s[1], &s[2]) + 1e-12);
            assert!(d_v(&s[0], &s[2]) <= d_v(&s[0], &s[1]) + d_v(&s[1], &s[2]) + 1e-12);
            assert_abs_diff_eq!(d_r(&s[0], &s[1]), d_r(&s[1], &s[0]), epsilon = 1e-12);
            assert!(d_r(&s[0], &s[1]) <= PI + 1e-12);
        }
    }

    #[test]
    fn velocities_stay_clamped() {
        let spec = so();
        let start = State::with_velocities(0.0, 0.0, 0.0, 0.9, -0.9);
        let step = PropagationStep::new(Control::new(1.0, -1.0), 5.0);
        let mut ok = true;
        propagate_with(&spec, &start, &step, |_, s| {
            if s.v_l > spec.v_max || s.v_l < spec.v_min || s.v_r > spec.v_max || s.v_r < spec.v_min
            {
                ok = false;
            }
        })
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn spec_config_round_trip() {
        let text = "order=2\nv_min=-2\nv_max=2\nu_min=-1.5\nu_max=1.5\nt_min=0.5\nt_max=4\naxle_length=1.25\ninteg_step=0.02\n";
        let spec = SystemSpec::parse(text).unwrap();
        assert_eq!(spec.order, SystemOrder::Second);
        assert_eq!(spec.v_max, 2.0);
        assert_eq!(spec.u_max, 1.5);
        assert_eq!(spec.axle_length, 1.25);
        assert!(SystemSpec::parse("order=1\nbogus=3\n").is_err());
    }

    #[test]
    fn antipodal_flag_changes_d_r() {
        let mut spec = fo();
        let a = State::pose(0.0, 0.0, 0.0);
        let b = State::pose(0.0, 0.0, PI - 0.1);
        assert_abs_diff_eq!(spec.d_r(&a, &b), PI - 0.1, epsilon = 1e-12);
        spec.identify_antipodal_headings = true;
        assert_abs_diff_eq!(spec.d_r(&a, &b), 0.1, epsilon = 1e-12);
    }
}
