//! Generalized velocity obstacle planner for a car-like robot among predicted
//! pedestrians.
//!
//! Controls are held constant over the planning horizon. The robot follows the
//! closed-form arc of its steering angle and speed, pedestrians extrapolate at
//! constant velocity, and the best admissible control on a fixed grid wins.

use crate::error::{Error, Result};
use crate::grid::Vec2;

/// Below this `|tan(u_phi)|` the straight-line limit is used.
pub const STRAIGHT_TAN_EPS: f64 = 1e-6;
/// Distance to the goal at which navigation stops.
pub const GOAL_TOLERANCE: f64 = 0.2;
/// Costs closer than this are treated as tied.
const COST_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Steering angle in radians.
    pub u_phi: f64,
    /// Speed in units per second.
    pub u_s: f64,
}

impl ControlInput {
    pub const fn new(u_phi: f64, u_s: f64) -> Self {
        Self { u_phi, u_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub position: Vec2,
    pub heading: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstaclePrediction {
    pub ped_id: i64,
    pub position_now: Vec2,
    pub position_next: Vec2,
    pub radius: f64,
    /// Seconds between `position_now` and `position_next`.
    pub frame_dt: f64,
}

impl ObstaclePrediction {
    pub fn velocity(&self) -> Vec2 {
        (self.position_next - self.position_now) * (1.0 / self.frame_dt)
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        self.position_now + self.velocity() * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvoConfig {
    /// Planning horizon in seconds.
    pub horizon: f64,
    /// Sampling and control period in seconds.
    pub dt: f64,
    pub n_phi_samples: usize,
    pub n_speed_samples: usize,
    pub phi_max: f64,
    pub v_max: f64,
    pub safety_margin: f64,
    pub goal_weight: f64,
    pub steering_weight: f64,
}

impl Default for GvoConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            dt: 0.1,
            n_phi_samples: 21,
            n_speed_samples: 11,
            phi_max: 0.6,
            v_max: 1.5,
            safety_margin: 0.1,
            goal_weight: 1.0,
            steering_weight: 0.2,
        }
    }
}

impl GvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt > 0.0 && self.horizon > self.dt && self.horizon.is_finite()) {
            return bad(format!("need horizon > dt > 0, got horizon {} dt {}", self.horizon, self.dt));
        }
        if self.n_phi_samples < 2 || self.n_speed_samples < 2 {
            return bad("control grid needs at least 2 samples per axis".into());
        }
        if !(self.phi_max > 0.0 && self.phi_max < std::f64::consts::FRAC_PI_2) {
            return bad(format!("phi_max {} not in (0, pi/2)", self.phi_max));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad(format!("v_max {} must be positive", self.v_max));
        }
        if !(self.safety_margin >= 0.0 && self.goal_weight >= 0.0 && self.steering_weight >= 0.0) {
            return bad("safety_margin and cost weights must be non-negative".into());
        }
        Ok(())
    }

    /// Sample times `0, dt, …, horizon`.
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = (self.horizon / self.dt).round() as usize;
        (0..=n).map(move |k| k as f64 * self.dt)
    }

    /// The control grid in evaluation order: steering outer, speed inner.
    pub fn control_grid(&self) -> Vec<ControlInput> {
        let lin = |lo: f64, hi: f64, n: usize, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let mut grid = Vec::with_capacity(self.n_phi_samples * self.n_speed_samples);
        for i in 0..self.n_phi_samples {
            let phi = lin(-self.phi_max, self.phi_max, self.n_phi_samples, i);
            for j in 0..self.n_speed_samples {
                grid.push(ControlInput::new(phi, lin(0.0, self.v_max, self.n_speed_samples, j)));
            }
        }
        grid
    }
}

/// Body-frame position after holding `u` for `t` seconds from the origin,
/// heading along +x.
pub fn robot_position(t: f64, u: ControlInput) -> Vec2 {
    let k = u.u_phi.tan();
    if k.abs() < STRAIGHT_TAN_EPS {
        return Vec2::new(u.u_s * t, 0.0);
    }
    let theta = u.u_s * k * t;
    Vec2::new(theta.sin() / k, (1.0 - theta.cos()) / k)
}

/// Heading change after holding `u` for `t` seconds.
pub fn heading_change(t: f64, u: ControlInput) -> f64 {
    let k = u.u_phi.tan();
    if k.abs() < STRAIGHT_TAN_EPS {
        0.0
    } else {
        u.u_s * k * t
    }
}

/// World-frame position of the robot after holding `u` for `t` seconds.
pub fn world_position(state: &RobotState, t: f64, u: ControlInput) -> Vec2 {
    state.position + robot_position(t, u).rotate(state.heading)
}

pub fn relative_velocity(v_robot: Vec2, v_ped: Vec2) -> Vec2 {
    v_robot - v_ped
}

/// Smallest center distance minus radii over the sampled horizon and all
/// obstacles; `+inf` without obstacles.
pub fn min_separation(state: &RobotState, u: ControlInput, obstacles: &[ObstaclePrediction], cfg: &GvoConfig) -> f64 {
    let mut best = f64::INFINITY;
    for t in cfg.sample_times() {
        let p = world_position(state, t, u);
        for ob in obstacles {
            best = best.min(p.distance(ob.position_at(t)) - (state.radius + ob.radius));
        }
    }
    best
}

/// Closest approach to `goal` along the sampled path of `u`.
pub fn goal_distance(state: &RobotState, u: ControlInput, goal: Vec2, cfg: &GvoConfig) -> f64 {
    cfg.sample_times()
        .map(|t| world_position(state, t, u).distance(goal))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub control: ControlInput,
    pub min_separation: f64,
    /// Number of grid controls that cleared the safety margin.
    pub admissible: usize,
}

impl Selection {
    pub fn is_fallback(&self) -> bool {
        self.admissible == 0
    }
}

/// Exhaustive search over the control grid.
///
/// Among controls whose minimum separation exceeds the safety margin, picks the
/// lowest `α·goal_distance + β·|u_phi|`, breaking ties by smaller `|u_phi|` and
/// then larger speed. With none admissible the robot stops, keeping the
/// steering angle whose best achievable separation is largest.
pub fn select_control(state: &RobotState, goal: Vec2, obstacles: &[ObstaclePrediction], cfg: &GvoConfig) -> Selection {
    let grid = cfg.control_grid();
    let seps: Vec<f64> = grid.iter().map(|&u| min_separation(state, u, obstacles, cfg)).collect();

    let mut best: Option<(f64, usize)> = None;
    let mut admissible = 0;
    for (i, &u) in grid.iter().enumerate() {
        if seps[i] <= cfg.safety_margin {
            continue;
        }
        admissible += 1;
        let cost = cfg.goal_weight * goal_distance(state, u, goal, cfg) + cfg.steering_weight * u.u_phi.abs();
        let better = match best {
            None => true,
            Some((bc, bi)) => {
                let b = grid[bi];
                if (cost - bc).abs() > COST_TIE_EPS {
                    cost < bc
                } else if u.u_phi.abs() != b.u_phi.abs() {
                    u.u_phi.abs() < b.u_phi.abs()
                } else {
                    u.u_s > b.u_s
                }
            }
        };
        if better {
            best = Some((cost, i));
        }
    }
    if let Some((_, i)) = best {
        return Selection {
            control: grid[i],
            min_separation: seps[i],
            admissible,
        };
    }

    let mut fallback: Option<(f64, f64)> = None;
    for chunk in grid.chunks(cfg.n_speed_samples).zip(seps.chunks(cfg.n_speed_samples)) {
        let phi = chunk.0[0].u_phi;
        let sep = chunk.1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let better = match fallback {
            None => true,
            Some((bs, bphi)) => sep > bs || (sep == bs && phi.abs() < bphi.abs()),
        };
        if better {
            fallback = Some((sep, phi));
        }
    }
    let (_, phi) = fallback.expect("grid is non-empty");
    let control = ControlInput::new(phi, 0.0);
    Selection {
        control,
        min_separation: min_separation(state, control, obstacles, cfg),
        admissible: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    /// Robot state when the control was chosen.
    pub state: RobotState,
    pub control: ControlInput,
    pub min_separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub final_state: RobotState,
    pub reached_goal: bool,
}

/// Advances the robot by `dt` along its arc and turns it to the path tangent.
pub fn advance(state: &RobotState, u: ControlInput, dt: f64) -> RobotState {
    RobotState {
        position: world_position(state, dt, u),
        heading: state.heading + heading_change(dt, u),
        radius: state.radius,
    }
}

/// Closed-loop navigation. `predictor(step, time)` supplies the obstacles
/// seen at each control step.
pub fn simulate_navigation(
    initial: RobotState,
    goal: Vec2,
    mut predictor: impl FnMut(usize, f64) -> Vec<ObstaclePrediction>,
    cfg: &GvoConfig,
    max_steps: usize,
) -> Result<Trace> {
    cfg.validate()?;
    if max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
    }
    if !(initial.radius > 0.0) {
        return Err(Error::InvalidParameter(format!("robot radius {} must be positive", initial.radius)));
    }
    let mut state = initial;
    let mut steps = Vec::new();
    let mut reached = state.position.distance(goal) <= GOAL_TOLERANCE;
    let mut step = 0;
    while !reached && step < max_steps {
        let obstacles = predictor(step, step as f64 * cfg.dt);
        let sel = select_control(&state, goal, &obstacles, cfg);
        steps.push(TraceStep {
            step,
            state,
            control: sel.control,
            min_separation: sel.min_separation,
        });
        state = advance(&state, sel.control, cfg.dt);
        reached = state.position.distance(goal) <= GOAL_TOLERANCE;
        step += 1;
    }
    Ok(Trace {
        steps,
        final_state: state,
        reached_goal: reached,
    })
}

/// A pedestrian walking a straight line at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPedestrian {
    pub ped_id: i64,
    pub start: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

impl ScriptedPedestrian {
    pub fn position_at(&self, t: f64) -> Vec2 {
        self.start + self.velocity * t
    }
}

/// A navigation problem with scripted pedestrians.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub robot: RobotState,
    pub goal: Vec2,
    pub pedestrians: Vec<ScriptedPedestrian>,
    pub config: GvoConfig,
    pub max_steps: usize,
}

impl Scenario {
    fn base(goal: Vec2, pedestrians: Vec<ScriptedPedestrian>) -> Self {
        Self {
            robot: RobotState {
                position: Vec2::ZERO,
                heading: 0.0,
                radius: 0.3,
            },
            goal,
            pedestrians,
            config: GvoConfig::default(),
            max_steps: 200,
        }
    }

    fn ped(id: i64, start: (f64, f64), velocity: (f64, f64)) -> ScriptedPedestrian {
        ScriptedPedestrian {
            ped_id: id,
            start: Vec2::new(start.0, start.1),
            velocity: Vec2::new(velocity.0, velocity.1),
            radius: 0.3,
        }
    }

    pub fn empty() -> Self {
        Self::base(Vec2::new(3.0, 0.0), Vec::new())
    }

    pub fn head_on() -> Self {
        Self::base(Vec2::new(10.0, 0.0), vec![Self::ped(1, (9.0, 0.0), (-0.8, 0.0))])
    }

    pub fn crossing_left() -> Self {
        Self::base(Vec2::new(10.0, 0.0), vec![Self::ped(1, (5.0, 5.0), (0.0, -1.0))])
    }

    pub fn crossing_right() -> Self {
        Self::base(Vec2::new(10.0, 0.0), vec![Self::ped(1, (5.0, -5.0), (0.0, 1.0))])
    }

    pub fn overtake() -> Self {
        Self::base(Vec2::new(10.0, 0.0), vec![Self::ped(1, (2.0, 0.0), (0.5, 0.0))])
    }

    pub fn two_pedestrians() -> Self {
        Self::base(
            Vec2::new(10.0, 0.0),
            vec![Self::ped(1, (8.0, 0.5), (-0.7, 0.0)), Self::ped(2, (5.0, -4.0), (0.0, 0.9))],
        )
    }

    /// Named presets: `empty`, `head_on`, `crossing_left`, `crossing_right`,
    /// `overtake`, `two_pedestrians`.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "empty" => Self::empty(),
            "head_on" => Self::head_on(),
            "crossing_left" => Self::crossing_left(),
            "crossing_right" => Self::crossing_right(),
            "overtake" => Self::overtake(),
            "two_pedestrians" => Self::two_pedestrians(),
            _ => return None,
        })
    }

    pub fn pedestrian_positions(&self, t: f64) -> Vec<(i64, Vec2)> {
        self.pedestrians.iter().map(|p| (p.ped_id, p.position_at(t))).collect()
    }

    /// Constant-velocity predictions one control period ahead.
    pub fn oracle_predictions(&self, t: f64) -> Vec<ObstaclePrediction> {
        let dt = self.config.dt;
        self.pedestrians
            .iter()
            .map(|p| ObstaclePrediction {
                ped_id: p.ped_id,
                position_now: p.position_at(t),
                position_next: p.position_at(t + dt),
                radius: p.radius,
                frame_dt: dt,
            })
            .collect()
    }

    pub fn run_oracle(&self) -> Result<Trace> {
        simulate_navigation(
            self.robot,
            self.goal,
            |_, t| self.oracle_predictions(t),
            &self.config,
            self.max_steps,
        )
    }

    /// Smallest true robot–pedestrian clearance (distance minus radii) over
    /// every visited state, `+inf` without pedestrians.
    pub fn actual_clearance(&self, trace: &Trace) -> f64 {
        let dt = self.config.dt;
        let visited = trace
            .steps
            .iter()
            .map(|s| (s.step as f64 * dt, s.state))
            .chain(std::iter::once((trace.steps.len() as f64 * dt, trace.final_state)));
        let mut best = f64::INFINITY;
        for (t, state) in visited {
            for p in &self.pedestrians {
                best = best.min(state.position.distance(p.position_at(t)) - state.radius - p.radius);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn robot() -> RobotState {
        RobotState {
            position: Vec2::ZERO,
            heading: 0.0,
            radius: 0.5,
        }
    }

    fn stationary(at: Vec2, radius: f64) -> ObstaclePrediction {
        ObstaclePrediction {
            ped_id: 1,
            position_now: at,
            position_next: at,
            radius,
            frame_dt: 0.1,
        }
    }

    #[test]
    fn kinematics_spot_values() {
        let p = robot_position(FRAC_PI_2, ControlInput::new(FRAC_PI_4, 1.0));
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
        assert_eq!(robot_position(2.0, ControlInput::new(0.0, 1.25)), Vec2::new(2.5, 0.0));
        for i in 0..=200 {
            let t = i as f64 * 2.0 * std::f64::consts::PI / 200.0;
            let p = robot_position(t, ControlInput::new(FRAC_PI_4, 1.0));
            assert!((p.x * p.x + (p.y - 1.0).powi(2) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn straight_limit_continuity() {
        // The arc leaves the line sideways by u_s²·tan(φ)·t²/2 to first order,
        // so it converges linearly; along-track error is third order.
        for phi in [1e-4, -1e-4, 1e-5, -1e-5, 2e-6, -2e-6] {
            let k = f64::tan(phi);
            for i in 0..=30 {
                let t = i as f64 * 0.1;
                let u = ControlInput::new(phi, 1.5);
                let p = robot_position(t, u);
                let bound = 1.5 * 1.5 * k.abs() * t * t / 2.0;
                assert!((p.x - 1.5 * t).abs() < 1e-6);
                assert!((p.y.abs() - bound).abs() <= 1e-3 * bound + 1e-15);
            }
        }
        // Across the switch to the straight-line limit the jump is bounded by the same term.
        let u_above = ControlInput::new(1.0000001e-6, 1.5);
        let u_below = ControlInput::new(0.9999999e-6, 1.5);
        let jump = robot_position(3.0, u_above).distance(robot_position(3.0, u_below));
        assert!(jump <= 1.5 * 1.5 * 1.0000001e-6 * 9.0 / 2.0 * 1.001);
    }

    #[test]
    fn relative_velocity_cases() {
        assert_eq!(relative_velocity(Vec2::new(1.0, 0.0), Vec2::new(0.5, 0.5)), Vec2::new(0.5, -0.5));
        assert_eq!(relative_velocity(Vec2::new(0.3, 0.2), Vec2::new(0.3, 0.2)), Vec2::ZERO);
        assert_eq!(relative_velocity(Vec2::new(0.3, 0.2), Vec2::ZERO), Vec2::new(0.3, 0.2));
    }

    #[test]
    fn min_separation_cases() {
        let cfg = GvoConfig::default();
        let straight = ControlInput::new(0.0, 1.0);
        assert_eq!(min_separation(&robot(), straight, &[], &cfg), f64::INFINITY);
        let s = min_separation(&robot(), straight, &[stationary(Vec2::new(5.0, 0.0), 0.5)], &cfg);
        assert!((s - 1.0).abs() < 1e-9);
        let head_on = ObstaclePrediction {
            position_next: Vec2::new(5.9, 0.0),
            ..stationary(Vec2::new(6.0, 0.0), 0.5)
        };
        // Closing at 2 units/s: the centers meet at t = 3.
        let s = min_separation(&robot(), straight, &[head_on], &cfg);
        assert!((s - -1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn empty_scene_goes_straight_at_full_speed() {
        let cfg = GvoConfig::default();
        let sel = select_control(&robot(), Vec2::new(cfg.v_max * cfg.horizon, 0.0), &[], &cfg);
        assert_eq!(sel.control, ControlInput::new(0.0, cfg.v_max));
        assert_eq!(sel.admissible, cfg.n_phi_samples * cfg.n_speed_samples);
    }

    #[test]
    fn walled_in_robot_stops() {
        let cfg = GvoConfig::default();
        let wall: Vec<ObstaclePrediction> = (0..24)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 12.0;
                stationary(Vec2::new(0.85 * a.cos(), 0.85 * a.sin()), 0.3)
            })
            .collect();
        let sel = select_control(&robot(), Vec2::new(5.0, 0.0), &wall, &cfg);
        assert!(sel.is_fallback());
        assert_eq!(sel.control.u_s, 0.0);
    }

    #[test]
    fn head_on_choice_is_safe_and_progresses() {
        let cfg = GvoConfig::default();
        let goal = Vec2::new(8.0, 0.0);
        let ped = ObstaclePrediction {
            position_next: Vec2::new(3.9, 0.0),
            ..stationary(Vec2::new(4.0, 0.0), 0.3)
        };
        let sel = select_control(&robot(), goal, &[ped], &cfg);
        assert!(sel.min_separation > cfg.safety_margin);
        assert!(world_position(&robot(), cfg.horizon, sel.control).distance(goal) < goal.norm());
        // Exhaustive: the chosen control has minimal cost among admissible ones.
        let cost = |u: ControlInput| cfg.goal_weight * goal_distance(&robot(), u, goal, &cfg) + cfg.steering_weight * u.u_phi.abs();
        let best = cost(sel.control);
        for u in cfg.control_grid() {
            if min_separation(&robot(), u, &[ped], &cfg) > cfg.safety_margin {
                assert!(cost(u) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn empty_scene_reaches_goal_quickly() {
        let s = Scenario::empty();
        let trace = s.run_oracle().unwrap();
        assert!(trace.reached_goal);
        assert!(trace.steps.len() <= 25, "{} steps", trace.steps.len());
        assert!(trace.steps.iter().all(|st| st.min_separation == f64::INFINITY));
    }

    #[test]
    fn scenarios_stay_clear() {
        for name in ["head_on", "crossing_left", "crossing_right", "overtake", "two_pedestrians"] {
            let s = Scenario::preset(name).unwrap();
            let trace = s.run_oracle().unwrap();
            let clearance = s.actual_clearance(&trace);
            assert!(clearance > 0.0, "{name}: clearance {clearance}");
            assert!(trace.reached_goal, "{name}: goal not reached");
            assert_eq!(trace, s.run_oracle().unwrap());
        }
    }

    #[test]
    fn config_validation() {
        assert!(GvoConfig::default().validate().is_ok());
        assert!(GvoConfig { dt: 5.0, ..Default::default() }.validate().is_err());
        assert!(GvoConfig { n_speed_samples: 1, ..Default::default() }.validate().is_err());
        let trace = simulate_navigation(robot(), Vec2::new(1.0, 0.0), |_, _| Vec::new(), &GvoConfig::default(), 0);
        assert!(trace.is_err());
    }

    proptest! {
        #[test]
        fn arcs_lie_on_circle(phi in 0.05f64..0.6, sign in prop::bool::ANY, s in 0.1f64..1.5, t in 0.0f64..3.0) {
            let phi = if sign { phi } else { -phi };
            let k = phi.tan();
            let p = robot_position(t, ControlInput::new(phi, s));
            let r = 1.0 / k;
            prop_assert!(((p.x * p.x + (p.y - r).powi(2)).sqrt() - r.abs()).abs() < 1e-9);
        }

        #[test]
        fn selection_admissible_when_possible(ox in 1.0f64..6.0, oy in -2.0f64..2.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
            let cfg = GvoConfig { n_phi_samples: 7, n_speed_samples: 5, ..Default::default() };
            let ob = ObstaclePrediction {
                ped_id: 1,
                position_now: Vec2::new(ox, oy),
                position_next: Vec2::new(ox + vx * 0.1, oy + vy * 0.1),
                radius: 0.3,
                frame_dt: 0.1,
            };
            let sel = select_control(&robot(), Vec2::new(6.0, 0.0), &[ob], &cfg);
            let any_ok = cfg.control_grid().iter().any(|&u| min_separation(&robot(), u, &[ob], &cfg) > cfg.safety_margin);
            prop_assert_eq!(any_ok, !sel.is_fallback());
            if any_ok {
                prop_assert!(sel.min_separation > cfg.safety_margin);
            }
            prop_assert_eq!(sel, select_control(&robot(), Vec2::new(6.0, 0.0), &[ob], &cfg));
        }
    }
}
