//! Navigation scenario files.
//!
//! ```text
//! preset = crossing_left        # optional starting point
//! goal = 10 0
//! robot = 0 0 0 0.3             # x y heading radius
//! pedestrian = 1 5 5 0 -1 0.3   # id x y vx vy radius, repeatable
//! max_steps = 200
//! gvo.v_max = 1.2
//! grid.pixels_per_unit = 4      # placement of the model grid in the world
//! grid.origin = -3 -8
//! ```
//!
//! Listing any `pedestrian` replaces the preset's pedestrians.

use anyhow::{anyhow, bail, Context, Result};
use flowmno::gvo::{GvoConfig, RobotState, Scenario, ScriptedPedestrian};
use flowmno::io::parse_key_values;
use flowmno::Vec2;

/// World placement of the operator's pixel grid: pixel = (world − origin)·scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPlacement {
    pub pixels_per_unit: f64,
    pub origin: Vec2,
}

impl Default for GridPlacement {
    fn default() -> Self {
        Self {
            pixels_per_unit: 4.0,
            origin: Vec2::new(-3.0, -8.0),
        }
    }
}

impl GridPlacement {
    pub fn to_pixel(&self, p: Vec2) -> Vec2 {
        (p - self.origin) * self.pixels_per_unit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub grid: GridPlacement,
}

fn floats<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!("scenario key `{key}`: {e} in {v:?}"))?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| anyhow!("scenario key `{key}` takes {N} numbers, got {}", p.len()))
}

fn gvo_key(g: &mut GvoConfig, key: &str, v: &str) -> Result<bool> {
    let float = || -> Result<f64> { Ok(floats::<1>(key, v)?[0]) };
    let count = || -> Result<usize> { v.parse().map_err(|e| anyhow!("scenario key `{key}`: {e}")) };
    match key {
        "gvo.horizon" => g.horizon = float()?,
        "gvo.dt" => g.dt = float()?,
        "gvo.n_phi_samples" => g.n_phi_samples = count()?,
        "gvo.n_speed_samples" => g.n_speed_samples = count()?,
        "gvo.phi_max" => g.phi_max = float()?,
        "gvo.v_max" => g.v_max = float()?,
        "gvo.safety_margin" => g.safety_margin = float()?,
        "gvo.goal_weight" => g.goal_weight = float()?,
        "gvo.steering_weight" => g.steering_weight = float()?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a scenario on top of `base_gvo`; all keys are checked before use.
pub fn parse_scenario(text: &str, base_gvo: &GvoConfig) -> Result<ScenarioFile> {
    let entries = parse_key_values(text)?;
    let mut scenario = match entries.iter().find(|(_, k, _)| k == "preset") {
        Some((line, _, name)) => Scenario::preset(name)
            .ok_or_else(|| anyhow!("line {line}: unknown preset {name:?}"))?,
        None => Scenario::empty(),
    };
    scenario.config = base_gvo.clone();
    let mut grid = GridPlacement::default();
    let mut peds: Vec<ScriptedPedestrian> = Vec::new();
    for (line, key, v) in &entries {
        let at = || format!("line {line}");
        match key.as_str() {
            "preset" => {}
            "goal" => {
                let [x, y] = floats(key, v).with_context(at)?;
                scenario.goal = Vec2::new(x, y);
            }
            "robot" => {
                let [x, y, heading, radius] = floats(key, v).with_context(at)?;
                scenario.robot = RobotState {
                    position: Vec2::new(x, y),
                    heading,
                    radius,
                };
            }
            "pedestrian" => {
                let [id, x, y, vx, vy, radius] = floats(key, v).with_context(at)?;
                if id.fract() != 0.0 {
                    bail!("line {line}: pedestrian id {id} is not an integer");
                }
                peds.push(ScriptedPedestrian {
                    ped_id: id as i64,
                    start: Vec2::new(x, y),
                    velocity: Vec2::new(vx, vy),
                    radius,
                });
            }
            "max_steps" => scenario.max_steps = v.parse().map_err(|e| anyhow!("line {line}: max_steps: {e}"))?,
            "grid.pixels_per_unit" => grid.pixels_per_unit = floats::<1>(key, v).with_context(at)?[0],
            "grid.origin" => {
                let [x, y] = floats(key, v).with_context(at)?;
                grid.origin = Vec2::new(x, y);
            }
            _ => {
                if !gvo_key(&mut scenario.config, key, v).with_context(at)? {
                    bail!("line {line}: unknown scenario key `{key}`");
                }
            }
        }
    }
    if !peds.is_empty() {
        scenario.pedestrians = peds;
    }
    validate(&scenario, &grid)?;
    Ok(ScenarioFile { scenario, grid })
}

fn validate(s: &Scenario, grid: &GridPlacement) -> Result<()> {
    s.config.validate().context("scenario gvo settings")?;
    if !(s.robot.radius > 0.0) || !s.robot.position.is_finite() || !s.robot.heading.is_finite() {
        bail!("robot needs a finite pose and a positive radius");
    }
    if !s.goal.is_finite() {
        bail!("goal must be finite");
    }
    if s.max_steps == 0 {
        bail!("max_steps must be at least 1");
    }
    let mut ids: Vec<i64> = s.pedestrians.iter().map(|p| p.ped_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        bail!("pedestrian ids must be unique");
    }
    if s.pedestrians
        .iter()
        .any(|p| !(p.radius > 0.0) || !p.start.is_finite() || !p.velocity.is_finite())
    {
        bail!("pedestrians need finite paths and positive radii");
    }
    if !(grid.pixels_per_unit > 0.0 && grid.pixels_per_unit.is_finite()) || !grid.origin.is_finite() {
        bail!("grid.pixels_per_unit must be positive and grid.origin finite");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_with_overrides() {
        let f = parse_scenario("preset = head_on\ngoal = 12 1\ngvo.v_max = 1.0\n", &GvoConfig::default()).unwrap();
        assert_eq!(f.scenario.pedestrians, Scenario::head_on().pedestrians);
        assert_eq!(f.scenario.goal, Vec2::new(12.0, 1.0));
        assert_eq!(f.scenario.config.v_max, 1.0);
    }

    #[test]
    fn explicit_pedestrians_replace_preset() {
        let text = "preset = two_pedestrians\npedestrian = 7 4 4 0 -1 0.25\nrobot = 1 2 0.5 0.4\n";
        let f = parse_scenario(text, &GvoConfig::default()).unwrap();
        assert_eq!(f.scenario.pedestrians.len(), 1);
        assert_eq!(f.scenario.pedestrians[0].ped_id, 7);
        assert_eq!(f.scenario.robot.radius, 0.4);
    }

    #[test]
    fn rejects_bad_input() {
        let g = GvoConfig::default();
        assert!(parse_scenario("wind = 3\n", &g).is_err());
        assert!(parse_scenario("preset = maze\n", &g).is_err());
        assert!(parse_scenario("goal = 1\n", &g).is_err());
        assert!(parse_scenario("gvo.dt = 0\n", &g).is_err());
        assert!(parse_scenario("pedestrian = 1 0 0 0 0 0.3\npedestrian = 1 3 0 0 0 0.3\n", &g).is_err());
    }

    #[test]
    fn grid_placement_maps_origin_to_zero() {
        let g = GridPlacement::default();
        assert_eq!(g.to_pixel(g.origin), Vec2::ZERO);
        assert_eq!(g.to_pixel(Vec2::new(-2.0, -8.0)), Vec2::new(4.0, 0.0));
    }
}
