//! Flat `key = value` run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use flowmno::farneback::FarnebackParams;
use flowmno::gvo::GvoConfig;
use flowmno::io::parse_key_values;
use flowmno::mno::{LossConfig, LossKind, ModelConfig, TrainConfig};
use flowmno::synth::SceneConfig;
use flowmno::trajectory::DEFAULT_HORIZON;

/// Architecture overrides; the grid always comes from the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelOverrides {
    pub modes_x: Option<usize>,
    pub modes_y: Option<usize>,
    pub width: Option<usize>,
    pub num_blocks: Option<usize>,
    pub projection_hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub n_scenes: usize,
    pub scene: SceneConfig,
    pub farneback: FarnebackParams,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub gvo: GvoConfig,
    pub horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            n_scenes: 20,
            scene: SceneConfig::default(),
            farneback: FarnebackParams::default(),
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            loss: LossConfig::mse(),
            gvo: GvoConfig::default(),
            horizon: DEFAULT_HORIZON,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("config key `{key}`: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    /// Defaults overlaid with `path` (if any), then the command-line seed.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the text form; unknown keys are rejected with their line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            cfg.set(&key, &value).with_context(|| format!("line {line}"))?;
        }
        cfg.apply_seed();
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        self.scene.seed = self.seed;
        self.train.seed = self.seed;
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        let f = &mut self.farneback;
        let m = &mut self.model;
        let t = &mut self.train;
        let g = &mut self.gvo;
        match key {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "data.n_scenes" => self.n_scenes = num(key, v)?,
            "scene.width" => s.width = num(key, v)?,
            "scene.height" => s.height = num(key, v)?,
            "scene.n_agents" => s.n_agents = num(key, v)?,
            "scene.agent_radius" => s.agent_radius = num(key, v)?,
            "scene.speed_min" => s.speed_range.0 = num(key, v)?,
            "scene.speed_max" => s.speed_range.1 = num(key, v)?,
            "scene.direction_noise_sigma" => s.direction_noise_sigma = num(key, v)?,
            "scene.n_frames" => s.n_frames = num(key, v)?,
            "scene.background_texture_amplitude" => s.background_texture_amplitude = num(key, v)?,
            "farneback.pyramid_scale" => f.pyramid_scale = num(key, v)?,
            "farneback.levels" => f.levels = num(key, v)?,
            "farneback.window_size" => f.window_size = num(key, v)?,
            "farneback.iterations_per_level" => f.iterations_per_level = num(key, v)?,
            "farneback.poly_n" => f.poly_n = num(key, v)?,
            "farneback.poly_sigma" => f.poly_sigma = num(key, v)?,
            "model.modes_x" => m.modes_x = Some(num(key, v)?),
            "model.modes_y" => m.modes_y = Some(num(key, v)?),
            "model.width" => m.width = Some(num(key, v)?),
            "model.num_blocks" => m.num_blocks = Some(num(key, v)?),
            "model.projection_hidden" => m.projection_hidden = Some(num(key, v)?),
            "train.epochs" => t.epochs = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.learning_rate" => t.learning_rate = num(key, v)?,
            "train.scheduler_step" => t.scheduler_step = num(key, v)?,
            "train.scheduler_gamma" => t.scheduler_gamma = num(key, v)?,
            "train.adam_beta1" => t.adam.beta1 = num(key, v)?,
            "train.adam_beta2" => t.adam.beta2 = num(key, v)?,
            "train.adam_eps" => t.adam.eps = num(key, v)?,
            "loss.kind" => {
                self.loss.kind = match v {
                    "mse" => LossKind::Mse,
                    "sobolev" => LossKind::Sobolev,
                    _ => bail!("config key `{key}`: expected mse or sobolev, got {v:?}"),
                }
            }
            "loss.k" => self.loss.k = num(key, v)?,
            "gvo.horizon" => g.horizon = num(key, v)?,
            "gvo.dt" => g.dt = num(key, v)?,
            "gvo.n_phi_samples" => g.n_phi_samples = num(key, v)?,
            "gvo.n_speed_samples" => g.n_speed_samples = num(key, v)?,
            "gvo.phi_max" => g.phi_max = num(key, v)?,
            "gvo.v_max" => g.v_max = num(key, v)?,
            "gvo.safety_margin" => g.safety_margin = num(key, v)?,
            "gvo.goal_weight" => g.goal_weight = num(key, v)?,
            "gvo.steering_weight" => g.steering_weight = num(key, v)?,
            "predict.horizon" => self.horizon = num(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Checks every section against its module's invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes < 10 {
            bail!("config key `data.n_scenes`: {} is below the minimum of 10", self.n_scenes);
        }
        if self.horizon == 0 {
            bail!("config key `predict.horizon` must be positive");
        }
        self.scene.validate().context("scene section")?;
        self.farneback.validate().context("farneback section")?;
        self.model_config(self.scene.height, self.scene.width)
            .validate()
            .context("model section (checked on the scene grid)")?;
        self.train.validate().context("train section")?;
        self.gvo.validate().context("gvo section")?;
        Ok(())
    }

    /// Default architecture for an `h × w` grid with the configured overrides.
    pub fn model_config(&self, h: usize, w: usize) -> ModelConfig {
        let base = ModelConfig::new(h, w);
        let m = &self.model;
        ModelConfig {
            modes_x: m.modes_x.unwrap_or(base.modes_x),
            modes_y: m.modes_y.unwrap_or(base.modes_y),
            width: m.width.unwrap_or(base.width),
            num_blocks: m.num_blocks.unwrap_or(base.num_blocks),
            projection_hidden: m.projection_hidden.unwrap_or(base.projection_hidden),
            seed: self.seed,
            ..base
        }
    }

    /// `--out` wins over the `out` key.
    pub fn out_path(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .ok_or_else(|| anyhow!("an output path is required (--out or the `out` config key)"))
    }
}
