use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::dense::{affine, gelu_planes};
use super::spectral::SpectralPlan;
use crate::error::{Error, Result};
use crate::grid::FlowField;

/// Channel offset used by [`MnoModel::identity`] to keep every GELU in its
/// saturated, exactly-linear regime.
const IDENTITY_OFFSET: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub modes_x: usize,
    pub modes_y: usize,
    pub width: usize,
    pub num_blocks: usize,
    pub projection_hidden: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default architecture for a grid: width 32, 4 blocks, hidden 64, up to
    /// 12 modes per axis.
    pub fn new(grid_h: usize, grid_w: usize) -> Self {
        Self {
            grid_h,
            grid_w,
            modes_x: (grid_w / 2).min(12),
            modes_y: (grid_h / 2).min(12),
            width: 32,
            num_blocks: 4,
            projection_hidden: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.grid_h == 0 || self.grid_w == 0 {
            return bad(format!("grid {}x{} is empty", self.grid_w, self.grid_h));
        }
        if self.modes_x == 0 || self.modes_x > self.grid_w / 2 {
            return bad(format!("modes_x {} not in [1, grid_w/2 = {}]", self.modes_x, self.grid_w / 2));
        }
        if self.modes_y == 0 || self.modes_y > self.grid_h / 2 {
            return bad(format!("modes_y {} not in [1, grid_h/2 = {}]", self.modes_y, self.grid_h / 2));
        }
        if self.width == 0 || self.num_blocks == 0 || self.projection_hidden == 0 {
            return bad("width, num_blocks and projection_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockLayout {
    pub spectral: Range<usize>,
    pub bypass_w: Range<usize>,
    pub bypass_b: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub lifting_w: Range<usize>,
    pub lifting_b: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub hidden_w: Range<usize>,
    pub hidden_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let c = cfg.width;
        let lifting_w = take(c * 2);
        let lifting_b = take(c);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockLayout {
                spectral: take(2 * cfg.modes_y * cfg.modes_x * c * c * 2),
                bypass_w: take(c * c),
                bypass_b: take(c),
            })
            .collect();
        let hidden_w = take(cfg.projection_hidden * c);
        let hidden_b = take(cfg.projection_hidden);
        let out_w = take(2 * cfg.projection_hidden);
        let out_b = take(2);
        Self {
            lifting_w,
            lifting_b,
            blocks,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
            total: at,
        }
    }
}

/// Name, shape and location of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

/// Borrowed view of one spectral block.
///
/// `spectral_weights` has shape `[2, modes_y, modes_x, width, width, 2]`: y
/// corner, y mode, x mode, input channel, output channel, `[re, im]`.
#[derive(Debug, Clone, Copy)]
pub struct SpectralBlock<'a> {
    pub spectral_weights: &'a [f64],
    pub bypass_weight: &'a [f64],
    pub bypass_bias: &'a [f64],
    pub nonlinear: bool,
}

/// Learned one-step flow operator: pointwise lifting, spectral blocks with
/// pointwise bypass, and a two-layer pointwise projection.
///
/// Parameters live in a single flat vector; [`MnoModel::param_info`] gives the
/// tensor boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MnoModel {
    config: ModelConfig,
    params: Vec<f64>,
    pub(crate) layout: Layout,
}

/// Intermediate activations kept for the reverse pass.
pub(crate) struct ForwardCache {
    pub input: Vec<f64>,
    /// Input to each block; the last entry is the projection input.
    pub hidden: Vec<Vec<f64>>,
    /// Activation slope of every nonlinear block.
    pub slopes: Vec<Vec<f64>>,
    /// Retained input modes of every block.
    pub modes: Vec<Vec<Complex64>>,
    pub proj_slope: Vec<f64>,
    pub proj_act: Vec<f64>,
    pub output: Vec<f64>,
}

impl MnoModel {
    /// Seeded random initialisation.
    ///
    /// Spectral entries are uniform in the complex disc of radius `1/width²`;
    /// affine weights and biases are uniform in `±1/√fan_in`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        let c = model.config.width;
        let hidden = model.config.projection_hidden;
        let layout = model.layout.clone();
        let mut uniform = |p: &mut [f64], bound: f64| {
            for v in p {
                *v = rng.random_range(-bound..=bound);
            }
        };
        let lift_bound = 1.0 / 2f64.sqrt();
        uniform(&mut model.params[layout.lifting_w.clone()], lift_bound);
        uniform(&mut model.params[layout.lifting_b.clone()], lift_bound);
        let radius = 1.0 / (c * c) as f64;
        for block in &layout.blocks {
            for pair in model.params[block.spectral.clone()].chunks_exact_mut(2) {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                pair[0] = r * theta.cos();
                pair[1] = r * theta.sin();
            }
            let bound = 1.0 / (c as f64).sqrt();
            for p in model.params[block.bypass_w.clone()].iter_mut() {
                *p = rng.random_range(-bound..=bound);
            }
            for p in model.params[block.bypass_b.clone()].iter_mut() {
                *p = rng.random_range(-bound..=bound);
            }
        }
        let mut uniform = |p: &mut [f64], bound: f64| {
            for v in p {
                *v = rng.random_range(-bound..=bound);
            }
        };
        let hb = 1.0 / (c as f64).sqrt();
        uniform(&mut model.params[layout.hidden_w.clone()], hb);
        uniform(&mut model.params[layout.hidden_b.clone()], hb);
        let ob = 1.0 / (hidden as f64).sqrt();
        uniform(&mut model.params[layout.out_w.clone()], ob);
        uniform(&mut model.params[layout.out_b.clone()], ob);
        Ok(model)
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            params: vec![0.0; layout.total],
            config,
            layout,
        })
    }

    /// A model whose forward map is the identity on flow fields.
    ///
    /// Spectral weights are zero and bypasses are identity matrices. The
    /// lifting adds a large offset so every intermediate GELU sees arguments
    /// where it is exactly linear in floating point, and the projection uses
    /// `gelu(x) − gelu(−x) = x` to undo the last nonlinearity exactly.
    /// Requires `width ≥ 2` and `projection_hidden ≥ 4`.
    pub fn identity(config: ModelConfig) -> Result<Self> {
        if config.width < 2 || config.projection_hidden < 4 {
            return Err(Error::InvalidParameter(
                "identity model needs width >= 2 and projection_hidden >= 4".into(),
            ));
        }
        let mut m = Self::zeros(config)?;
        let c = m.config.width;
        let hidden = m.config.projection_hidden;
        let l = m.layout.clone();
        for ch in 0..2 {
            m.params[l.lifting_w.start + ch * 2 + ch] = 1.0;
            m.params[l.lifting_b.start + ch] = IDENTITY_OFFSET;
        }
        for b in &l.blocks {
            for i in 0..c {
                m.params[b.bypass_w.start + i * c + i] = 1.0;
            }
        }
        for ch in 0..2 {
            let pos = 2 * ch;
            let neg = 2 * ch + 1;
            m.params[l.hidden_w.start + pos * c + ch] = 1.0;
            m.params[l.hidden_b.start + pos] = -IDENTITY_OFFSET;
            m.params[l.hidden_w.start + neg * c + ch] = -1.0;
            m.params[l.hidden_b.start + neg] = IDENTITY_OFFSET;
            m.params[l.out_w.start + ch * hidden + pos] = 1.0;
            m.params[l.out_w.start + ch * hidden + neg] = -1.0;
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        let cfg = &self.config;
        let (c, hid) = (cfg.width, cfg.projection_hidden);
        let l = &self.layout;
        let mut out = vec![
            ParamInfo { name: "lifting.weight".into(), shape: vec![c, 2], range: l.lifting_w.clone() },
            ParamInfo { name: "lifting.bias".into(), shape: vec![c], range: l.lifting_b.clone() },
        ];
        for (i, b) in l.blocks.iter().enumerate() {
            out.push(ParamInfo {
                name: format!("blocks.{i}.spectral"),
                shape: vec![2, cfg.modes_y, cfg.modes_x, c, c, 2],
                range: b.spectral.clone(),
            });
            out.push(ParamInfo { name: format!("blocks.{i}.bypass.weight"), shape: vec![c, c], range: b.bypass_w.clone() });
            out.push(ParamInfo { name: format!("blocks.{i}.bypass.bias"), shape: vec![c], range: b.bypass_b.clone() });
        }
        out.extend([
            ParamInfo { name: "projection.hidden.weight".into(), shape: vec![hid, c], range: l.hidden_w.clone() },
            ParamInfo { name: "projection.hidden.bias".into(), shape: vec![hid], range: l.hidden_b.clone() },
            ParamInfo { name: "projection.out.weight".into(), shape: vec![2, hid], range: l.out_w.clone() },
            ParamInfo { name: "projection.out.bias".into(), shape: vec![2], range: l.out_b.clone() },
        ]);
        out
    }

    pub fn block(&self, i: usize) -> SpectralBlock<'_> {
        let b = &self.layout.blocks[i];
        SpectralBlock {
            spectral_weights: &self.params[b.spectral.clone()],
            bypass_weight: &self.params[b.bypass_w.clone()],
            bypass_bias: &self.params[b.bypass_b.clone()],
            nonlinear: i + 1 < self.config.num_blocks,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub(crate) fn plan(&self) -> SpectralPlan {
        SpectralPlan::new(self.config.grid_h, self.config.grid_w, self.config.modes_y, self.config.modes_x)
    }

    pub(crate) fn check_grid(&self, flow: &FlowField) -> Result<()> {
        if flow.dims() != (self.config.grid_w, self.config.grid_h) {
            return Err(Error::grids((self.config.grid_w, self.config.grid_h), flow.dims()));
        }
        Ok(())
    }

    /// One application of the operator.
    pub fn forward(&self, flow: &FlowField) -> Result<FlowField> {
        self.check_grid(flow)?;
        let plan = self.plan();
        let cache = self.forward_cached(&plan, &flow_to_planes(flow));
        let n = self.config.n_pixels();
        FlowField::from_planes(self.config.grid_w, self.config.grid_h, &cache.output[..n], &cache.output[n..])
            .map_err(|_| Error::NonFinite)
    }

    /// `[S(f₀), S²(f₀), …, Sⁿ(f₀)]`, each output fed back as the next input.
    pub fn rollout(&self, flow0: &FlowField, n: usize) -> Result<Vec<FlowField>> {
        if n == 0 {
            return Err(Error::InvalidParameter("rollout length must be positive".into()));
        }
        let mut out: Vec<FlowField> = Vec::with_capacity(n);
        for _ in 0..n {
            let next = self.forward(out.last().unwrap_or(flow0))?;
            out.push(next);
        }
        Ok(out)
    }

    pub(crate) fn spectral_apply(&self, block: usize, modes: &[Complex64], plan: &SpectralPlan) -> Vec<Complex64> {
        let c = self.config.width;
        let w = self.block(block).spectral_weights;
        let mut out = vec![Complex64::default(); c * plan.n_modes()];
        for (mode, (x, y)) in modes.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
            for (i, xi) in x.iter().enumerate() {
                let base = (mode * c + i) * c * 2;
                for (yo, wc) in y.iter_mut().zip(w[base..base + 2 * c].chunks_exact(2)) {
                    yo.re += xi.re * wc[0] - xi.im * wc[1];
                    yo.im += xi.re * wc[1] + xi.im * wc[0];
                }
            }
        }
        out
    }

    pub(crate) fn forward_cached(&self, plan: &SpectralPlan, input: &[f64]) -> ForwardCache {
        let cfg = &self.config;
        let (c, n) = (cfg.width, cfg.n_pixels());
        let l = &self.layout;
        let p = &self.params;
        let mut h = affine(&p[l.lifting_w.clone()], &p[l.lifting_b.clone()], c, 2, input, n);
        let mut hidden = Vec::with_capacity(cfg.num_blocks + 1);
        let mut slopes = Vec::with_capacity(cfg.num_blocks);
        let mut modes_cache = Vec::with_capacity(cfg.num_blocks);
        for bi in 0..cfg.num_blocks {
            let block = self.block(bi);
            let modes = plan.forward(&h, c);
            let mixed = self.spectral_apply(bi, &modes, plan);
            let spectral = plan.inverse(&mixed, c, |kx| plan.synthesis_scale(kx));
            let mut z = affine(block.bypass_weight, block.bypass_bias, c, c, &h, n);
            for (zv, sv) in z.iter_mut().zip(&spectral) {
                *zv += sv;
            }
            hidden.push(h);
            modes_cache.push(modes);
            h = if block.nonlinear {
                let (act, slope) = gelu_planes(&z);
                slopes.push(slope);
                act
            } else {
                z
            };
        }
        let proj_pre = affine(&p[l.hidden_w.clone()], &p[l.hidden_b.clone()], cfg.projection_hidden, c, &h, n);
        let (proj_act, proj_slope) = gelu_planes(&proj_pre);
        let output = affine(&p[l.out_w.clone()], &p[l.out_b.clone()], 2, cfg.projection_hidden, &proj_act, n);
        hidden.push(h);
        ForwardCache {
            input: input.to_vec(),
            hidden,
            slopes,
            modes: modes_cache,
            proj_slope,
            proj_act,
            output,
        }
    }
}

/// `[u plane, v plane]`, each row-major.
pub(crate) fn flow_to_planes(flow: &FlowField) -> Vec<f64> {
    let (u, v) = flow.planes();
    let mut out = u;
    out.extend(v);
    out
}
