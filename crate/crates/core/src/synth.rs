//! Synthetic crowd scenes: independent agents drifting over a static textured
//! background, rendered as anti-aliased discs with exact flow, tracks and boxes.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detect::{BBox, Detection};
use crate::error::{Error, Result};
use crate::grid::{FlowField, GrayFrame, Vec2};
use crate::mno::{split_indices, Split};
use crate::trajectory::{Track, TrackPoint};

/// Rendered disc intensity.
pub const AGENT_INTENSITY: f64 = 0.9;
/// Mean background intensity.
pub const BACKGROUND_LEVEL: f64 = 0.25;
/// Shortest wavelength present in the background texture, in pixels.
pub const TEXTURE_MIN_WAVELENGTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub agent_radius: f64,
    /// Pixels per frame, `(min, max)`.
    pub speed_range: (f64, f64),
    /// Heading noise in radians per frame.
    pub direction_noise_sigma: f64,
    pub n_frames: usize,
    pub seed: u64,
    pub background_texture_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_agents: 4,
            agent_radius: 3.0,
            speed_range: (0.5, 2.0),
            direction_noise_sigma: 0.05,
            n_frames: 20,
            seed: 0,
            background_texture_amplitude: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let side = self.width.min(self.height) as f64;
        if !(self.agent_radius > 0.0 && 2.0 * self.agent_radius + 2.0 <= side) {
            return bad(format!(
                "agent_radius {} does not fit a {}x{} frame",
                self.agent_radius, self.width, self.height
            ));
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= 0.0 && lo <= hi && hi < side / 8.0) {
            return bad(format!(
                "speed_range ({lo}, {hi}) must satisfy 0 <= min <= max < {}",
                side / 8.0
            ));
        }
        if !(self.direction_noise_sigma >= 0.0 && self.direction_noise_sigma.is_finite()) {
            return bad(format!("direction_noise_sigma {} must be >= 0", self.direction_noise_sigma));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if !(0.0..=0.2).contains(&self.background_texture_amplitude) {
            return bad(format!(
                "background_texture_amplitude {} not in [0, 0.2]",
                self.background_texture_amplitude
            ));
        }
        Ok(())
    }

    fn bounds(&self) -> (Vec2, Vec2) {
        let r = self.agent_radius;
        (
            Vec2::new(r, r),
            Vec2::new(self.width as f64 - 1.0 - r, self.height as f64 - 1.0 - r),
        )
    }
}

/// Band-limited, periodic random texture defined at any real coordinate.
///
/// A sum of cosines over every lattice frequency with wavelength at least
/// `min_wavelength`, normalized so the raster's peak magnitude is 1.
#[derive(Debug, Clone)]
pub struct Texture {
    width: usize,
    height: usize,
    terms: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn new(width: usize, height: usize, min_wavelength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let fmax = 1.0 / min_wavelength;
        let kx_max = (width as f64 * fmax) as i64;
        let ky_max = (height as f64 * fmax) as i64;
        let mut terms = Vec::new();
        for ky in -ky_max..=ky_max {
            for kx in 0..=kx_max {
                // One representative per conjugate pair, and no DC term.
                if kx == 0 && ky <= 0 {
                    continue;
                }
                let (fx, fy) = (kx as f64 / width as f64, ky as f64 / height as f64);
                if fx.hypot(fy) > fmax {
                    continue;
                }
                let amp: f64 = normal.sample(&mut rng);
                let phase = rng.random::<f64>() * 2.0 * PI;
                terms.push((2.0 * PI * fx, 2.0 * PI * fy, amp, phase));
            }
        }
        let mut tex = Self { width, height, terms };
        let peak = tex.raster().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for t in &mut tex.terms {
                t.2 /= peak;
            }
        }
        tex
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(wx, wy, a, ph)| a * (wx * x + wy * y + ph).cos())
            .sum()
    }

    pub fn raster(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.value(x as f64, y as f64));
            }
        }
        out
    }

    /// High-contrast frame translated by `shift`, so that
    /// `frame(p) = frame₀(p − shift)` and the true flow from the unshifted
    /// frame is `shift`.
    pub fn frame(&self, shift: Vec2) -> GrayFrame {
        GrayFrame::from_fn(self.width, self.height, |x, y| {
            0.5 + 0.4 * self.value(x as f64 - shift.x, y as f64 - shift.y)
        })
    }
}

pub fn textured_frame(width: usize, height: usize, min_wavelength: f64, seed: u64, shift: Vec2) -> GrayFrame {
    Texture::new(width, height, min_wavelength, seed).frame(shift)
}

fn reflect(mut p: f64, mut v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if hi <= lo {
        return (lo, 0.0);
    }
    while p < lo || p > hi {
        if p < lo {
            p = 2.0 * lo - p;
        } else {
            p = 2.0 * hi - p;
        }
        v = -v;
    }
    (p, v)
}

/// Seeded agent trajectories for frames `0..n_frames`; ped ids are `0..n_agents`.
pub fn simulate_agents(cfg: &SceneConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.direction_noise_sigma).expect("validated sigma");
    let (lo, hi) = cfg.bounds();
    let min_gap = 2.0 * cfg.agent_radius + 2.0;

    let mut starts: Vec<Vec2> = Vec::with_capacity(cfg.n_agents);
    for _ in 0..cfg.n_agents {
        let mut candidate = Vec2::ZERO;
        for _ in 0..1000 {
            candidate = Vec2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            if starts.iter().all(|s| s.distance(candidate) >= min_gap) {
                break;
            }
        }
        starts.push(candidate);
    }

    let mut tracks = Vec::with_capacity(cfg.n_agents);
    for (id, &start) in starts.iter().enumerate() {
        let (smin, smax) = cfg.speed_range;
        let speed = if smax > smin { rng.random_range(smin..=smax) } else { smin };
        let mut heading = rng.random::<f64>() * 2.0 * PI;
        let mut pos = start;
        let mut points = Vec::with_capacity(cfg.n_frames);
        points.push(TrackPoint {
            frame_id: 0,
            position: pos,
        });
        for frame in 1..cfg.n_frames {
            if cfg.direction_noise_sigma > 0.0 {
                heading += noise.sample(&mut rng);
            }
            let (x, vx) = reflect(pos.x + speed * heading.cos(), speed * heading.cos(), lo.x, hi.x);
            let (y, vy) = reflect(pos.y + speed * heading.sin(), speed * heading.sin(), lo.y, hi.y);
            heading = vy.atan2(vx);
            pos = Vec2::new(x, y);
            points.push(TrackPoint {
                frame_id: frame as u64,
                position: pos,
            });
        }
        tracks.push(Track { ped_id: id as i64, points });
    }
    Ok(tracks)
}

/// Positions of every track that has a point at `frame_id`.
pub fn positions_at(tracks: &[Track], frame_id: u64) -> Vec<(i64, Vec2)> {
    tracks
        .iter()
        .filter_map(|t| t.position_at(frame_id).map(|p| (t.ped_id, p)))
        .collect()
}

/// Exact box around an agent disc.
pub fn agent_box(center: Vec2, radius: f64) -> BBox {
    BBox::new(center.x - radius, center.y - radius, 2.0 * radius, 2.0 * radius)
}

/// Draws agents over `background` (row-major, already in intensity units).
pub fn render_on(
    background: &[f64],
    agents: &[(i64, Vec2)],
    frame_id: u64,
    cfg: &SceneConfig,
) -> (GrayFrame, Vec<Detection>) {
    let (w, h) = (cfg.width, cfg.height);
    let r = cfg.agent_radius;
    let mut data = background.to_vec();
    for &(_, c) in agents {
        let x0 = (c.x - r - 1.0).floor().max(0.0) as usize;
        let y0 = (c.y - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((c.x + r + 1.0).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((c.y + r + 1.0).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = Vec2::new(x as f64, y as f64).distance(c);
                let coverage = (r + 0.5 - d).clamp(0.0, 1.0);
                let px = &mut data[y * w + x];
                *px = *px * (1.0 - coverage) + AGENT_INTENSITY * coverage;
            }
        }
    }
    let frame = GrayFrame::from_fn(w, h, |x, y| data[y * w + x]);
    let dets = agents
        .iter()
        .map(|&(id, c)| Detection::new(frame_id, agent_box(c, r), 1.0).with_ped_id(id))
        .collect();
    (frame, dets)
}

/// Static scene background for `cfg.seed`.
pub fn background(cfg: &SceneConfig) -> Vec<f64> {
    let amp = cfg.background_texture_amplitude;
    if amp == 0.0 {
        return vec![BACKGROUND_LEVEL; cfg.width * cfg.height];
    }
    Texture::new(cfg.width, cfg.height, TEXTURE_MIN_WAVELENGTH, cfg.seed ^ 0xb4c6_9d1e)
        .raster()
        .into_iter()
        .map(|v| BACKGROUND_LEVEL + amp * v)
        .collect()
}

pub fn render_frame(agents: &[(i64, Vec2)], frame_id: u64, cfg: &SceneConfig) -> (GrayFrame, Vec<Detection>) {
    render_on(&background(cfg), agents, frame_id, cfg)
}

/// Forward flow anchored at time-`t` pixels: each pixel within an agent's
/// time-`t` disc (nearest center wins) carries that agent's displacement.
pub fn ground_truth_flow(at_t: &[(i64, Vec2)], at_next: &[(i64, Vec2)], cfg: &SceneConfig) -> FlowField {
    let moves: Vec<(Vec2, Vec2)> = at_t
        .iter()
        .filter_map(|&(id, p)| {
            at_next
                .iter()
                .find(|(nid, _)| *nid == id)
                .map(|&(_, q)| (p, q - p))
        })
        .collect();
    let r = cfg.agent_radius;
    FlowField::from_fn(cfg.width, cfg.height, |x, y| {
        let px = Vec2::new(x as f64, y as f64);
        moves
            .iter()
            .map(|&(c, d)| (px.distance(c), d))
            .filter(|&(dist, _)| dist <= r)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(Vec2::ZERO, |(_, d)| d)
    })
}

/// One simulated scene with everything derived from it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub tracks: Vec<Track>,
    pub frames: Vec<GrayFrame>,
    /// Per-frame ground-truth boxes.
    pub detections: Vec<Vec<Detection>>,
    /// `flows[t]` moves frame `t` to frame `t + 1`.
    pub flows: Vec<FlowField>,
}

impl Scene {
    /// Consecutive flow pairs `(flows[t], flows[t + 1])`.
    pub fn pairs(&self) -> impl Iterator<Item = (&FlowField, &FlowField)> {
        self.flows.windows(2).map(|w| (&w[0], &w[1]))
    }
}

pub fn simulate_scene(cfg: &SceneConfig) -> Result<Scene> {
    let tracks = simulate_agents(cfg)?;
    let bg = background(cfg);
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut detections = Vec::with_capacity(cfg.n_frames);
    let mut flows = Vec::with_capacity(cfg.n_frames.saturating_sub(1));
    for t in 0..cfg.n_frames as u64 {
        let here = positions_at(&tracks, t);
        let (frame, dets) = render_on(&bg, &here, t, cfg);
        frames.push(frame);
        detections.push(dets);
        if t + 1 < cfg.n_frames as u64 {
            flows.push(ground_truth_flow(&here, &positions_at(&tracks, t + 1), cfg));
        }
    }
    Ok(Scene {
        config: cfg.clone(),
        tracks,
        frames,
        detections,
        flows,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    /// Scene indices per split.
    pub split: Split,
}

impl Dataset {
    /// Flow pairs from the given scenes, in scene then time order.
    pub fn pairs(&self, scene_ids: &[usize]) -> Vec<(&FlowField, &FlowField)> {
        scene_ids.iter().flat_map(|&i| self.scenes[i].pairs()).collect()
    }
}

/// Paper split fractions, applied to whole scenes.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.7, 0.2, 0.1);

/// `n_scenes` independent scenes seeded from `cfg.seed`, split 70/20/10 by scene.
pub fn make_dataset(cfg: &SceneConfig, n_scenes: usize) -> Result<Dataset> {
    if n_scenes < 10 {
        return Err(Error::InvalidParameter(format!(
            "n_scenes {n_scenes} must be at least 10 for a non-degenerate split"
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scenes = (0..n_scenes)
        .map(|_| {
            let scene_cfg = SceneConfig {
                seed: rng.next_u64(),
                ..cfg.clone()
            };
            simulate_scene(&scene_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scenes,
        split: split_indices(n_scenes, SPLIT_FRACTIONS, cfg.seed),
    })
}
