//! Cross-module checks: rendered scenes through Farnebäck, and operator rollout
//! through centroid stepping.

use flowmno::farneback::{estimate_flow, FarnebackParams};
use flowmno::mno::{MnoModel, ModelConfig};
use flowmno::synth::{positions_at, simulate_scene, SceneConfig};
use flowmno::trajectory::{predict_tracks, step_centroid, Track, TrackPoint};
use flowmno::{FlowField, Vec2};

/// Agents closer than this to another agent share the estimator's support
/// window, so their flows blend.
const ISOLATION: f64 = 14.0;
/// The pyramid's coarse levels smear flow near the border.
const BORDER_MARGIN: f64 = 8.0;

fn isolated_and_interior(p: Vec2, others: &[Vec2], w: usize, h: usize) -> bool {
    others.iter().all(|o| o.distance(p) >= ISOLATION)
        && p.x >= BORDER_MARGIN
        && p.y >= BORDER_MARGIN
        && p.x <= w as f64 - 1.0 - BORDER_MARGIN
        && p.y <= h as f64 - 1.0 - BORDER_MARGIN
}

#[test]
fn farneback_recovers_isolated_agent_displacements() {
    let params = FarnebackParams::default();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in [1_u64, 2, 3] {
        let cfg = SceneConfig {
            seed,
            n_frames: 8,
            ..SceneConfig::default()
        };
        let scene = simulate_scene(&cfg).unwrap();
        for t in 0..cfg.n_frames as u64 - 1 {
            let now = positions_at(&scene.tracks, t);
            let next = positions_at(&scene.tracks, t + 1);
            let flow = estimate_flow(&scene.frames[t as usize], &scene.frames[t as usize + 1], &params).unwrap();
            for (i, &(id, p)) in now.iter().enumerate() {
                let q = next.iter().find(|(j, _)| *j == id).unwrap().1;
                let others: Vec<Vec2> = now
                    .iter()
                    .chain(&next)
                    .enumerate()
                    .filter(|(k, (j, _))| *j != id && *k != i)
                    .map(|(_, (_, o))| *o)
                    .collect();
                if !isolated_and_interior(p, &others, cfg.width, cfg.height)
                    || !isolated_and_interior(q, &others, cfg.width, cfg.height)
                {
                    continue;
                }
                let err = flow.bilinear_sample(p).distance(q - p);
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    assert!(checked >= 20, "only {checked} isolated samples");
    assert!(worst <= 0.5, "worst centroid error {worst}");
}

fn swirl(w: usize, h: usize) -> FlowField {
    FlowField::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        Vec2::new(0.8 * (6.0 * fy).sin() + 0.3, -0.6 * (5.0 * fx).cos())
    })
}

/// Steps each centroid right after every operator application instead of
/// materialising the whole rollout first.
fn interleaved(model: &MnoModel, flow0: &FlowField, start: u64, starts: &[(i64, Vec2)], horizon: usize) -> Vec<Track> {
    let mut tracks: Vec<Track> = starts.iter().map(|&(id, _)| Track::new(id)).collect();
    let mut pos: Vec<Vec2> = starts.iter().map(|s| s.1).collect();
    let mut flow = flow0.clone();
    for k in 1..=horizon {
        flow = model.forward(&flow).unwrap();
        for (track, p) in tracks.iter_mut().zip(pos.iter_mut()) {
            *p = step_centroid(*p, &flow);
            track.points.push(TrackPoint {
                frame_id: start + k as u64,
                position: *p,
            });
        }
    }
    tracks
}

#[test]
fn predict_tracks_matches_interleaved_stepping() {
    for seed in [5_u64, 6] {
        let cfg = ModelConfig {
            modes_x: 3,
            modes_y: 3,
            width: 6,
            num_blocks: 2,
            projection_hidden: 8,
            seed,
            ..ModelConfig::new(12, 10)
        };
        let model = MnoModel::new(cfg).unwrap();
        let flow0 = swirl(10, 12);
        let starts = [(0, Vec2::new(2.5, 3.25)), (4, Vec2::new(7.0, 9.5)), (9, Vec2::new(0.0, 11.0))];
        let got = predict_tracks(&model, &flow0, 30, &starts, 6).unwrap();
        assert_eq!(got, interleaved(&model, &flow0, 30, &starts, 6));
    }
}
