//! Centroid stepping through predicted flow, multi-step track prediction and
//! ADE/FDE evaluation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Vec2};
use crate::mno::MnoModel;

/// Number of predicted steps used when no horizon is given.
pub const DEFAULT_HORIZON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame_id: u64,
    pub position: Vec2,
}

/// One pedestrian's positions over strictly increasing frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub ped_id: i64,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn new(ped_id: i64) -> Self {
        Self {
            ped_id,
            points: Vec::new(),
        }
    }

    pub fn from_points(ped_id: i64, points: impl IntoIterator<Item = (u64, Vec2)>) -> Result<Self> {
        let mut t = Self::new(ped_id);
        for (frame_id, position) in points {
            t.push(frame_id, position)?;
        }
        Ok(t)
    }

    /// Appends a point; frames must increase and positions be finite.
    pub fn push(&mut self, frame_id: u64, position: Vec2) -> Result<()> {
        if let Some(last) = self.points.last() {
            if frame_id <= last.frame_id {
                return Err(Error::Alignment(format!(
                    "ped {}: frame {frame_id} does not follow frame {}",
                    self.ped_id, last.frame_id
                )));
            }
        }
        if !position.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ped {}: non-finite position at frame {frame_id}",
                self.ped_id
            )));
        }
        self.points.push(TrackPoint { frame_id, position });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position_at(&self, frame_id: u64) -> Option<Vec2> {
        self.points
            .binary_search_by_key(&frame_id, |p| p.frame_id)
            .ok()
            .map(|i| self.points[i].position)
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().map(|p| p.frame_id)
    }
}

/// Moves a centroid by the flow sampled (bilinearly, clamped) at it.
pub fn step_centroid(centroid: Vec2, predicted_flow: &FlowField) -> Vec2 {
    centroid + predicted_flow.bilinear_sample(centroid)
}

/// Steps every start centroid through a precomputed sequence of flow fields.
pub fn tracks_from_fields(fields: &[FlowField], start_frame: u64, starts: &[(i64, Vec2)]) -> Vec<Track> {
    starts
        .iter()
        .map(|&(ped_id, start)| {
            let mut pos = start;
            let points = fields
                .iter()
                .enumerate()
                .map(|(k, flow)| {
                    pos = step_centroid(pos, flow);
                    TrackPoint {
                        frame_id: start_frame + k as u64 + 1,
                        position: pos,
                    }
                })
                .collect();
            Track { ped_id, points }
        })
        .collect()
}

/// Predicts `horizon` future positions per pedestrian by rolling the operator
/// forward from `flow_t` and stepping each centroid through the results.
pub fn predict_tracks(
    model: &MnoModel,
    flow_t: &FlowField,
    start_frame: u64,
    starts: &[(i64, Vec2)],
    horizon: usize,
) -> Result<Vec<Track>> {
    let fields = model.rollout(flow_t, horizon)?;
    Ok(tracks_from_fields(&fields, start_frame, starts))
}

fn check_aligned(pred: &Track, gt: &Track) -> Result<()> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Alignment(format!("ped {}: empty track", pred.ped_id)));
    }
    if pred.len() != gt.len() || pred.frame_ids().zip(gt.frame_ids()).any(|(a, b)| a != b) {
        return Err(Error::Alignment(format!(
            "ped {} vs ped {}: frame sequences differ",
            pred.ped_id, gt.ped_id
        )));
    }
    Ok(())
}

/// Average displacement error over aligned points.
pub fn ade(pred: &Track, gt: &Track) -> Result<f64> {
    check_aligned(pred, gt)?;
    let total: f64 = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(a, b)| a.position.distance(b.position))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Final displacement error at the last aligned point.
pub fn fde(pred: &Track, gt: &Track) -> Result<f64> {
    check_aligned(pred, gt)?;
    let a = pred.points.last().expect("checked non-empty");
    let b = gt.points.last().expect("checked non-empty");
    Ok(a.position.distance(b.position))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedMetrics {
    pub ped_id: i64,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_ped: Vec<PedMetrics>,
    pub mean_ade: f64,
    pub mean_fde: f64,
}

/// Per-pedestrian ADE/FDE and their unweighted means.
///
/// Ground truth is restricted to the frames present in each prediction; a
/// prediction frame missing from the ground truth is an alignment error.
pub fn evaluate(pred_tracks: &[Track], gt_tracks: &[Track]) -> Result<Evaluation> {
    if pred_tracks.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    let gt: BTreeMap<i64, &Track> = gt_tracks.iter().map(|t| (t.ped_id, t)).collect();
    let missing: Vec<i64> = pred_tracks
        .iter()
        .map(|t| t.ped_id)
        .filter(|id| !gt.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCounterpart(missing));
    }
    let mut per_ped = Vec::with_capacity(pred_tracks.len());
    let mut problems = Vec::new();
    for pred in pred_tracks {
        let truth = gt[&pred.ped_id];
        let mut aligned = Track::new(pred.ped_id);
        for p in &pred.points {
            match truth.position_at(p.frame_id) {
                Some(pos) => aligned.points.push(TrackPoint {
                    frame_id: p.frame_id,
                    position: pos,
                }),
                None => problems.push(format!("ped {} frame {}", pred.ped_id, p.frame_id)),
            }
        }
        if problems.is_empty() {
            per_ped.push(PedMetrics {
                ped_id: pred.ped_id,
                ade: ade(pred, &aligned)?,
                fde: fde(pred, &aligned)?,
            });
        }
    }
    if !problems.is_empty() {
        return Err(Error::Alignment(format!(
            "no ground truth at {}",
            problems.join(", ")
        )));
    }
    let n = per_ped.len() as f64;
    Ok(Evaluation {
        mean_ade: per_ped.iter().map(|m| m.ade).sum::<f64>() / n,
        mean_fde: per_ped.iter().map(|m| m.fde).sum::<f64>() / n,
        per_ped,
    })
}
