//! Pedestrian localisation front-end: boxes, IoU, non-maximum suppression and
//! a connected-component detector for rendered synthetic scenes.

use std::cmp::Ordering;

use crate::grid::{GrayFrame, Vec2};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

/// Axis-aligned box anchored at its top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn centroid(&self) -> Vec2 {
        Vec2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u64,
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: i64,
    pub ped_id: Option<i64>,
}

impl Detection {
    pub fn new(frame_id: u64, bbox: BBox, confidence: f64) -> Self {
        Self {
            frame_id,
            bbox,
            confidence,
            class_id: 0,
            ped_id: None,
        }
    }

    pub fn with_ped_id(mut self, ped_id: i64) -> Self {
        self.ped_id = Some(ped_id);
        self
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_valid() && (0.0..=1.0).contains(&self.confidence)
    }
}

/// Intersection over union; zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Descending confidence, ties broken by smaller `x` then smaller `y`.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy per-class non-maximum suppression.
///
/// Detections under `conf_threshold` are dropped; the rest are visited in
/// rank order and any same-class detection overlapping a kept one by more
/// than `iou_threshold` is suppressed.
pub fn nms(dets: &[Detection], iou_threshold: f64, conf_threshold: f64) -> Vec<Detection> {
    let mut candidates: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.confidence >= conf_threshold)
        .collect();
    candidates.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// Centre of a detection's box.
pub fn centroid(det: &Detection) -> Vec2 {
    det.bbox.centroid()
}

/// 4-connected components of pixels strictly above `intensity_threshold`.
///
/// Components with at least `min_area` pixels become class-0 detections whose
/// box is the pixel bounding box and whose confidence is the mean intensity.
/// Results are ordered by first pixel in raster order.
pub fn blob_detect(frame: &GrayFrame, intensity_threshold: f64, min_area: usize) -> Vec<Detection> {
    let (w, h) = frame.dims();
    let data = frame.data();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || data[start] <= intensity_threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (w, h, 0, 0);
        let mut area = 0usize;
        let mut sum = 0.0;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sum += data[i];
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
            let mut visit = |j: usize| {
                if !seen[j] && data[j] > intensity_threshold {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area >= min_area {
            let bbox = BBox::new(
                min_x as f64,
                min_y as f64,
                (max_x - min_x + 1) as f64,
                (max_y - min_y + 1) as f64,
            );
            out.push(Detection::new(0, bbox, sum / area as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, w: f64, h: f64, conf: f64) -> Detection {
        Detection::new(0, BBox::new(x, y, w, h), conf)
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&BBox::new(0.0, 0.0, 5.0, 5.0), &BBox::new(10.0, 10.0, 5.0, 5.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 81.0 / 119.0).abs() < 1e-15);
    }

    #[test]
    fn nms_cases() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(1.0, 1.0, 10.0, 10.0, 0.8);
        assert_eq!(nms(&[b.clone(), a.clone()], 0.5, 0.0), vec![a.clone()]);

        let c = det(50.0, 50.0, 10.0, 10.0, 0.8);
        assert_eq!(nms(&[c.clone(), a.clone()], 0.5, 0.0), vec![a.clone(), c]);

        assert!(nms(&[det(0.0, 0.0, 4.0, 4.0, 0.3)], 0.45, 0.5).is_empty());
        assert!(nms(&[], 0.45, 0.5).is_empty());
    }

    #[test]
    fn nms_is_class_aware() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let mut b = det(0.0, 0.0, 10.0, 10.0, 0.8);
        b.class_id = 1;
        assert_eq!(nms(&[a, b], 0.5, 0.0).len(), 2);
    }

    #[test]
    fn nms_tie_break_is_positional() {
        let a = det(5.0, 0.0, 10.0, 10.0, 0.7);
        let b = det(4.0, 0.0, 10.0, 10.0, 0.7);
        let out = nms(&[a, b.clone()], 0.5, 0.0);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(centroid(&det(0.0, 0.0, 10.0, 10.0, 1.0)), Vec2::new(5.0, 5.0));
        assert_eq!(centroid(&det(10.0, 20.0, 4.0, 6.0, 1.0)), Vec2::new(12.0, 23.0));
        assert_eq!(centroid(&det(0.0, 0.0, 1.0, 1.0, 1.0)), Vec2::new(0.5, 0.5));
    }

    #[test]
    fn blob_blank_and_square() {
        let blank = GrayFrame::constant(32, 32, 0.0).unwrap();
        assert!(blob_detect(&blank, 0.5, 1).is_empty());
        let sq = GrayFrame::from_fn(32, 32, |x, y| {
            if (10..16).contains(&x) && (10..16).contains(&y) {
                0.9
            } else {
                0.0
            }
        });
        let d = blob_detect(&sq, 0.5, 1);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(10.0, 10.0, 6.0, 6.0));
        assert!((d[0].confidence - 0.9).abs() < 1e-12);
        assert_eq!(d[0].class_id, 0);
    }

    #[test]
    fn blob_two_discs() {
        let disc = |x: usize, y: usize, cx: f64, cy: f64| {
            ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= 3.0
        };
        let f = GrayFrame::from_fn(40, 40, |x, y| {
            if disc(x, y, 10.0, 10.0) || disc(x, y, 25.0, 12.0) {
                0.9
            } else {
                0.1
            }
        });
        let d = blob_detect(&f, 0.5, 1);
        let oracle = brute_components(&f, 0.5);
        assert_eq!(d.len(), 2);
        assert_eq!(oracle.len(), 2);
    }

    /// Label propagation until fixpoint: independent of the flood fill.
    fn brute_components(frame: &GrayFrame, thr: f64) -> Vec<(usize, [usize; 4])> {
        let (w, h) = frame.dims();
        let on: Vec<bool> = frame.data().iter().map(|v| *v > thr).collect();
        let mut label: Vec<usize> = (0..w * h).collect();
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if !on[i] {
                        continue;
                    }
                    let mut nb = vec![];
                    if x > 0 { nb.push(i - 1); }
                    if x + 1 < w { nb.push(i + 1); }
                    if y > 0 { nb.push(i - w); }
                    if y + 1 < h { nb.push(i + w); }
                    for j in nb {
                        if on[j] && label[j] < label[i] {
                            label[i] = label[j];
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut comps: std::collections::BTreeMap<usize, (usize, [usize; 4])> = Default::default();
        for i in 0..w * h {
            if on[i] {
                let (x, y) = (i % w, i / w);
                let e = comps.entry(label[i]).or_insert((0, [x, y, x, y]));
                e.0 += 1;
                e.1 = [e.1[0].min(x), e.1[1].min(y), e.1[2].max(x), e.1[3].max(y)];
            }
        }
        comps.into_values().collect()
    }

    proptest! {
        #[test]
        fn blob_matches_brute_labeler(
            w in 1usize..32, h in 1usize..32,
            bits in proptest::collection::vec(any::<bool>(), 1024),
            min_area in 1usize..6,
        ) {
            let f = GrayFrame::from_fn(w, h, |x, y| if bits[y * 32 + x] { 1.0 } else { 0.0 });
            let mut got: Vec<(usize, [usize; 4])> = blob_detect(&f, 0.5, min_area)
                .iter()
                .map(|d| {
                    let b = d.bbox;
                    prop_assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= w as f64 && b.y + b.h <= h as f64);
                    Ok((0,[b.x as usize, b.y as usize, (b.x + b.w) as usize - 1, (b.y + b.h) as usize - 1]))
                })
                .collect::<Result<_, _>>()?;
            let mut expect: Vec<(usize, [usize; 4])> = brute_components(&f, 0.5)
                .into_iter()
                .filter(|c| c.0 >= min_area)
                .map(|c| (0, c.1))
                .collect();
            got.sort();
            expect.sort();
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn nms_invariants(
            boxes in proptest::collection::vec(
                (0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64, 0.0..1.0f64, 0i64..2), 0..20),
            iou_thr in 0.0..1.0f64,
            conf_thr in 0.0..1.0f64,
        ) {
            let dets: Vec<Detection> = boxes.iter().map(|&(x, y, w, h, c, cls)| {
                let mut d = det(x, y, w, h, c);
                d.class_id = cls;
                d
            }).collect();
            let out = nms(&dets, iou_thr, conf_thr);
            for d in &out {
                prop_assert!(dets.contains(d));
                prop_assert!(d.confidence >= conf_thr);
            }
            for (i, a) in out.iter().enumerate() {
                for b in &out[i + 1..] {
                    prop_assert!(a.confidence >= b.confidence);
                    if a.class_id == b.class_id {
                        prop_assert!(iou(&a.bbox, &b.bbox) <= iou_thr);
                    }
                }
            }
            prop_assert_eq!(nms(&out, iou_thr, conf_thr), out);
        }
    }
}
