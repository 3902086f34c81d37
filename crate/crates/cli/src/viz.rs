//! Raster overlays: boxes and per-box mean-flow arrows.

use flowmno::detect::Detection;
use flowmno::io::flow_to_rgb;
use flowmno::{FlowField, GrayFrame, Vec2};

const BOX_RGB: [u8; 3] = [40, 220, 60];
const ARROW_RGB: [u8; 3] = [240, 40, 40];

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return;
        }
        let i = 3 * (yi as usize * self.width + xi as usize);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    fn line(&mut self, a: Vec2, b: Vec2, c: [u8; 3]) {
        let n = (a.distance(b) * 4.0).ceil().max(1.0) as usize;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n as f64);
            self.put(p.x, p.y, c);
        }
    }
}

/// Mean flow over the pixels of a box, clipped to the grid; zero if the box
/// misses the grid entirely.
pub fn box_mean_flow(flow: &FlowField, d: &Detection) -> Vec2 {
    let b = d.bbox;
    let (w, h) = (flow.width() as f64, flow.height() as f64);
    let (x0, x1) = (b.x.ceil().max(0.0), (b.x + b.w).floor().min(w - 1.0));
    let (y0, y1) = (b.y.ceil().max(0.0), (b.y + b.h).floor().min(h - 1.0));
    if x0 > x1 || y0 > y1 {
        return Vec2::ZERO;
    }
    let mut sum = Vec2::ZERO;
    let mut n = 0usize;
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            sum += flow.get(x, y);
            n += 1;
        }
    }
    sum * (1.0 / n as f64)
}

/// The frame in grey (or the flow color wheel without a frame), each box
/// outlined and an arrow of `arrow_scale ×` its mean flow from the centroid.
pub fn render(flow: &FlowField, frame: Option<&GrayFrame>, dets: &[Detection], arrow_scale: f64) -> Vec<u8> {
    let rgb = match frame {
        Some(f) => f
            .data()
            .iter()
            .flat_map(|v| [(v.clamp(0.0, 1.0) * 255.0).round() as u8; 3])
            .collect(),
        None => flow_to_rgb(flow),
    };
    let mut canvas = Canvas {
        width: flow.width(),
        height: flow.height(),
        rgb,
    };
    for d in dets {
        let b = d.bbox;
        let corners = [
            Vec2::new(b.x, b.y),
            Vec2::new(b.x + b.w, b.y),
            Vec2::new(b.x + b.w, b.y + b.h),
            Vec2::new(b.x, b.y + b.h),
        ];
        for k in 0..4 {
            canvas.line(corners[k], corners[(k + 1) % 4], BOX_RGB);
        }
        let start = b.centroid();
        let shaft = box_mean_flow(flow, d) * arrow_scale;
        let tip = start + shaft;
        canvas.line(start, tip, ARROW_RGB);
        let len = shaft.norm();
        if len > 1.0 {
            let head = (0.3 * len).max(2.0);
            let back = shaft * (-head / len);
            for angle in [0.5_f64, -0.5] {
                canvas.line(tip, tip + back.rotate(angle), ARROW_RGB);
            }
        }
    }
    canvas.rgb
}
