//! Dense two-frame optical flow by polynomial expansion.
//!
//! Each frame neighbourhood is approximated by a quadratic
//! `f(p) ≈ pᵀ A p + bᵀ p + c`. If `next(p) = prev(p − d)` the linear
//! coefficients satisfy `b₂ = b₁ − 2 A d`, which gives a closed-form
//! displacement once the constraint is pooled over a Gaussian window. The
//! estimate is refined coarse-to-fine over an image pyramid and iterated at
//! each level with `next`'s coefficients warped by the current flow.

use crate::error::{Error, Result};
use crate::grid::{bilinear_taps, sample_scalar, FlowField, GrayFrame, Vec2};

/// Levels smaller than this on either side are not generated.
pub const MIN_PYRAMID_SIDE: usize = 16;

/// Tikhonov term added to the pooled 2×2 normal matrix.
pub const REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FarnebackParams {
    pub pyramid_scale: f64,
    pub levels: usize,
    pub window_size: usize,
    pub iterations_per_level: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self {
            pyramid_scale: 0.5,
            levels: 3,
            window_size: 15,
            iterations_per_level: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("pyramid_scale {} not in (0, 1)", self.pyramid_scale));
        }
        if self.levels == 0 {
            return bad("levels must be positive".into());
        }
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return bad(format!("window_size {} must be odd", self.window_size));
        }
        if self.iterations_per_level == 0 {
            return bad("iterations_per_level must be positive".into());
        }
        if self.poly_n < 3 || self.poly_n % 2 == 0 {
            return bad(format!("poly_n {} must be odd and at least 3", self.poly_n));
        }
        if !(self.poly_sigma > 0.0 && self.poly_sigma.is_finite()) {
            return bad(format!("poly_sigma {} must be positive", self.poly_sigma));
        }
        Ok(())
    }
}

/// Per-pixel quadratic model. `a` holds `(a_xx, a_xy, a_yy)` of the symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCoeffs {
    pub width: usize,
    pub height: usize,
    pub a: Vec<[f64; 3]>,
    pub b: Vec<Vec2>,
    pub c: Vec<f64>,
}

impl PolyCoeffs {
    pub fn a_at(&self, x: usize, y: usize) -> [f64; 3] {
        self.a[y * self.width + x]
    }

    pub fn b_at(&self, x: usize, y: usize) -> Vec2 {
        self.b[y * self.width + x]
    }

    pub fn c_at(&self, x: usize, y: usize) -> f64 {
        self.c[y * self.width + x]
    }

    /// Bilinear sample of `A` and `b` at a real-valued position.
    fn sample(&self, x: f64, y: f64) -> ([f64; 3], Vec2) {
        let (x0, y0, x1, y1, fx, fy) = bilinear_taps(self.width, self.height, x, y);
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let idx = [
            y0 * self.width + x0,
            y0 * self.width + x1,
            y1 * self.width + x0,
            y1 * self.width + x1,
        ];
        let mut a = [0.0; 3];
        let mut b = Vec2::ZERO;
        for (wk, &i) in w.iter().zip(&idx) {
            for (dst, src) in a.iter_mut().zip(self.a[i]) {
                *dst += wk * src;
            }
            b += self.b[i] * *wk;
        }
        (a, b)
    }
}

/// Normalised 1-D Gaussian taps over `[-radius, radius]`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with edge replication.
pub(crate) fn blur_plane(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * row[clamp(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (k, w) in kernel.iter().enumerate() {
            let src = clamp(y as isize + k as isize - r, height);
            let src_row = &tmp[src * width..(src + 1) * width];
            let dst_row = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

/// Gaussian pyramid, level 0 being the input frame.
pub fn build_pyramid(frame: &GrayFrame, params: &FarnebackParams) -> Vec<GrayFrame> {
    let mut levels = vec![frame.clone()];
    let scale = params.pyramid_scale;
    let sigma = 0.5 / scale;
    let kernel = gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
    while levels.len() < params.levels {
        let src = levels.last().expect("pyramid has a base level");
        let (w, h) = src.dims();
        let nw = (w as f64 * scale).round() as usize;
        let nh = (h as f64 * scale).round() as usize;
        if nw < MIN_PYRAMID_SIDE || nh < MIN_PYRAMID_SIDE {
            break;
        }
        let smooth = blur_plane(src.data(), w, h, &kernel);
        let sx = w as f64 / nw as f64;
        let sy = h as f64 / nh as f64;
        let next = GrayFrame::from_fn(nw, nh, |x, y| {
            sample_scalar(
                &smooth,
                w,
                h,
                (x as f64 + 0.5) * sx - 0.5,
                (y as f64 + 0.5) * sy - 0.5,
            )
        });
        levels.push(next);
    }
    levels
}

/// Inverts a small dense matrix by Gauss-Jordan elimination with partial pivoting.
fn invert<const N: usize>(mut m: [[f64; N]; N]) -> [[f64; N]; N] {
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("non-empty range");
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular expansion system");
        for j in 0..N {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for row in 0..N {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for j in 0..N {
                        m[row][j] -= f * m[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

/// Gaussian-weighted least-squares quadratic fit around every pixel.
///
/// The basis is `[1, x, y, x², y², xy]` in pixel offsets from the centre; with
/// edge replication every neighbourhood uses the same normal matrix, so it is
/// inverted once and applied to the per-pixel moment vector.
pub fn polynomial_expansion(frame: &GrayFrame, poly_n: usize, poly_sigma: f64) -> PolyCoeffs {
    let (w, h) = frame.dims();
    let half = (poly_n / 2) as isize;
    let g = gaussian_kernel(poly_sigma, poly_n / 2);
    let offsets: Vec<(isize, isize, f64, [f64; 6])> = (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| {
            let weight = g[(dx + half) as usize] * g[(dy + half) as usize];
            let (fx, fy) = (dx as f64, dy as f64);
            (dx, dy, weight, [1.0, fx, fy, fx * fx, fy * fy, fx * fy])
        })
        .collect();

    let mut normal = [[0.0; 6]; 6];
    for (_, _, weight, basis) in &offsets {
        for i in 0..6 {
            for j in 0..6 {
                normal[i][j] += weight * basis[i] * basis[j];
            }
        }
    }
    let inv = invert(normal);

    let data = frame.data();
    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    let mut c = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut moments = [0.0; 6];
            for (dx, dy, weight, basis) in &offsets {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let f = weight * data[sy * w + sx];
                for (m, bv) in moments.iter_mut().zip(basis) {
                    *m += f * bv;
                }
            }
            let mut r = [0.0; 6];
            for (i, ri) in r.iter_mut().enumerate() {
                *ri = inv[i].iter().zip(&moments).map(|(p, q)| p * q).sum();
            }
            c.push(r[0]);
            b.push(Vec2::new(r[1], r[2]));
            a.push([r[3], 0.5 * r[5], r[4]]);
        }
    }
    PolyCoeffs {
        width: w,
        height: h,
        a,
        b,
        c,
    }
}

/// One pooled displacement solve for every pixel, given the current estimate.
fn update_flow(
    prev: &PolyCoeffs,
    next: &PolyCoeffs,
    flow: &[Vec2],
    window: &[f64],
) -> Vec<Vec2> {
    let (w, h) = (prev.width, prev.height);
    let n = w * h;
    let mut g11 = vec![0.0; n];
    let mut g12 = vec![0.0; n];
    let mut g22 = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    let mut h2 = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = flow[i];
            let a1 = prev.a[i];
            let b1 = prev.b[i];
            let (a2, b2) = next.sample(x as f64 + d.x, y as f64 + d.y);
            let axx = 0.5 * (a1[0] + a2[0]);
            let axy = 0.5 * (a1[1] + a2[1]);
            let ayy = 0.5 * (a1[2] + a2[2]);
            let dbx = -0.5 * (b2.x - b1.x) + axx * d.x + axy * d.y;
            let dby = -0.5 * (b2.y - b1.y) + axy * d.x + ayy * d.y;
            g11[i] = axx * axx + axy * axy;
            g12[i] = axy * (axx + ayy);
            g22[i] = axy * axy + ayy * ayy;
            h1[i] = axx * dbx + axy * dby;
            h2[i] = axy * dbx + ayy * dby;
        }
    }
    let [g11, g12, g22, h1, h2] = [g11, g12, g22, h1, h2].map(|p| blur_plane(&p, w, h, window));
    (0..n)
        .map(|i| {
            let a = g11[i] + REGULARIZATION;
            let b = g12[i];
            let d = g22[i] + REGULARIZATION;
            let det = a * d - b * b;
            Vec2::new((d * h1[i] - b * h2[i]) / det, (a * h2[i] - b * h1[i]) / det)
        })
        .collect()
}

/// Resamples a flow grid onto a finer grid and rescales the vectors.
fn upscale_flow(flow: &[Vec2], cw: usize, ch: usize, fw: usize, fh: usize) -> Vec<Vec2> {
    let sx = cw as f64 / fw as f64;
    let sy = ch as f64 / fh as f64;
    let (u, v): (Vec<f64>, Vec<f64>) = flow.iter().map(|p| (p.x, p.y)).unzip();
    let mut out = Vec::with_capacity(fw * fh);
    for y in 0..fh {
        for x in 0..fw {
            let cx = (x as f64 + 0.5) * sx - 0.5;
            let cy = (y as f64 + 0.5) * sy - 0.5;
            out.push(Vec2::new(
                sample_scalar(&u, cw, ch, cx, cy) / sx,
                sample_scalar(&v, cw, ch, cx, cy) / sy,
            ));
        }
    }
    out
}

/// Dense flow from `prev` to `next`, so that `prev(p) ≈ next(p + flow(p))`.
pub fn estimate_flow(
    prev: &GrayFrame,
    next: &GrayFrame,
    params: &FarnebackParams,
) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(Error::grids(prev.dims(), next.dims()));
    }
    params.validate()?;
    let prev_pyr = build_pyramid(prev, params);
    let next_pyr = build_pyramid(next, params);
    let sigma = params.window_size as f64 / 4.0;
    let window = gaussian_kernel(sigma, params.window_size / 2);

    let mut flow: Vec<Vec2> = Vec::new();
    let mut dims = (0, 0);
    for level in (0..prev_pyr.len()).rev() {
        let (w, h) = prev_pyr[level].dims();
        flow = if flow.is_empty() {
            vec![Vec2::ZERO; w * h]
        } else {
            upscale_flow(&flow, dims.0, dims.1, w, h)
        };
        dims = (w, h);
        let p1 = polynomial_expansion(&prev_pyr[level], params.poly_n, params.poly_sigma);
        let p2 = polynomial_expansion(&next_pyr[level], params.poly_n, params.poly_sigma);
        for _ in 0..params.iterations_per_level {
            flow = update_flow(&p1, &p2, &flow, &window);
        }
    }
    FlowField::new(dims.0, dims.1, flow)
}

/// Backward warp: `out(p) = frame(p + flow(p))`, bilinear with edge clamping.
pub fn warp_frame(frame: &GrayFrame, flow: &FlowField) -> Result<GrayFrame> {
    if frame.dims() != flow.dims() {
        return Err(Error::grids(frame.dims(), flow.dims()));
    }
    Ok(GrayFrame::from_fn(frame.width(), frame.height(), |x, y| {
        let d = flow.get(x, y);
        frame.sample(x as f64 + d.x, y as f64 + d.y)
    }))
}
