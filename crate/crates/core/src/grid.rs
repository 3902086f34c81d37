//! Shared grid types: 2-D vectors, grayscale frames and dense flow fields.
//!
//! All grids are row-major with `(x, y)` addressing `(column, row)`; the origin
//! is the top-left pixel and `y` grows downward.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise (in x-right, y-up coordinates) by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Bilinear interpolation weights for a point clamped into a `width × height` grid.
///
/// Returns `(x0, y0, x1, y1, fx, fy)`; at integer coordinates `fx = fy = 0`
/// and `x1 == x0` so the stored value is returned without blending.
#[inline]
pub(crate) fn bilinear_taps(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> (usize, usize, usize, usize, f64, f64) {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    (x0, y0, x1, y1, x - x0 as f64, y - y0 as f64)
}

/// Samples a row-major scalar grid bilinearly with edge clamping.
#[inline]
pub(crate) fn sample_scalar(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let (x0, y0, x1, y1, fx, fy) = bilinear_taps(width, height, x, y);
    let top = data[y0 * width + x0] * (1.0 - fx) + data[y0 * width + x1] * fx;
    let bottom = data[y1 * width + x0] * (1.0 - fx) + data[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Grayscale frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!("empty frame {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{} intensities for a {width}x{height} frame",
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidFrame(format!(
                "intensity {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a frame from a generator, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        sample_scalar(&self.data, self.width, self.height, x, y)
    }

    /// True unless every pixel has the same value.
    pub fn has_variance(&self) -> bool {
        let first = self.data[0];
        self.data.iter().any(|v| *v != first)
    }
}

/// Dense per-pixel displacement field, pixels per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<Vec2>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<Vec2>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!("empty flow {width}x{height}")));
        }
        if vectors.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{} vectors for a {width}x{height} flow",
                vectors.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!(
                "non-finite flow vector at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, Vec2::ZERO)
    }

    pub fn uniform(width: usize, height: usize, v: Vec2) -> Self {
        assert!(width > 0 && height > 0, "empty flow");
        assert!(v.is_finite(), "non-finite flow");
        Self {
            width,
            height,
            vectors: vec![v; width * height],
        }
    }

    /// Builds a field from a generator; panics on non-finite output.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vec2) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self::new(width, height, vectors).expect("generator produced an invalid flow field")
    }

    /// Builds a field from separate row-major `u` and `v` planes.
    pub fn from_planes(width: usize, height: usize, u: &[f64], v: &[f64]) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "plane lengths {}/{} for a {width}x{height} flow",
                u.len(),
                v.len()
            )));
        }
        Self::new(
            width,
            height,
            u.iter().zip(v).map(|(&a, &b)| Vec2::new(a, b)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        self.vectors[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vec2) {
        assert!(v.is_finite(), "non-finite flow");
        self.vectors[y * self.width + x] = v;
    }

    /// `u` and `v` components as separate row-major planes.
    pub fn planes(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.vectors.iter().map(|v| v.x).collect(),
            self.vectors.iter().map(|v| v.y).collect(),
        )
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn ensure_same_dims(&self, other: &FlowField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::grids(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Bilinear interpolation of the four surrounding vectors.
    ///
    /// Points outside `[0, width-1] × [0, height-1]` are clamped onto the
    /// rectangle first, so sampling near the border never fails.
    pub fn bilinear_sample(&self, p: Vec2) -> Vec2 {
        let (x0, y0, x1, y1, fx, fy) = bilinear_taps(self.width, self.height, p.x, p.y);
        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        let top = a * (1.0 - fx) + b * fx;
        let bottom = c * (1.0 - fx) + d * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Mean Euclidean distance between corresponding flow vectors.
pub fn endpoint_error(a: &FlowField, b: &FlowField) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let total: f64 = a
        .vectors
        .iter()
        .zip(&b.vectors)
        .map(|(p, q)| (*p - *q).norm())
        .sum();
    Ok(total / a.vectors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_bilinear(f: impl Fn(usize, usize) -> f64, x: f64, y: f64) -> f64 {
        // Weighted sum over all grid nodes with tent weights.
        let mut acc = 0.0;
        for gy in 0..16 {
            for gx in 0..16 {
                let wx = (1.0 - (x - gx as f64).abs()).max(0.0);
                let wy = (1.0 - (y - gy as f64).abs()).max(0.0);
                acc += wx * wy * f(gx, gy);
            }
        }
        acc
    }

    #[test]
    fn bilinear_midpoint_between_columns() {
        let field = FlowField::from_fn(2, 2, |x, _| Vec2::new(x as f64, 0.0));
        assert_eq!(field.bilinear_sample(Vec2::new(0.5, 0.0)), Vec2::new(0.5, 0.0));
    }

    #[test]
    fn bilinear_exact_at_grid_points() {
        let field = FlowField::from_fn(8, 9, |x, y| Vec2::new((x * 31 + y) as f64 * 0.37, -(y as f64)));
        assert_eq!(field.bilinear_sample(Vec2::new(3.0, 7.0)), field.get(3, 7));
    }

    #[test]
    fn bilinear_matches_tent_oracle() {
        let f = |x: usize, y: usize| (x + y) as f64;
        let field = FlowField::from_fn(4, 4, |x, y| Vec2::new(f(x, y), 0.0));
        let got = field.bilinear_sample(Vec2::new(1.25, 2.5));
        let oracle = brute_bilinear(|x, y| if x < 4 && y < 4 { f(x, y) } else { 0.0 }, 1.25, 2.5);
        assert!((oracle - 3.75).abs() < 1e-12);
        assert!((got.x - oracle).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_out_of_bounds() {
        let field = FlowField::from_fn(4, 4, |x, y| Vec2::new(x as f64, y as f64));
        assert_eq!(field.bilinear_sample(Vec2::new(-3.0, 10.0)), Vec2::new(0.0, 3.0));
        assert_eq!(field.bilinear_sample(Vec2::new(f64::NAN, 1.0)), Vec2::new(0.0, 1.0));
    }

    #[test]
    fn endpoint_error_cases() {
        let z = FlowField::zeros(5, 4);
        assert_eq!(endpoint_error(&z, &z).unwrap(), 0.0);
        let a = FlowField::uniform(5, 4, Vec2::new(1.0, 0.0));
        assert_eq!(endpoint_error(&a, &z).unwrap(), 1.0);
        let b = FlowField::uniform(5, 4, Vec2::new(3.0, 4.0));
        assert_eq!(endpoint_error(&b, &z).unwrap(), 5.0);
        let c = FlowField::zeros(4, 5);
        assert!(matches!(endpoint_error(&a, &c), Err(Error::IncompatibleGrids { .. })));
    }

    #[test]
    fn frame_rejects_bad_intensities() {
        assert!(GrayFrame::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayFrame::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(GrayFrame::new(2, 1, vec![-0.1, 0.5]).is_err());
        assert!(GrayFrame::new(2, 2, vec![0.0, 0.5]).is_err());
        assert!(GrayFrame::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn flow_rejects_non_finite() {
        assert!(FlowField::new(1, 1, vec![Vec2::new(f64::INFINITY, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn bilinear_linear_along_row_segments(a in -5.0..5.0f64, b in -5.0..5.0f64, t in 0.0..1.0f64) {
            let field = FlowField::from_fn(3, 3, |x, y| {
                if (x, y) == (0, 1) { Vec2::new(a, -a) } else if (x, y) == (1, 1) { Vec2::new(b, -b) } else { Vec2::ZERO }
            });
            let s = field.bilinear_sample(Vec2::new(t, 1.0));
            let expect = a * (1.0 - t) + b * t;
            prop_assert!((s.x - expect).abs() < 1e-12);
            prop_assert!((s.y + expect).abs() < 1e-12);
        }

        #[test]
        fn endpoint_error_symmetric_nonnegative(vals in proptest::collection::vec(-10.0..10.0f64, 24)) {
            let a = FlowField::from_fn(3, 2, |x, y| Vec2::new(vals[y * 3 + x], vals[6 + y * 3 + x]));
            let b = FlowField::from_fn(3, 2, |x, y| Vec2::new(vals[12 + y * 3 + x], vals[18 + y * 3 + x]));
            let ab = endpoint_error(&a, &b).unwrap();
            let ba = endpoint_error(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(endpoint_error(&a, &a).unwrap(), 0.0);
        }
    }
}
