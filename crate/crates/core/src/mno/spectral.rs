//! Truncated real 2-D Fourier transforms for the spectral blocks.
//!
//! Retained modes are the `modes_x` lowest non-negative x-frequencies crossed
//! with two y-corners: `ky ∈ [0, modes_y)` and `ky ∈ [H − modes_y, H)`. They
//! are stored mode-major as `[corner][ky_index][kx][channel]`, so channel
//! mixing reads contiguous vectors.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct SpectralPlan {
    pub height: usize,
    pub width: usize,
    pub modes_x: usize,
    pub modes_y: usize,
    r2c_w: Arc<dyn RealToComplex<f64>>,
    c2r_w: Arc<dyn ComplexToReal<f64>>,
    fft_h: Arc<dyn Fft<f64>>,
    ifft_h: Arc<dyn Fft<f64>>,
}

impl SpectralPlan {
    pub fn new(height: usize, width: usize, modes_y: usize, modes_x: usize) -> Self {
        let mut planner = FftPlanner::new();
        let mut real_planner = RealFftPlanner::new();
        Self {
            height,
            width,
            modes_x,
            modes_y,
            r2c_w: real_planner.plan_fft_forward(width),
            c2r_w: real_planner.plan_fft_inverse(width),
            fft_h: planner.plan_fft_forward(height),
            ifft_h: planner.plan_fft_inverse(height),
        }
    }

    /// Number of retained complex modes per channel.
    pub fn n_modes(&self) -> usize {
        2 * self.modes_y * self.modes_x
    }

    /// Row index `ky` of retained mode `(corner, ky_index)`.
    pub fn ky(&self, corner: usize, ky_index: usize) -> usize {
        if corner == 0 {
            ky_index
        } else {
            self.height - self.modes_y + ky_index
        }
    }

    /// Unnormalised forward DFT of `channels` real planes, restricted to the
    /// retained modes.
    pub fn forward(&self, planes: &[f64], channels: usize) -> Vec<Complex64> {
        let (h, w, mx, my) = (self.height, self.width, self.modes_x, self.modes_y);
        let n = h * w;
        debug_assert_eq!(planes.len(), channels * n);
        let mut line = self.r2c_w.make_input_vec();
        let mut half = self.r2c_w.make_output_vec();
        let mut scratch = self.r2c_w.make_scratch_vec();
        let mut cols = vec![Complex64::default(); channels * mx * h];
        for c in 0..channels {
            for y in 0..h {
                line.copy_from_slice(&planes[c * n + y * w..c * n + (y + 1) * w]);
                self.r2c_w
                    .process_with_scratch(&mut line, &mut half, &mut scratch)
                    .expect("buffer lengths come from the plan");
                for (kx, v) in half[..mx].iter().enumerate() {
                    cols[(c * mx + kx) * h + y] = *v;
                }
            }
        }
        self.fft_h.process(&mut cols);

        let per = self.n_modes();
        let mut out = vec![Complex64::default(); channels * per];
        for c in 0..channels {
            for corner in 0..2 {
                for j in 0..my {
                    let ky = self.ky(corner, j);
                    for kx in 0..mx {
                        out[((corner * my + j) * mx + kx) * channels + c] = cols[(c * mx + kx) * h + ky];
                    }
                }
            }
        }
        out
    }

    /// `Re Σ_k scale(kx) · Y(k) · e^{+iθ(k, p)}` over the retained modes, for
    /// each channel.
    ///
    /// With `scale(0) = 1/N`, `scale(kx>0) = 2/N` this is the inverse real
    /// transform of the half spectrum (Hermitian completion of the missing
    /// half). With `scale ≡ 1` it is the adjoint of [`SpectralPlan::forward`].
    pub fn inverse(&self, modes: &[Complex64], channels: usize, scale: impl Fn(usize) -> f64) -> Vec<f64> {
        let (h, w, mx, my) = (self.height, self.width, self.modes_x, self.modes_y);
        let n = h * w;
        let per = self.n_modes();
        debug_assert_eq!(modes.len(), channels * per);
        let mut cols = vec![Complex64::default(); channels * mx * h];
        for c in 0..channels {
            for corner in 0..2 {
                for j in 0..my {
                    let ky = self.ky(corner, j);
                    for kx in 0..mx {
                        cols[(c * mx + kx) * h + ky] = modes[((corner * my + j) * mx + kx) * channels + c];
                    }
                }
            }
        }
        self.ifft_h.process(&mut cols);

        // Re Σ R(kx) e^{iθ} is the real inverse of the half spectrum
        // H(0) = Re R(0), H(kx) = R(kx)/2. Since modes_x ≤ W/2 the Nyquist bin
        // stays zero.
        let scales: Vec<f64> = (0..mx).map(|kx| if kx == 0 { scale(0) } else { 0.5 * scale(kx) }).collect();
        let mut half = self.c2r_w.make_input_vec();
        let mut line = self.c2r_w.make_output_vec();
        let mut scratch = self.c2r_w.make_scratch_vec();
        let mut out = vec![0.0; channels * n];
        for c in 0..channels {
            for y in 0..h {
                half.fill(Complex64::default());
                for kx in 0..mx {
                    half[kx] = cols[(c * mx + kx) * h + y] * scales[kx];
                }
                half[0].im = 0.0;
                self.c2r_w
                    .process_with_scratch(&mut half, &mut line, &mut scratch)
                    .expect("buffer lengths come from the plan");
                out[c * n + y * w..c * n + (y + 1) * w].copy_from_slice(&line);
            }
        }
        out
    }

    /// Scale of the half-spectrum inverse real transform.
    pub fn synthesis_scale(&self, kx: usize) -> f64 {
        let n = (self.height * self.width) as f64;
        if kx == 0 {
            1.0 / n
        } else {
            2.0 / n
        }
    }
}

/// Full complex 2-D DFT of a row-major grid, unnormalised in both directions.
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let (row, col) = if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        };
        Self {
            height,
            width,
            row,
            col,
        }
    }

    pub fn process(&self, data: &mut [Complex64]) {
        let (h, w) = (self.height, self.width);
        self.row.process(data);
        let mut t = vec![Complex64::default(); h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = data[y * w + x];
            }
        }
        self.col.process(&mut t);
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = t[x * h + y];
            }
        }
    }
}

/// Signed integer frequency of DFT bin `k` on an `n`-point axis.
pub(crate) fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(plane: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> Complex64 {
        let mut acc = Complex64::default();
        for y in 0..h {
            for x in 0..w {
                let th = -2.0 * PI * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                acc += Complex64::from_polar(plane[y * w + x], th);
            }
        }
        acc
    }

    #[test]
    fn forward_matches_naive_dft() {
        let (h, w) = (6, 8);
        let plan = SpectralPlan::new(h, w, 2, 3);
        let plane: Vec<f64> = (0..h * w).map(|i| ((i * 7 + 3) % 11) as f64 * 0.1 - 0.4).collect();
        let modes = plan.forward(&plane, 1);
        for corner in 0..2 {
            for j in 0..2 {
                for kx in 0..3 {
                    let got = modes[(corner * 2 + j) * 3 + kx];
                    let want = naive_dft(&plane, h, w, plan.ky(corner, j), kx);
                    assert!((got - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_layout_is_mode_major() {
        let (h, w) = (6, 5);
        let plan = SpectralPlan::new(h, w, 2, 2);
        let planes: Vec<f64> = (0..3 * h * w).map(|i| ((i * 5 + 1) % 13) as f64 * 0.1).collect();
        let modes = plan.forward(&planes, 3);
        for c in 0..3 {
            let plane = &planes[c * h * w..(c + 1) * h * w];
            for corner in 0..2 {
                for j in 0..2 {
                    for kx in 0..2 {
                        let got = modes[((corner * 2 + j) * 2 + kx) * 3 + c];
                        let want = naive_dft(plane, h, w, plan.ky(corner, j), kx);
                        assert!((got - want).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_is_adjoint_of_forward() {
        let (h, w) = (8, 8);
        let plan = SpectralPlan::new(h, w, 3, 2);
        let a: Vec<f64> = (0..2 * h * w).map(|i| ((i * 13 + 5) % 17) as f64 / 17.0 - 0.5).collect();
        let modes: Vec<Complex64> = (0..2 * plan.n_modes())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()))
            .collect();
        // <F a, m>_real == <a, F* m>
        let fa = plan.forward(&a, 2);
        let lhs: f64 = fa.iter().zip(&modes).map(|(p, q)| p.re * q.re + p.im * q.im).sum();
        let adj = plan.inverse(&modes, 2, |_| 1.0);
        let rhs: f64 = a.iter().zip(&adj).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn band_limited_round_trip() {
        let (h, w) = (8, 8);
        let plan = SpectralPlan::new(h, w, 2, 2);
        let plane: Vec<f64> = (0..h * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                0.3 + (2.0 * PI * x / 8.0).cos() - 0.5 * (2.0 * PI * (x + y) / 8.0).sin()
            })
            .collect();
        let modes = plan.forward(&plane, 1);
        let back = plan.inverse(&modes, 1, |kx| plan.synthesis_scale(kx));
        for (a, b) in plane.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft2_round_trip() {
        let (h, w) = (4, 6);
        let orig: Vec<Complex64> = (0..h * w).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut data = orig.clone();
        Fft2::new(h, w, false).process(&mut data);
        assert!((data[0] - orig.iter().sum::<Complex64>()).norm() < 1e-9);
        Fft2::new(h, w, true).process(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a / (h * w) as f64 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_frequencies() {
        let f: Vec<f64> = (0..6).map(|k| signed_frequency(k, 6)).collect();
        assert_eq!(f, vec![0.0, 1.0, 2.0, 3.0, -2.0, -1.0]);
    }
}
