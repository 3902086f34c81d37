//! Training losses on flow fields.
//!
//! The Sobolev loss uses the forward DFT normalised by `1/(H·W)`, so that by
//! Parseval `Σ_n |r̂(n)|²` is the pixel mean of `r²`. Each mode is weighted by
//! `Σ_{i=0..k} (n_x² + n_y²)^i` and the result is averaged over the two flow
//! channels; at `k = 0` the loss is exactly the mean squared error.

use rustfft::num_complex::Complex64;

use super::spectral::{signed_frequency, Fft2};
use crate::error::Result;
use crate::grid::FlowField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Sobolev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Sobolev order; ignored for MSE.
    pub k: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::mse()
    }
}

impl LossConfig {
    pub fn mse() -> Self {
        Self {
            kind: LossKind::Mse,
            k: 0,
        }
    }

    pub fn sobolev(k: u32) -> Self {
        Self {
            kind: LossKind::Sobolev,
            k,
        }
    }
}

/// Weight of DFT bin `(ky, kx)` on an `h × w` grid for Sobolev order `k`.
pub fn sobolev_weight(ky: usize, kx: usize, h: usize, w: usize, k: u32) -> f64 {
    let nx = signed_frequency(kx, w);
    let ny = signed_frequency(ky, h);
    let n2 = nx * nx + ny * ny;
    (0..=k).map(|i| n2.powi(i as i32)).sum()
}

/// Mean over pixels and both channels of the squared component difference.
pub fn mse_loss(pred: &FlowField, target: &FlowField) -> Result<f64> {
    pred.ensure_same_dims(target)?;
    let total: f64 = pred
        .vectors()
        .iter()
        .zip(target.vectors())
        .map(|(p, t)| {
            let d = *p - *t;
            d.x * d.x + d.y * d.y
        })
        .sum();
    Ok(total / (2 * pred.vectors().len()) as f64)
}

/// Sobolev `H^k` loss of the residual `pred − target`, computed in Fourier space.
pub fn sobolev_loss(pred: &FlowField, target: &FlowField, k: u32) -> Result<f64> {
    pred.ensure_same_dims(target)?;
    let (w, h) = pred.dims();
    let p = super::model::flow_to_planes(pred);
    let t = super::model::flow_to_planes(target);
    Ok(loss_and_grad(&p, &t, h, w, LossConfig::sobolev(k)).0)
}

pub fn loss(pred: &FlowField, target: &FlowField, cfg: LossConfig) -> Result<f64> {
    match cfg.kind {
        LossKind::Mse => mse_loss(pred, target),
        LossKind::Sobolev => sobolev_loss(pred, target, cfg.k),
    }
}

/// Loss and its gradient with respect to `pred`, both given as `[u, v]` planes.
pub(crate) fn loss_and_grad(pred: &[f64], target: &[f64], h: usize, w: usize, cfg: LossConfig) -> (f64, Vec<f64>) {
    let n = h * w;
    debug_assert_eq!(pred.len(), 2 * n);
    let residual: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    match cfg.kind {
        LossKind::Mse => {
            let loss = residual.iter().map(|r| r * r).sum::<f64>() / (2 * n) as f64;
            let grad = residual.iter().map(|r| r / n as f64).collect();
            (loss, grad)
        }
        LossKind::Sobolev => {
            let forward = Fft2::new(h, w, false);
            let inverse = Fft2::new(h, w, true);
            let weights: Vec<f64> = (0..n).map(|i| sobolev_weight(i / w, i % w, h, w, cfg.k)).collect();
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(2 * n);
            for ch in residual.chunks_exact(n) {
                let mut spec: Vec<Complex64> = ch.iter().map(|&r| Complex64::new(r / n as f64, 0.0)).collect();
                forward.process(&mut spec);
                for (s, wt) in spec.iter_mut().zip(&weights) {
                    loss += wt * s.norm_sqr();
                    *s *= *wt;
                }
                // d/dr of ½ Σ w |r̂|² is Re(IDFT_unnormalised(w r̂)) / N.
                inverse.process(&mut spec);
                grad.extend(spec.iter().map(|s| s.re / n as f64));
            }
            (0.5 * loss, grad)
        }
    }
}
