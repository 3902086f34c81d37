//! Reverse-mode derivatives of the batch loss with respect to every parameter.

use rustfft::num_complex::Complex64;

use super::dense::affine_backward;
use super::loss::{loss_and_grad, LossConfig};
use super::model::{flow_to_planes, ForwardCache, MnoModel};
use super::spectral::SpectralPlan;
use crate::error::{Error, Result};
use crate::grid::FlowField;

/// Mean batch loss and its gradient, laid out like [`MnoModel::params`].
pub fn gradient(
    model: &MnoModel,
    batch: &[(FlowField, FlowField)],
    loss_cfg: LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let refs: Vec<(&FlowField, &FlowField)> = batch.iter().map(|(a, b)| (a, b)).collect();
    gradient_refs(model, &refs, loss_cfg)
}

pub(crate) fn gradient_refs(
    model: &MnoModel,
    batch: &[(&FlowField, &FlowField)],
    loss_cfg: LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch".into()));
    }
    for (input, target) in batch {
        model.check_grid(input)?;
        model.check_grid(target)?;
    }
    let cfg = model.config();
    let plan = model.plan();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = vec![0.0; model.n_params()];
    let mut total = 0.0;
    // Items are accumulated strictly in batch order.
    for (input, target) in batch {
        let cache = model.forward_cached(&plan, &flow_to_planes(input));
        let (loss, mut dout) = loss_and_grad(
            &cache.output,
            &flow_to_planes(target),
            cfg.grid_h,
            cfg.grid_w,
            loss_cfg,
        );
        total += loss;
        dout.iter_mut().for_each(|g| *g *= scale);
        backward(model, &plan, &cache, &dout, &mut grads);
    }
    Ok((total * scale, grads))
}

/// Mean loss over `pairs` without gradients.
pub fn mean_loss(model: &MnoModel, pairs: &[(&FlowField, &FlowField)], loss_cfg: LossConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("loss evaluation set".into()));
    }
    let cfg = model.config();
    let plan = model.plan();
    let mut total = 0.0;
    for (input, target) in pairs {
        model.check_grid(input)?;
        model.check_grid(target)?;
        let cache = model.forward_cached(&plan, &flow_to_planes(input));
        total += loss_and_grad(&cache.output, &flow_to_planes(target), cfg.grid_h, cfg.grid_w, loss_cfg).0;
    }
    Ok(total / pairs.len() as f64)
}

/// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output`.
pub(crate) fn backward(model: &MnoModel, plan: &SpectralPlan, cache: &ForwardCache, dout: &[f64], grads: &mut [f64]) {
    let cfg = model.config();
    let (c, n, hid) = (cfg.width, cfg.n_pixels(), cfg.projection_hidden);
    let l = model.layout.clone();
    let p = model.params();

    let (dw, db) = split_pair(grads, &l.out_w, &l.out_b);
    let mut dproj = affine_backward(&p[l.out_w.clone()], 2, hid, &cache.proj_act, dout, n, dw, db);
    for (g, s) in dproj.iter_mut().zip(&cache.proj_slope) {
        *g *= s;
    }
    let last_hidden = cache.hidden.last().expect("projection input cached");
    let (dw, db) = split_pair(grads, &l.hidden_w, &l.hidden_b);
    let mut dh = affine_backward(&p[l.hidden_w.clone()], hid, c, last_hidden, &dproj, n, dw, db);

    let m = plan.n_modes();
    for bi in (0..cfg.num_blocks).rev() {
        let block = model.block(bi);
        let bl = &l.blocks[bi];
        if block.nonlinear {
            for (g, s) in dh.iter_mut().zip(&cache.slopes[bi]) {
                *g *= s;
            }
        }
        let h_in = &cache.hidden[bi];
        let (dw, db) = split_pair(grads, &bl.bypass_w, &bl.bypass_b);
        let mut dh_in = affine_backward(block.bypass_weight, c, c, h_in, &dh, n, dw, db);

        // Output of the spectral path is c2r(Y); its adjoint maps dz to
        // (c_kx / N) · DFT(dz) on the retained modes.
        let mut gy = plan.forward(&dh, c);
        for (idx, g) in gy.iter_mut().enumerate() {
            *g *= plan.synthesis_scale((idx / c) % cfg.modes_x);
        }
        let xm = &cache.modes[bi];
        let w = block.spectral_weights;
        let dspec = &mut grads[bl.spectral.clone()];
        let mut gx = vec![Complex64::default(); c * m];
        for mode in 0..m {
            let g_mode = &gy[mode * c..(mode + 1) * c];
            for i in 0..c {
                let xc = xm[mode * c + i].conj();
                let base = (mode * c + i) * c * 2;
                let mut acc = Complex64::default();
                let dw_row = &mut dspec[base..base + 2 * c];
                let w_row = &w[base..base + 2 * c];
                for ((g, dwo), wo) in g_mode.iter().zip(dw_row.chunks_exact_mut(2)).zip(w_row.chunks_exact(2)) {
                    dwo[0] += xc.re * g.re - xc.im * g.im;
                    dwo[1] += xc.re * g.im + xc.im * g.re;
                    acc.re += g.re * wo[0] + g.im * wo[1];
                    acc.im += g.im * wo[0] - g.re * wo[1];
                }
                gx[mode * c + i] = acc;
            }
        }
        let from_spectral = plan.inverse(&gx, c, |_| 1.0);
        for (a, b) in dh_in.iter_mut().zip(&from_spectral) {
            *a += b;
        }
        dh = dh_in;
    }

    let (dw, db) = split_pair(grads, &l.lifting_w, &l.lifting_b);
    affine_backward(&p[l.lifting_w.clone()], c, 2, &cache.input, &dh, n, dw, db);
}

/// Disjoint mutable views of a weight range and the bias range right after it.
fn split_pair<'a>(
    grads: &'a mut [f64],
    w: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grads[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}
