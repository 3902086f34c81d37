//! Pointwise affine layers over channel-major planes, backed by `dgemm`.

/// `out[o][p] = Σ_i w[o][i] · x[i][p] + b[o]`.
pub(crate) fn affine(w: &[f64], b: &[f64], out_dim: usize, in_dim: usize, x: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim * n);
    let mut out = vec![0.0; out_dim * n];
    for (row, bias) in out.chunks_exact_mut(n).zip(b) {
        row.fill(*bias);
    }
    // SAFETY: all slices are sized for the strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            out_dim,
            in_dim,
            n,
            1.0,
            w.as_ptr(),
            in_dim as isize,
            1,
            x.as_ptr(),
            n as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_backward(
    w: &[f64],
    out_dim: usize,
    in_dim: usize,
    x: &[f64],
    dout: &[f64],
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(dout.len(), out_dim * n);
    debug_assert_eq!(dw.len(), out_dim * in_dim);
    for (g, row) in db.iter_mut().zip(dout.chunks_exact(n)) {
        *g += row.iter().sum::<f64>();
    }
    let mut dx = vec![0.0; in_dim * n];
    // SAFETY: strides describe dout (out×n), xᵀ (n×in), wᵀ (in×out) in place.
    unsafe {
        matrixmultiply::dgemm(
            out_dim,
            n,
            in_dim,
            1.0,
            dout.as_ptr(),
            n as isize,
            1,
            x.as_ptr(),
            1,
            n as isize,
            1.0,
            dw.as_mut_ptr(),
            in_dim as isize,
            1,
        );
        matrixmultiply::dgemm(
            in_dim,
            out_dim,
            n,
            1.0,
            w.as_ptr(),
            1,
            in_dim as isize,
            dout.as_ptr(),
            n as isize,
            1,
            0.0,
            dx.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    dx
}


const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Gaussian error linear unit in its tanh form,
/// `½x(1 + tanh(√(2/π)(x + 0.044715x³)))`, evaluated as `x·σ(2z)`.
///
/// Saturates exactly: `gelu(x) = x` for large positive `x` and `0` for large
/// negative `x`.
///
/// Returns `(gelu(x), gelu'(x))` from a single exponential; the slope is what
/// the reverse pass needs.
#[inline]
pub(crate) fn gelu_with_slope(x: f64) -> (f64, f64) {
    let z = GELU_C * (x + GELU_A * x * x * x);
    let s = 1.0 / (1.0 + exp(-2.0 * z));
    (x * s, s + x * s * (1.0 - s) * 2.0 * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
}

/// `(gelu, slope)` of every element, written into fresh vectors.
pub(crate) fn gelu_planes(z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut act = vec![0.0; z.len()];
    let mut slope = vec![0.0; z.len()];
    for ((a, s), x) in act.iter_mut().zip(slope.iter_mut()).zip(z) {
        (*a, *s) = gelu_with_slope(*x);
    }
    (act, slope)
}

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Adding and subtracting 1.5·2⁵² rounds to the nearest integer and leaves
/// that integer in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Branch-free `eˣ` with relative error below 1e-15, so the activation loops
/// vectorise. Overflows to `+∞` above 709.78 and flushes to `0` below −708
/// instead of going subnormal.
#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    let xc = x.clamp(-708.0, 709.78);
    let t = xc * LOG2_E + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series to r¹²; |r| ≤ ln2/2 keeps the remainder below 2e-16.
    let mut p = 1.0 / 479_001_600.0;
    for d in [39_916_800.0, 3_628_800.0, 362_880.0, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p * r + 1.0 / d;
    }
    let k_bits = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    // 2^(k−1)·2 keeps the exponent field valid for k = 1024.
    let half_scale = f64::from_bits(k_bits.wrapping_add(1022) << 52);
    let y = p * half_scale * 2.0;
    if x > 709.78 {
        f64::INFINITY
    } else if x < -708.0 {
        0.0
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_loops() {
        let (o, i, n) = (3, 4, 5);
        let w: Vec<f64> = (0..o * i).map(|k| k as f64 * 0.1 - 0.5).collect();
        let b = vec![1.0, -2.0, 0.5];
        let x: Vec<f64> = (0..i * n).map(|k| (k as f64).sin()).collect();
        let y = affine(&w, &b, o, i, &x, n);
        for oo in 0..o {
            for p in 0..n {
                let want: f64 = b[oo] + (0..i).map(|ii| w[oo * i + ii] * x[ii * n + p]).sum::<f64>();
                assert!((y[oo * n + p] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_backward_matches_loops() {
        let (o, i, n) = (2, 3, 4);
        let w: Vec<f64> = (0..o * i).map(|k| k as f64 * 0.3 - 0.7).collect();
        let x: Vec<f64> = (0..i * n).map(|k| (k as f64 * 0.5).cos()).collect();
        let dout: Vec<f64> = (0..o * n).map(|k| k as f64 * 0.2 - 0.3).collect();
        let mut dw = vec![0.0; o * i];
        let mut db = vec![0.0; o];
        let dx = affine_backward(&w, o, i, &x, &dout, n, &mut dw, &mut db);
        for oo in 0..o {
            for ii in 0..i {
                let want: f64 = (0..n).map(|p| dout[oo * n + p] * x[ii * n + p]).sum();
                assert!((dw[oo * i + ii] - want).abs() < 1e-12);
            }
        }
        for ii in 0..i {
            for p in 0..n {
                let want: f64 = (0..o).map(|oo| w[oo * i + ii] * dout[oo * n + p]).sum();
                assert!((dx[ii * n + p] - want).abs() < 1e-12);
            }
        }
        assert!((db[1] - dout[4..8].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn exp_matches_std() {
        let mut x: f64 = -707.9;
        while x < 709.7 {
            let want = x.exp();
            assert!((exp(x) - want).abs() <= 1e-15 * want, "{x}");
            x += 0.013_7;
        }
        for x in [0.0_f64, 1e-300, -1e-300, 0.5 * std::f64::consts::LN_2, 1.0, -1.0, 708.5, 709.7, -707.99] {
            assert!((exp(x) - x.exp()).abs() <= 1e-15 * x.exp(), "{x}");
        }
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(800.0), f64::INFINITY);
        assert_eq!(exp(-708.5), 0.0);
        assert_eq!(exp(-800.0), 0.0);
    }

    #[test]
    fn gelu_planes_match_scalar() {
        let z: Vec<f64> = (0..37).map(|i| i as f64 * 0.31 - 5.0).collect();
        let (a, s) = gelu_planes(&z);
        for (i, x) in z.iter().enumerate() {
            assert_eq!((a[i], s[i]), gelu_with_slope(*x));
        }
    }

    #[test]
    fn gelu_properties() {
        let gelu = |x: f64| gelu_with_slope(x).0;
        let gelu_derivative = |x: f64| gelu_with_slope(x).1;
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(gelu(100.0), 100.0);
        assert_eq!(gelu(-100.0), 0.0);
        assert_eq!(gelu_derivative(-100.0), 0.0);
        assert_eq!(gelu_derivative(100.0), 1.0);
        for x in [-2.0, -0.3, 0.7, 3.0] {
            assert!((gelu(x) - gelu(-x) - x).abs() < 1e-15);
            let tanh_form = 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh());
            assert!((gelu(x) - tanh_form).abs() < 1e-15);
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_derivative(x)).abs() < 1e-8);
        }
    }
}
