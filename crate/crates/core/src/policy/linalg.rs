//! Dense kernels over row-major `f64` slices.

/// `out = W x + b` for `W` of shape `(out.len(), x.len())`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w.len(), out.len() * n);
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + dot(&w[i * n..(i + 1) * n], x);
    }
}

/// `dx += Wᵀ d`.
pub fn matvec_t_acc(w: &[f64], d: &[f64], dx: &mut [f64]) {
    let n = dx.len();
    debug_assert_eq!(w.len(), d.len() * n);
    for (i, &di) in d.iter().enumerate() {
        if di != 0.0 {
            axpy(di, &w[i * n..(i + 1) * n], dx);
        }
    }
}

/// `dW += d xᵀ`.
pub fn outer_acc(d: &[f64], x: &[f64], dw: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(dw.len(), d.len() * n);
    for (i, &di) in d.iter().enumerate() {
        if di != 0.0 {
            axpy(di, x, &mut dw[i * n..(i + 1) * n]);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log softmax`, computed without forming tiny probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_loops() {
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = [0.1, 0.2, 0.3];
        let mut out = [0.0; 3];
        affine(&w, &b, &x, &mut out);
        for i in 0..3 {
            let naive: f64 = b[i] + (0..4).map(|j| w[i * 4 + j] * x[j]).sum::<f64>();
            assert!((out[i] - naive).abs() < 1e-12);
        }
        let d = [1.0, -1.0, 2.0];
        let mut dx = [0.0; 4];
        matvec_t_acc(&w, &d, &mut dx);
        for j in 0..4 {
            let naive: f64 = (0..3).map(|i| w[i * 4 + j] * d[i]).sum();
            assert!((dx[j] - naive).abs() < 1e-12);
        }
        let mut dw = vec![0.0; 12];
        outer_acc(&d, &x, &mut dw);
        assert_eq!(dw[4 + 2], -0.5);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p: Vec<f64> = log_softmax(&[1000.0, 1000.0, -1000.0]).iter().map(|l| l.exp()).collect();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
        let lp = log_softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert!((lp[2] + 4f64.ln()).abs() < 1e-15);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
