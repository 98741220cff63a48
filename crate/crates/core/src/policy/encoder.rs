//! Convolutional encoder: per stage conv → relu → max-pool → dropout
//! (→ batch norm), then an optional dense projection with relu.

use rand::Rng;

use super::linalg::{affine, matvec_t_acc, outer_acc};
use super::params::PolicyConfig;
use super::PolicyModel;
use crate::grid::Shape;

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    fn vol(self) -> usize {
        self.d * self.h * self.w
    }
}

/// Valid output index range for a kernel offset `off` over length `n`.
#[inline]
fn span(off: isize, n: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Same-padded stride-1 convolution over `(cin, d, h, w)`.
pub(crate) fn conv_forward(
    x: &[f64],
    cin: usize,
    dims: Dims,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    k: (usize, usize, usize),
) -> Vec<f64> {
    let (kd, kh, kw) = k;
    let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let plane = dims.h * dims.w;
    let vol = dims.vol();
    let mut out = vec![0.0; cout * vol];
    for co in 0..cout {
        let o = &mut out[co * vol..(co + 1) * vol];
        o.fill(bias[co]);
        for ci in 0..cin {
            let xi = &x[ci * vol..(ci + 1) * vol];
            for a in 0..kd {
                let dz = a as isize - pd;
                let (z0, z1) = span(dz, dims.d);
                for b in 0..kh {
                    let dy = b as isize - ph;
                    let (y0, y1) = span(dy, dims.h);
                    for c in 0..kw {
                        let wv = weight[(((co * cin + ci) * kd + a) * kh + b) * kw + c];
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = c as isize - pw;
                        let (x0, x1) = span(dx, dims.w);
                        for z in z0..z1 {
                            let zi = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let yi = (y as isize + dy) as usize;
                                let orow = &mut o[z * plane + y * dims.w + x0..z * plane + y * dims.w + x1];
                                let start = zi * plane + yi * dims.w + (x0 as isize + dx) as usize;
                                let irow = &xi[start..start + (x1 - x0)];
                                for (ov, iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and optionally the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    cin: usize,
    dims: Dims,
    weight: &[f64],
    cout: usize,
    k: (usize, usize, usize),
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (kd, kh, kw) = k;
    let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let plane = dims.h * dims.w;
    let vol = dims.vol();
    for co in 0..cout {
        let g = &dout[co * vol..(co + 1) * vol];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let xi = &x[ci * vol..(ci + 1) * vol];
            for a in 0..kd {
                let dz = a as isize - pd;
                let (z0, z1) = span(dz, dims.d);
                for b in 0..kh {
                    let dy = b as isize - ph;
                    let (y0, y1) = span(dy, dims.h);
                    for c in 0..kw {
                        let widx = (((co * cin + ci) * kd + a) * kh + b) * kw + c;
                        let wv = weight[widx];
                        let dxo = c as isize - pw;
                        let (x0, x1) = span(dxo, dims.w);
                        let mut acc = 0.0;
                        for z in z0..z1 {
                            let zi = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let yi = (y as isize + dy) as usize;
                                let grow = &g[z * plane + y * dims.w + x0..z * plane + y * dims.w + x1];
                                let start = zi * plane + yi * dims.w + (x0 as isize + dxo) as usize;
                                let irow = &xi[start..start + (x1 - x0)];
                                acc += super::linalg::dot(grow, irow);
                                if let Some(dx) = dx.as_deref_mut() {
                                    let drow = &mut dx[ci * vol + start..ci * vol + start + (x1 - x0)];
                                    for (dv, gv) in drow.iter_mut().zip(grow) {
                                        *dv += wv * gv;
                                    }
                                }
                            }
                        }
                        dweight[widx] += acc;
                    }
                }
            }
        }
    }
}

/// 2× max-pool in h and w, and in d when `d > 1`. Returns the pooled values
/// and the flat input index of each maximum (first one on ties).
pub(crate) fn max_pool(x: &[f64], c: usize, dims: Dims) -> (Vec<f64>, Vec<u32>, Dims) {
    let od = if dims.d > 1 { dims.d / 2 } else { 1 };
    let sd = if dims.d > 1 { 2 } else { 1 };
    let out_dims = Dims { d: od, h: dims.h / 2, w: dims.w / 2 };
    let ovol = out_dims.vol();
    let vol = dims.vol();
    let plane = dims.h * dims.w;
    let mut out = vec![0.0; c * ovol];
    let mut arg = vec![0u32; c * ovol];
    for ch in 0..c {
        for z in 0..od {
            for y in 0..out_dims.h {
                for xx in 0..out_dims.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for a in 0..sd {
                        for b in 0..2 {
                            for e in 0..2 {
                                let i = ch * vol + (z * sd + a) * plane + (y * 2 + b) * dims.w + xx * 2 + e;
                                if x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = ch * ovol + (z * out_dims.h + y) * out_dims.w + xx;
                    out[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    (out, arg, out_dims)
}

/// Inverted-dropout mask: entries are 0 or 1/(1−p).
pub(crate) fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

#[derive(Clone, Debug)]
pub(crate) struct StageCache {
    input: Vec<f64>,
    dims: Dims,
    /// Post-relu conv output.
    act: Vec<f64>,
    arg: Vec<u32>,
    pooled_dims: Dims,
    drop: Option<Vec<f64>>,
    /// Normalized values before the BN affine map.
    xhat: Option<Vec<f64>>,
}

/// Per-channel `(mean, var)` of a BN input, for running statistics.
pub type BnStats = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug)]
pub(crate) struct EncoderCache {
    stages: Vec<StageCache>,
    flat: Vec<f64>,
    proj_drop: Option<Vec<f64>>,
    pub bn_stats: BnStats,
}

/// Encoder output together with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct EncodedShape {
    pub(crate) cache: EncoderCache,
    pub feat: Vec<f64>,
    /// Feature part of the GRU input gates, `W_ih[:, :d_enc] · feat`.
    pub(crate) gi_feat: Vec<f64>,
}

impl EncodedShape {
    /// Feeds the relu on/off pattern and the pooling winners to `h`.
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        for st in &self.cache.stages {
            hash_mask(&st.act, h);
            for &a in &st.arg {
                h.write_u32(a);
            }
        }
        hash_mask(&self.feat, h);
    }
}

pub(crate) fn hash_mask<H: std::hash::Hasher>(xs: &[f64], h: &mut H) {
    for chunk in xs.chunks(64) {
        let bits = chunk.iter().enumerate().fold(0u64, |b, (i, &x)| b | (u64::from(x > 0.0) << i));
        h.write_u64(bits);
    }
}

pub(crate) fn shape_input(cfg: &PolicyConfig, shape: &Shape) -> Vec<f64> {
    match shape {
        Shape::Flat(g) => g.to_f64(),
        Shape::Voxel(v) => {
            debug_assert_eq!(cfg.depth_of_input(), 64);
            v.to_f64_dhw()
        }
    }
}

impl PolicyModel {
    /// Forward pass; with `rng` set, dropout is active.
    pub(crate) fn encode_with<R: Rng + ?Sized>(&self, shape: &Shape, mut rng: Option<&mut R>) -> EncodedShape {
        let cfg = &self.config;
        let p = &self.params;
        let k = cfg.kernel();
        let mut x = shape_input(cfg, shape);
        let (d0, h0, w0) = cfg.stage_dims(0);
        let mut dims = Dims { d: d0, h: h0, w: w0 };
        let mut stages = Vec::with_capacity(cfg.conv_widths.len());
        let mut bn_stats = Vec::new();
        for slot in &self.layout.convs {
            let wlen = slot.cout * slot.cin * k.0 * k.1 * k.2;
            let mut act = conv_forward(
                &x,
                slot.cin,
                dims,
                &p[slot.weight..slot.weight + wlen],
                &p[slot.bias..slot.bias + slot.cout],
                slot.cout,
                k,
            );
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let (mut pooled, arg, pooled_dims) = max_pool(&act, slot.cout, dims);
            let drop = match rng.as_deref_mut() {
                Some(r) if cfg.dropout > 0.0 => {
                    let m = dropout_mask(pooled.len(), cfg.dropout, r);
                    pooled.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                    Some(m)
                }
                _ => None,
            };
            let xhat = slot.bn.map(|(g, b, buf)| {
                let n = pooled_dims.vol();
                let c = slot.cout;
                let mut stats = (vec![0.0; c], vec![0.0; c]);
                let mut xhat = vec![0.0; pooled.len()];
                for ch in 0..c {
                    let seg = &mut pooled[ch * n..(ch + 1) * n];
                    let mean = seg.iter().sum::<f64>() / n as f64;
                    let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    stats.0[ch] = mean;
                    stats.1[ch] = var;
                    let rm = self.buffers[buf + ch];
                    let rv = self.buffers[buf + c + ch];
                    let inv = 1.0 / (rv + BN_EPS).sqrt();
                    for (i, v) in seg.iter_mut().enumerate() {
                        let xh = (*v - rm) * inv;
                        xhat[ch * n + i] = xh;
                        *v = p[g + ch] * xh + p[b + ch];
                    }
                }
                bn_stats.push(stats);
                xhat
            });
            stages.push(StageCache { input: x, dims, act, arg, pooled_dims, drop, xhat });
            x = pooled;
            dims = pooled_dims;
        }
        let flat = x;
        let (feat, proj_drop) = match self.layout.proj {
            Some((w, b)) => {
                let mut f = vec![0.0; cfg.d_enc];
                affine(&p[w..w + cfg.d_enc * flat.len()], &p[b..b + cfg.d_enc], &flat, &mut f);
                f.iter_mut().for_each(|v| *v = v.max(0.0));
                let drop = match rng {
                    Some(r) if cfg.dropout > 0.0 => {
                        let m = dropout_mask(f.len(), cfg.dropout, r);
                        f.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                        Some(m)
                    }
                    _ => None,
                };
                (f, drop)
            }
            None => (flat.clone(), None),
        };
        let gi_feat = self.gate_input_from_feat(&feat);
        EncodedShape { cache: EncoderCache { stages, flat, proj_drop, bn_stats }, feat, gi_feat }
    }

    pub(crate) fn gate_input_from_feat(&self, feat: &[f64]) -> Vec<f64> {
        let cfg = &self.config;
        let cols = cfg.d_enc + cfg.d_emb;
        let w = &self.params[self.layout.w_ih..];
        (0..3 * cfg.d_h)
            .map(|i| super::linalg::dot(&w[i * cols..i * cols + cfg.d_enc], feat))
            .collect()
    }

    /// Backpropagates `dfeat` through the encoder into `grads`.
    pub(crate) fn encoder_backward(&self, enc: &EncodedShape, dfeat: &[f64], grads: &mut [f64]) {
        let cfg = &self.config;
        let p = &self.params;
        let cache = &enc.cache;
        let mut dflat = match self.layout.proj {
            Some((w, b)) => {
                let mut da: Vec<f64> = dfeat.to_vec();
                if let Some(m) = &cache.proj_drop {
                    da.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
                }
                // feat > 0 exactly where the relu was active (mask values are positive)
                da.iter_mut().zip(&enc.feat).for_each(|(d, f)| {
                    if *f <= 0.0 {
                        *d = 0.0
                    }
                });
                let n = cache.flat.len();
                outer_acc(&da, &cache.flat, &mut grads[w..w + cfg.d_enc * n]);
                for (g, d) in grads[b..b + cfg.d_enc].iter_mut().zip(&da) {
                    *g += d;
                }
                let mut dflat = vec![0.0; n];
                matvec_t_acc(&p[w..w + cfg.d_enc * n], &da, &mut dflat);
                dflat
            }
            None => dfeat.to_vec(),
        };
        let k = cfg.kernel();
        for (si, (slot, st)) in self.layout.convs.iter().zip(&cache.stages).enumerate().rev() {
            let n = st.pooled_dims.vol();
            if let (Some((g, b, buf)), Some(xhat)) = (slot.bn, &st.xhat) {
                for ch in 0..slot.cout {
                    let inv = 1.0 / (self.buffers[buf + slot.cout + ch] + BN_EPS).sqrt();
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for i in ch * n..(ch + 1) * n {
                        dg += dflat[i] * xhat[i];
                        db += dflat[i];
                        dflat[i] *= p[g + ch] * inv;
                    }
                    grads[g + ch] += dg;
                    grads[b + ch] += db;
                }
            }
            if let Some(m) = &st.drop {
                dflat.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
            }
            let mut dact = vec![0.0; st.act.len()];
            for (o, &i) in st.arg.iter().enumerate() {
                let i = i as usize;
                if st.act[i] > 0.0 {
                    dact[i] += dflat[o];
                }
            }
            let wlen = slot.cout * slot.cin * k.0 * k.1 * k.2;
            let mut dx = (si > 0).then(|| vec![0.0; st.input.len()]);
            let (head, tail) = grads.split_at_mut(slot.bias);
            conv_backward(
                &st.input,
                slot.cin,
                st.dims,
                &p[slot.weight..slot.weight + wlen],
                slot.cout,
                k,
                &dact,
                &mut head[slot.weight..slot.weight + wlen],
                &mut tail[..slot.cout],
                dx.as_deref_mut(),
            );
            match dx {
                Some(d) => dflat = d,
                None => break,
            }
        }
    }
}
