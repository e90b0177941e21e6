//! Raw forward/backward kernels on plain slices.
//!
//! Convolutions go through im2col + a row-major GEMM whose inner loops run
//! over the spatial axis, so they stay long and contiguous regardless of
//! layer depth.

/// Output spatial extent of a convolution.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Lowered patch matrix `[c_in*kh*kw, ho*wo]`: row `(ci*kh+ky)*kw+kx` holds
/// `x[ci, oy*s+ky-p, ox*s+kx-p]` for every output position, zeros where the
/// tap falls outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    let mut b = vec![0.0f32; c_in * kh * kw * ho * wo];
    for ci in 0..c_in {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut b[((ci * kh + ky) * kw + kx) * ho * wo
                    ..((ci * kh + ky) * kw + kx + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue; // left zeroed
                    }
                    let xrow = &xp[iy as usize * w..(iy as usize + 1) * w];
                    let orow = &mut row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        // ix = ox + kx - pad; copy the contiguous valid span
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(wo);
                        if ox_lo < ox_hi {
                            let ix0 = ox_lo + kx - pad;
                            orow[ox_lo..ox_hi].copy_from_slice(&xrow[ix0..ix0 + ox_hi - ox_lo]);
                        }
                    } else {
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    b
}

/// Scatter-add the lowered gradient matrix back onto the input planes
/// (adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gin: &mut [f32],
) {
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    for ci in 0..c_in {
        let gp = &mut gin[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * ho * wo
                    ..((ci * kh + ky) * kw + kx + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let grow = &mut gp[iy as usize * w..(iy as usize + 1) * w];
                    let crow = &row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(wo);
                        if ox_lo < ox_hi {
                            let ix0 = ox_lo + kx - pad;
                            for (g, &v) in
                                grow[ix0..ix0 + ox_hi - ox_lo].iter_mut().zip(&crow[ox_lo..ox_hi])
                            {
                                *g += v;
                            }
                        }
                    } else {
                        for (ox, &v) in crow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                grow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`, row-major, AXPY over the n axis.
fn gemm_axpy_add(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in crow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]` (a stored `[k, m]`).
fn gemm_at_b_add(a: &[f32], k: usize, m: usize, b: &[f32], n: usize, c: &mut [f32]) {
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (o, &bv) in crow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`: dot products of long rows.
fn gemm_abt_add(a: &[f32], m: usize, n: usize, b: &[f32], k: usize, c: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0f32;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            crow[kk] += acc;
        }
    }
}

/// `out[co,oy,ox] = bias[co] + sum_ci,ky,kx w[co,ci,ky,kx] * x[ci, oy*s+ky-p, ox*s+kx-p]`
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    out: &mut [f32],
) {
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    debug_assert_eq!(out.len(), c_out * ho * wo);
    let cols = im2col(x, c_in, h, w, kh, kw, stride, pad);
    if let Some(b) = bias {
        for co in 0..c_out {
            out[co * ho * wo..(co + 1) * ho * wo].fill(b[co]);
        }
    } else {
        out.fill(0.0);
    }
    gemm_axpy_add(weight, c_out, c_in * kh * kw, &cols, ho * wo, out);
}

/// Gradient of conv2d w.r.t. its input, accumulated into `gin`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    gout: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gin: &mut [f32],
) {
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    let patch = c_in * kh * kw;
    let mut gcols = vec![0.0f32; patch * ho * wo];
    gemm_at_b_add(weight, c_out, patch, gout, ho * wo, &mut gcols);
    col2im_add(&gcols, c_in, h, w, kh, kw, stride, pad, gin);
}

/// Gradient of conv2d w.r.t. its weights (and bias when present), accumulated.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_weight(
    gout: &[f32],
    x: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gweight: &mut [f32],
    gbias: Option<&mut [f32]>,
) {
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    let cols = im2col(x, c_in, h, w, kh, kw, stride, pad);
    gemm_abt_add(gout, c_out, ho * wo, &cols, c_in * kh * kw, gweight);
    if let Some(gb) = gbias {
        for co in 0..c_out {
            gb[co] += gout[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f32>();
        }
    }
}

pub fn dense_forward(x: &[f32], weight: &[f32], bias: Option<&[f32]>, n_out: usize, out: &mut [f32]) {
    let n_in = x.len();
    for o in 0..n_out {
        let row = &weight[o * n_in..(o + 1) * n_in];
        let mut acc = bias.map_or(0.0, |b| b[o]);
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[o] = acc;
    }
}

pub fn dense_backward(
    gout: &[f32],
    x: &[f32],
    weight: &[f32],
    gin: Option<&mut [f32]>,
    gweight: Option<&mut [f32]>,
    gbias: Option<&mut [f32]>,
) {
    let n_in = x.len();
    let n_out = gout.len();
    if let Some(gi) = gin {
        for o in 0..n_out {
            let gv = gout[o];
            let row = &weight[o * n_in..(o + 1) * n_in];
            for (g, &wv) in gi.iter_mut().zip(row) {
                *g += gv * wv;
            }
        }
    }
    if let Some(gw) = gweight {
        for o in 0..n_out {
            let gv = gout[o];
            let grow = &mut gw[o * n_in..(o + 1) * n_in];
            for (g, &xv) in grow.iter_mut().zip(x) {
                *g += gv * xv;
            }
        }
    }
    if let Some(gb) = gbias {
        for (g, &gv) in gb.iter_mut().zip(gout) {
            *g += gv;
        }
    }
}

pub fn avg_pool2_forward(x: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f32;
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        let op = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += xp[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                op[oy * wo + ox] = acc * inv;
            }
        }
    }
}

pub fn avg_pool2_backward(gout: &[f32], c: usize, h: usize, w: usize, k: usize, gin: &mut [f32]) {
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f32;
    for ch in 0..c {
        let gp = &gout[ch * ho * wo..(ch + 1) * ho * wo];
        let gi = &mut gin[ch * h * w..(ch + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = gp[oy * wo + ox] * inv;
                for dy in 0..k {
                    for dx in 0..k {
                        gi[(oy * k + dy) * w + ox * k + dx] += gv;
                    }
                }
            }
        }
    }
}

pub fn upsample2_forward(x: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (ho, wo) = (2 * h, 2 * w);
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        let op = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for y in 0..ho {
            let xrow = &xp[(y / 2) * w..(y / 2 + 1) * w];
            let orow = &mut op[y * wo..(y + 1) * wo];
            for x_pos in 0..wo {
                orow[x_pos] = xrow[x_pos / 2];
            }
        }
    }
}

pub fn upsample2_backward(gout: &[f32], c: usize, h: usize, w: usize, gin: &mut [f32]) {
    let (ho, wo) = (2 * h, 2 * w);
    for ch in 0..c {
        let gp = &gout[ch * ho * wo..(ch + 1) * ho * wo];
        let gi = &mut gin[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            let grow = &gp[y * wo..(y + 1) * wo];
            let irow = &mut gi[(y / 2) * w..(y / 2 + 1) * w];
            for x_pos in 0..wo {
                irow[x_pos / 2] += grow[x_pos];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_identity_kernel_row() {
        // 1x1 kernel, no pad: the single im2col row is the image itself.
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let cols = im2col(&x, 1, 3, 4, 1, 1, 1, 0);
        assert_eq!(cols, x);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random-ish vectors.
        let x: Vec<f32> = (0..2 * 5 * 6).map(|v| ((v * 7 + 3) % 11) as f32 - 5.0).collect();
        let cols = im2col(&x, 2, 5, 6, 3, 3, 1, 1);
        let c: Vec<f32> = (0..cols.len()).map(|v| ((v * 13 + 1) % 17) as f32 - 8.0).collect();
        let lhs: f64 = cols.iter().zip(&c).map(|(&a, &b)| (a * b) as f64).sum();
        let mut back = vec![0.0f32; x.len()];
        col2im_add(&c, 2, 5, 6, 3, 3, 1, 1, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(&a, &b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut up = vec![0.0; 48];
        upsample2_forward(&x, 1, 3, 4, &mut up);
        let mut back = vec![0.0; 12];
        avg_pool2_forward(&up, 1, 6, 8, 2, &mut back);
        assert_eq!(x, back);
    }
}
