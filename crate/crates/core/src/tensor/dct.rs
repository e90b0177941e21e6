//! Orthonormal type-II DCT applied independently to each 8x8 block.
//!
//! The transform matches the JPEG FDCT normalization, so the standard
//! quantization tables apply to these coefficients directly. Spatial extents
//! that are not multiples of 8 are reflect-padded up.

use std::f32::consts::PI;

/// 8x8 orthonormal DCT matrix, `m[k][n] = c_k cos((2n+1) k pi / 16)`.
fn dct_matrix() -> [[f32; 8]; 8] {
    let mut m = [[0.0f32; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let ck = if k == 0 { (1.0f32 / 8.0).sqrt() } else { (2.0f32 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = ck * ((2.0 * n as f32 + 1.0) * k as f32 * PI / 16.0).cos();
        }
    }
    m
}

/// Symmetric reflection of index `i` into `[0, n)`.
pub fn reflect_index(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let m = i % period;
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

/// Extent rounded up to the next multiple of 8.
pub fn padded_extent(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn transform_blocks(src: &[f32], h: usize, w: usize, m: &[[f32; 8]; 8], inverse: bool, out: &mut [f32]) {
    let (hp, wp) = (padded_extent(h), padded_extent(w));
    debug_assert_eq!(out.len(), hp * wp);
    let mut block = [0.0f32; 64];
    let mut tmp = [0.0f32; 64];
    for by in (0..hp).step_by(8) {
        for bx in (0..wp).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    let sy = reflect_index(by + y, h);
                    let sx = reflect_index(bx + x, w);
                    block[y * 8 + x] = src[sy * w + sx];
                }
            }
            // rows: tmp = block * M^T (forward) or block * M (inverse)
            for y in 0..8 {
                for k in 0..8 {
                    let mut acc = 0.0;
                    for n in 0..8 {
                        let c = if inverse { m[n][k] } else { m[k][n] };
                        acc += block[y * 8 + n] * c;
                    }
                    tmp[y * 8 + k] = acc;
                }
            }
            // columns
            for k in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for n in 0..8 {
                        let c = if inverse { m[n][k] } else { m[k][n] };
                        acc += tmp[n * 8 + x] * c;
                    }
                    out[(by + k) * wp + bx + x] = acc;
                }
            }
        }
    }
}

/// Blockwise DCT of a single `h x w` channel. Returns coefficients of the
/// reflect-padded plane, extents rounded up to multiples of 8.
pub fn dct8_plane(src: &[f32], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let m = dct_matrix();
    let mut out = vec![0.0; padded_extent(h) * padded_extent(w)];
    transform_blocks(src, h, w, &m, false, &mut out);
    out
}

/// Inverse of [`dct8_plane`]; `h` and `w` must be multiples of 8.
pub fn idct8_plane(coeffs: &[f32], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(h % 8, 0);
    assert_eq!(w % 8, 0);
    assert_eq!(coeffs.len(), h * w);
    let m = dct_matrix();
    let mut out = vec![0.0; h * w];
    transform_blocks(coeffs, h, w, &m, true, &mut out);
    out
}

/// Fold gradients of a reflect-padded plane back onto the source extents.
pub fn fold_reflect_pad(gpadded: &[f32], h: usize, w: usize, gin: &mut [f32]) {
    let (hp, wp) = (padded_extent(h), padded_extent(w));
    debug_assert_eq!(gpadded.len(), hp * wp);
    for y in 0..hp {
        let sy = reflect_index(y, h);
        for x in 0..wp {
            let sx = reflect_index(x, w);
            gin[sy * w + sx] += gpadded[y * wp + x];
        }
    }
}
