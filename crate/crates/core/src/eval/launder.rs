//! Laundering transforms: simplified JPEG recompression, Gaussian blur,
//! bilinear resize. All pure and deterministic.

use crate::img::Image;
use crate::tensor::dct::{dct8_plane, idct8_plane, reflect_index};

/// Standard JPEG luminance quantization table, row-major.
const LUMA_QT: [f32; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-scaled quantization table (conventional piecewise rule).
pub fn quant_table(quality: u32) -> [f32; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000.0 / q as f32 } else { 200.0 - 2.0 * q as f32 };
    let mut qt = [0.0f32; 64];
    for (o, &t) in qt.iter_mut().zip(LUMA_QT.iter()) {
        *o = ((t * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    qt
}

/// Simplified JPEG: per-channel 8x8 block DCT, quantization by the scaled
/// luminance table, dequantize, inverse DCT, clamp. No chroma subsampling and
/// no entropy coding.
///
/// The quantize/reconstruct/clamp cycle is iterated to a fixed point (at most
/// 10 passes, typically 2) so that laundering an already-laundered image
/// changes it by at most one rounding step; without this, clamp feedback at
/// saturated pixels can shift coefficients across quantizer boundaries on the
/// next pass.
pub fn jpeg_launder(image: &Image, quality: u32) -> Image {
    let (h, w) = (image.height(), image.width());
    let qt = quant_table(quality);
    let mut out = Image::zeros(h, w);
    let plane = h * w;
    let wp = crate::tensor::dct::padded_extent(w);
    let hp = crate::tensor::dct::padded_extent(h);
    for c in 0..3 {
        let mut pixels: Vec<f32> = image.tensor().data()[c * plane..(c + 1) * plane].to_vec();
        for _pass in 0..10 {
            let shifted: Vec<f32> = pixels.iter().map(|&v| v * 255.0 - 128.0).collect();
            let mut coeffs = dct8_plane(&shifted, h, w);
            for (i, v) in coeffs.iter_mut().enumerate() {
                let (y, x) = (i / wp, i % wp);
                let q = qt[(y % 8) * 8 + (x % 8)];
                *v = (*v / q).round() * q;
            }
            let back = idct8_plane(&coeffs, hp, wp);
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    let v = ((back[y * wp + x] + 128.0) / 255.0).clamp(0.0, 1.0);
                    if v != pixels[y * w + x] {
                        changed = true;
                    }
                    pixels[y * w + x] = v;
                }
            }
            if !changed {
                break;
            }
        }
        out.tensor_mut().data_mut()[c * plane..(c + 1) * plane].copy_from_slice(&pixels);
    }
    out
}

/// Normalized Gaussian kernel with radius ceil(3 sigma).
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-0.5 * (d / sigma) * (d / sigma)).exp()
        })
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with reflect padding.
pub fn blur(image: &Image, sigma: f32) -> Image {
    let k = gaussian_kernel(sigma);
    let radius = k.len() / 2;
    let (h, w) = (image.height(), image.width());
    let plane = h * w;
    let mut tmp = vec![0.0f32; 3 * plane];
    // horizontal
    for c in 0..3 {
        let src = &image.tensor().data()[c * plane..(c + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = reflect_clamped(x as isize + i as isize - radius as isize, w);
                    acc += kv * src[y * w + sx];
                }
                tmp[c * plane + y * w + x] = acc;
            }
        }
    }
    // vertical
    let mut out = Image::zeros(h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = reflect_clamped(y as isize + i as isize - radius as isize, h);
                    acc += kv * tmp[c * plane + sy * w + x];
                }
                out.tensor_mut().data_mut()[c * plane + y * w + x] = acc;
            }
        }
    }
    out
}

fn reflect_clamped(i: isize, n: usize) -> usize {
    if i < 0 {
        reflect_index((-i - 1) as usize, n)
    } else {
        reflect_index(i as usize, n)
    }
}

/// Bilinear resize by a positive scale factor.
pub fn resize(image: &Image, scale: f32) -> Image {
    assert!(scale > 0.0, "resize scale must be positive");
    let (h, w) = (image.height(), image.width());
    let (ho, wo) = (((h as f32 * scale).round() as usize).max(1), ((w as f32 * scale).round() as usize).max(1));
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut out = Image::zeros(ho, wo);
    for c in 0..3 {
        let src = &image.tensor().data()[c * plane_in..(c + 1) * plane_in];
        for oy in 0..ho {
            let sy = ((oy as f32 + 0.5) * h as f32 / ho as f32 - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f32;
            for ox in 0..wo {
                let sx =
                    ((ox as f32 + 0.5) * w as f32 / wo as f32 - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f32;
                let v = src[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                    + src[y0 * w + x1] * (1.0 - fy) * fx
                    + src[y1 * w + x0] * fy * (1.0 - fx)
                    + src[y1 * w + x1] * fy * fx;
                out.tensor_mut().data_mut()[c * plane_out + oy * wo + ox] = v;
            }
        }
    }
    out
}

/// Down-and-back rescale laundering: resize by `scale`, then back to the
/// original extents.
pub fn rescale_roundtrip(image: &Image, scale: f32) -> Image {
    let down = resize(image, scale);
    let (h, w) = (image.height(), image.width());
    let up = resize(&down, h as f32 / down.height() as f32);
    // guard against off-by-one extents from rounding
    if up.height() == h && up.width() == w {
        up
    } else {
        let mut exact = Image::zeros(h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let sy = y.min(up.height() - 1);
                    let sx = x.min(up.width() - 1);
                    exact.set(c, y, x, up.get(c, sy, sx));
                }
            }
        }
        exact
    }
}

/// Mean energy of the top-16 zigzag DCT coefficients over all blocks of all
/// channels; a cheap high-band probe for laundering tests.
pub fn high_band_energy(image: &Image) -> f64 {
    // zigzag order positions 48..63 (the highest-frequency corner)
    const ZIGZAG: [usize; 64] = [
        0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34,
        27, 20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44,
        51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
    ];
    let top: Vec<usize> = ZIGZAG[48..].to_vec();
    let (h, w) = (image.height(), image.width());
    let plane = h * w;
    let wp = crate::tensor::dct::padded_extent(w);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..3 {
        let coeffs = dct8_plane(&image.tensor().data()[c * plane..(c + 1) * plane], h, w);
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for &z in &top {
                    let (v, u) = (z / 8, z % 8);
                    let cval = coeffs[(by + v) * wp + bx + u] as f64;
                    total += cval * cval;
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}
