//! Reference implementations for test oracles.
//!
//! Everything here is written for clarity, not speed: nested loops, f64
//! accumulation, no shared code with the production engine. Tests compare the
//! fast f32 implementations against these.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

/// Direct 2D cross-correlation ("conv" in NN convention), zero padding.
///
/// `input` is `[c_in, h, w]`, `kernel` is `[c_out, c_in, kh, kw]`, both
/// row-major. Returns `[c_out, ho, wo]` with `ho = (h + 2p - kh)/s + 1`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_f64(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(kernel.len(), c_out * c_in * kh * kw);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * ho * wo];
    for co in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b[co]);
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let iv = input[ci * h * w + iy as usize * w + ix as usize];
                            let kv = kernel[((co * c_in + ci) * kh + ky) * kw + kx];
                            acc += iv * kv;
                        }
                    }
                }
                out[co * ho * wo + oy * wo + ox] = acc;
            }
        }
    }
    out
}

pub fn dense_f64(input: &[f64], weight: &[f64], bias: Option<&[f64]>, n_out: usize) -> Vec<f64> {
    let n_in = input.len();
    assert_eq!(weight.len(), n_out * n_in);
    (0..n_out)
        .map(|o| {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..n_in {
                acc += weight[o * n_in + i] * input[i];
            }
            acc
        })
        .collect()
}

pub fn relu_f64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn leaky_relu_f64(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
}

pub fn sigmoid_f64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// 2x2 average pooling with stride 2; `h` and `w` must be even.
pub fn avg_pool2_f64(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    assert_eq!(input.len(), c * h * w);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += input[ch * h * w + (2 * oy + dy) * w + 2 * ox + dx];
                    }
                }
                out[ch * ho * wo + oy * wo + ox] = acc / 4.0;
            }
        }
    }
    out
}

pub fn global_avg_pool_f64(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| input[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect()
}

pub fn upsample2_f64(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out[ch * 4 * h * w + y * 2 * w + x] = input[ch * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Central finite differences of a scalar-valued function, coordinate by
/// coordinate: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_f64<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Orthonormal type-II DCT of one 8x8 block, straight from the definition.
pub fn dct8_block_direct(block: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            let cv = if v == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x]
                        * ((2.0 * y as f64 + 1.0) * v as f64 * PI / 16.0).cos()
                        * ((2.0 * x as f64 + 1.0) * u as f64 * PI / 16.0).cos();
                }
            }
            out[v * 8 + u] = cu * cv * acc;
        }
    }
    out
}

/// Inverse of [`dct8_block_direct`], also from the definition.
pub fn idct8_block_direct(coeffs: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
                    let cv = if v == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
                    acc += cu
                        * cv
                        * coeffs[v * 8 + u]
                        * ((2.0 * y as f64 + 1.0) * v as f64 * PI / 16.0).cos()
                        * ((2.0 * x as f64 + 1.0) * u as f64 * PI / 16.0).cos();
                }
            }
            out[y * 8 + x] = acc;
        }
    }
    out
}

/// AUC as the Mann-Whitney pairwise count: P(fake > real) with ties = 1/2.
pub fn auc_pairwise(real: &[f32], fake: &[f32]) -> f64 {
    assert!(!real.is_empty() && !fake.is_empty());
    let mut wins = 0.0f64;
    for &f in fake {
        for &r in real {
            if f > r {
                wins += 1.0;
            } else if f == r {
                wins += 0.5;
            }
        }
    }
    wins / (real.len() as f64 * fake.len() as f64)
}

/// TPR at the largest achievable FPR <= `target`, by exhaustive enumeration of
/// every candidate threshold (all score values plus one above the maximum).
pub fn tpr_at_fpr_exhaustive(real: &[f32], fake: &[f32], target: f64) -> f64 {
    let mut candidates: Vec<f32> = real.iter().chain(fake.iter()).copied().collect();
    candidates.push(f32::INFINITY);
    let mut best_fpr = -1.0;
    let mut best_tpr = 0.0;
    for &t in &candidates {
        let fpr = real.iter().filter(|&&s| s >= t).count() as f64 / real.len() as f64;
        let tpr = fake.iter().filter(|&&s| s >= t).count() as f64 / fake.len() as f64;
        if fpr <= target && (fpr > best_fpr || (fpr == best_fpr && tpr > best_tpr)) {
            best_fpr = fpr;
            best_tpr = tpr;
        }
    }
    best_tpr
}

/// Smallest threshold with empirical FPR <= target, by exhaustive sweep over
/// all candidate thresholds; ties resolved toward the higher threshold.
pub fn calibrate_tau_exhaustive(real: &[f32], target: f64) -> f32 {
    let mut candidates: Vec<f32> = real.to_vec();
    let max = real.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    candidates.push(next_up_f32(max));
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &candidates {
        let fpr = real.iter().filter(|&&s| s >= t).count() as f64 / real.len() as f64;
        if fpr <= target {
            return t;
        }
    }
    unreachable!("threshold above the maximum always has FPR 0");
}

/// Next representable f32 above `v` (stable substitute for f32::next_up).
pub fn next_up_f32(v: f32) -> f32 {
    if v.is_nan() || v == f32::INFINITY {
        return v;
    }
    let bits = v.to_bits();
    let next = if v == 0.0 {
        1
    } else if v > 0.0 {
        bits + 1
    } else {
        bits - 1
    };
    f32::from_bits(next)
}

/// Perturbation norms by direct summation: changed channel values, changed
/// pixels (any channel differs), Euclidean norm.
pub fn norms_direct(x: &[f32], y: &[f32], channels: usize) -> (usize, usize, f64) {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len() % channels, 0);
    let plane = x.len() / channels;
    let mut l0_values = 0;
    let mut l2_sq = 0.0f64;
    for i in 0..x.len() {
        if x[i] != y[i] {
            l0_values += 1;
        }
        let d = (x[i] - y[i]) as f64;
        l2_sq += d * d;
    }
    let mut l0_pixels = 0;
    for p in 0..plane {
        if (0..channels).any(|c| x[c * plane + p] != y[c * plane + p]) {
            l0_pixels += 1;
        }
    }
    (l0_values, l0_pixels, l2_sq.sqrt())
}

/// Sequential scalar Adam reference with bias correction.
pub struct AdamRef {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamRef {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mean energy of the 2D spectrum in octave rings `[2,4)`, `[4,8)`, `[8,16)`,
/// `[16,32)` cycles, radially averaged over a single-channel `n x n` image.
pub fn octave_band_energy(img: &[f32], n: usize) -> [f64; 4] {
    assert_eq!(img.len(), n * n);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);

    // 2D FFT: rows then columns.
    let mut buf: Vec<Complex<f64>> =
        img.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }

    let mut energy = [0.0f64; 4];
    let mut count = [0usize; 4];
    for y in 0..n {
        for x in 0..n {
            if x == 0 && y == 0 {
                continue; // skip DC
            }
            let fy = if y <= n / 2 { y as f64 } else { (n - y) as f64 };
            let fx = if x <= n / 2 { x as f64 } else { (n - x) as f64 };
            let r = (fy * fy + fx * fx).sqrt();
            let band = if r >= 2.0 && r < 4.0 {
                0
            } else if r >= 4.0 && r < 8.0 {
                1
            } else if r >= 8.0 && r < 16.0 {
                2
            } else if r >= 16.0 && r < 32.0 {
                3
            } else {
                continue;
            };
            energy[band] += buf[y * n + x].norm_sqr();
            count[band] += 1;
        }
    }
    for b in 0..4 {
        if count[b] > 0 {
            energy[b] /= count[b] as f64;
        }
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct8_roundtrip_is_identity() {
        let mut block = [0.0f64; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 37 + 11) % 64) as f64 / 64.0;
        }
        let back = idct8_block_direct(&dct8_block_direct(&block));
        for i in 0..64 {
            assert!((back[i] - block[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_pairwise_perfect_and_chance() {
        assert_eq!(auc_pairwise(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert_eq!(auc_pairwise(&[1.0, 2.0], &[1.0, 2.0]), 0.5);
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let g = finite_diff_f64(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }
}
