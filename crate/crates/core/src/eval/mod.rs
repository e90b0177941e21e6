//! ROC/AUC machinery, perturbation norms, laundering transforms and the
//! mean-perturbation analysis.

mod launder;
pub mod report;

pub use launder::{blur, high_band_energy, jpeg_launder, rescale_roundtrip, resize};

use thiserror::Error;

use crate::img::Image;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score lists must be nonempty (n_real={n_real}, n_fake={n_fake})")]
    EmptyScores { n_real: usize, n_fake: usize },
    #[error("norms: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("mean_perturbation needs at least 2 stored deltas, got {got}")]
    TooFewDeltas { got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub threshold: f32,
    pub fpr: f64,
    pub tpr: f64,
}

/// Full threshold sweep: ordered (FPR, TPR) points, trapezoid AUC, and the
/// operating point at a calibrated threshold when one is attached.
#[derive(Debug, Clone)]
pub struct RocReport {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub tpr_at_tau: Option<f64>,
    pub tau: Option<f32>,
    pub scores_id: String,
    pub n_real: usize,
    pub n_fake: usize,
}

/// Threshold sweep over the union of scores; equal scores collapse into a
/// single step so the trapezoid AUC equals the pairwise Mann-Whitney count
/// with ties worth 1/2.
pub fn roc(scores_real: &[f32], scores_fake: &[f32]) -> Result<RocReport, EvalError> {
    if scores_real.is_empty() || scores_fake.is_empty() {
        return Err(EvalError::EmptyScores {
            n_real: scores_real.len(),
            n_fake: scores_fake.len(),
        });
    }
    let mut all: Vec<(f32, bool)> = scores_real
        .iter()
        .map(|&s| (s, false))
        .chain(scores_fake.iter().map(|&s| (s, true)))
        .collect();
    // descending score
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));

    let (n_real, n_fake) = (scores_real.len() as f64, scores_fake.len() as f64);
    let mut points = vec![RocPoint { threshold: f32::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0.0f64;
    let mut fp = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: s, fpr: fp / n_real, tpr: tp / n_fake });
    }
    let mut auc = 0.0f64;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) / 2.0;
    }
    Ok(RocReport {
        points,
        auc,
        tpr_at_tau: None,
        tau: None,
        scores_id: String::new(),
        n_real: scores_real.len(),
        n_fake: scores_fake.len(),
    })
}

impl RocReport {
    pub fn with_id(mut self, id: &str) -> Self {
        self.scores_id = id.into();
        self
    }

    /// Attach the operating point at a calibrated threshold: TPR is the
    /// fraction of fake scores at or above tau.
    pub fn with_tau(mut self, tau: f32, scores_fake: &[f32]) -> Self {
        let tpr =
            scores_fake.iter().filter(|&&s| s >= tau).count() as f64 / scores_fake.len() as f64;
        self.tau = Some(tau);
        self.tpr_at_tau = Some(tpr);
        self
    }
}

/// TPR at the largest achievable FPR <= the requested one (step
/// interpolation along the sweep).
pub fn tpr_at_fpr(report: &RocReport, fpr: f64) -> f64 {
    let mut best = 0.0;
    for p in &report.points {
        if p.fpr <= fpr {
            best = p.tpr; // points are sorted, later qualifying points dominate
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    /// Channel values that differ.
    pub l0_values: usize,
    /// Spatial pixels where any channel differs.
    pub l0_pixels: usize,
    /// Euclidean norm of the difference.
    pub l2: f64,
}

/// Perturbation norms between two same-shaped `[C, H, W]` tensors.
pub fn norms(x: &Tensor, y: &Tensor) -> Result<Norms, EvalError> {
    if x.shape() != y.shape() {
        return Err(EvalError::ShapeMismatch { lhs: x.shape().to_vec(), rhs: y.shape().to_vec() });
    }
    let channels = if x.shape().len() == 3 { x.shape()[0] } else { 1 };
    let plane = x.len() / channels;
    let mut l0_values = 0usize;
    let mut l2_sq = 0.0f64;
    for (&a, &b) in x.data().iter().zip(y.data()) {
        if a != b {
            l0_values += 1;
        }
        let d = (a - b) as f64;
        l2_sq += d * d;
    }
    let mut l0_pixels = 0usize;
    for p in 0..plane {
        if (0..channels).any(|c| x.data()[c * plane + p] != y.data()[c * plane + p]) {
            l0_pixels += 1;
        }
    }
    Ok(Norms { l0_values, l0_pixels, l2: l2_sq.sqrt() })
}

#[derive(Debug, Clone)]
pub struct MeanPerturbation {
    /// Per-pixel mean of the deltas, affinely remapped so min -> 0 and
    /// max -> 1 (mid-gray when all deltas are zero).
    pub render: Image,
    /// Energy share of the 8x8-periodic component of the mean delta;
    /// reported, never asserted.
    pub lattice_energy_share: f64,
}

/// Contrast-normalized render of the average perturbation.
pub fn mean_perturbation(deltas: &[&Tensor]) -> Result<MeanPerturbation, EvalError> {
    if deltas.len() < 2 {
        return Err(EvalError::TooFewDeltas { got: deltas.len() });
    }
    let shape = deltas[0].shape().to_vec();
    for d in deltas {
        if d.shape() != shape {
            return Err(EvalError::ShapeMismatch {
                lhs: shape.clone(),
                rhs: d.shape().to_vec(),
            });
        }
    }
    let n = deltas[0].len();
    let mut mean = vec![0.0f64; n];
    for d in deltas {
        for (m, &v) in mean.iter_mut().zip(d.data()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= deltas.len() as f64;
    }

    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let render_data: Vec<f32> = if hi > lo {
        mean.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.5; n]
    };
    let render = Image::from_tensor(Tensor::new(shape.clone(), render_data));

    // 8x8 periodic component: average the mean delta over all 8x8 tiles and
    // compare its energy with the total.
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut share = 0.0;
    if h % 8 == 0 && w % 8 == 0 {
        let tiles = (h / 8) * (w / 8);
        let mut periodic = vec![0.0f64; c * 64];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    periodic[ch * 64 + (y % 8) * 8 + (x % 8)] += mean[ch * h * w + y * w + x];
                }
            }
        }
        for p in &mut periodic {
            *p /= tiles as f64;
        }
        let total_energy: f64 = mean.iter().map(|&v| v * v).sum();
        let periodic_energy: f64 =
            periodic.iter().map(|&v| v * v).sum::<f64>() * tiles as f64;
        if total_energy > 0.0 {
            share = periodic_energy / total_energy;
        }
    }
    Ok(MeanPerturbation { render, lattice_energy_share: share })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_has_auc_one() {
        let r = roc(&[0.0, 0.1, 0.2], &[1.0, 1.1]).unwrap();
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn identical_distributions_have_auc_half() {
        let s = [0.3f32, 0.5, 0.9, 0.1];
        let r = roc(&s, &s).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_rejects_empty() {
        assert!(matches!(roc(&[], &[1.0]), Err(EvalError::EmptyScores { .. })));
    }

    #[test]
    fn roc_points_are_monotone_from_origin_to_one() {
        let real = [0.1f32, 0.4, 0.2, 0.4, 0.35];
        let fake = [0.3f32, 0.6, 0.4, 0.8];
        let r = roc(&real, &fake).unwrap();
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        let last = r.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for pair in r.points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr);
            assert!(pair[1].tpr >= pair[0].tpr);
        }
    }

    #[test]
    fn tpr_at_fpr_endpoints() {
        let real = [0.1f32, 0.2, 0.3, 0.4];
        let fake = [0.25f32, 0.35, 0.5, 0.6];
        let r = roc(&real, &fake).unwrap();
        assert_eq!(tpr_at_fpr(&r, 1.0), 1.0);
        // fpr = 0: strictest useful threshold still catches the two fakes
        // above every real score
        assert_eq!(tpr_at_fpr(&r, 0.0), 0.5);
    }

    #[test]
    fn norms_black_to_white_pixel() {
        // one pixel from (0,0,0) to (1,1,1): l0 values 3, l0 pixels 1, l2 sqrt(3)
        let x = Tensor::zeros(vec![3, 2, 2]);
        let mut y = x.clone();
        for c in 0..3 {
            y.data_mut()[c * 4] = 1.0;
        }
        let n = norms(&x, &y).unwrap();
        assert_eq!(n.l0_values, 3);
        assert_eq!(n.l0_pixels, 1);
        assert!((n.l2 - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norms_identity_is_zero() {
        let x = Tensor::new(vec![3, 2, 2], (0..12).map(|v| v as f32).collect());
        let n = norms(&x, &x).unwrap();
        assert_eq!((n.l0_values, n.l0_pixels), (0, 0));
        assert_eq!(n.l2, 0.0);
    }

    #[test]
    fn norms_rejects_shape_mismatch() {
        let x = Tensor::zeros(vec![3, 2, 2]);
        let y = Tensor::zeros(vec![3, 4, 4]);
        assert!(matches!(norms(&x, &y), Err(EvalError::ShapeMismatch { .. })));
    }

    #[test]
    fn mean_perturbation_of_identical_deltas_remaps_that_delta() {
        let mut d = Tensor::zeros(vec![3, 8, 8]);
        d.data_mut()[0] = -0.5;
        d.data_mut()[1] = 0.5;
        let mp = mean_perturbation(&[&d, &d]).unwrap();
        let r = mp.render.tensor().data();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[1], 1.0);
        assert_eq!(r[2], 0.5);
    }

    #[test]
    fn mean_perturbation_of_zero_deltas_is_mid_gray() {
        let d = Tensor::zeros(vec![3, 8, 8]);
        let mp = mean_perturbation(&[&d, &d, &d]).unwrap();
        assert!(mp.render.tensor().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mean_perturbation_rejects_singletons() {
        let d = Tensor::zeros(vec![3, 8, 8]);
        assert!(matches!(mean_perturbation(&[&d]), Err(EvalError::TooFewDeltas { .. })));
    }

    #[test]
    fn mean_of_two_seeded_deltas_matches_hand_average() {
        let mut a = Tensor::zeros(vec![3, 8, 8]);
        let mut b = Tensor::zeros(vec![3, 8, 8]);
        a.data_mut()[5] = 0.2;
        b.data_mut()[5] = 0.6;
        b.data_mut()[9] = -0.4;
        let mp = mean_perturbation(&[&a, &b]).unwrap();
        // means: idx5 = 0.4, idx9 = -0.2, rest 0; remap over [-0.2, 0.4]
        let r = mp.render.tensor().data();
        assert!((r[5] - 1.0).abs() < 1e-6);
        assert!((r[9] - 0.0).abs() < 1e-6);
        assert!((r[0] - (0.2 / 0.6)).abs() < 1e-6);
    }
}
