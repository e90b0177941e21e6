//! Forensic classifiers f (scalar logit, larger = more likely fake), the toy
//! generator g(z, w), threshold calibration, and weight-file persistence.

mod train;
mod weights;

pub use train::{train_classifier, train_generator, GenTrainConfig, ImageSet, TrainConfig};
pub use weights::{load_classifier, load_generator, save_classifier, save_generator};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::Image;
use crate::tensor::{Graph, Tensor, TensorError};

pub const IMG_SIZE: usize = 64;
pub const Z_DIM: usize = 32;
pub const W_DIM: usize = 16;

/// Pixel classifier block widths.
const PIXEL_WIDTHS: [usize; 3] = [16, 32, 64];
/// Surrogate: deliberately different architecture (2 blocks, narrower).
const SMALL_WIDTHS: [usize; 2] = [8, 16];
/// Generator stage widths: seed channels then per-stage conv outputs.
const GEN_WIDTHS: [usize; 5] = [64, 48, 32, 24, 16];

const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected a [3, {IMG_SIZE}, {IMG_SIZE}] image, got {shape:?}")]
    BadImageShape { shape: Vec<usize> },
    #[error("latent has wrong length: expected {expected}, got {got}")]
    BadLatentLen { expected: usize, got: usize },
    #[error("non-finite values in latent input")]
    NonFiniteLatent,
    #[error("score list is empty")]
    EmptyScores,
    #[error("dataset contains a single class only")]
    SingleClass,
    #[error("weight file {path}: {msg}")]
    WeightFile { path: String, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    PixelCnn,
    PixelCnnSmall,
    SpectralCnn,
}

impl Arch {
    pub fn tag(&self) -> &'static str {
        match self {
            Arch::PixelCnn => "pixel-cnn",
            Arch::PixelCnnSmall => "pixel-cnn-small",
            Arch::SpectralCnn => "spectral-cnn",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Arch> {
        match tag {
            "pixel-cnn" => Some(Arch::PixelCnn),
            "pixel-cnn-small" => Some(Arch::PixelCnnSmall),
            "spectral-cnn" => Some(Arch::SpectralCnn),
            _ => None,
        }
    }

    fn widths(&self) -> &'static [usize] {
        match self {
            Arch::PixelCnn | Arch::SpectralCnn => &PIXEL_WIDTHS,
            Arch::PixelCnnSmall => &SMALL_WIDTHS,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub augmented: bool,
    pub dataset_hash: u64,
    pub held_out_auc: Option<f64>,
}

/// Named, ordered parameter tensors for a classifier.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub arch: Arch,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: TrainMeta,
}

impl ClassifierParams {
    pub fn same_weights(&self, other: &ClassifierParams) -> bool {
        self.arch == other.arch
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((an, at), (bn, bt))| an == bn && at.data() == bt.data())
    }
}

/// Decoder parameters: dense seed, 4 nearest-upsample stages with w-driven
/// channel modulation, 1x1 RGB head, plus the latent sampling statistics.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub tensors: Vec<(String, Tensor)>,
}

impl GeneratorParams {
    fn tensor(&self, name: &str) -> &Tensor {
        &self
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter tensor {name}"))
            .1
    }
}

/// Decision threshold calibrated to a false-positive-rate target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    pub value: f32,
    pub target_fpr: f64,
    pub calibration_id: String,
}

// ---- initialization --------------------------------------------------------

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

fn he_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in as f32).sqrt()
}

fn conv_init(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> (Tensor, Tensor) {
    let w = uniform_tensor(rng, vec![c_out, c_in, k, k], he_bound(c_in * k * k));
    (w, Tensor::zeros(vec![c_out]))
}

/// Fresh randomly initialized classifier.
pub fn init_classifier(arch: Arch, rng: &mut ChaCha8Rng) -> ClassifierParams {
    let widths = arch.widths();
    let mut tensors = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in widths.iter().enumerate() {
        let (w, b) = conv_init(rng, c_out, c_in, 3);
        tensors.push((format!("conv{}.w", i + 1), w));
        tensors.push((format!("conv{}.b", i + 1), b));
        c_in = c_out;
    }
    tensors.push(("head.w".into(), uniform_tensor(rng, vec![1, c_in], he_bound(c_in))));
    tensors.push(("head.b".into(), Tensor::zeros(vec![1])));
    ClassifierParams { arch, tensors, meta: TrainMeta::default() }
}

/// All-zero classifier (logit is exactly 0 for any input).
pub fn zero_classifier(arch: Arch) -> ClassifierParams {
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let mut p = init_classifier(arch, &mut rng);
    for (_, t) in &mut p.tensors {
        t.data_mut().fill(0.0);
    }
    p
}

/// Fresh randomly initialized generator with unit latent statistics.
pub fn init_generator(rng: &mut ChaCha8Rng) -> GeneratorParams {
    let mut tensors = Vec::new();
    let seed_ch = GEN_WIDTHS[0];
    tensors.push((
        "seed.w".into(),
        uniform_tensor(rng, vec![seed_ch * 4 * 4, Z_DIM], he_bound(Z_DIM)),
    ));
    tensors.push(("seed.b".into(), Tensor::zeros(vec![seed_ch * 4 * 4])));
    for s in 0..4 {
        let (c_in, c_out) = (GEN_WIDTHS[s], GEN_WIDTHS[s + 1]);
        let (w, b) = conv_init(rng, c_out, c_in, 3);
        tensors.push((format!("stage{}.conv.w", s + 1), w));
        tensors.push((format!("stage{}.conv.b", s + 1), b));
        // Modulation starts small so w perturbs rather than dominates.
        tensors.push((
            format!("stage{}.mod.w", s + 1),
            uniform_tensor(rng, vec![c_out, W_DIM], 0.15),
        ));
    }
    let head_in = GEN_WIDTHS[4];
    tensors.push(("head.w".into(), uniform_tensor(rng, vec![3, head_in, 1, 1], he_bound(head_in))));
    tensors.push(("head.b".into(), Tensor::zeros(vec![3])));
    tensors.push(("z_mean".into(), Tensor::zeros(vec![Z_DIM])));
    tensors.push(("z_std".into(), Tensor::filled(vec![Z_DIM], 1.0)));
    GeneratorParams { tensors }
}

// ---- forward builders ------------------------------------------------------

/// Parameter tensors registered in a graph, in `tensors` order.
pub struct BoundParams {
    pub handles: Vec<Tensor>,
    pub names: Vec<String>,
}

pub fn bind_tensors(g: &mut Graph, tensors: &[(String, Tensor)], trainable: bool) -> BoundParams {
    let handles = tensors
        .iter()
        .map(|(_, t)| if trainable { g.var(t) } else { g.constant(t) })
        .collect();
    BoundParams { handles, names: tensors.iter().map(|(n, _)| n.clone()).collect() }
}

impl BoundParams {
    fn get(&self, name: &str) -> &Tensor {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing bound tensor {name}"));
        &self.handles[idx]
    }
}

/// DCT-magnitude feature front-end of the spectral classifier; identical to
/// the tensor module's blockwise DCT.
pub fn spectral_frontend(image: &Tensor) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let x = g.constant(image);
    let d = g.block_dct8(&x)?;
    Ok(d.detached())
}

/// Classifier forward pass inside an existing graph. `x` must be a
/// node-bearing `[3, 64, 64]` tensor of that graph.
pub fn classifier_logit(
    g: &mut Graph,
    arch: Arch,
    bound: &BoundParams,
    x: &Tensor,
) -> Result<Tensor, ModelError> {
    if x.shape() != [3, IMG_SIZE, IMG_SIZE] {
        return Err(ModelError::BadImageShape { shape: x.shape().to_vec() });
    }
    let mut h = match arch {
        Arch::SpectralCnn => {
            let d = g.block_dct8(x)?;
            let m = g.abs(&d)?;
            g.scalar_mul(&m, 1.0 / 8.0)?
        }
        _ => x.clone(),
    };
    let n_blocks = arch.widths().len();
    for i in 0..n_blocks {
        let w = bound.get(&format!("conv{}.w", i + 1));
        let b = bound.get(&format!("conv{}.b", i + 1));
        h = g.conv2d(&h, w, Some(b), 1, 1)?;
        h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        h = g.avg_pool2(&h, 2)?;
    }
    let pooled = g.global_avg_pool(&h)?;
    let logit = g.dense(&pooled, bound.get("head.w"), Some(bound.get("head.b")))?;
    Ok(logit)
}

/// Generator forward pass inside an existing graph; `z` and `w` must be
/// node-bearing tensors of that graph. Output is `[3, 64, 64]` in `[0, 1]`.
pub fn generator_image(
    g: &mut Graph,
    bound: &BoundParams,
    z: &Tensor,
    w: &Tensor,
) -> Result<Tensor, ModelError> {
    if z.shape() != [Z_DIM] {
        return Err(ModelError::BadLatentLen { expected: Z_DIM, got: z.len() });
    }
    if w.shape() != [W_DIM] {
        return Err(ModelError::BadLatentLen { expected: W_DIM, got: w.len() });
    }
    let seed = g.dense(z, bound.get("seed.w"), Some(bound.get("seed.b")))?;
    let seed = g.reshape(&seed, vec![GEN_WIDTHS[0], 4, 4])?;
    let mut h = g.leaky_relu(&seed, LEAKY_SLOPE)?;
    for s in 0..4 {
        h = g.upsample2(&h)?;
        let cw = bound.get(&format!("stage{}.conv.w", s + 1));
        let cb = bound.get(&format!("stage{}.conv.b", s + 1));
        h = g.conv2d(&h, cw, Some(cb), 1, 1)?;
        // Style-like modulation: scale each channel by 2*sigmoid(A_s w),
        // which is 1 at w = 0 and can suppress a channel toward 0.
        let a = g.dense(w, bound.get(&format!("stage{}.mod.w", s + 1)), None)?;
        let sig = g.sigmoid(&a)?;
        let scale = g.scalar_mul(&sig, 2.0)?;
        h = g.mul(&h, &scale)?;
        h = g.leaky_relu(&h, LEAKY_SLOPE)?;
    }
    let rgb = g.conv2d(&h, bound.get("head.w"), Some(bound.get("head.b")), 1, 0)?;
    Ok(g.sigmoid(&rgb)?)
}

// ---- public ops ------------------------------------------------------------

/// Scalar logit of an image; larger values mean "more likely fake".
pub fn classify(params: &ClassifierParams, image: &Image) -> Result<f32, ModelError> {
    let mut g = Graph::new();
    let x = g.constant(image.tensor());
    let bound = bind_tensors(&mut g, &params.tensors, false);
    let logit = classifier_logit(&mut g, params.arch, &bound, &x)?;
    Ok(logit.item())
}

/// Spectral classifier variant; rejects non-spectral parameter sets.
pub fn classify_spectral(params: &ClassifierParams, image: &Image) -> Result<f32, ModelError> {
    debug_assert_eq!(params.arch, Arch::SpectralCnn);
    classify(params, image)
}

/// Logit and its gradient w.r.t. the input image.
pub fn score_and_input_grad(
    params: &ClassifierParams,
    image: &Tensor,
) -> Result<(f32, Tensor), ModelError> {
    let mut g = Graph::new();
    let x = g.var(image);
    let bound = bind_tensors(&mut g, &params.tensors, false);
    let logit = classifier_logit(&mut g, params.arch, &bound, &x)?;
    let node = x.node().expect("var is linked");
    let grads = g.grad(&logit, &[node])?;
    Ok((logit.item(), grads[&node].clone()))
}

/// Scores for a batch of images, in input order (parallel internally).
pub fn score_images(params: &ClassifierParams, images: &[Image]) -> Result<Vec<f32>, ModelError> {
    images.par_iter().map(|img| classify(params, img)).collect()
}

/// g(z, w): deterministic image from the latent pair.
pub fn generate(params: &GeneratorParams, z: &Tensor, w: &Tensor) -> Result<Image, ModelError> {
    if !z.is_finite() || !w.is_finite() {
        return Err(ModelError::NonFiniteLatent);
    }
    let mut g = Graph::new();
    let zn = g.constant(z);
    let wn = g.constant(w);
    let bound = bind_tensors(&mut g, &params.tensors, false);
    let out = generator_image(&mut g, &bound, &zn, &wn)?;
    Ok(Image::from_tensor(out.detached()))
}

/// Draw (z, w) from the generator's stored latent statistics.
pub fn sample_latents(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let mean = params.tensor("z_mean");
    let std = params.tensor("z_std");
    let z: Vec<f32> = (0..Z_DIM)
        .map(|i| mean.data()[i] + std.data()[i] * gaussian(rng))
        .collect();
    let w: Vec<f32> = (0..W_DIM).map(|_| gaussian(rng)).collect();
    (Tensor::new(vec![Z_DIM], z), Tensor::new(vec![W_DIM], w))
}

/// Standard normal via Box-Muller (keeps the dependency surface small).
pub fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Smallest threshold whose empirical FPR on the calibration scores does not
/// exceed the target; ties resolved toward the higher threshold.
pub fn calibrate_tau(
    real_scores: &[f32],
    target_fpr: f64,
    calibration_id: &str,
) -> Result<Tau, ModelError> {
    if real_scores.is_empty() {
        return Err(ModelError::EmptyScores);
    }
    let n = real_scores.len() as f64;
    let mut candidates = real_scores.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    candidates.dedup();
    let max = *candidates.last().expect("nonempty");
    candidates.push(max.next_up());
    for &t in &candidates {
        let fpr = real_scores.iter().filter(|&&s| s >= t).count() as f64 / n;
        if fpr <= target_fpr {
            return Ok(Tau { value: t, target_fpr, calibration_id: calibration_id.into() });
        }
    }
    unreachable!("the threshold above the maximum score has FPR 0")
}

/// Empirical FPR of a threshold on a score set (score >= tau counts fake).
pub fn empirical_fpr(real_scores: &[f32], tau: f32) -> f64 {
    real_scores.iter().filter(|&&s| s >= tau).count() as f64 / real_scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_params_give_zero_logit() {
        let params = zero_classifier(Arch::PixelCnn);
        let img = Image::zeros(IMG_SIZE, IMG_SIZE);
        assert_eq!(classify(&params, &img).unwrap(), 0.0);
        let spectral = zero_classifier(Arch::SpectralCnn);
        assert_eq!(classify(&spectral, &img).unwrap(), 0.0);
    }

    #[test]
    fn classify_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = init_classifier(Arch::PixelCnn, &mut rng);
        let mut img = Image::zeros(IMG_SIZE, IMG_SIZE);
        for (i, v) in img.tensor_mut().data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f32) / 101.0;
        }
        let a = classify(&params, &img).unwrap();
        let b = classify(&params, &img).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn classify_rejects_wrong_shape() {
        let params = zero_classifier(Arch::PixelCnn);
        let img = Image::zeros(32, 32);
        assert!(matches!(classify(&params, &img), Err(ModelError::BadImageShape { .. })));
    }

    #[test]
    fn generate_is_deterministic_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_generator(&mut rng);
        let (z, w) = sample_latents(&params, &mut rng);
        let a = generate(&params, &z, &w).unwrap();
        let b = generate(&params, &z, &w).unwrap();
        assert_eq!(a.tensor().data(), b.tensor().data());
        assert!(a.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.tensor().shape(), &[3, IMG_SIZE, IMG_SIZE]);
    }

    #[test]
    fn generate_rejects_bad_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_generator(&mut rng);
        let z = Tensor::zeros(vec![Z_DIM]);
        let w_short = Tensor::zeros(vec![W_DIM - 1]);
        assert!(matches!(
            generate(&params, &z, &w_short),
            Err(ModelError::BadLatentLen { .. })
        ));
        let mut z_bad = Tensor::zeros(vec![Z_DIM]);
        z_bad.data_mut()[0] = f32::NAN;
        let w = Tensor::zeros(vec![W_DIM]);
        assert!(matches!(generate(&params, &z_bad, &w), Err(ModelError::NonFiniteLatent)));
    }

    #[test]
    fn generator_output_depends_on_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = init_generator(&mut rng);
        let mut distinct = 0;
        let trials = 50;
        for _ in 0..trials {
            let (z, w1) = sample_latents(&params, &mut rng);
            let (_, w2) = sample_latents(&params, &mut rng);
            let a = generate(&params, &z, &w1).unwrap();
            let b = generate(&params, &z, &w2).unwrap();
            let l2: f64 = a
                .tensor()
                .data()
                .iter()
                .zip(b.tensor().data())
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if l2 > 0.0 {
                distinct += 1;
            }
        }
        assert!(distinct as f64 >= 0.99 * trials as f64, "only {distinct}/{trials} distinct");
    }

    #[test]
    fn tau_on_distinct_scores_sits_at_the_percentile() {
        let scores: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        let tau = calibrate_tau(&scores, 0.05, "t").unwrap();
        // exactly the top 5 scores (96..=100) are at or above tau
        assert_eq!(tau.value, 96.0);
        assert_eq!(empirical_fpr(&scores, tau.value), 0.05);
    }

    #[test]
    fn tau_on_identical_scores_steps_above() {
        let scores = vec![1.25f32; 120];
        let tau = calibrate_tau(&scores, 0.05, "t").unwrap();
        assert_eq!(tau.value, 1.25f32.next_up());
        assert_eq!(empirical_fpr(&scores, tau.value), 0.0);
    }

    #[test]
    fn tau_rejects_empty() {
        assert!(matches!(calibrate_tau(&[], 0.05, "t"), Err(ModelError::EmptyScores)));
    }

    #[test]
    fn spectral_frontend_matches_block_dct8() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut img = Image::zeros(IMG_SIZE, IMG_SIZE);
        for v in img.tensor_mut().data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let front = spectral_frontend(img.tensor()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(img.tensor());
        let direct = g.block_dct8(&x).unwrap();
        assert_eq!(front.data(), direct.data());
    }
}
