//! Training loops: binary cross-entropy classifier training with the
//! blur/JPEG augmentation pipeline, and the autoencoder pre-training that
//! turns the random decoder into a corpus-fitted generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    bind_tensors, classifier_logit, gaussian, init_classifier, init_generator, Arch,
    ClassifierParams, GeneratorParams, ModelError, TrainMeta, IMG_SIZE, W_DIM, Z_DIM,
};
use crate::eval::{blur, jpeg_launder, roc};
use crate::img::Image;
use crate::tensor::{adam_step, child_seed, AdamHyper, AdamState, Graph, Tensor};

/// In-memory labeled images; `true` labels mark fakes.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<bool>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn split_scores(&self, scores: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let mut real = Vec::new();
        let mut fake = Vec::new();
        for (&s, &l) in scores.iter().zip(&self.labels) {
            if l {
                fake.push(s);
            } else {
                real.push(s);
            }
        }
        (real, fake)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub augment: bool,
    pub seed: u64,
    /// Hash of the dataset the model was trained on, recorded in metadata.
    pub dataset_hash: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch: 32, lr: 1e-3, augment: true, seed: 0, dataset_hash: 0 }
    }
}

/// Wang-style augmentation, desk scale: independent coin flips for a Gaussian
/// blur and a JPEG recompression.
fn augment_image(img: &Image, rng: &mut ChaCha8Rng) -> Image {
    let mut out = img.clone();
    if rng.gen_bool(0.5) {
        let sigma = rng.gen_range(0.5..1.5);
        out = blur(&out, sigma);
    }
    if rng.gen_bool(0.5) {
        let q = rng.gen_range(40..=95);
        out = jpeg_launder(&out, q);
    }
    out
}

/// Binary cross-entropy training of a classifier. Returns the trained
/// parameters (held-out AUC recorded in metadata) and the per-epoch loss
/// curve.
pub fn train_classifier(
    arch: Arch,
    data: &ImageSet,
    heldout: &ImageSet,
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, Vec<f64>), ModelError> {
    let has_fake = data.labels.iter().any(|&l| l);
    let has_real = data.labels.iter().any(|&l| !l);
    if !has_fake || !has_real {
        return Err(ModelError::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_classifier(arch, &mut rng);
    let mut tensors: Vec<Tensor> = params.tensors.iter().map(|(_, t)| t.clone()).collect();
    let mut state = AdamState::new(&tensors, AdamHyper::with_lr(cfg.lr));
    let mut curve = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch).enumerate() {
            // Per-image forward/backward in parallel; gradients are reduced
            // sequentially in index order so the result does not depend on
            // scheduling.
            let current = &tensors;
            let per_image: Vec<Result<(f64, Vec<Tensor>), ModelError>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new();
                    let img = if cfg.augment {
                        let s = child_seed(cfg.seed, (epoch * 1_000_003 + i) as u64);
                        let mut arng = ChaCha8Rng::seed_from_u64(s);
                        augment_image(&data.images[i], &mut arng)
                    } else {
                        data.images[i].clone()
                    };
                    let x = g.constant(img.tensor());
                    let named: Vec<(String, Tensor)> = params
                        .tensors
                        .iter()
                        .zip(current)
                        .map(|((n, _), t)| (n.clone(), t.clone()))
                        .collect();
                    let bound = bind_tensors(&mut g, &named, true);
                    let logit = classifier_logit(&mut g, arch, &bound, &x)?;
                    let target = if data.labels[i] { 1.0 } else { 0.0 };
                    let loss = g.bce_logit(&logit, target)?;
                    let nodes: Vec<_> =
                        bound.handles.iter().map(|h| h.node().expect("bound var")).collect();
                    let grads = g.grad(&loss, &nodes)?;
                    let grad_vec: Vec<Tensor> =
                        nodes.iter().map(|n| grads[n].clone()).collect();
                    Ok((loss.item() as f64, grad_vec))
                })
                .collect();

            let mut grad_sum: Vec<Tensor> =
                tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            let mut batch_loss = 0.0f64;
            let n = batch.len() as f32;
            for r in per_image {
                let (loss, grads) = r?;
                batch_loss += loss;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b / n;
                    }
                }
            }
            epoch_loss += batch_loss / batch.len() as f64;
            adam_step(&mut tensors, &grad_sum, &mut state)?;
            let _ = batch_idx;
        }
        curve.push(epoch_loss / order.chunks(cfg.batch).count() as f64);
    }

    for ((_, dst), src) in params.tensors.iter_mut().zip(&tensors) {
        *dst = src.clone();
    }
    params.meta = TrainMeta {
        epochs: cfg.epochs,
        augmented: cfg.augment,
        dataset_hash: cfg.dataset_hash,
        held_out_auc: None,
    };

    if !heldout.is_empty() {
        let scores = super::score_images(&params, &heldout.images)?;
        let (real, fake) = heldout.split_scores(&scores);
        if !real.is_empty() && !fake.is_empty() {
            if let Ok(report) = roc(&real, &fake) {
                params.meta.held_out_auc = Some(report.auc);
            }
        }
    }
    Ok((params, curve))
}

#[derive(Debug, Clone)]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    /// Weight of the latent-shrinkage term that keeps encoder outputs near
    /// the sampling prior.
    pub latent_weight: f32,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch: 32, lr: 2e-3, seed: 0, latent_weight: 0.01 }
    }
}

/// Encoder used only during generator pre-training; mirrors the pixel
/// classifier trunk with a Z_DIM head.
fn init_encoder(rng: &mut ChaCha8Rng) -> Vec<(String, Tensor)> {
    let widths = [16usize, 32, 64];
    let mut tensors = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in widths.iter().enumerate() {
        let bound = super::he_bound(c_in * 9);
        tensors.push((
            format!("enc{}.w", i + 1),
            super::uniform_tensor(rng, vec![c_out, c_in, 3, 3], bound),
        ));
        tensors.push((format!("enc{}.b", i + 1), Tensor::zeros(vec![c_out])));
        c_in = c_out;
    }
    tensors.push((
        "enc_head.w".into(),
        super::uniform_tensor(rng, vec![Z_DIM, c_in], super::he_bound(c_in)),
    ));
    tensors.push(("enc_head.b".into(), Tensor::zeros(vec![Z_DIM])));
    tensors
}

fn encoder_latent(
    g: &mut Graph,
    bound: &super::BoundParams,
    x: &Tensor,
) -> Result<Tensor, ModelError> {
    let mut h = x.clone();
    for i in 0..3 {
        let w = bound.get(&format!("enc{}.w", i + 1));
        let b = bound.get(&format!("enc{}.b", i + 1));
        h = g.conv2d(&h, w, Some(b), 1, 1)?;
        h = g.leaky_relu(&h, super::LEAKY_SLOPE)?;
        h = g.avg_pool2(&h, 2)?;
    }
    let pooled = g.global_avg_pool(&h)?;
    Ok(g.dense(&pooled, bound.get("enc_head.w"), Some(bound.get("enc_head.b")))?)
}

/// Autoencoder pre-training of the decoder on the procedural corpus, with a
/// fresh random `w` per sample so the modulation pathway stays live. After
/// training, the empirical latent statistics are stored for sampling.
pub fn train_generator(
    reals: &[Image],
    cfg: &GenTrainConfig,
) -> Result<GeneratorParams, ModelError> {
    if reals.is_empty() {
        return Err(ModelError::EmptyScores);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = init_generator(&mut rng);
    let mut enc = init_encoder(&mut rng);

    // joint parameter vector: decoder tensors (minus latent stats) + encoder
    let dec_count = gen.tensors.len() - 2; // z_mean / z_std are not trained
    let mut tensors: Vec<Tensor> = gen.tensors[..dec_count]
        .iter()
        .map(|(_, t)| t.clone())
        .chain(enc.iter().map(|(_, t)| t.clone()))
        .collect();
    let names: Vec<String> = gen.tensors[..dec_count]
        .iter()
        .map(|(n, _)| n.clone())
        .chain(enc.iter().map(|(n, _)| n.clone()))
        .collect();
    let mut state = AdamState::new(&tensors, AdamHyper::with_lr(cfg.lr));

    let mut order: Vec<usize> = (0..reals.len()).collect();
    let inv_n = 1.0 / (3 * IMG_SIZE * IMG_SIZE) as f32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let current = &tensors;
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| child_seed(cfg.seed, (epoch * 1_000_003 + i) as u64))
                .collect();
            let per_image: Vec<Result<Vec<Tensor>, ModelError>> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &s)| {
                    let mut wrng = ChaCha8Rng::seed_from_u64(s);
                    let w = Tensor::new(
                        vec![W_DIM],
                        (0..W_DIM).map(|_| gaussian(&mut wrng)).collect(),
                    );
                    let mut g = Graph::new();
                    let named: Vec<(String, Tensor)> = names
                        .iter()
                        .zip(current)
                        .map(|(n, t)| (n.clone(), t.clone()))
                        .collect();
                    let bound = bind_tensors(&mut g, &named, true);
                    let x = g.constant(reals[i].tensor());
                    let z = encoder_latent(&mut g, &bound, &x)?;
                    let wc = g.constant(&w);
                    let recon = super::generator_image(&mut g, &bound, &z, &wc)?;
                    let diff = g.sub(&recon, &x)?;
                    let sq = g.mul(&diff, &diff)?;
                    let mse_sum = g.sum(&sq)?;
                    let mse = g.scalar_mul(&mse_sum, inv_n)?;
                    let zsq = g.mul(&z, &z)?;
                    let zsum = g.sum(&zsq)?;
                    let zpen = g.scalar_mul(&zsum, cfg.latent_weight / Z_DIM as f32)?;
                    let loss = g.add(&mse, &zpen)?;
                    let nodes: Vec<_> =
                        bound.handles.iter().map(|h| h.node().expect("bound var")).collect();
                    let grads = g.grad(&loss, &nodes)?;
                    Ok(nodes.iter().map(|n| grads[n].clone()).collect())
                })
                .collect();

            let mut grad_sum: Vec<Tensor> =
                tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            let n = batch.len() as f32;
            for r in per_image {
                let grads = r?;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b / n;
                    }
                }
            }
            adam_step(&mut tensors, &grad_sum, &mut state)?;
        }
    }

    for (i, (_, dst)) in gen.tensors[..dec_count].iter_mut().enumerate() {
        *dst = tensors[i].clone();
    }
    for (i, (_, dst)) in enc.iter_mut().enumerate() {
        *dst = tensors[dec_count + i].clone();
    }

    // Latent statistics over the corpus encodings (sequential, f64).
    let enc_named: Vec<(String, Tensor)> = enc.clone();
    let encodings: Vec<Result<Vec<f32>, ModelError>> = reals
        .par_iter()
        .map(|img| {
            let mut g = Graph::new();
            let bound = bind_tensors(&mut g, &enc_named, false);
            let x = g.constant(img.tensor());
            let z = encoder_latent(&mut g, &bound, &x)?;
            Ok(z.data().to_vec())
        })
        .collect();
    let mut mean = vec![0.0f64; Z_DIM];
    let mut var = vec![0.0f64; Z_DIM];
    let mut count = 0.0f64;
    for e in &encodings {
        let z = e.as_ref().map_err(|_| ModelError::EmptyScores)?;
        for (m, &v) in mean.iter_mut().zip(z) {
            *m += v as f64;
        }
        count += 1.0;
    }
    for m in &mut mean {
        *m /= count;
    }
    for e in &encodings {
        let z = e.as_ref().map_err(|_| ModelError::EmptyScores)?;
        for (i, &v) in z.iter().enumerate() {
            var[i] += (v as f64 - mean[i]).powi(2);
        }
    }
    let z_mean = Tensor::new(vec![Z_DIM], mean.iter().map(|&v| v as f32).collect());
    let z_std = Tensor::new(
        vec![Z_DIM],
        var.iter().map(|&v| ((v / count).sqrt().max(1e-3)) as f32).collect(),
    );
    for (name, t) in &mut gen.tensors {
        if name == "z_mean" {
            *t = z_mean.clone();
        } else if name == "z_std" {
            *t = z_std.clone();
        }
    }
    Ok(gen)
}
