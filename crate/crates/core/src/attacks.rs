//! White-box attacks on the forensic classifiers and the black-box transfer
//! protocol. Every attack is a pure optimization over classifier/generator
//! gradients: the input image is never mutated, results carry the
//! perturbation.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{self, quantize8};
use crate::eval::{norms, roc, RocReport};
use crate::img::Image;
use crate::models::{
    bind_tensors, classifier_logit, classify, generator_image, sample_latents, ClassifierParams,
    GeneratorParams, ModelError, W_DIM,
};
use crate::tensor::{adam_step, child_seed, AdamHyper, AdamState, Graph, Tensor, TensorError};

pub const BIT_STEP: f32 = 1.0 / 255.0;
pub const PATCH_SIZE: usize = 7;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("l0 attack requires an 8-bit-quantized input image")]
    NotQuantized,
    #[error("universal attack requires a nonempty training set")]
    EmptyTrainingSet,
    #[error("latent attack diverged after {iterations} iterations (last score {last_score})")]
    Diverged { iterations: usize, last_score: f32 },
    #[error("source and target classifiers are identical; not a transfer")]
    IdenticalModels,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datagen(#[from] datagen::DatagenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    L2Min,
    L0LowBit,
    Reverse,
    LossMax,
    Patch,
    Latent,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::L2Min => "l2-min",
            AttackKind::L0LowBit => "l0-lowbit",
            AttackKind::Reverse => "reverse",
            AttackKind::LossMax => "loss-max",
            AttackKind::Patch => "patch",
            AttackKind::Latent => "latent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormP {
    L0,
    L2,
    LInf,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Inner gradient-descent budget.
    pub iterations: usize,
    /// Optimizer step size.
    pub step: f32,
    /// Per-value cap on the perturbation (1/255 for lowest-bit attacks).
    pub pixel_cap: Option<f32>,
    pub p: NormP,
    /// Norm budget for the loss-maximizing attack.
    pub epsilon: f32,
    /// Bisection bounds on the Lagrangian weight.
    pub c0: f32,
    pub c1: f32,
    pub bisection_rounds: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn l2_min() -> Self {
        Self {
            kind: AttackKind::L2Min,
            iterations: 1000,
            step: 0.01,
            pixel_cap: None,
            p: NormP::L2,
            epsilon: 0.0,
            c0: 0.0,
            c1: 100.0,
            bisection_rounds: 12,
            seed: 0,
        }
    }

    pub fn l0_lowbit() -> Self {
        Self {
            kind: AttackKind::L0LowBit,
            pixel_cap: Some(BIT_STEP),
            p: NormP::L0,
            ..Self::l2_min()
        }
    }

    pub fn reverse() -> Self {
        Self { kind: AttackKind::Reverse, ..Self::l0_lowbit() }
    }

    pub fn loss_max(epsilon: f32, p: NormP) -> Self {
        Self {
            kind: AttackKind::LossMax,
            iterations: 20,
            step: epsilon / 4.0,
            pixel_cap: None,
            p,
            epsilon,
            c0: 0.0,
            c1: 100.0,
            bisection_rounds: 0,
            seed: 0,
        }
    }

    pub fn patch() -> Self {
        Self { kind: AttackKind::Patch, iterations: 4000, step: 0.05, ..Self::loss_max(0.0, NormP::L2) }
    }

    pub fn latent() -> Self {
        Self { kind: AttackKind::Latent, iterations: 2000, step: 0.01, ..Self::loss_max(0.0, NormP::L2) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(AttackError::InvalidConfig(format!("epsilon {} < 0", self.epsilon)));
        }
        if let Some(cap) = self.pixel_cap {
            if cap <= 0.0 {
                return Err(AttackError::InvalidConfig(format!("pixel cap {cap} <= 0")));
            }
        }
        if self.c0 >= self.c1 {
            return Err(AttackError::InvalidConfig(format!(
                "bisection bounds require c0 < c1, got {} >= {}",
                self.c0, self.c1
            )));
        }
        Ok(())
    }
}

/// Per-image attack record. Norms are recomputable from the stored delta.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub id: String,
    pub orig_score: f32,
    pub adv_score: f32,
    /// Effective perturbation; quantized in PNG-surviving (lowest-bit) mode.
    pub delta: Option<Tensor>,
    pub l2: f64,
    /// Fraction of spatial pixels with any modified channel.
    pub pixel_frac: f64,
    /// Fraction of channel values modified.
    pub value_frac: f64,
    pub success: bool,
    /// Lagrangian weight that produced the returned delta (0 when n/a).
    pub c: f32,
    pub wall_ms: u64,
}

impl AttackResult {
    pub fn csv_row(&self, attack: &str, seed: u64) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
            self.id,
            attack,
            self.orig_score,
            self.adv_score,
            self.l2,
            self.pixel_frac,
            self.success,
            seed,
            self.wall_ms
        )
    }

    /// Adversarial image `x + delta` (identity when no delta is stored).
    pub fn adv_image(&self, x: &Image) -> Image {
        match &self.delta {
            None => x.clone(),
            Some(d) => {
                let mut out = x.clone();
                for (v, &dv) in out.tensor_mut().data_mut().iter_mut().zip(d.data()) {
                    *v = (*v + dv).clamp(0.0, 1.0);
                }
                out
            }
        }
    }
}

pub const RESULTS_CSV_HEADER: &str =
    "id,attack,orig_score,adv_score,l2,pixel_frac,success,seed,wall_ms\n";

pub fn results_csv(results: &[AttackResult], attack: &str, seed: u64) -> String {
    let mut out = String::from(RESULTS_CSV_HEADER);
    for r in results {
        out.push_str(&r.csv_row(attack, seed));
    }
    out
}

/// Direction of the attack objective relative to the decision threshold.
#[derive(Debug, Clone, Copy)]
pub enum Goal {
    /// Fake-to-real: drive the score strictly below tau.
    DriveBelow(f32),
    /// Real-to-fake (reverse attack): drive the score to tau or above.
    DriveAbove(f32),
}

impl Goal {
    fn met(&self, score: f32) -> bool {
        match self {
            Goal::DriveBelow(tau) => score < *tau,
            Goal::DriveAbove(tau) => score >= *tau,
        }
    }

    /// Sign applied to the classifier term so that minimizing the objective
    /// moves the score the right way.
    fn sign(&self) -> f32 {
        match self {
            Goal::DriveBelow(_) => 1.0,
            Goal::DriveAbove(_) => -1.0,
        }
    }

    fn better(&self, a: f32, b: f32) -> bool {
        match self {
            Goal::DriveBelow(_) => a < b,
            Goal::DriveAbove(_) => a > b,
        }
    }
}

struct InnerOutcome {
    /// Lowest-norm successful effective delta with its l2 and score.
    best: Option<(Tensor, f64, f32)>,
    /// Most adversarial score reached during the run.
    extreme_score: f32,
}

/// Adam minimization of `||delta_eff||_2 + c * sign * f(clamp(x + delta))`
/// at a fixed Lagrangian weight, with optional per-value cap and support
/// mask. Tracks the best successful iterate.
#[allow(clippy::too_many_arguments)]
fn inner_distortion_run(
    f: &ClassifierParams,
    x: &Tensor,
    goal: Goal,
    c: f32,
    cap: Option<f32>,
    mask: Option<&Tensor>,
    warm: Option<&Tensor>,
    iterations: usize,
    step: f32,
) -> Result<InnerOutcome, AttackError> {
    // Under a per-value cap, a full-size Adam step would pin every value at
    // the cap immediately (and the strict-interior clamp rule then blocks
    // gradients), so the step shrinks to approach the cap over a few moves.
    let step = match cap {
        Some(cap) => step.min(cap / 3.0),
        None => step,
    };
    let mut delta = warm.map_or_else(|| Tensor::zeros(x.shape().to_vec()), |d| d.detached());
    let mut adam = AdamState::new(std::slice::from_ref(&delta), AdamHyper::with_lr(step));
    let mut best: Option<(Tensor, f64, f32)> = None;
    let mut extreme = f32::NAN;

    for it in 0..=iterations {
        let mut g = Graph::new();
        let dv = g.var(&delta);
        let dm = match mask {
            Some(m) => {
                let mc = g.constant(m);
                g.mul(&dv, &mc)?
            }
            None => dv.clone(),
        };
        let dc = match cap {
            Some(cap) => g.clamp(&dm, -cap, cap)?,
            None => dm,
        };
        let xc = g.constant(x);
        let xsum = g.add(&xc, &dc)?;
        let xadv = g.clamp(&xsum, 0.0, 1.0)?;
        let eff = g.sub(&xadv, &xc)?;
        let bound = bind_tensors(&mut g, &f.tensors, false);
        let score_t = classifier_logit(&mut g, f.arch, &bound, &xadv)?;
        let score = score_t.item();

        if extreme.is_nan() || goal.better(score, extreme) {
            extreme = score;
        }
        if goal.met(score) {
            let l2 = eff.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(_, bl2, _)| l2 < *bl2) {
                best = Some((eff.detached(), l2, score));
            }
        }
        if it == iterations {
            break;
        }

        let nrm = g.pnorm(&eff, 2.0)?;
        let weighted = g.scalar_mul(&score_t, c * goal.sign())?;
        let obj = g.add(&nrm, &weighted)?;
        let node = dv.node().expect("var is linked");
        let grads = g.grad(&obj, &[node])?;
        adam_step(
            std::slice::from_mut(&mut delta),
            std::slice::from_ref(&grads[&node]),
            &mut adam,
        )?;
    }
    Ok(InnerOutcome { best, extreme_score: extreme })
}

#[derive(Debug, Clone, Default)]
pub struct BisectionTrace {
    /// (c, success) per probe, in execution order.
    pub probes: Vec<(f32, bool)>,
}

fn finish_result(
    id: &str,
    x: &Tensor,
    orig: f32,
    best: Option<(Tensor, f64, f32)>,
    extreme: f32,
    c: f32,
    start: Instant,
) -> AttackResult {
    match best {
        Some((delta, l2, score)) => {
            let adv: Tensor = {
                let mut t = x.detached();
                for (v, &d) in t.data_mut().iter_mut().zip(delta.data()) {
                    *v += d;
                }
                t
            };
            let n = norms(x, &adv).expect("same shape");
            let plane = x.shape()[1] * x.shape()[2];
            AttackResult {
                id: id.into(),
                orig_score: orig,
                adv_score: score,
                delta: Some(delta),
                l2,
                pixel_frac: n.l0_pixels as f64 / plane as f64,
                value_frac: n.l0_values as f64 / (3 * plane) as f64,
                success: true,
                c,
                wall_ms: start.elapsed().as_millis() as u64,
            }
        }
        None => AttackResult {
            id: id.into(),
            orig_score: orig,
            adv_score: extreme,
            delta: None,
            l2: 0.0,
            pixel_frac: 0.0,
            value_frac: 0.0,
            success: false,
            c,
            wall_ms: start.elapsed().as_millis() as u64,
        },
    }
}

/// Distortion-minimizing attack: Adam inner loop on
/// `||delta||_2 + c f(x + delta)`, outer bisection on `c` (doubling `c1` up
/// to 3 times first if needed). Returns the lowest-norm successful delta.
pub fn attack_l2_min(
    f: &ClassifierParams,
    x: &Image,
    tau: f32,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    Ok(attack_l2_min_traced(f, x, tau, cfg)?.0)
}

/// Same as [`attack_l2_min`], also exposing the bisection probe log.
pub fn attack_l2_min_traced(
    f: &ClassifierParams,
    x: &Image,
    tau: f32,
    cfg: &AttackConfig,
) -> Result<(AttackResult, BisectionTrace), AttackError> {
    cfg.validate()?;
    let start = Instant::now();
    let goal = Goal::DriveBelow(tau);
    let orig = classify(f, x)?;
    let mut trace = BisectionTrace::default();

    if goal.met(orig) {
        // already classified real: empty perturbation, c = 0
        return Ok((
            AttackResult {
                id: String::new(),
                orig_score: orig,
                adv_score: orig,
                delta: Some(Tensor::zeros(x.tensor().shape().to_vec())),
                l2: 0.0,
                pixel_frac: 0.0,
                value_frac: 0.0,
                success: true,
                c: 0.0,
                wall_ms: start.elapsed().as_millis() as u64,
            },
            trace,
        ));
    }

    let xt = x.tensor();
    let run = |c: f32| {
        inner_distortion_run(f, xt, goal, c, cfg.pixel_cap, None, None, cfg.iterations, cfg.step)
    };

    // establish a successful c1, doubling at most 3 times
    let mut hi = cfg.c1;
    let mut lo = cfg.c0;
    let mut outcome = run(hi)?;
    trace.probes.push((hi, outcome.best.is_some()));
    let mut doublings = 0;
    while outcome.best.is_none() && doublings < 3 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        outcome = run(hi)?;
        trace.probes.push((hi, outcome.best.is_some()));
    }
    let Some(mut global_best) = outcome.best else {
        return Ok((finish_result("", xt, orig, None, outcome.extreme_score, hi, start), trace));
    };
    let mut best_c = hi;

    for _ in 0..cfg.bisection_rounds {
        let mid = 0.5 * (lo + hi);
        let probe = run(mid)?;
        let success = probe.best.is_some();
        trace.probes.push((mid, success));
        match probe.best {
            Some(b) => {
                hi = mid;
                if b.1 < global_best.1 {
                    global_best = b;
                    best_c = mid;
                }
            }
            None => lo = mid,
        }
    }
    Ok((finish_result("", xt, orig, Some(global_best), orig, best_c, start), trace))
}

/// Iterative lowest-bit attack: box-capped distortion runs over a shrinking
/// free set, freezing the bottom 20th percentile of nonzero perturbation
/// values each round; the returned delta is snapped to exactly one 8-bit step
/// per modified value and re-verified after quantization.
pub fn attack_l0_lowbit(
    f: &ClassifierParams,
    x: &Image,
    tau: f32,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    attack_l0_directed(f, x, Goal::DriveBelow(tau), cfg)
}

/// Reverse attack: same machinery with the objective sign flipped, driving a
/// real image's score to tau or above.
pub fn attack_reverse(
    f: &ClassifierParams,
    x: &Image,
    tau: f32,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    attack_l0_directed(f, x, Goal::DriveAbove(tau), cfg)
}

fn attack_l0_directed(
    f: &ClassifierParams,
    x: &Image,
    goal: Goal,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    if !datagen::is_quantized8(x) {
        return Err(AttackError::NotQuantized);
    }
    let start = Instant::now();
    let cap = cfg.pixel_cap.unwrap_or(BIT_STEP);
    let orig = classify(f, x)?;
    if goal.met(orig) {
        return Ok(AttackResult {
            id: String::new(),
            orig_score: orig,
            adv_score: orig,
            delta: Some(Tensor::zeros(x.tensor().shape().to_vec())),
            l2: 0.0,
            pixel_frac: 0.0,
            value_frac: 0.0,
            success: true,
            c: 0.0,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }

    let xt = x.tensor();
    // establish a workable c once
    let mut c_star = cfg.c1;
    let mut outcome =
        inner_distortion_run(f, xt, goal, c_star, Some(cap), None, None, cfg.iterations, cfg.step)?;
    let mut doublings = 0;
    while outcome.best.is_none() && doublings < 3 {
        c_star *= 2.0;
        doublings += 1;
        outcome = inner_distortion_run(
            f,
            xt,
            goal,
            c_star,
            Some(cap),
            None,
            None,
            cfg.iterations,
            cfg.step,
        )?;
    }
    if outcome.best.is_none() {
        return Ok(finish_result("", xt, orig, None, outcome.extreme_score, c_star, start));
    }

    let mut mask = Tensor::filled(xt.shape().to_vec(), 1.0);
    let mut candidate: Option<(Tensor, f32)> = None;
    let max_rounds = 24;
    let mut current = outcome;
    for _round in 0..max_rounds {
        let Some((eff, _, _)) = current.best.take() else { break };

        // snap to one 8-bit step and re-verify on the quantized image
        let snapped = snap_delta(xt, &eff);
        let adv = apply_delta(x, &snapped);
        let advq = quantize8(&adv);
        let snap_score = classify(f, &advq)?;
        if goal.met(snap_score) {
            let qdelta = diff_tensor(advq.tensor(), xt);
            candidate = Some((qdelta, snap_score));
        }

        // freeze the bottom 20th percentile of nonzero values; explicit
        // k-smallest selection keeps ties (values all at the cap) from
        // freezing everything at once
        let mut nonzero: Vec<(f32, usize)> = eff
            .data()
            .iter()
            .enumerate()
            .filter(|&(i, &d)| mask.data()[i] > 0.0 && d != 0.0)
            .map(|(i, &d)| (d.abs(), i))
            .collect();
        if nonzero.is_empty() {
            break;
        }
        nonzero.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        let k = ((nonzero.len() as f64 * 0.2) as usize).max(1);
        for &(_, i) in nonzero.iter().take(k) {
            mask.data_mut()[i] = 0.0;
        }
        let mut warm_delta = eff.detached();
        for (w, &m) in warm_delta.data_mut().iter_mut().zip(mask.data()) {
            if m == 0.0 {
                *w = 0.0;
            }
        }
        if mask.data().iter().all(|&m| m == 0.0) {
            break;
        }

        current = inner_distortion_run(
            f,
            xt,
            goal,
            c_star,
            Some(cap),
            Some(&mask),
            Some(&warm_delta),
            cfg.iterations,
            cfg.step,
        )?;
        if current.best.is_none() {
            break;
        }
    }

    match candidate {
        Some((delta, score)) => {
            let mut r = finish_result("", xt, orig, Some((delta, 0.0, score)), orig, c_star, start);
            // recompute l2 from the stored quantized delta
            if let Some(d) = &r.delta {
                r.l2 = d.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            }
            Ok(r)
        }
        None => Ok(finish_result("", xt, orig, None, orig, c_star, start)),
    }
}

/// Snap every nonzero perturbation value to exactly one 8-bit step in its
/// direction, respecting the [0,1] box.
fn snap_delta(x: &Tensor, eff: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape().to_vec());
    for ((o, &d), &xv) in out.data_mut().iter_mut().zip(eff.data()).zip(x.data()) {
        if d > 0.0 && xv < 1.0 {
            *o = BIT_STEP;
        } else if d < 0.0 && xv > 0.0 {
            *o = -BIT_STEP;
        }
    }
    out
}

fn apply_delta(x: &Image, delta: &Tensor) -> Image {
    let mut out = x.clone();
    for (v, &d) in out.tensor_mut().data_mut().iter_mut().zip(delta.data()) {
        *v = (*v + d).clamp(0.0, 1.0);
    }
    out
}

fn diff_tensor(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.shape().to_vec());
    for ((o, &av), &bv) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = av - bv;
    }
    out
}

/// Loss-maximizing attack (fixed budget, no hyper-parameter search).
///
/// For `p = inf`: signed projected gradient descent within `||delta||_inf <=
/// epsilon` and the [0,1] box. For `p = 0`: the bit-flip budget variant;
/// support restricted to the `epsilon` fraction of pixels with the largest
/// initial gradient magnitude, per-value cap 1/255, final snap to one 8-bit
/// step. For `p = 2`: normalized gradient steps with l2 projection.
pub fn attack_loss_max(
    f: &ClassifierParams,
    x: &Image,
    tau: f32,
    epsilon: f32,
    p: NormP,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    if epsilon < 0.0 {
        return Err(AttackError::InvalidConfig(format!("epsilon {epsilon} < 0")));
    }
    let start = Instant::now();
    let orig = classify(f, x)?;
    let goal = Goal::DriveBelow(tau);
    let plane = x.height() * x.width();

    if epsilon == 0.0 {
        return Ok(AttackResult {
            id: String::new(),
            orig_score: orig,
            adv_score: orig,
            delta: Some(Tensor::zeros(x.tensor().shape().to_vec())),
            l2: 0.0,
            pixel_frac: 0.0,
            value_frac: 0.0,
            success: goal.met(orig),
            c: 0.0,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }

    let xt = x.tensor();
    let steps = cfg.iterations.max(1);

    let (mut delta, support, cap) = match p {
        NormP::L0 => {
            // support = top-k pixels by initial gradient magnitude
            let (_, grad) = crate::models::score_and_input_grad(f, xt)?;
            let k = ((epsilon as f64) * plane as f64).round() as usize;
            let k = k.clamp(1, plane);
            let mut pixmag: Vec<(f64, usize)> = (0..plane)
                .map(|pix| {
                    let m: f64 =
                        (0..3).map(|ch| grad.data()[ch * plane + pix].abs() as f64).sum();
                    (m, pix)
                })
                .collect();
            pixmag.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
            let mut mask = Tensor::zeros(xt.shape().to_vec());
            for &(_, pix) in pixmag.iter().take(k) {
                for ch in 0..3 {
                    mask.data_mut()[ch * plane + pix] = 1.0;
                }
            }
            (Tensor::zeros(xt.shape().to_vec()), Some(mask), BIT_STEP)
        }
        _ => (Tensor::zeros(xt.shape().to_vec()), None, epsilon),
    };
    let step = if cfg.step > 0.0 { cfg.step } else { epsilon / 4.0 };
    let step = match p {
        NormP::L0 => cap / 2.0,
        _ => step,
    };

    for _ in 0..steps {
        let adv = apply_delta(x, &delta);
        let (_, grad) = crate::models::score_and_input_grad(f, adv.tensor())?;
        for (i, d) in delta.data_mut().iter_mut().enumerate() {
            let allowed = support.as_ref().map_or(1.0, |m| m.data()[i]);
            if allowed == 0.0 {
                continue;
            }
            let g = grad.data()[i];
            match p {
                NormP::LInf | NormP::L0 => *d -= step * g.signum(),
                NormP::L2 => *d -= step * g,
            }
        }
        // project to the norm ball and the image box
        match p {
            NormP::LInf | NormP::L0 => {
                for d in delta.data_mut() {
                    *d = d.clamp(-cap, cap);
                }
            }
            NormP::L2 => {
                let l2 =
                    delta.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                if l2 > epsilon as f64 {
                    let scale = (epsilon as f64 / l2) as f32;
                    for d in delta.data_mut() {
                        *d *= scale;
                    }
                }
            }
        }
        for (d, &xv) in delta.data_mut().iter_mut().zip(xt.data()) {
            *d = (xv + *d).clamp(0.0, 1.0) - xv;
        }
    }

    // bit-flip variant: snap to one 8-bit step and quantize
    let (final_delta, adv_final) = match p {
        NormP::L0 => {
            let snapped = snap_delta(xt, &delta);
            let advq = quantize8(&apply_delta(x, &snapped));
            (diff_tensor(advq.tensor(), xt), advq)
        }
        _ => {
            let adv = apply_delta(x, &delta);
            (diff_tensor(adv.tensor(), xt), adv)
        }
    };
    let adv_score = classify(f, &adv_final)?;
    let n = norms(xt, adv_final.tensor()).expect("same shape");
    Ok(AttackResult {
        id: String::new(),
        orig_score: orig,
        adv_score,
        delta: Some(final_delta),
        l2: n.l2,
        pixel_frac: n.l0_pixels as f64 / plane as f64,
        value_frac: n.l0_values as f64 / (3 * plane) as f64,
        success: goal.met(adv_score),
        c: 0.0,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

// ---- universal patch ---------------------------------------------------------

/// 3x7x7 overlay trained to make any patched fake classify as real.
#[derive(Debug, Clone)]
pub struct UniversalPatch {
    pub values: Tensor,
    /// Upper-left corner of the overlay.
    pub position: (usize, usize),
    pub train_set_id: String,
    pub final_mean_score: f32,
}

/// Overlay (overwrite) the patch; applying twice equals applying once.
pub fn apply_patch(img: &Image, patch: &UniversalPatch) -> Image {
    let mut out = img.clone();
    let (py, px) = patch.position;
    let (h, w) = (img.height(), img.width());
    for c in 0..3 {
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                if py + y < h && px + x < w {
                    out.set(c, py + y, px + x, patch.values.data()[(c * PATCH_SIZE + y) * PATCH_SIZE + x]);
                }
            }
        }
    }
    out
}

/// Stochastic gradient training of the patch pixels only: one training image
/// per iteration, Adam steps toward classifying patched fakes as real, patch
/// clamped to [0,1].
pub fn train_universal_patch(
    f: &ClassifierParams,
    train_fakes: &[Image],
    cfg: &AttackConfig,
) -> Result<UniversalPatch, AttackError> {
    cfg.validate()?;
    if train_fakes.is_empty() {
        return Err(AttackError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut patch = UniversalPatch {
        values: Tensor::new(
            vec![3, PATCH_SIZE, PATCH_SIZE],
            (0..3 * PATCH_SIZE * PATCH_SIZE).map(|_| rng.gen_range(0.25..0.75)).collect(),
        ),
        position: (0, 0),
        train_set_id: String::new(),
        final_mean_score: f32::NAN,
    };
    let mut adam = AdamState::new(std::slice::from_ref(&patch.values), AdamHyper::with_lr(cfg.step));

    let plane = train_fakes[0].height() * train_fakes[0].width();
    let width = train_fakes[0].width();
    let mut recent = Vec::with_capacity(100);
    for _ in 0..cfg.iterations {
        let img = &train_fakes[rng.gen_range(0..train_fakes.len())];
        let patched = apply_patch(img, &patch);
        let (score, grad) = crate::models::score_and_input_grad(f, patched.tensor())?;
        // the patched region's input gradient IS the patch gradient
        let mut gpatch = Tensor::zeros(vec![3, PATCH_SIZE, PATCH_SIZE]);
        for c in 0..3 {
            for y in 0..PATCH_SIZE {
                for x in 0..PATCH_SIZE {
                    gpatch.data_mut()[(c * PATCH_SIZE + y) * PATCH_SIZE + x] =
                        grad.data()[c * plane + y * width + x];
                }
            }
        }
        adam_step(
            std::slice::from_mut(&mut patch.values),
            std::slice::from_ref(&gpatch),
            &mut adam,
        )?;
        for v in patch.values.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        recent.push(score);
        if recent.len() > 100 {
            recent.remove(0);
        }
    }
    patch.final_mean_score = recent.iter().sum::<f32>() / recent.len().max(1) as f32;
    Ok(patch)
}

// ---- universal latent attack ---------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct LatentTrace {
    pub iterations: usize,
    pub final_mean_score: f32,
    /// (iteration, mean score over the previous window)
    pub history: Vec<(usize, f32)>,
}

/// Single universal low-level attribute vector.
#[derive(Debug, Clone)]
pub struct UniversalLatent {
    pub w: Tensor,
    pub trace: LatentTrace,
}

/// Gradient descent on a single w vector: each iteration samples a fresh z
/// and takes one fixed-size step moving f(g(z, w)) toward the real side.
pub fn train_universal_latent(
    f: &ClassifierParams,
    gen: &GeneratorParams,
    cfg: &AttackConfig,
) -> Result<UniversalLatent, AttackError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Tensor::new(
        vec![W_DIM],
        (0..W_DIM).map(|_| crate::models::gaussian(&mut rng)).collect(),
    );
    let mut trace = LatentTrace::default();
    let mut window = Vec::with_capacity(100);

    for it in 0..cfg.iterations {
        let (z, _) = sample_latents(gen, &mut rng);
        let mut g = Graph::new();
        let wv = g.var(&w);
        let zc = g.constant(&z);
        let gen_bound = bind_tensors(&mut g, &gen.tensors, false);
        let img = generator_image(&mut g, &gen_bound, &zc, &wv)?;
        let clf_bound = bind_tensors(&mut g, &f.tensors, false);
        let logit = classifier_logit(&mut g, f.arch, &clf_bound, &img)?;
        let score = logit.item();
        let node = wv.node().expect("var is linked");
        let grads = g.grad(&logit, &[node])?;
        for (v, &gv) in w.data_mut().iter_mut().zip(grads[&node].data()) {
            *v -= cfg.step * gv;
        }
        if !w.is_finite() {
            trace.iterations = it + 1;
            return Err(AttackError::Diverged { iterations: it + 1, last_score: score });
        }
        window.push(score);
        if (it + 1) % 100 == 0 {
            let mean = window.iter().sum::<f32>() / window.len() as f32;
            trace.history.push((it + 1, mean));
            window.clear();
        }
    }
    trace.iterations = cfg.iterations;

    // final mean score over fresh samples
    let probes = 100;
    let mut total = 0.0f32;
    for _ in 0..probes {
        let (z, _) = sample_latents(gen, &mut rng);
        let img = crate::models::generate(gen, &z, &w)?;
        total += classify(f, &img)?;
    }
    trace.final_mean_score = total / probes as f32;
    Ok(UniversalLatent { w, trace })
}

// ---- black-box transfer ---------------------------------------------------------

#[derive(Debug)]
pub struct TransferOutcome {
    pub source_before: RocReport,
    pub source_after: RocReport,
    pub target_before: RocReport,
    pub target_after: RocReport,
    pub results: Vec<AttackResult>,
}

/// Craft 1/255-capped lowest-bit adversarial examples against the source
/// classifier only, then evaluate the target classifier on (reals,
/// adversarial fakes). `source_attack_tau` is the score the attack drives
/// below on the source; pass a low quantile of the source's real scores to
/// overdrive the attack for transfer margin.
#[allow(clippy::too_many_arguments)]
pub fn transfer_campaign(
    source: &ClassifierParams,
    target: &ClassifierParams,
    reals: &[Image],
    fakes: &[Image],
    source_attack_tau: f32,
    cfg: &AttackConfig,
    out_dir: Option<&Path>,
    allow_identical: bool,
) -> Result<TransferOutcome, AttackError> {
    cfg.validate()?;
    if !allow_identical && source.same_weights(target) {
        return Err(AttackError::IdenticalModels);
    }

    let results: Vec<AttackResult> = fakes
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let sub = AttackConfig { seed: child_seed(cfg.seed, i as u64), ..cfg.clone() };
            let mut r = attack_l0_lowbit(source, img, source_attack_tau, &sub)?;
            r.id = format!("fake{i:05}");
            Ok::<_, AttackError>(r)
        })
        .collect::<Result<_, _>>()?;

    let adv_fakes: Vec<Image> =
        results.iter().zip(fakes).map(|(r, x)| r.adv_image(x)).collect();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(datagen::DatagenError::from)?;
        for (i, img) in adv_fakes.iter().enumerate() {
            datagen::save_png(&dir.join(format!("adv_{i:05}.png")), img)?;
        }
    }

    let src_real = crate::models::score_images(source, reals)?;
    let src_fake = crate::models::score_images(source, fakes)?;
    let src_adv = crate::models::score_images(source, &adv_fakes)?;
    let tgt_real = crate::models::score_images(target, reals)?;
    let tgt_fake = crate::models::score_images(target, fakes)?;
    let tgt_adv = crate::models::score_images(target, &adv_fakes)?;

    let source_before = roc(&src_real, &src_fake).expect("nonempty").with_id("source-before");
    let source_after = roc(&src_real, &src_adv).expect("nonempty").with_id("source-after");
    let target_before = roc(&tgt_real, &tgt_fake).expect("nonempty").with_id("target-before");
    let target_after = roc(&tgt_real, &tgt_adv).expect("nonempty").with_id("target-after");
    Ok(TransferOutcome { source_before, source_after, target_before, target_after, results })
}

/// Run a per-image attack over a set in parallel, with deterministic
/// per-image child seeds and ids, collecting results in input order.
pub fn attack_campaign<A>(
    images: &[Image],
    base_seed: u64,
    id_prefix: &str,
    attack: A,
) -> Result<Vec<AttackResult>, AttackError>
where
    A: Fn(&Image, u64) -> Result<AttackResult, AttackError> + Sync,
{
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = attack(img, child_seed(base_seed, i as u64))?;
            r.id = format!("{id_prefix}{i:05}");
            Ok(r)
        })
        .collect()
}
