//! Minimal reverse-mode automatic differentiation over dense f32 tensors.
//!
//! The graph is rebuilt per forward pass (define-by-run). Ops cover exactly
//! what the detectors, the generator and the attacks need; there is no
//! broadcasting beyond conv/dense bias terms and channel-wise scaling.

mod adam;
pub mod dct;
mod graph;
mod kernels;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{Graph, NodeRef};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("expected scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor is not linked to any node in this graph")]
    NodeNotInGraph,
    #[error("tensor belongs to a different graph")]
    GraphMismatch,
    #[error("{op}: non-finite values in input")]
    NonFinite { op: &'static str },
    #[error("NaN in gradients; step rejected")]
    NanGradient,
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
}

/// Dense row-major f32 tensor, optionally linked to a node of the graph that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    node: Option<NodeRef>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must equal the product of its shape"
        );
        Self { shape, data, node: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n], node: None }
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v], node: None }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![v; n], node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Node this tensor is linked to, if it was produced by (or registered
    /// with) a graph.
    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeRef) -> Self {
        self.node = Some(node);
        self
    }

    /// Detached copy: same values, no graph link.
    pub fn detached(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    /// Scalar value of a shape-`[1]` tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape, data: self.data.clone(), node: None }
    }
}

/// Central-difference gradient estimate of a scalar-valued function,
/// `(fn(x + h e_i) - fn(x - h e_i)) / 2h` per coordinate.
///
/// This is the engine-level oracle; it evaluates `f` in f32, so its accuracy
/// is bounded by f32 rounding in `f` itself.
pub fn finite_diff<F: FnMut(&Tensor) -> f32>(mut f: F, x: &Tensor, h: f32) -> Tensor {
    assert!(h > 0.0, "finite_diff step must be positive");
    let mut grad = Tensor::zeros(x.shape.clone());
    let mut probe = x.detached();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// 64-bit FNV-1a over a byte stream. Used for weight-file checksums, dataset
/// hashes and deterministic per-item seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic child seed for item `index` under a campaign seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&index.to_le_bytes());
    fnv1a64(&bytes)
}
