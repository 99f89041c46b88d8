//! Dense feed-forward models over flat 64-bit parameter vectors.
//!
//! A model is an [`ArchDescriptor`] plus a flat `Vec<f64>` in canonical
//! layer-major, row-major order: for each consecutive layer pair
//! `(din, dout)`, the `dout x din` weight matrix row by row, then the `dout`
//! biases. The flat layout is what makes shard models mergeable by plain
//! elementwise averaging and checkpoints comparable byte for byte.
//!
//! Everything in this module is a pure function of its inputs; repeated
//! invocation is bit-identical.

mod adam;
mod io;
mod loss;

pub use adam::{adam_step, AdamParams, OptimizerState};
pub use io::{read_model, read_params_blob, write_model, write_params_blob};
pub use loss::loss_and_grad;

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Task shape of a model's output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Softmax head over `classes` labels.
    Classification { classes: usize },
    /// Single linear output.
    Regression,
}

impl TaskKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskKind::Classification { classes } => *classes,
            TaskKind::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Shape of a dense network: input width, hidden widths, output head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub task: TaskKind,
    pub activation: Activation,
}

impl ArchDescriptor {
    /// Builds a descriptor; `output_dim` is derived from the task head.
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        task: TaskKind,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArch("input_dim must be positive".into()));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::InvalidArch("hidden dims must be positive".into()));
        }
        if let TaskKind::Classification { classes } = task {
            if classes < 2 {
                return Err(Error::InvalidArch(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(ArchDescriptor {
            input_dim,
            hidden_dims,
            output_dim: task.output_dim(),
            task,
            activation,
        })
    }

    /// Layer widths including input and output: `[din, h0, .., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }
}

/// Total parameter count: sum of `(din + 1) * dout` over layer pairs.
pub fn param_count(arch: &ArchDescriptor) -> usize {
    let dims = arch.layer_dims();
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Architecture descriptor plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    pub params: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: ArchDescriptor, params: Vec<f64>) -> Result<Self> {
        let expected = param_count(&arch);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(ModelParams { arch, params })
    }

    pub fn zeros(arch: ArchDescriptor) -> Self {
        let n = param_count(&arch);
        ModelParams {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Two models can be averaged elementwise iff their descriptors agree.
    pub fn merge_compatible(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        forward(self, features)
    }
}

thread_local! {
    static FORWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`forward`] invocations on the current thread. Instrumentation
/// for inference-cost accounting; training does not tick this counter.
pub fn forward_passes_on_thread() -> u64 {
    FORWARD_PASSES.with(|c| c.get())
}

/// Glorot-uniform initialization: per layer, weights drawn from
/// `U(-s, s)` with `s = sqrt(6 / (din + dout))` in storage order; biases
/// exactly zero. Fully determined by the stream.
pub fn init_model(arch: &ArchDescriptor, rng: &mut RngStream) -> ModelParams {
    let dims = arch.layer_dims();
    let mut params = Vec::with_capacity(param_count(arch));
    for w in dims.windows(2) {
        let (din, dout) = (w[0], w[1]);
        let s = (6.0 / (din + dout) as f64).sqrt();
        for _ in 0..din * dout {
            params.push(rng.uniform_in(-s, s));
        }
        params.extend(std::iter::repeat_n(0.0, dout));
    }
    ModelParams {
        arch: arch.clone(),
        params,
    }
}

/// Numerically stable softmax; output is non-negative and sums to one.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Runs the network on one feature vector. Classification returns class
/// probabilities; regression returns a single-element vector.
pub fn forward(model: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != model.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim,
            got: features.len(),
        });
    }
    FORWARD_PASSES.with(|c| c.set(c.get() + 1));
    let logits = raw_output(model, features);
    Ok(match model.arch.task {
        TaskKind::Classification { .. } => softmax(&logits),
        TaskKind::Regression => logits,
    })
}

/// Class index with the highest probability; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine pass through all layers; hidden activations applied, output linear.
fn raw_output(model: &ModelParams, features: &[f64]) -> Vec<f64> {
    let dims = model.arch.layer_dims();
    let n_layers = dims.len() - 1;
    let mut activ = features.to_vec();
    let mut offset = 0;
    for l in 0..n_layers {
        let (din, dout) = (dims[l], dims[l + 1]);
        let weights = &model.params[offset..offset + din * dout];
        let biases = &model.params[offset + din * dout..offset + (din + 1) * dout];
        let mut next = Vec::with_capacity(dout);
        for o in 0..dout {
            let row = &weights[o * din..(o + 1) * din];
            let mut z = biases[o];
            for (w, a) in row.iter().zip(activ.iter()) {
                z += w * a;
            }
            next.push(if l + 1 < n_layers {
                model.arch.activation.apply(z)
            } else {
                z
            });
        }
        activ = next;
        offset += (din + 1) * dout;
    }
    activ
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPath;

    fn cls_arch(input: usize, hidden: Vec<usize>, classes: usize) -> ArchDescriptor {
        ArchDescriptor::new(
            input,
            hidden,
            TaskKind::Classification { classes },
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn param_count_single_linear_layer() {
        let arch = ArchDescriptor::new(2, vec![], TaskKind::Regression, Activation::Relu).unwrap();
        assert_eq!(param_count(&arch), 3);
    }

    #[test]
    fn param_count_one_hidden_layer() {
        assert_eq!(param_count(&cls_arch(4, vec![8], 3)), 67);
    }

    #[test]
    fn param_count_desk_scale() {
        // (512+1)*128 + (128+1)*6, cross-checked by an independent script.
        assert_eq!(param_count(&cls_arch(512, vec![128], 6)), 66_438);
    }

    #[test]
    fn classification_needs_two_classes() {
        assert!(ArchDescriptor::new(
            4,
            vec![],
            TaskKind::Classification { classes: 1 },
            Activation::Relu
        )
        .is_err());
    }

    #[test]
    fn init_is_deterministic_per_path() {
        let arch = cls_arch(4, vec![8], 3);
        let a = init_model(&arch, &mut RngStream::new(RngPath::init(9)));
        let b = init_model(&arch, &mut RngStream::new(RngPath::init(9)));
        assert_eq!(a.params, b.params);
        let c = init_model(&arch, &mut RngStream::new(RngPath::init(10)));
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn init_biases_are_exactly_zero() {
        let arch = cls_arch(4, vec![8], 3);
        let m = init_model(&arch, &mut RngStream::new(RngPath::init(1)));
        // layer 0: 32 weights then 8 biases; layer 1: 24 weights then 3 biases
        for i in 32..40 {
            assert_eq!(m.params[i], 0.0);
        }
        for i in 64..67 {
            assert_eq!(m.params[i], 0.0);
        }
    }

    #[test]
    fn init_weight_mean_matches_uniform_law() {
        // Monte-Carlo check: per-layer sample mean over 1e5 draws stays
        // within 0.01 * s of zero.
        let arch = cls_arch(1000, vec![100], 2);
        let m = init_model(&arch, &mut RngStream::new(RngPath::init(3)));
        let n = 1000 * 100;
        let s = (6.0 / 1100.0_f64).sqrt();
        let mean: f64 = m.params[..n].iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01 * s, "mean {mean} vs bound {}", 0.01 * s);
        for &w in &m.params[..n] {
            assert!(w > -s && w < s);
        }
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let m = ModelParams::zeros(cls_arch(4, vec![], 6));
        let p = forward(&m, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        for &v in &p {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_params_regression_outputs_zero() {
        let arch =
            ArchDescriptor::new(3, vec![4], TaskKind::Regression, Activation::Tanh).unwrap();
        let m = ModelParams::zeros(arch);
        assert_eq!(forward(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_layer_softmax_closed_form() {
        // weights [[1,0],[0,1]], bias [0,0], input [3,-1]
        let arch = cls_arch(2, vec![], 2);
        let m = ModelParams::new(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = forward(&m, &[3.0, -1.0]).unwrap();
        let e3 = 3.0_f64.exp();
        let em1 = (-1.0_f64).exp();
        assert!((p[0] - e3 / (e3 + em1)).abs() < 1e-15);
        assert!((p[1] - em1 / (e3 + em1)).abs() < 1e-15);
        assert!((p[0] - 0.9820137900379085).abs() < 1e-12);
        assert!((p[1] - 0.017986209962091555).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let m = ModelParams::zeros(cls_arch(4, vec![], 2));
        assert!(matches!(
            forward(&m, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn forward_counter_ticks_per_call() {
        let m = ModelParams::zeros(cls_arch(2, vec![], 2));
        let before = forward_passes_on_thread();
        for _ in 0..5 {
            forward(&m, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(forward_passes_on_thread() - before, 5);
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.0, 0.2, 0.8]), 2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(logits in proptest::collection::vec(-30.0_f64..30.0, 2..12)) {
                let p = softmax(&logits);
                let sum: f64 = p.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
