//! Batch loss and analytic gradient via backpropagation.
//!
//! Classification uses mean cross-entropy over a softmax head; regression
//! uses mean squared error over a linear head. The gradient is laid out in
//! the same canonical flat order as the parameters.

use crate::data::{DataPoint, Target};
use crate::error::{Error, Result};
use crate::model::{softmax, ModelParams, TaskKind};

/// Mean loss over the batch and its gradient with respect to every
/// parameter. Pure in `(model, batch)`; the batch order fixes the summation
/// order, so results are bit-reproducible.
pub fn loss_and_grad(model: &ModelParams, batch: &[&DataPoint]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dims = model.arch.layer_dims();
    let n_layers = dims.len() - 1;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params.len()];

    // Layer parameter offsets into the flat vector.
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for w in dims.windows(2) {
        offsets.push(off);
        off += (w[0] + 1) * w[1];
    }

    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers); // z per layer
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers); // activations per layer

    for point in batch {
        if point.features.len() != model.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: model.arch.input_dim,
                got: point.features.len(),
            });
        }
        pre.clear();
        post.clear();

        // Forward, keeping intermediates.
        let mut activ = point.features.clone();
        for l in 0..n_layers {
            let (din, dout) = (dims[l], dims[l + 1]);
            let weights = &model.params[offsets[l]..offsets[l] + din * dout];
            let biases = &model.params[offsets[l] + din * dout..offsets[l] + (din + 1) * dout];
            let mut z = Vec::with_capacity(dout);
            for o in 0..dout {
                let row = &weights[o * din..(o + 1) * din];
                let mut acc = biases[o];
                for (w, a) in row.iter().zip(activ.iter()) {
                    acc += w * a;
                }
                z.push(acc);
            }
            let a: Vec<f64> = if l + 1 < n_layers {
                z.iter().map(|&v| model.arch.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a.clone());
            activ = a;
        }

        // Loss and output-layer delta (d loss / d z_L).
        let output = &post[n_layers - 1];
        let mut delta: Vec<f64> = match (model.arch.task, point.target) {
            (TaskKind::Classification { classes }, Target::Class(c)) => {
                if c >= classes {
                    return Err(Error::InvalidDataset(format!(
                        "point {} has class {c}, expected < {classes}",
                        point.point_id
                    )));
                }
                let probs = softmax(output);
                loss += -probs[c].ln();
                let mut d = probs;
                d[c] -= 1.0;
                d
            }
            (TaskKind::Regression, Target::Value(t)) => {
                let y = output[0];
                loss += (y - t) * (y - t);
                vec![2.0 * (y - t)]
            }
            _ => {
                return Err(Error::InvalidDataset(format!(
                    "point {} target does not match the model task",
                    point.point_id
                )));
            }
        };

        // Backward.
        for l in (0..n_layers).rev() {
            let (din, dout) = (dims[l], dims[l + 1]);
            let input: &[f64] = if l == 0 {
                &point.features
            } else {
                &post[l - 1]
            };
            let gw = offsets[l];
            for o in 0..dout {
                for i in 0..din {
                    grad[gw + o * din + i] += delta[o] * input[i];
                }
                grad[gw + din * dout + o] += delta[o];
            }
            if l > 0 {
                let weights = &model.params[offsets[l]..offsets[l] + din * dout];
                let mut prev = vec![0.0; din];
                for o in 0..dout {
                    let row = &weights[o * din..(o + 1) * din];
                    for i in 0..din {
                        prev[i] += row[i] * delta[o];
                    }
                }
                for i in 0..din {
                    prev[i] *= model.arch.activation.derivative(pre[l - 1][i]);
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchDescriptor, Activation};

    fn point(features: Vec<f64>, target: Target) -> DataPoint {
        DataPoint {
            point_id: 0,
            user_id: "u".into(),
            features,
            target,
        }
    }

    #[test]
    fn zero_params_binary_loss_is_ln_two() {
        let arch = ArchDescriptor::new(
            3,
            vec![],
            TaskKind::Classification { classes: 2 },
            Activation::Relu,
        )
        .unwrap();
        let model = ModelParams::zeros(arch);
        let p0 = point(vec![1.0, -1.0, 2.0], Target::Class(0));
        let p1 = point(vec![0.5, 0.5, 0.5], Target::Class(1));
        let (loss, _) = loss_and_grad(&model, &[&p0, &p1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn regression_exact_fit_has_zero_loss_and_grad() {
        let arch =
            ArchDescriptor::new(2, vec![], TaskKind::Regression, Activation::Relu).unwrap();
        let model = ModelParams::zeros(arch);
        let p = point(vec![0.0, 0.0], Target::Value(0.0));
        let (loss, grad) = loss_and_grad(&model, &[&p]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let arch =
            ArchDescriptor::new(2, vec![], TaskKind::Regression, Activation::Relu).unwrap();
        let model = ModelParams::zeros(arch);
        assert!(matches!(loss_and_grad(&model, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn target_kind_mismatch_is_rejected() {
        let arch =
            ArchDescriptor::new(2, vec![], TaskKind::Regression, Activation::Relu).unwrap();
        let model = ModelParams::zeros(arch);
        let p = point(vec![1.0, 2.0], Target::Class(0));
        assert!(loss_and_grad(&model, &[&p]).is_err());
    }

    /// Central finite differences, the independent gradient oracle.
    pub(crate) fn finite_difference_grad(
        model: &ModelParams,
        batch: &[&DataPoint],
        h: f64,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.params.len());
        for i in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            let (lp, _) = loss_and_grad(&plus, batch).unwrap();
            let (lm, _) = loss_and_grad(&minus, batch).unwrap();
            out.push((lp - lm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use crate::rng::{RngPath, RngStream};
        let mut rng = RngStream::new(RngPath::purpose(77, "gradcheck"));
        let arch = ArchDescriptor::new(
            4,
            vec![6, 5],
            TaskKind::Classification { classes: 3 },
            Activation::Tanh,
        )
        .unwrap();
        let mut model = crate::model::init_model(&arch, &mut rng);
        for p in model.params.iter_mut() {
            *p += 0.1 * rng.standard_normal();
        }
        let batch: Vec<DataPoint> = (0..5)
            .map(|i| DataPoint {
                point_id: i,
                user_id: "u".into(),
                features: (0..4).map(|_| rng.standard_normal()).collect(),
                target: Target::Class((rng.next_u64() % 3) as usize),
            })
            .collect();
        let refs: Vec<&DataPoint> = batch.iter().collect();
        let (_, analytic) = loss_and_grad(&model, &refs).unwrap();
        let numeric = finite_difference_grad(&model, &refs, 1e-5);
        let max_err = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max grad error {max_err}");
    }
}
