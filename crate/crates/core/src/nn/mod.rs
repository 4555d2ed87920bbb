//! Minimal dense neural-network substrate: tensors, a reverse-mode tape,
//! MLPs, losses and Adam.

mod adam;
pub mod linalg;
mod mlp;
mod standardizer;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Optimizer};
pub use mlp::{glorot_bound, Activation, Layer, Mlp, MlpGrads, MlpVars, LEAK};
pub use standardizer::Standardizer;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Sum of squared differences over features, averaged over rows.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if !pred.same_matrix_shape(target) {
        return Err(Error::Shape(format!("mse: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.rows() as f64)
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Index(format!("label {label} for {} logits", logits.len())));
    }
    Ok(tape::log_sum_exp(logits) - logits[label])
}

/// Max-subtracted softmax of one vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    tape::softmax_row(logits)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties resolve to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// `n x n` identity matrix.
pub fn identity(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::new(vec![n, n], data).expect("identity shape")
}

/// One-hot rows for the same index repeated `rows` times.
pub fn one_hot_rows(index: usize, width: usize, rows: usize) -> Tensor {
    let mut data = vec![0.0; rows * width];
    for r in 0..rows {
        data[r * width + index] = 1.0;
    }
    Tensor::new(vec![rows, width], data).expect("one-hot shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = Mlp::init(&[4, 128, 256], Activation::LeakyRelu, 7).unwrap();
        let b = Mlp::init(&[4, 128, 256], Activation::LeakyRelu, 7).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(&[4, 128], Activation::Linear, 1).unwrap();
        assert!(c.layers()[0].bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_fan_bound() {
        // sqrt(6 / (4 + 128)) evaluated by hand: 6/132 = 0.0454545..., sqrt = 0.213200...
        let bound = (6.0f64 / 132.0).sqrt();
        assert!((bound - 0.2132).abs() < 1e-4);
        assert_eq!(glorot_bound(4, 128), bound);
        let net = Mlp::init(&[4, 128, 256], Activation::LeakyRelu, 7).unwrap();
        let w = net.layers()[0].weight.data();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(w.iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(matches!(
            Mlp::init(&[], Activation::Linear, 0),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            Mlp::init(&[3, 0, 2], Activation::Linear, 0),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    fn identity_layer(activation: Activation, n: usize) -> Mlp {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Mlp::from_layers(vec![Layer {
            weight: Tensor::new(vec![n, n], w).unwrap(),
            bias: Tensor::zeros(vec![n]),
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn forward_identity_and_activations() {
        assert_eq!(
            identity_layer(Activation::Linear, 2).forward_one(&[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let y = identity_layer(Activation::LeakyRelu, 3)
            .forward_one(&[-1.0, 0.0, 3.0])
            .unwrap();
        assert!((y[0] + 0.2).abs() < 1e-15 && y[1] == 0.0 && y[2] == 3.0);
        let y = identity_layer(Activation::Softmax, 2).forward_one(&[1000.0, 0.0]).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1] < 1e-12);
    }

    #[test]
    fn forward_shape_mismatch() {
        let net = Mlp::init(&[3, 4], Activation::Linear, 0).unwrap();
        assert!(matches!(net.forward_one(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let net = Mlp::init(&[3, 5, 2], Activation::LeakyRelu, 3).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.2, -0.7]]).unwrap();
        let direct = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (y, _) = net.forward_tape(&mut tape, xv).unwrap();
        for (a, b) in direct.data().iter().zip(tape.value(y).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_examples() {
        let z = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(mse_loss(&z, &z).unwrap(), 0.0);
        let p = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(mse_loss(&p, &z).unwrap(), 1.0);
        let p = Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let zz = Tensor::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(mse_loss(&p, &zz).unwrap(), 0.5);
        assert!(matches!(mse_loss(&p, &z), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy_loss(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((cross_entropy_loss(&[2f64.ln(), 0.0], 0).unwrap() - 1.5f64.ln()).abs() < 1e-12);
        let sat = cross_entropy_loss(&[50.0, 0.0], 0).unwrap();
        assert!(sat.is_finite() && sat < 1e-20);
        assert!(matches!(cross_entropy_loss(&[0.0, 0.0], 2), Err(Error::Index(_))));
    }

    #[test]
    fn tape_cross_entropy_matches_direct() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_rows(&[[2f64.ln(), 0.0]]).unwrap());
        let loss = tape.cross_entropy(l, &[0]).unwrap();
        assert!((tape.value(loss).item() - 1.5f64.ln()).abs() < 1e-12);
        assert!(matches!(tape.cross_entropy(l, &[5]), Err(Error::Index(_))));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.wrt(w).item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let v = tape.param(Tensor::scalar(2.0));
        let frozen = tape.stop_gradient(w).unwrap();
        let prod = tape.mul(frozen, v).unwrap();
        let g = tape.backward(prod).unwrap();
        assert_eq!(g.wrt(w).item(), 0.0);
        assert_eq!(g.wrt(v).item(), 3.0);
    }

    #[test]
    fn foreign_loss_is_a_tape_error() {
        let mut other = Tape::new();
        let x = other.param(Tensor::scalar(1.0));
        let tape = Tape::new();
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
        let mut t2 = Tape::new();
        let m = t2.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        assert!(matches!(t2.backward(m), Err(Error::Tape(_))));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut net = Mlp::init(&[3, 4, 2], Activation::LeakyRelu, 1).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamConfig::default());
        for _ in 0..5 {
            let g = net.zero_grads();
            st.step(&mut net, &g).unwrap();
        }
        assert_eq!(net, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = Mlp::from_layers(vec![Layer {
            weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
            activation: Activation::Linear,
        }])
        .unwrap();
        let mut grads = net.zero_grads();
        grads.layers[0].0 = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
        let mut st = AdamState::new(&net, AdamConfig::with_learning_rate(0.1));
        st.step(&mut net, &grads).unwrap();
        let w = net.layers()[0].weight.data()[0];
        assert!((w - (1.0 - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::init(&[2, 2], Activation::Linear, 1).unwrap();
        let before = net.clone();
        let mut grads = net.zero_grads();
        grads.layers[0].1.data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&net, AdamConfig::default());
        assert!(matches!(st.step(&mut net, &grads), Err(Error::Divergence(_))));
        assert_eq!(net, before);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn argmax_argmin_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmin(&[1.0, 1.0, 0.0, 0.0]), 2);
    }
}
