//! Reference implementations shared by the property and acceptance suites.
#![allow(dead_code)]

use ilpo::nn::{self, Activation, Mlp, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Pre-activations and outputs of every layer, by explicit loops.
pub fn naive_forward(net: &Mlp, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pre_all = Vec::new();
    let mut out = Vec::new();
    for row in x {
        let mut h = row.clone();
        for l in net.layers() {
            let (rows, cols) = (l.fan_out(), l.fan_in());
            let w = l.weight.data();
            let mut z: Vec<f64> = (0..rows)
                .map(|i| l.bias.data()[i] + (0..cols).map(|j| w[i * cols + j] * h[j]).sum::<f64>())
                .collect();
            pre_all.push(z.clone());
            match l.activation {
                Activation::LeakyRelu => z.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= 0.2
                    }
                }),
                Activation::Linear => {}
                Activation::Softmax => {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                    z.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
                }
            }
            h = z;
        }
        out.push(h);
    }
    (pre_all, out.concat())
}

pub fn naive_loss(net: &Mlp, x: &[Vec<f64>], target: &Target) -> f64 {
    let (_, out) = naive_forward(net, x);
    let w = net.output_width();
    let n = x.len() as f64;
    match target {
        Target::Regression(t) => out.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n,
        Target::Labels(labels) => {
            labels
                .iter()
                .enumerate()
                .map(|(r, &y)| {
                    let row = &out[r * w..(r + 1) * w];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y]
                })
                .sum::<f64>()
                / n
        }
    }
}

#[derive(Debug)]
pub enum Target {
    Regression(Vec<f64>),
    Labels(Vec<usize>),
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_case(seed: u64) -> (Mlp, Vec<Vec<f64>>, Target) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=4);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=6)).collect();
    let tags = [Activation::LeakyRelu, Activation::Linear, Activation::Softmax];
    let mut acts: Vec<Activation> = (0..depth).map(|_| tags[rng.gen_range(0..3)]).collect();
    let classify = rng.gen_bool(0.5) && widths[depth] > 1;
    if classify {
        acts[depth - 1] = Activation::Linear;
    }
    let mut net = Mlp::init_with(&widths, &acts, rng.gen()).unwrap();
    for l in net.layers_mut() {
        l.bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let batch = rng.gen_range(1..=4);
    let x: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..widths[0]).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let target = if classify {
        Target::Labels((0..batch).map(|_| rng.gen_range(0..widths[depth])).collect())
    } else {
        Target::Regression((0..batch * widths[depth]).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    (net, x, target)
}

pub fn tape_gradients(net: &Mlp, x: &[Vec<f64>], target: &Target) -> nn::MlpGrads {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_rows(x).unwrap());
    let (out, vars) = net.forward_tape(&mut tape, xv).unwrap();
    let loss = match target {
        Target::Regression(t) => {
            let tv = tape.constant(Tensor::new(vec![x.len(), net.output_width()], t.clone()).unwrap());
            tape.mse(out, tv).unwrap()
        }
        Target::Labels(y) => tape.cross_entropy(out, y).unwrap(),
    };
    let g = tape.backward(loss).unwrap();
    vars.grads(&g)
}


/// Largest relative error between tape gradients and central differences
/// over every parameter of a random net, or `None` when a leaky-relu kink
/// lies within reach of the probe step.
pub fn gradient_check(seed: u64) -> Option<f64> {
    let (net, x, target) = random_case(seed);
    let (pre, _) = naive_forward(&net, &x);
    if !pre.iter().flatten().all(|v| v.abs() > 1e-3) {
        return None;
    }
    let grads = tape_gradients(&net, &x, &target);
    let mut worst: f64 = 0.0;
    for (li, (gw, gb)) in grads.layers.iter().enumerate() {
        for (which, g) in [(0, gw), (1, gb)] {
            for i in 0..g.len() {
                let probe = |delta: f64| {
                    let mut n = net.clone();
                    let l = &mut n.layers_mut()[li];
                    let t = if which == 0 { &mut l.weight } else { &mut l.bias };
                    t.data_mut()[i] += delta;
                    naive_loss(&n, &x, &target)
                };
                let numeric = (probe(H) - probe(-H)) / (2.0 * H);
                worst = worst.max(rel_err(g.data()[i], numeric));
            }
        }
    }
    Some(worst)
}
