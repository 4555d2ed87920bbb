//! Offline learning of a latent forward model and a latent prior from
//! state-only demonstrations.
//!
//! The generator predicts one state difference per latent action. Only the
//! prediction closest to the observed difference is penalised
//! (winner-take-all), so each latent action specialises on one cluster of
//! transitions. The prior is trained so that the prior-weighted mixture of
//! the (frozen) predictions matches the observed next state.

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
pub use crate::nn::Standardizer;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::experts::DemoDataset;
use crate::nn::{self, Activation, AdamConfig, Mlp, MlpVars, Optimizer, Tape, Tensor, Var};
use crate::seed;

pub const EMBED_HIDDEN: usize = 128;
pub const EMBED_WIDTH: usize = 256;
pub const GENERATOR_HIDDEN: usize = 128;

/// State embedding `d -> 128 -> lrelu -> 256`, shared by every network
/// family in the suite.
pub fn state_embedding(state_dim: usize, seed: u64) -> Result<Mlp> {
    Mlp::init(&[state_dim, EMBED_HIDDEN, EMBED_WIDTH], Activation::LeakyRelu, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step1Config {
    pub latent_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fit per-dimension input and output scalers on the demonstrations.
    pub standardize: bool,
}

impl Default for Step1Config {
    fn default() -> Self {
        Step1Config {
            latent_count: 2,
            epochs: 1000,
            batch_size: 32,
            learning_rate: 2e-4,
            seed: 0,
            standardize: true,
        }
    }
}

impl Step1Config {
    /// Defaults with one latent action per real action.
    pub fn for_env(spec: &EnvSpec) -> Self {
        Step1Config {
            latent_count: spec.action_count,
            ..Default::default()
        }
    }
}

/// The three step-1 losses for a pair or a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step1Losses {
    pub min: f64,
    pub expectation: f64,
    pub policy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPolicyNet {
    state_dim: usize,
    latent_count: usize,
    input_scale: Standardizer,
    delta_scale: Standardizer,
    embed: Mlp,
    latent_embed: Mlp,
    generator: Mlp,
    policy_head: Mlp,
}

struct Bound {
    embed: MlpVars,
    latent_embed: MlpVars,
    generator: MlpVars,
    policy_head: MlpVars,
}

struct BatchGraph {
    min: Var,
    expectation: Var,
    policy: Var,
    bound: Bound,
}

impl LatentPolicyNet {
    pub fn new(state_dim: usize, latent_count: usize, seed: u64) -> Result<Self> {
        if latent_count == 0 {
            return Err(Error::InvalidArchitecture("need at least one latent action".into()));
        }
        Ok(LatentPolicyNet {
            state_dim,
            latent_count,
            input_scale: Standardizer::identity(state_dim),
            delta_scale: Standardizer::identity(state_dim),
            embed: state_embedding(state_dim, seed::derive(seed, 0))?,
            latent_embed: Mlp::init(&[latent_count, EMBED_WIDTH], Activation::Linear, seed::derive(seed, 1))?,
            generator: Mlp::init(
                &[2 * EMBED_WIDTH, GENERATOR_HIDDEN, state_dim],
                Activation::LeakyRelu,
                seed::derive(seed, 2),
            )?,
            policy_head: Mlp::init(&[EMBED_WIDTH, latent_count], Activation::Linear, seed::derive(seed, 3))?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn latent_count(&self) -> usize {
        self.latent_count
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Mlp {
        &mut self.generator
    }

    pub fn policy_head(&self) -> &Mlp {
        &self.policy_head
    }

    pub fn policy_head_mut(&mut self) -> &mut Mlp {
        &mut self.policy_head
    }

    fn check_dim(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::Shape(format!(
                "state of dimension {} for a model of dimension {}",
                s.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Fixed affine maps applied to embedding inputs and generator outputs.
    pub fn scalers(&self) -> (&Standardizer, &Standardizer) {
        (&self.input_scale, &self.delta_scale)
    }

    pub fn set_scalers(&mut self, input: Standardizer, delta: Standardizer) -> Result<()> {
        if input.dim() != self.state_dim || delta.dim() != self.state_dim {
            return Err(Error::Shape("scaler dimension differs from the state dimension".into()));
        }
        self.input_scale = input;
        self.delta_scale = delta;
        Ok(())
    }

    /// `E_p(s)`.
    pub fn embed(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s)?;
        self.embed.forward_one(&self.input_scale.normalize(s))
    }

    /// Generator outputs `G(E_p(s), z)` for every `z`, in latent order.
    pub fn predict_deltas(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        let e = self.embed(s)?;
        let k = self.latent_count;
        let codes = self.latent_embed.forward(&nn::identity(k))?;
        let mut joint = Vec::with_capacity(k * 2 * EMBED_WIDTH);
        for z in 0..k {
            joint.extend(e.iter().map(|&v| leaky(v)));
            joint.extend(codes.row_slice(z).iter().map(|&v| leaky(v)));
        }
        let out = self.generator.forward(&Tensor::new(vec![k, 2 * EMBED_WIDTH], joint)?)?;
        Ok((0..k).map(|z| self.delta_scale.denormalize(out.row_slice(z))).collect())
    }

    /// `s + G(E_p(s), z)` for every latent action.
    pub fn predict_transitions(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .predict_deltas(s)?
            .into_iter()
            .map(|d| d.iter().zip(s).map(|(a, b)| a + b).collect())
            .collect())
    }

    pub fn latent_logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        let e: Vec<f64> = self.embed(s)?.into_iter().map(leaky).collect();
        self.policy_head.forward_one(&e)
    }

    /// `pi(z | E_p(s))`.
    pub fn latent_prior(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(nn::softmax(&self.latent_logits(s)?))
    }

    /// Most probable latent action; ties go to the lowest index.
    pub fn choose_latent(&self, s: &[f64]) -> Result<usize> {
        Ok(nn::argmax(&self.latent_logits(s)?))
    }

    /// Losses for a single consecutive pair.
    pub fn step1_losses(&self, s: &[f64], s_next: &[f64]) -> Result<Step1Losses> {
        self.check_dim(s)?;
        self.check_dim(s_next)?;
        self.batch_losses(&Tensor::row(s), &Tensor::row(s_next))
    }

    /// Mean losses over a batch of pairs.
    pub fn batch_losses(&self, states: &Tensor, next: &Tensor) -> Result<Step1Losses> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, states, next)?;
        Ok(Step1Losses {
            min: tape.value(g.min).item(),
            expectation: tape.value(g.expectation).item(),
            policy: tape.value(g.policy).item(),
        })
    }

    fn record(&self, tape: &mut Tape, states: &Tensor, next: &Tensor) -> Result<BatchGraph> {
        if states.cols() != self.state_dim || !states.same_matrix_shape(next) {
            return Err(Error::Shape("step-1 batch does not match the state dimension".into()));
        }
        let rows = states.rows();
        let delta: Vec<f64> = next.data().iter().zip(states.data()).map(|(n, s)| n - s).collect();
        let s = tape.constant(states.clone());
        let s_in = tape.constant(self.input_scale.normalize_rows(states));
        let s_next = tape.constant(next.clone());
        let delta = tape.constant(Tensor::new(vec![rows, self.state_dim], delta)?);
        let out_scale = tape.constant(self.delta_scale.repeat_scale(rows));
        let out_offset = tape.constant(self.delta_scale.repeat_offset(rows));

        let bound = Bound {
            embed: self.embed.bind(tape),
            latent_embed: self.latent_embed.bind(tape),
            generator: self.generator.bind(tape),
            policy_head: self.policy_head.bind(tape),
        };
        let e = bound.embed.apply(tape, s_in)?;

        let mut errors = Vec::with_capacity(self.latent_count);
        let mut frozen = Vec::with_capacity(self.latent_count);
        for z in 0..self.latent_count {
            let onehot = tape.constant(nn::one_hot_rows(z, self.latent_count, rows));
            let code = bound.latent_embed.apply(tape, onehot)?;
            let joint = tape.concat(e, code)?;
            let joint = tape.leaky_relu(joint, nn::LEAK)?;
            let d = bound.generator.apply(tape, joint)?;
            let d = tape.mul(d, out_scale)?;
            let d = tape.add(d, out_offset)?;
            errors.push(tape.row_squared_error(d, delta)?);
            let pred = tape.add(s, d)?;
            frozen.push(tape.stop_gradient(pred)?);
        }
        let nearest = tape.row_min(&errors)?;
        let min = tape.mean(nearest)?;

        let h = tape.leaky_relu(e, nn::LEAK)?;
        let logits = bound.policy_head.apply(tape, h)?;
        let prior = tape.softmax(logits)?;
        let expected = tape.mixture(prior, &frozen)?;
        let expectation = tape.mse(expected, s_next)?;
        let policy = tape.add(min, expectation)?;
        Ok(BatchGraph {
            min,
            expectation,
            policy,
            bound,
        })
    }

    /// Embedding, latent code, generator and policy head, in that order.
    pub fn networks_mut(&mut self) -> [&mut Mlp; 4] {
        [
            &mut self.embed,
            &mut self.latent_embed,
            &mut self.generator,
            &mut self.policy_head,
        ]
    }

    pub fn networks(&self) -> [&Mlp; 4] {
        [&self.embed, &self.latent_embed, &self.generator, &self.policy_head]
    }

    /// One Adam step on the combined loss of a batch.
    fn train_batch(&mut self, opt: &mut Optimizer, states: &Tensor, next: &Tensor) -> Result<Step1Losses> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, states, next)?;
        let losses = Step1Losses {
            min: tape.value(g.min).item(),
            expectation: tape.value(g.expectation).item(),
            policy: tape.value(g.policy).item(),
        };
        if !losses.policy.is_finite() {
            return Err(Error::Divergence(format!("non-finite step-1 loss {}", losses.policy)));
        }
        let grads = tape.backward(g.policy)?;
        let grads = [
            g.bound.embed.grads(&grads),
            g.bound.latent_embed.grads(&grads),
            g.bound.generator.grads(&grads),
            g.bound.policy_head.grads(&grads),
        ];
        opt.step(&mut self.networks_mut(), &grads)?;
        Ok(losses)
    }

    /// Losses of a batch and the gradient of their sum, per sub-network.
    pub fn policy_gradients(&self, states: &Tensor, next: &Tensor) -> Result<(Step1Losses, [nn::MlpGrads; 4])> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, states, next)?;
        let losses = Step1Losses {
            min: tape.value(g.min).item(),
            expectation: tape.value(g.expectation).item(),
            policy: tape.value(g.policy).item(),
        };
        let grads = tape.backward(g.policy)?;
        Ok((
            losses,
            [
                g.bound.embed.grads(&grads),
                g.bound.latent_embed.grads(&grads),
                g.bound.generator.grads(&grads),
                g.bound.policy_head.grads(&grads),
            ],
        ))
    }

    /// Gradients of the expected-next-state loss alone, per sub-network
    /// (embedding, latent code, generator, policy head).
    pub fn expectation_gradients(&self, states: &Tensor, next: &Tensor) -> Result<[nn::MlpGrads; 4]> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, states, next)?;
        let grads = tape.backward(g.expectation)?;
        Ok([
            g.bound.embed.grads(&grads),
            g.bound.latent_embed.grads(&grads),
            g.bound.generator.grads(&grads),
            g.bound.policy_head.grads(&grads),
        ])
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}state_dim"), self.state_dim);
        ck.set_meta(&format!("{prefix}latent_count"), self.latent_count);
        self.input_scale.save_into(ck, &format!("{prefix}input"));
        self.delta_scale.save_into(ck, &format!("{prefix}delta"));
        for (name, net) in ["embed", "latent_embed", "generator", "policy_head"].iter().zip(self.networks()) {
            ck.push_net(format!("{prefix}{name}"), net);
        }
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let state_dim: usize = ck.meta_as(&format!("{prefix}state_dim"))?;
        let latent_count: usize = ck.meta_as(&format!("{prefix}latent_count"))?;
        let net = |n: &str| ck.net(&format!("{prefix}{n}")).cloned();
        let out = LatentPolicyNet {
            state_dim,
            latent_count,
            input_scale: Standardizer::load_from(ck, &format!("{prefix}input"), state_dim)?,
            delta_scale: Standardizer::load_from(ck, &format!("{prefix}delta"), state_dim)?,
            embed: net("embed")?,
            latent_embed: net("latent_embed")?,
            generator: net("generator")?,
            policy_head: net("policy_head")?,
        };
        let ok = out.embed.input_width() == state_dim
            && out.embed.output_width() == EMBED_WIDTH
            && out.latent_embed.widths() == [latent_count, EMBED_WIDTH]
            && out.generator.input_width() == 2 * EMBED_WIDTH
            && out.generator.output_width() == state_dim
            && out.policy_head.widths() == [EMBED_WIDTH, latent_count];
        if !ok {
            return Err(Error::InvalidArchitecture("latent policy checkpoint widths do not chain".into()));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("latent_policy");
        self.save_into(&mut ck, "");
        ck
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        nn::LEAK * v
    }
}

/// Trained network plus the per-epoch mean losses.
#[derive(Clone, Debug)]
pub struct Step1Outcome {
    pub net: LatentPolicyNet,
    pub trace: Vec<Step1Losses>,
}

/// Minibatch Adam on `L_min + L_exp` over every within-episode pair.
pub fn train_step1(demos: &DemoDataset, cfg: &Step1Config) -> Result<Step1Outcome> {
    let pairs: Vec<(&[f64], &[f64])> = demos.pairs().collect();
    if pairs.is_empty() {
        return Err(Error::Config("demonstrations contain no transitions".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let d = demos.spec.state_dim;
    let mut net = LatentPolicyNet::new(d, cfg.latent_count, cfg.seed)?;
    if cfg.standardize {
        let states: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
        let deltas: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(a, b)| b.iter().zip(a.iter()).map(|(x, y)| x - y).collect())
            .collect();
        net.set_scalers(Standardizer::fit(&states), Standardizer::fit(&deltas))?;
    }
    let mut opt = Optimizer::new(&net.networks(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = seed::rng(seed::derive(cfg.seed, 100));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut s = Vec::with_capacity(chunk.len() * d);
            let mut n = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                s.extend_from_slice(pairs[i].0);
                n.extend_from_slice(pairs[i].1);
            }
            let s = Tensor::new(vec![chunk.len(), d], s)?;
            let n = Tensor::new(vec![chunk.len(), d], n)?;
            let l = net
                .train_batch(&mut opt, &s, &n)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            sums[0] += l.min;
            sums[1] += l.expectation;
            sums[2] += l.policy;
            batches += 1;
        }
        let b = batches as f64;
        trace.push(Step1Losses {
            min: sums[0] / b,
            expectation: sums[1] / b,
            policy: sums[2] / b,
        });
    }
    Ok(Step1Outcome { net, trace })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn zero(net: &mut Mlp) {
        for l in net.layers_mut() {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().fill(0.0);
        }
    }

    /// Net whose z-th generator output is `candidates[z]` for every state and
    /// whose prior logits are `logits` everywhere.
    pub fn fixed_net(candidates: &[Vec<f64>], logits: &[f64]) -> LatentPolicyNet {
        let k = candidates.len();
        let d = candidates[0].len();
        let mut net = LatentPolicyNet::new(d, k, 1).unwrap();
        let [embed, latent, generator, head] = net.networks_mut();
        for m in [&mut *embed, &mut *latent, &mut *generator, &mut *head] {
            zero(m);
        }
        for (z, candidate) in candidates.iter().enumerate() {
            latent.layers_mut()[0].weight.data_mut()[z * k + z] = 1.0;
            generator.layers_mut()[0].weight.data_mut()[z * 2 * EMBED_WIDTH + EMBED_WIDTH + z] = 1.0;
            for (i, &c) in candidate.iter().enumerate() {
                generator.layers_mut()[1].weight.data_mut()[i * GENERATOR_HIDDEN + z] = c;
            }
        }
        head.layers_mut()[0].bias.data_mut().copy_from_slice(logits);
        net
    }
}
