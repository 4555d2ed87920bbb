//! Behavioral cloning with true actions, and behavioral cloning from
//! observation through a self-supervised inverse dynamics model.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::experts::DemoDataset;
use crate::latent_policy::{state_embedding, EMBED_HIDDEN, EMBED_WIDTH};
use crate::nn::{self, Activation, AdamConfig, Mlp, MlpGrads, Optimizer, Standardizer, Tape, Tensor};
use crate::seed::{self, Rng};

fn batch_tensor(scale: &Standardizer, rows: &[&[f64]]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|s| {
            if s.len() != scale.dim() {
                Err(Error::Shape(format!("state of dimension {} for a model of dimension {}", s.len(), scale.dim())))
            } else {
                Ok(scale.normalize(s))
            }
        })
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

fn check_labels(labels: &[usize], action_count: usize) -> Result<()> {
    match labels.iter().find(|&&a| a >= action_count) {
        Some(a) => Err(Error::Index(format!("action {a} of {action_count}"))),
        None => Ok(()),
    }
}

/// One cross-entropy update of a plain classifier; returns the loss.
fn classifier_step(net: &mut Mlp, opt: &mut Optimizer, x: Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (logits, vars) = net.forward_tape(&mut tape, xv)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("non-finite classification loss {value}")));
    }
    let g = tape.backward(loss)?;
    opt.step(&mut [net], &[vars.grads(&g)])?;
    Ok(value)
}

/// `pi(a | s)` learned from state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct BcNet {
    input_scale: Standardizer,
    net: Mlp,
}

impl BcNet {
    pub fn new(state_dim: usize, action_count: usize, seed: u64) -> Result<Self> {
        Ok(BcNet {
            input_scale: Standardizer::identity(state_dim),
            net: Mlp::init(&[state_dim, EMBED_HIDDEN, EMBED_WIDTH, action_count], Activation::LeakyRelu, seed)?,
        })
    }

    pub fn action_count(&self) -> usize {
        self.net.output_width()
    }

    pub fn logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        let x = batch_tensor(&self.input_scale, &[s])?;
        Ok(self.net.forward(&x)?.into_data())
    }

    pub fn probabilities(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(nn::softmax(&self.logits(s)?))
    }

    pub fn greedy_action(&self, s: &[f64]) -> Result<usize> {
        Ok(nn::argmax(&self.logits(s)?))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}state_dim"), self.input_scale.dim());
        self.input_scale.save_into(ck, &format!("{prefix}input"));
        ck.push_net(format!("{prefix}policy"), &self.net);
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let d: usize = ck.meta_as(&format!("{prefix}state_dim"))?;
        let net = ck.net(&format!("{prefix}policy"))?.clone();
        if net.input_width() != d {
            return Err(Error::InvalidArchitecture("policy input width differs from state dimension".into()));
        }
        Ok(BcNet {
            input_scale: Standardizer::load_from(ck, &format!("{prefix}input"), d)?,
            net,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 1000,
            batch_size: 32,
            learning_rate: 2e-4,
            seed: 0,
            standardize: true,
        }
    }
}

/// Supervised cross-entropy on every `(s_t, a_t)` in the demonstrations.
pub fn train_bc(demos: &DemoDataset, cfg: &BcConfig) -> Result<BcNet> {
    let data = demos.state_actions()?;
    if data.is_empty() {
        return Err(Error::Config("demonstrations contain no states".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let spec = demos.spec;
    let mut bc = BcNet::new(spec.state_dim, spec.action_count, seed::derive(cfg.seed, 0))?;
    if cfg.standardize {
        let states: Vec<&[f64]> = data.iter().map(|p| p.0).collect();
        bc.input_scale = Standardizer::fit(&states);
    }
    let labels: Vec<usize> = data.iter().map(|p| p.1).collect();
    check_labels(&labels, spec.action_count)?;
    let mut opt = Optimizer::new(&[&bc.net], AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = seed::rng(seed::derive(cfg.seed, 1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data[i].0).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = batch_tensor(&bc.input_scale, &rows)?;
            classifier_step(&mut bc.net, &mut opt, x, &y).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
        }
    }
    Ok(bc)
}

pub const BCO_HEAD_WIDTHS: [usize; 2] = [64, 32];

/// Policy `pi(a | s)` plus inverse dynamics `f(a | s_t, s_{t+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct BcoModel {
    input_scale: Standardizer,
    policy: Mlp,
    inverse_embed: Mlp,
    inverse_head: Mlp,
}

impl BcoModel {
    pub fn new(state_dim: usize, action_count: usize, seed: u64) -> Result<Self> {
        if action_count == 0 {
            return Err(Error::InvalidArchitecture("action count must be positive".into()));
        }
        let [h1, h2] = BCO_HEAD_WIDTHS;
        Ok(BcoModel {
            input_scale: Standardizer::identity(state_dim),
            policy: Mlp::init_with(
                &[state_dim, EMBED_HIDDEN, EMBED_WIDTH, h1, h2, action_count],
                &[
                    Activation::LeakyRelu,
                    Activation::Linear,
                    Activation::LeakyRelu,
                    Activation::Linear,
                    Activation::Linear,
                ],
                seed::derive(seed, 0),
            )?,
            inverse_embed: state_embedding(state_dim, seed::derive(seed, 1))?,
            inverse_head: Mlp::init(&[2 * EMBED_WIDTH, action_count], Activation::Linear, seed::derive(seed, 2))?,
        })
    }

    pub fn action_count(&self) -> usize {
        self.policy.output_width()
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn policy_logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        let x = batch_tensor(&self.input_scale, &[s])?;
        Ok(self.policy.forward(&x)?.into_data())
    }

    pub fn greedy_action(&self, s: &[f64]) -> Result<usize> {
        Ok(nn::argmax(&self.policy_logits(s)?))
    }

    pub fn act(&self, s: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return Ok(rng.gen_range(0..self.action_count()));
        }
        self.greedy_action(s)
    }

    fn inverse_joint(&self, states: &[&[f64]], next: &[&[f64]]) -> Result<Tensor> {
        let a = self.inverse_embed.forward(&batch_tensor(&self.input_scale, states)?)?;
        let b = self.inverse_embed.forward(&batch_tensor(&self.input_scale, next)?)?;
        let w = EMBED_WIDTH;
        let mut data = Vec::with_capacity(states.len() * 2 * w);
        for r in 0..states.len() {
            data.extend_from_slice(&a.data()[r * w..(r + 1) * w]);
            data.extend_from_slice(&b.data()[r * w..(r + 1) * w]);
        }
        for v in &mut data {
            if *v < 0.0 {
                *v *= nn::LEAK;
            }
        }
        Tensor::new(vec![states.len(), 2 * w], data)
    }

    /// Inverse-model logits for a batch of transitions, one row each.
    pub fn inverse_logits(&self, states: &[&[f64]], next: &[&[f64]]) -> Result<Tensor> {
        if states.len() != next.len() {
            return Err(Error::Shape(format!("{} states but {} successors", states.len(), next.len())));
        }
        self.inverse_head.forward(&self.inverse_joint(states, next)?)
    }

    /// Most likely action for each transition.
    pub fn infer_actions(&self, states: &[&[f64]], next: &[&[f64]]) -> Result<Vec<usize>> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(states.len());
        for (s, n) in states.chunks(CHUNK).zip(next.chunks(CHUNK)) {
            let logits = self.inverse_logits(s, n)?;
            for r in 0..logits.rows() {
                out.push(nn::argmax(logits.row_slice(r)));
            }
        }
        Ok(out)
    }

    /// Hard inverse-model labels for every demonstration pair.
    pub fn label_demos(&self, demos: &DemoDataset) -> Result<Vec<usize>> {
        let (s, n): (Vec<&[f64]>, Vec<&[f64]>) = demos.pairs().unzip();
        self.infer_actions(&s, &n)
    }

    fn inverse_step(&mut self, opt: &mut Optimizer, batch: &[&Transition]) -> Result<f64> {
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|t| t.action).collect();
        check_labels(&labels, self.action_count())?;
        let mut tape = Tape::new();
        let sv = tape.constant(batch_tensor(&self.input_scale, &states)?);
        let nv = tape.constant(batch_tensor(&self.input_scale, &next)?);
        let embed = self.inverse_embed.bind(&mut tape);
        let head = self.inverse_head.bind(&mut tape);
        let es = embed.apply(&mut tape, sv)?;
        let en = embed.apply(&mut tape, nv)?;
        let joint = tape.concat(es, en)?;
        let joint = tape.leaky_relu(joint, nn::LEAK)?;
        let logits = head.apply(&mut tape, joint)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite inverse-model loss {value}")));
        }
        let g = tape.backward(loss)?;
        let grads: [MlpGrads; 2] = [embed.grads(&g), head.grads(&g)];
        opt.step(&mut [&mut self.inverse_embed, &mut self.inverse_head], &grads)?;
        Ok(value)
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}state_dim"), self.input_scale.dim());
        self.input_scale.save_into(ck, &format!("{prefix}input"));
        ck.push_net(format!("{prefix}policy"), &self.policy);
        ck.push_net(format!("{prefix}inverse_embed"), &self.inverse_embed);
        ck.push_net(format!("{prefix}inverse_head"), &self.inverse_head);
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let d: usize = ck.meta_as(&format!("{prefix}state_dim"))?;
        let out = BcoModel {
            input_scale: Standardizer::load_from(ck, &format!("{prefix}input"), d)?,
            policy: ck.net(&format!("{prefix}policy"))?.clone(),
            inverse_embed: ck.net(&format!("{prefix}inverse_embed"))?.clone(),
            inverse_head: ck.net(&format!("{prefix}inverse_head"))?.clone(),
        };
        let a = out.policy.output_width();
        if out.policy.input_width() != d
            || out.inverse_embed.input_width() != d
            || out.inverse_head.widths() != [2 * out.inverse_embed.output_width(), a]
        {
            return Err(Error::InvalidArchitecture("BCO checkpoint widths do not chain".into()));
        }
        Ok(out)
    }
}

/// A self-collected `(s, a, s')` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcoConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon_train: f64,
    pub standardize: bool,
}

impl BcoConfig {
    pub fn paper() -> Self {
        BcoConfig {
            iterations: 1000,
            inner_steps: 10_000,
            ..Self::default()
        }
    }
}

impl Default for BcoConfig {
    fn default() -> Self {
        BcoConfig {
            iterations: 50,
            steps_per_iteration: 50,
            inner_steps: 1000,
            batch_size: 32,
            learning_rate: 2e-4,
            epsilon_train: 0.2,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BcoOutcome {
    pub model: BcoModel,
    pub transitions: Vec<Transition>,
    pub interactions: usize,
    /// Demo labels produced at the last iteration.
    pub labels: Vec<usize>,
}

pub fn train_bco(demos: &DemoDataset, spec: &EnvSpec, cfg: &BcoConfig, seed: u64) -> Result<BcoOutcome> {
    train_bco_with(demos, spec, cfg, seed, |_, _| Ok(()))
}

/// Alternates self-collection, inverse-model fitting, demo labelling and
/// policy cloning. `observe(interactions, model)` runs after every
/// environment step; at iteration boundaries it sees the retrained model.
pub fn train_bco_with<F>(demos: &DemoDataset, spec: &EnvSpec, cfg: &BcoConfig, seed: u64, mut observe: F) -> Result<BcoOutcome>
where
    F: FnMut(usize, &BcoModel) -> Result<()>,
{
    let (demo_states, demo_next): (Vec<&[f64]>, Vec<&[f64]>) = demos.pairs().unzip();
    if demo_states.is_empty() {
        return Err(Error::Config("demonstrations contain no transitions".into()));
    }
    if demos.spec.state_dim != spec.state_dim || demos.spec.action_count != spec.action_count {
        return Err(Error::Shape("demonstrations were recorded in a different environment".into()));
    }
    if cfg.batch_size == 0 || cfg.steps_per_iteration == 0 {
        return Err(Error::Config("batch size and steps per iteration must be positive".into()));
    }
    let mut model = BcoModel::new(spec.state_dim, spec.action_count, seed::derive(seed, 3))?;
    if cfg.standardize {
        model.input_scale = Standardizer::fit(&demo_states);
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut inverse_opt = Optimizer::new(&[&model.inverse_embed, &model.inverse_head], adam);
    let mut policy_opt = Optimizer::new(&[&model.policy], adam);
    let mut act_rng = seed::rng(seed::derive(seed, 1));
    let mut batch_rng = seed::rng(seed::derive(seed, 2));

    let mut transitions: Vec<Transition> = Vec::new();
    let mut labels = Vec::new();
    let mut interactions = 0usize;
    let mut episode = 0u64;
    let mut state = spec.reset(seed::derive(seed, 1000));

    for iteration in 0..cfg.iterations {
        let tag = |e: Error| match e {
            Error::Divergence(m) => Error::Divergence(format!("iteration {iteration}: {m}")),
            other => other,
        };
        for k in 0..cfg.steps_per_iteration {
            let s = state.vector.clone();
            let a = model.act(&s, cfg.epsilon_train, &mut act_rng)?;
            let result = spec.step(&mut state, a)?;
            transitions.push(Transition {
                state: s,
                action: a,
                next_state: result.next_state,
            });
            interactions += 1;
            if result.done {
                episode += 1;
                state = spec.reset(seed::derive(seed, 1000 + episode));
            }
            if k + 1 == cfg.steps_per_iteration {
                for _ in 0..cfg.inner_steps {
                    let batch: Vec<&Transition> = (0..cfg.batch_size)
                        .map(|_| &transitions[batch_rng.gen_range(0..transitions.len())])
                        .collect();
                    model.inverse_step(&mut inverse_opt, &batch).map_err(tag)?;
                }
                labels = model.infer_actions(&demo_states, &demo_next)?;
                for _ in 0..cfg.inner_steps {
                    let idx: Vec<usize> = (0..cfg.batch_size)
                        .map(|_| batch_rng.gen_range(0..demo_states.len()))
                        .collect();
                    let rows: Vec<&[f64]> = idx.iter().map(|&i| demo_states[i]).collect();
                    let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                    let x = batch_tensor(&model.input_scale, &rows)?;
                    classifier_step(&mut model.policy, &mut policy_opt, x, &y).map_err(tag)?;
                }
            }
            observe(interactions, &model)?;
        }
    }
    Ok(BcoOutcome {
        model,
        transitions,
        interactions,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, RewardRule};
    use crate::experts::{Episode, ExpertPolicy};

    fn labelled(rows: Vec<(Vec<f64>, usize)>) -> DemoDataset {
        DemoDataset {
            spec: EnvSpec {
                kind: EnvKind::Walker,
                state_dim: rows[0].0.len(),
                action_count: 2,
                max_episode_steps: 1,
                reward_rule: RewardRule::StepCost,
            },
            eta: 0.0,
            episodes: rows
                .into_iter()
                .map(|(s, a)| Episode {
                    states: vec![s.clone(), s],
                    actions: Some(vec![a]),
                })
                .collect(),
        }
    }

    fn random_states(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect()
    }

    fn quick(epochs: usize) -> BcConfig {
        BcConfig {
            epochs,
            learning_rate: 1e-3,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn constant_label_is_cloned() {
        let demos = labelled(random_states(300, 1).into_iter().map(|s| (s, 1)).collect());
        let bc = train_bc(&demos, &quick(40)).unwrap();
        for s in random_states(50, 2) {
            assert!(bc.probabilities(&s).unwrap()[1] >= 0.99);
        }
    }

    #[test]
    fn separable_labels_are_cloned() {
        let rows: Vec<(Vec<f64>, usize)> = random_states(500, 4)
            .into_iter()
            .map(|s| {
                let a = usize::from(s[0] > 0.0);
                (s, a)
            })
            .collect();
        let demos = labelled(rows.clone());
        let bc = train_bc(&demos, &quick(40)).unwrap();
        let hits = rows.iter().filter(|(s, a)| bc.greedy_action(s).unwrap() == *a).count();
        assert!(hits as f64 >= 0.99 * rows.len() as f64, "{hits}");
        assert_eq!(train_bc(&demos, &quick(2)).unwrap(), train_bc(&demos, &quick(2)).unwrap());
    }

    #[test]
    fn cloning_needs_actions() {
        let demos = labelled(vec![(vec![0.0, 0.0], 0)]).observation_only();
        assert!(matches!(train_bc(&demos, &quick(1)), Err(Error::MissingActions)));
    }

    fn walker_run(iterations: usize) -> (BcoOutcome, Vec<usize>) {
        let spec = EnvSpec::walker();
        let demos = ExpertPolicy::new(spec, 0.3).unwrap().generate_demonstrations(300, 2).unwrap();
        let cfg = BcoConfig {
            iterations,
            steps_per_iteration: 20,
            inner_steps: 200,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let out = train_bco_with(&demos.observation_only(), &spec, &cfg, 5, |n, _| {
            seen.push(n);
            Ok(())
        })
        .unwrap();
        (out, seen)
    }

    #[test]
    fn walker_inverse_model_labels_fresh_transitions() {
        let (out, _) = walker_run(5);
        let spec = EnvSpec::walker();
        let mut rng = seed::rng(77);
        let mut hits = 0;
        for _ in 0..400 {
            let x = rng.gen_range(-8.0..9.0f64).round();
            let a = rng.gen_range(0..2);
            let (n, _) = spec.transition(&[x], a);
            hits += usize::from(out.model.infer_actions(&[&[x][..]], &[&n[..]]).unwrap()[0] == a);
        }
        assert!(hits >= 396, "{hits}/400");
    }

    #[test]
    fn interactions_are_counted_once_each() {
        let (out, seen) = walker_run(3);
        assert_eq!(out.interactions, 60);
        assert_eq!(out.transitions.len(), 60);
        assert_eq!(seen, (1..=60).collect::<Vec<_>>());
        let demos = ExpertPolicy::new(EnvSpec::walker(), 0.3).unwrap().generate_demonstrations(300, 2).unwrap();
        assert_eq!(out.labels.len(), demos.pairs().count());
    }

    #[test]
    fn checkpoints_round_trip() {
        let bco = BcoModel::new(3, 2, 1).unwrap();
        let mut ck = Checkpoint::new("bco");
        bco.save_into(&mut ck, "");
        assert_eq!(BcoModel::load_from(&Checkpoint::parse(&ck.to_text(), "m").unwrap(), "").unwrap(), bco);
        let bc = BcNet::new(3, 2, 1).unwrap();
        let mut ck = Checkpoint::new("bc");
        bc.save_into(&mut ck, "");
        assert_eq!(BcNet::load_from(&Checkpoint::parse(&ck.to_text(), "m").unwrap(), "").unwrap(), bc);
    }
}
