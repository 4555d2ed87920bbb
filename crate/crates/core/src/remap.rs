//! Grounding latent actions in real actions through environment
//! interaction.
//!
//! Every observed transition is labelled with the latent action whose
//! predicted next state is closest to what actually happened; the remap
//! network then learns, by classification, which real action produces that
//! latent effect in the current state.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::experts::format_floats;
use crate::latent_policy::{state_embedding, LatentPolicyNet, EMBED_WIDTH};
use crate::nn::{self, Activation, AdamConfig, Mlp, Optimizer, Standardizer, Tape, Tensor};
use crate::seed::{self, Rng};

/// How predicted and observed next states are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    /// Euclidean distance between raw states.
    Raw,
    /// Euclidean distance between `E_p` embeddings of the states.
    Embedded,
}

/// Latent action whose prediction is nearest to `s_next`; ties go low.
pub fn infer_latent(lpn: &LatentPolicyNet, s: &[f64], s_next: &[f64], mode: DistanceMode) -> Result<usize> {
    if s_next.len() != lpn.state_dim() {
        return Err(Error::Shape(format!(
            "next state of dimension {} for a model of dimension {}",
            s_next.len(),
            lpn.state_dim()
        )));
    }
    let preds = lpn.predict_transitions(s)?;
    let distances = match mode {
        DistanceMode::Raw => preds.iter().map(|p| euclidean(p, s_next)).collect::<Vec<_>>(),
        DistanceMode::Embedded => {
            let target = lpn.embed(s_next)?;
            preds
                .iter()
                .map(|p| Ok(euclidean(&lpn.embed(p)?, &target)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(nn::argmin(&distances))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub const HEAD_WIDTHS: [usize; 2] = [64, 32];

/// `pi(a | z, E_a(s))`.
#[derive(Clone, Debug, PartialEq)]
pub struct RemapNet {
    state_dim: usize,
    latent_count: usize,
    action_count: usize,
    input_scale: Standardizer,
    embed: Mlp,
    latent_embed: Mlp,
    head: Mlp,
}

impl RemapNet {
    pub fn new(state_dim: usize, latent_count: usize, action_count: usize, seed: u64) -> Result<Self> {
        if latent_count == 0 || action_count == 0 {
            return Err(Error::InvalidArchitecture("latent and action counts must be positive".into()));
        }
        Ok(RemapNet {
            state_dim,
            latent_count,
            action_count,
            input_scale: Standardizer::identity(state_dim),
            embed: state_embedding(state_dim, seed::derive(seed, 0))?,
            latent_embed: Mlp::init(&[latent_count, EMBED_WIDTH], Activation::Linear, seed::derive(seed, 1))?,
            head: Mlp::init_with(
                &[2 * EMBED_WIDTH, HEAD_WIDTHS[0], HEAD_WIDTHS[1], action_count],
                &[Activation::LeakyRelu, Activation::Linear, Activation::Linear],
                seed::derive(seed, 2),
            )?,
        })
    }

    /// Remap network sized for `lpn` on `spec`, sharing its input scaling.
    pub fn for_latent_policy(lpn: &LatentPolicyNet, spec: &EnvSpec, seed: u64) -> Result<Self> {
        let mut net = Self::new(spec.state_dim, lpn.latent_count(), spec.action_count, seed)?;
        net.input_scale = lpn.scalers().0.clone();
        Ok(net)
    }

    pub fn latent_count(&self) -> usize {
        self.latent_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    fn joint_input(&self, states: &[&[f64]], latents: &[usize]) -> Result<Tensor> {
        for &z in latents {
            if z >= self.latent_count {
                return Err(Error::Index(format!("latent {z} of {}", self.latent_count)));
            }
        }
        let rows: Vec<Vec<f64>> = states
            .iter()
            .map(|s| {
                if s.len() != self.state_dim {
                    Err(Error::Shape(format!("state of dimension {}", s.len())))
                } else {
                    Ok(self.input_scale.normalize(s))
                }
            })
            .collect::<Result<_>>()?;
        Tensor::from_rows(&rows)
    }

    fn one_hots(&self, latents: &[usize]) -> Tensor {
        let k = self.latent_count;
        let mut data = vec![0.0; latents.len() * k];
        for (r, &z) in latents.iter().enumerate() {
            data[r * k + z] = 1.0;
        }
        Tensor::new(vec![latents.len(), k], data).expect("one-hot shape")
    }

    /// Logits over real actions for state `s` and latent action `z`.
    pub fn remap_logits(&self, s: &[f64], z: usize) -> Result<Vec<f64>> {
        let x = self.joint_input(&[s], &[z])?;
        let e = self.embed.forward(&x)?;
        let c = self.latent_embed.forward(&self.one_hots(&[z]))?;
        let joint: Vec<f64> = e
            .data()
            .iter()
            .chain(c.data())
            .map(|&v| if v > 0.0 { v } else { nn::LEAK * v })
            .collect();
        self.head.forward_one(&joint)
    }

    pub fn action_probabilities(&self, s: &[f64], z: usize) -> Result<Vec<f64>> {
        Ok(nn::softmax(&self.remap_logits(s, z)?))
    }

    pub fn greedy_action(&self, s: &[f64], z: usize) -> Result<usize> {
        Ok(nn::argmax(&self.remap_logits(s, z)?))
    }

    fn nets(&self) -> [&Mlp; 3] {
        [&self.embed, &self.latent_embed, &self.head]
    }

    /// Mean cross-entropy of the batch followed by one Adam update; returns the
    /// loss before the update.
    pub fn train_step(&mut self, opt: &mut Optimizer, batch: &[&Interaction]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty remap batch".into()));
        }
        let states: Vec<&[f64]> = batch.iter().map(|i| i.state.as_slice()).collect();
        let latents: Vec<usize> = batch.iter().map(|i| i.latent).collect();
        let labels: Vec<usize> = batch.iter().map(|i| i.action).collect();
        if let Some(&bad) = labels.iter().find(|&&a| a >= self.action_count) {
            return Err(Error::Index(format!("action {bad} of {}", self.action_count)));
        }
        let x = self.joint_input(&states, &latents)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let zv = tape.constant(self.one_hots(&latents));
        let (e, ev) = self.embed.forward_tape(&mut tape, xv)?;
        let (c, cv) = self.latent_embed.forward_tape(&mut tape, zv)?;
        let joint = tape.concat(e, c)?;
        let joint = tape.leaky_relu(joint, nn::LEAK)?;
        let (logits, hv) = self.head.forward_tape(&mut tape, joint)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite remap loss {value}")));
        }
        let g = tape.backward(loss)?;
        let grads = [ev.grads(&g), cv.grads(&g), hv.grads(&g)];
        opt.step(&mut [&mut self.embed, &mut self.latent_embed, &mut self.head], &grads)?;
        Ok(value)
    }

    pub fn optimizer(&self, learning_rate: f64) -> Optimizer {
        Optimizer::new(&self.nets(), AdamConfig::with_learning_rate(learning_rate))
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}state_dim"), self.state_dim);
        ck.set_meta(&format!("{prefix}latent_count"), self.latent_count);
        ck.set_meta(&format!("{prefix}action_count"), self.action_count);
        self.input_scale.save_into(ck, &format!("{prefix}input"));
        for (name, net) in ["embed", "latent_embed", "head"].iter().zip(self.nets()) {
            ck.push_net(format!("{prefix}{name}"), net);
        }
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let state_dim: usize = ck.meta_as(&format!("{prefix}state_dim"))?;
        let latent_count: usize = ck.meta_as(&format!("{prefix}latent_count"))?;
        let action_count: usize = ck.meta_as(&format!("{prefix}action_count"))?;
        let net = |n: &str| ck.net(&format!("{prefix}{n}")).cloned();
        let out = RemapNet {
            state_dim,
            latent_count,
            action_count,
            input_scale: Standardizer::load_from(ck, &format!("{prefix}input"), state_dim)?,
            embed: net("embed")?,
            latent_embed: net("latent_embed")?,
            head: net("head")?,
        };
        if out.embed.input_width() != state_dim
            || out.latent_embed.widths() != [latent_count, EMBED_WIDTH]
            || out.head.input_width() != 2 * EMBED_WIDTH
            || out.head.output_width() != action_count
        {
            return Err(Error::InvalidArchitecture("remap checkpoint widths do not chain".into()));
        }
        Ok(out)
    }
}

/// The imitation policy: most probable latent action, then the real action
/// most likely to produce it.
#[derive(Clone, Copy, Debug)]
pub struct IlpoPolicy<'a> {
    pub lpn: &'a LatentPolicyNet,
    pub remap: &'a RemapNet,
}

impl IlpoPolicy<'_> {
    pub fn greedy_action(&self, s: &[f64]) -> Result<usize> {
        let z = self.lpn.choose_latent(s)?;
        self.remap.greedy_action(s, z)
    }

    /// Epsilon-greedy action.
    pub fn act(&self, s: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
        act(self.remap, self.lpn, s, epsilon, rng)
    }
}

/// With probability `epsilon` a uniform action, else the greedy remapped action.
pub fn act(net: &RemapNet, lpn: &LatentPolicyNet, s: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.action_count));
    }
    let z = lpn.choose_latent(s)?;
    net.greedy_action(s, z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
    pub latent: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionBuffer {
    entries: Vec<Interaction>,
}

impl InteractionBuffer {
    pub fn push(&mut self, entry: Interaction) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Interaction] {
        &self.entries
    }

    /// `size` entries drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, size: usize, rng: &mut Rng) -> Vec<&'a Interaction> {
        (0..size)
            .map(|_| &self.entries[rng.gen_range(0..self.entries.len())])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub episode: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub latent: usize,
    pub reward: f64,
    pub done: bool,
}

/// One row per environment step taken during remapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub rows: Vec<LogRow>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self, state_dim: usize) -> String {
        let mut out = String::from("step,episode,");
        for i in 0..state_dim {
            write!(out, "s{i},").unwrap();
        }
        out.push_str("a,z,reward,done\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.episode,
                format_floats(&r.state),
                r.action,
                r.latent,
                r.reward,
                u8::from(r.done)
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path, state_dim: usize) -> Result<()> {
        fs::write(path, self.to_csv(state_dim)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step2Config {
    pub budget: usize,
    pub epsilon_train: f64,
    pub epsilon_eval: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gradient_steps: usize,
    pub distance: DistanceMode,
}

impl Default for Step2Config {
    fn default() -> Self {
        Step2Config {
            budget: 500,
            epsilon_train: 0.2,
            epsilon_eval: 0.0,
            batch_size: 32,
            learning_rate: 2e-3,
            gradient_steps: 10,
            distance: DistanceMode::Raw,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RemapOutcome {
    pub net: RemapNet,
    pub buffer: InteractionBuffer,
    pub log: InteractionLog,
}

/// Interaction loop without observation hooks.
pub fn run_remapping(lpn: &LatentPolicyNet, spec: &EnvSpec, cfg: &Step2Config, seed: u64) -> Result<RemapOutcome> {
    run_remapping_with(lpn, spec, cfg, seed, |_, _| Ok(()))
}

/// Interaction loop: act epsilon-greedily, label each transition with its
/// nearest latent action, then take `gradient_steps` minibatch updates on
/// the whole buffer. `observe(interactions, net)` runs after every step's
/// updates.
pub fn run_remapping_with<F>(
    lpn: &LatentPolicyNet,
    spec: &EnvSpec,
    cfg: &Step2Config,
    seed: u64,
    mut observe: F,
) -> Result<RemapOutcome>
where
    F: FnMut(usize, &RemapNet) -> Result<()>,
{
    if lpn.state_dim() != spec.state_dim {
        return Err(Error::Shape("latent policy and environment disagree on state dimension".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut net = RemapNet::for_latent_policy(lpn, spec, seed::derive(seed, 3))?;
    let mut opt = net.optimizer(cfg.learning_rate);
    let mut act_rng = seed::rng(seed::derive(seed, 1));
    let mut batch_rng = seed::rng(seed::derive(seed, 2));
    let mut buffer = InteractionBuffer::default();
    let mut log = InteractionLog::default();

    let mut episode = 0usize;
    let mut state = spec.reset(seed::derive(seed, 1000));
    for step in 0..cfg.budget {
        let s = state.vector.clone();
        let a = act(&net, lpn, &s, cfg.epsilon_train, &mut act_rng)?;
        let result = spec
            .step(&mut state, a)
            .map_err(|e| Error::Config(format!("environment failed at interaction {step}: {e}")))?;
        let z = infer_latent(lpn, &s, &result.next_state, cfg.distance)?;
        buffer.push(Interaction {
            state: s.clone(),
            action: a,
            next_state: result.next_state.clone(),
            latent: z,
        });
        log.rows.push(LogRow {
            step,
            episode,
            state: s,
            action: a,
            latent: z,
            reward: result.reward,
            done: result.done,
        });
        for _ in 0..cfg.gradient_steps {
            let batch = buffer.sample(cfg.batch_size, &mut batch_rng);
            net.train_step(&mut opt, &batch)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("interaction {step}: {m}")),
                    other => other,
                })?;
        }
        if result.done {
            episode += 1;
            state = spec.reset(seed::derive(seed, 1000 + episode as u64));
        }
        observe(step + 1, &net)?;
    }
    Ok(RemapOutcome { net, buffer, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use crate::experts::ExpertPolicy;
    use crate::latent_policy::test_support::{fixed_net, zero};

    fn entry(z: usize, a: usize, x: f64) -> Interaction {
        Interaction {
            state: vec![x],
            action: a,
            next_state: vec![x],
            latent: z,
        }
    }

    #[test]
    fn infer_latent_examples() {
        let mut lpn = fixed_net(&[vec![1.0], vec![-1.0]], &[0.0, 0.0]);
        // E_p(x) = (leaky(x), 0, ...) so embedded distances stay informative
        let [embed, ..] = lpn.networks_mut();
        embed.layers_mut()[0].weight.data_mut()[0] = 1.0;
        embed.layers_mut()[1].weight.data_mut()[0] = 1.0;
        for mode in [DistanceMode::Raw, DistanceMode::Embedded] {
            assert_eq!(infer_latent(&lpn, &[2.0], &[1.0], mode).unwrap(), 1);
            assert_eq!(infer_latent(&lpn, &[2.0], &[2.0], mode).unwrap(), 0);
        }
        assert_eq!(infer_latent(&lpn, &[2.0], &[3.2], DistanceMode::Raw).unwrap(), 0);
    }

    #[test]
    fn remap_logit_contract() {
        let mut net = RemapNet::new(2, 3, 4, 0).unwrap();
        let l = net.remap_logits(&[0.1, 0.2], 2).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l, net.remap_logits(&[0.1, 0.2], 2).unwrap());
        assert!(matches!(net.remap_logits(&[0.1, 0.2], 3), Err(Error::Index(_))));
        zero(net.head_mut());
        let p = net.action_probabilities(&[0.1, 0.2], 1).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn uniform_net_loss_is_log_of_action_count() {
        let mut net = RemapNet::new(1, 3, 3, 0).unwrap();
        zero(net.head_mut());
        let mut opt = net.optimizer(2e-3);
        let batch = [entry(0, 0, 0.1), entry(1, 2, -0.3)];
        let refs: Vec<&Interaction> = batch.iter().collect();
        let loss = net.train_step(&mut opt, &refs).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(matches!(net.train_step(&mut opt, &[]), Err(Error::Config(_))));
    }

    fn permutation_buffer(perm: &[usize], n: usize) -> InteractionBuffer {
        let mut rng = seed::rng(11);
        let mut buf = InteractionBuffer::default();
        for _ in 0..n {
            let z = rng.gen_range(0..perm.len());
            buf.push(entry(z, perm[z], rng.gen_range(-1.0..1.0)));
        }
        buf
    }

    fn train_on(buf: &InteractionBuffer, k: usize, steps: usize) -> (RemapNet, f64) {
        let mut net = RemapNet::new(1, k, k, 3).unwrap();
        let mut opt = net.optimizer(2e-3);
        let mut rng = seed::rng(12);
        let mut loss = f64::NAN;
        for _ in 0..steps {
            loss = net.train_step(&mut opt, &buf.sample(32, &mut rng)).unwrap();
        }
        (net, loss)
    }

    #[test]
    fn aligned_buffer_is_learned() {
        let buf = permutation_buffer(&[0, 1, 2], 300);
        let (net, _) = train_on(&buf, 3, 500);
        let refs: Vec<&Interaction> = buf.entries().iter().collect();
        let mut probe = net.clone();
        let mut opt = probe.optimizer(0.0);
        let full = probe.train_step(&mut opt, &refs).unwrap();
        assert!(full <= 0.05, "loss {full}");
    }

    #[test]
    fn permuted_buffer_is_classified() {
        let buf = permutation_buffer(&[2, 0, 1], 300);
        let (net, _) = train_on(&buf, 3, 500);
        let hits = buf
            .entries()
            .iter()
            .filter(|e| net.greedy_action(&e.state, e.latent).unwrap() == e.action)
            .count();
        assert!(hits as f64 >= 0.99 * buf.len() as f64);
    }

    fn frequencies(epsilon: f64, draws: usize) -> (Vec<usize>, usize) {
        let lpn = fixed_net(&[vec![1.0], vec![-1.0]], &[0.0, 0.0]);
        let net = RemapNet::new(1, 2, 3, 5).unwrap();
        let greedy = net.greedy_action(&[0.4], lpn.choose_latent(&[0.4]).unwrap()).unwrap();
        let mut rng = seed::rng(13);
        let mut counts = vec![0; 3];
        for _ in 0..draws {
            counts[act(&net, &lpn, &[0.4], epsilon, &mut rng).unwrap()] += 1;
        }
        (counts, greedy)
    }

    #[test]
    fn greedy_when_epsilon_is_zero() {
        let (counts, greedy) = frequencies(0.0, 200);
        assert_eq!(counts[greedy], 200);
    }

    #[test]
    fn epsilon_greedy_frequencies() {
        let n = 10_000;
        for epsilon in [1.0, 0.3] {
            let (counts, greedy) = frequencies(epsilon, n);
            for (a, &c) in counts.iter().enumerate() {
                let p = epsilon / 3.0 + if a == greedy { 1.0 - epsilon } else { 0.0 };
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "eps {epsilon}: {counts:?}");
            }
        }
        let lpn = fixed_net(&[vec![1.0]], &[0.0]);
        let net = RemapNet::new(1, 1, 2, 0).unwrap();
        assert!(act(&net, &lpn, &[0.0], 1.5, &mut seed::rng(0)).is_err());
    }

    fn walker_lpn() -> LatentPolicyNet {
        // z0 steps right (what the expert does), z1 steps left
        fixed_net(&[vec![1.0], vec![-1.0]], &[5.0, 0.0])
    }

    #[test]
    fn remapping_contract() {
        let lpn = walker_lpn();
        let before = lpn.clone();
        let spec = EnvSpec::walker();
        let cfg = Step2Config {
            budget: 60,
            ..Default::default()
        };
        let out = run_remapping(&lpn, &spec, &cfg, 4).unwrap();
        assert_eq!(out.log.len(), 60);
        assert_eq!(out.buffer.len(), 60);
        assert_eq!(lpn, before);
        for e in out.buffer.entries() {
            assert_eq!(infer_latent(&lpn, &e.state, &e.next_state, cfg.distance).unwrap(), e.latent);
        }
        let csv = out.log.to_csv(1);
        assert!(csv.starts_with("step,episode,s0,a,z,reward,done\n"));
        assert_eq!(csv.lines().count(), 61);
        assert_eq!(run_remapping(&lpn, &spec, &cfg, 4).unwrap().log, out.log);
    }

    #[test]
    fn walker_remapping_reproduces_the_expert() {
        let lpn = walker_lpn();
        let spec = EnvSpec::walker();
        let cfg = Step2Config {
            budget: 200,
            ..Default::default()
        };
        let net = run_remapping(&lpn, &spec, &cfg, 9).unwrap().net;
        let expert = ExpertPolicy::new(spec, 0.0).unwrap();
        let demos = expert.generate_demonstrations(500, 1).unwrap();
        let policy = IlpoPolicy { lpn: &lpn, remap: &net };
        let mut hits = 0;
        let mut total = 0;
        for (s, a) in demos.state_actions().unwrap() {
            hits += usize::from(policy.greedy_action(s).unwrap() == a);
            total += 1;
        }
        assert!(hits as f64 >= 0.99 * total as f64, "{hits}/{total}");
        assert_eq!(spec.kind, EnvKind::Walker);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = RemapNet::new(3, 2, 4, 8).unwrap();
        let mut ck = Checkpoint::new("remap");
        net.save_into(&mut ck, "r_");
        let back = RemapNet::load_from(&Checkpoint::parse(&ck.to_text(), "mem").unwrap(), "r_").unwrap();
        assert_eq!(net, back);
    }
}
