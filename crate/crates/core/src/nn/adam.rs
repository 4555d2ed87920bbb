use super::mlp::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<(Vec<f64>, Vec<f64>)>,
    second: Vec<(Vec<f64>, Vec<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = params
            .layers()
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.first
    }

    fn check(&self, params: &Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != params.layers().len() || self.first.len() != params.layers().len() {
            return Err(Error::Shape("adam: gradient layer count differs from parameters".into()));
        }
        for (l, (gw, gb)) in params.layers().iter().zip(&grads.layers) {
            if gw.len() != l.weight.len() || gb.len() != l.bias.len() {
                return Err(Error::Shape("adam: gradient shape differs from parameters".into()));
            }
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        Ok(())
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        self.check(params, grads)?;
        self.apply(params, grads);
        Ok(())
    }

    fn apply(&mut self, params: &mut Mlp, grads: &MlpGrads) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        };
        for (li, layer) in params.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.first[li];
            let (vw, vb) = &mut self.second[li];
            update(layer.weight.data_mut(), gw.data(), mw, vw);
            update(layer.bias.data_mut(), gb.data(), mb, vb);
        }
    }
}

/// Adam over a fixed group of networks stepped together.
#[derive(Clone, Debug)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(nets: &[&Mlp], config: AdamConfig) -> Self {
        Optimizer {
            states: nets.iter().map(|n| AdamState::new(n, config)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step_count)
    }

    /// Updates every network or none: all gradients are validated first.
    pub fn step(&mut self, nets: &mut [&mut Mlp], grads: &[MlpGrads]) -> Result<()> {
        if nets.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::Shape("optimizer: network group size changed".into()));
        }
        for ((state, net), g) in self.states.iter().zip(nets.iter()).zip(grads) {
            state.check(net, g)?;
        }
        for ((state, net), g) in self.states.iter_mut().zip(nets.iter_mut()).zip(grads) {
            state.apply(net, g);
        }
        Ok(())
    }
}
