//! Experiment orchestration: seeded trials, periodic greedy evaluation,
//! latent-count sweeps and the demonstration-noise ablation.

mod curves;
mod policy;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;

use crate::baselines::{self, BcConfig, BcoConfig};
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::experts::{DemoDataset, ExpertPolicy};
use crate::latent_policy::{self, Step1Config};
use crate::remap::{self, DistanceMode, IlpoPolicy, Step2Config};
use crate::seed;

pub use curves::{summary_path, write_curves, CurveRow, LearningCurve, SummaryRow, CURVE_HEADER, SUMMARY_HEADER};
pub use policy::TrainedPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ilpo,
    Bco,
    Bc,
    Random,
    Expert,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ilpo => "ilpo",
            Method::Bco => "bco",
            Method::Bc => "bc",
            Method::Random => "random",
            Method::Expert => "expert",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ilpo" => Ok(Method::Ilpo),
            "bco" => Ok(Method::Bco),
            "bc" => Ok(Method::Bc),
            "random" => Ok(Method::Random),
            "expert" => Ok(Method::Expert),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

/// Offline step-1 epochs used at desk scale.
pub fn desk_step1_epochs(env: EnvKind) -> usize {
    match env {
        EnvKind::CartPole => 1,
        EnvKind::Acrobot => 10,
        EnvKind::MountainCar => 4,
        EnvKind::Walker => 20,
    }
}

pub const DESK_BC_EPOCHS: usize = 5;
pub const PAPER_EPOCHS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub method: Method,
    pub trials: usize,
    pub budget: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Latent action count; `None` means one per real action.
    pub latent_count: Option<usize>,
    pub eta: f64,
    pub demo_count: usize,
    /// Load demonstrations from this file instead of generating them per trial.
    pub demo_path: Option<PathBuf>,
    pub seed: u64,
    /// `None` selects the desk-scale epoch count for the environment.
    pub step1_epochs: Option<usize>,
    pub step1_learning_rate: f64,
    pub step1_batch_size: usize,
    pub standardize: bool,
    pub step2: Step2Config,
    pub bco: BcoConfig,
    pub bc_epochs: usize,
    pub bc_learning_rate: f64,
    pub bc_batch_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvKind::CartPole,
            method: Method::Ilpo,
            trials: 10,
            budget: 500,
            eval_every: 50,
            eval_episodes: 10,
            latent_count: None,
            eta: 0.1,
            demo_count: 50_000,
            demo_path: None,
            seed: 0,
            step1_epochs: None,
            step1_learning_rate: 2e-4,
            step1_batch_size: 32,
            standardize: true,
            step2: Step2Config::default(),
            bco: BcoConfig::default(),
            bc_epochs: DESK_BC_EPOCHS,
            bc_learning_rate: 2e-4,
            bc_batch_size: 32,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl ExperimentConfig {
    pub fn new(env: EnvKind, method: Method) -> Self {
        ExperimentConfig {
            env,
            method,
            ..Self::default()
        }
    }

    /// Trial count and training schedules of the original experiments.
    pub fn paper_scale(mut self) -> Self {
        self.trials = 50;
        self.step1_epochs = Some(PAPER_EPOCHS);
        self.bc_epochs = PAPER_EPOCHS;
        self.bco = BcoConfig {
            standardize: self.bco.standardize,
            ..BcoConfig::paper()
        };
        self
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    pub fn resolved_latent_count(&self) -> usize {
        self.latent_count.unwrap_or(self.spec().action_count)
    }

    pub fn resolved_step1_epochs(&self) -> usize {
        self.step1_epochs.unwrap_or_else(|| desk_step1_epochs(self.env))
    }

    /// Interaction counts at which the policy is evaluated.
    pub fn eval_points(&self) -> Vec<usize> {
        (1..=self.budget / self.eval_every.max(1)).map(|k| k * self.eval_every).collect()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        seed::derive(self.seed, trial as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials == 0 {
            return fail("trials must be positive");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return fail("eval_every and eval_episodes must be positive");
        }
        if self.latent_count == Some(0) {
            return fail("latent count must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail("eta must lie in [0, 1]");
        }
        if self.demo_path.is_none() && self.demo_count < 2 {
            return fail("need at least two demonstration states");
        }
        for (name, e) in [("epsilon_train", self.step2.epsilon_train), ("epsilon_eval", self.step2.epsilon_eval)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.step1_batch_size == 0 || self.step2.batch_size == 0 || self.bco.batch_size == 0 || self.bc_batch_size == 0 {
            return fail("batch sizes must be positive");
        }
        if self.bco.steps_per_iteration == 0 {
            return fail("bco_steps must be positive");
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "env" => self.env = v.parse()?,
            "method" => self.method = v.parse()?,
            "trials" => self.trials = parse_value(key, v)?,
            "budget" => self.budget = parse_value(key, v)?,
            "eval_every" => self.eval_every = parse_value(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, v)?,
            "z" | "latent_count" => self.latent_count = Some(parse_value(key, v)?),
            "eta" => self.eta = parse_value(key, v)?,
            "demos" | "demo_count" => self.demo_count = parse_value(key, v)?,
            "demo_path" => self.demo_path = Some(PathBuf::from(v)),
            "seed" => self.seed = parse_value(key, v)?,
            "step1_epochs" => self.step1_epochs = Some(parse_value(key, v)?),
            "step1_lr" => self.step1_learning_rate = parse_value(key, v)?,
            "step1_batch" => self.step1_batch_size = parse_value(key, v)?,
            "standardize" => {
                let on: bool = parse_value(key, v)?;
                self.standardize = on;
                self.bco.standardize = on;
            }
            "remap_lr" => self.step2.learning_rate = parse_value(key, v)?,
            "remap_batch" => self.step2.batch_size = parse_value(key, v)?,
            "grad_steps" => self.step2.gradient_steps = parse_value(key, v)?,
            "epsilon_train" => {
                let e: f64 = parse_value(key, v)?;
                self.step2.epsilon_train = e;
                self.bco.epsilon_train = e;
            }
            "epsilon_eval" => self.step2.epsilon_eval = parse_value(key, v)?,
            "distance" => {
                self.step2.distance = match v {
                    "raw" => DistanceMode::Raw,
                    "embedded" => DistanceMode::Embedded,
                    _ => return Err(Error::Config(format!("distance must be 'raw' or 'embedded', got '{v}'"))),
                }
            }
            "bco_iterations" => self.bco.iterations = parse_value(key, v)?,
            "bco_steps" => self.bco.steps_per_iteration = parse_value(key, v)?,
            "bco_inner_steps" => self.bco.inner_steps = parse_value(key, v)?,
            "bco_lr" => self.bco.learning_rate = parse_value(key, v)?,
            "bco_batch" => self.bco.batch_size = parse_value(key, v)?,
            "bc_epochs" => self.bc_epochs = parse_value(key, v)?,
            "bc_lr" => self.bc_learning_rate = parse_value(key, v)?,
            "bc_batch" => self.bc_batch_size = parse_value(key, v)?,
            "paper_scale" => {
                if parse_value::<bool>(key, v)? {
                    *self = self.clone().paper_scale();
                }
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, i + 1, "expected 'key = value'"))?;
            self.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::parse(source_name, i + 1, m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }
}

/// Curve rows plus the final policy of every trial (none for flat methods).
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub curve: LearningCurve,
    pub policies: Vec<Option<TrainedPolicy>>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<LearningCurve> {
    Ok(run_experiment_full(cfg)?.curve)
}

/// Runs every trial (in parallel where threads are available) and gathers
/// the rows in trial order.
pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let shared = match &cfg.demo_path {
        Some(p) => {
            let d = DemoDataset::read(p)?;
            if d.spec != cfg.spec() {
                return Err(Error::Config(format!(
                    "demonstrations in {} were recorded on {}, not {}",
                    p.display(),
                    d.spec.name(),
                    cfg.env
                )));
            }
            Some(d)
        }
        None => None,
    };
    let trials: Vec<(Vec<CurveRow>, Option<TrainedPolicy>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, shared.as_ref()))
        .collect::<Result<_>>()?;
    let mut curve = LearningCurve::default();
    let mut policies = Vec::with_capacity(trials.len());
    for (rows, policy) in trials {
        curve.rows.extend(rows);
        policies.push(policy);
    }
    curve.sort();
    Ok(ExperimentOutcome { curve, policies })
}

/// Demonstrations a trial trains on: shared if loaded, else generated from
/// the trial seed (so paired trials of different methods see the same data).
pub fn trial_demos(cfg: &ExperimentConfig, trial: usize) -> Result<DemoDataset> {
    let expert = ExpertPolicy::new(cfg.spec(), cfg.eta)?;
    expert.generate_demonstrations(cfg.demo_count, seed::derive(cfg.trial_seed(trial), 10))
}

fn eval_seed(trial_seed: u64, interactions: usize) -> u64 {
    seed::derive(seed::derive(trial_seed, 20), interactions as u64)
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, shared: Option<&DemoDataset>) -> Result<(Vec<CurveRow>, Option<TrainedPolicy>)> {
    let spec = cfg.spec();
    let tseed = cfg.trial_seed(trial);
    let points = cfg.eval_points();
    let method = cfg.method.name().to_string();
    let row = |interactions: usize, mean_reward: f64| CurveRow {
        method: method.clone(),
        trial,
        interactions,
        mean_reward,
    };
    let demos = || -> Result<DemoDataset> {
        match shared {
            Some(d) => Ok(d.clone()),
            None => trial_demos(cfg, trial),
        }
    };
    let flat = |value: f64| points.iter().map(|&p| row(p, value)).collect::<Vec<_>>();

    match cfg.method {
        Method::Expert => {
            let expert = ExpertPolicy::new(spec, 0.0)?;
            let v = spec.evaluate_policy(|s| expert.control(s), cfg.eval_episodes, eval_seed(tseed, 0))?;
            Ok((flat(v), None))
        }
        Method::Random => {
            let mut rng = seed::rng(seed::derive(tseed, 30));
            let v = spec.evaluate_policy(|_| rng.gen_range(0..spec.action_count), cfg.eval_episodes, eval_seed(tseed, 0))?;
            Ok((flat(v), None))
        }
        Method::Bc => {
            let bc = baselines::train_bc(
                &demos()?,
                &BcConfig {
                    epochs: cfg.bc_epochs,
                    batch_size: cfg.bc_batch_size,
                    learning_rate: cfg.bc_learning_rate,
                    seed: seed::derive(tseed, 40),
                    standardize: cfg.standardize,
                },
            )?;
            let policy = TrainedPolicy::Bc(bc);
            let v = policy.evaluate(&spec, cfg.eval_episodes, eval_seed(tseed, 0))?;
            Ok((flat(v), Some(policy)))
        }
        Method::Bco => {
            let demos = demos()?.observation_only();
            let per = cfg.bco.steps_per_iteration;
            let bco_cfg = BcoConfig {
                iterations: cfg.bco.iterations.min(cfg.budget.div_ceil(per)),
                ..cfg.bco.clone()
            };
            let mut rows = Vec::with_capacity(points.len());
            let out = baselines::train_bco_with(&demos, &spec, &bco_cfg, seed::derive(tseed, 50), |n, model| {
                if n <= cfg.budget && n % cfg.eval_every == 0 {
                    let v = TrainedPolicy::evaluate_with(&spec, cfg.eval_episodes, eval_seed(tseed, n), |s| model.greedy_action(s))?;
                    rows.push(row(n, v));
                }
                Ok(())
            })?;
            Ok((rows, Some(TrainedPolicy::Bco(out.model))))
        }
        Method::Ilpo => {
            let demos = demos()?.observation_only();
            let step1 = latent_policy::train_step1(
                &demos,
                &Step1Config {
                    latent_count: cfg.resolved_latent_count(),
                    epochs: cfg.resolved_step1_epochs(),
                    batch_size: cfg.step1_batch_size,
                    learning_rate: cfg.step1_learning_rate,
                    seed: seed::derive(tseed, 60),
                    standardize: cfg.standardize,
                },
            )?;
            let lpn = step1.net;
            let step2 = Step2Config {
                budget: cfg.budget,
                ..cfg.step2.clone()
            };
            let mut rows = Vec::with_capacity(points.len());
            let mut eval_rng = seed::rng(seed::derive(tseed, 70));
            let out = remap::run_remapping_with(&lpn, &spec, &step2, seed::derive(tseed, 80), |n, net| {
                if n % cfg.eval_every == 0 {
                    let policy = IlpoPolicy { lpn: &lpn, remap: net };
                    let v = TrainedPolicy::evaluate_with(&spec, cfg.eval_episodes, eval_seed(tseed, n), |s| {
                        policy.act(s, cfg.step2.epsilon_eval, &mut eval_rng)
                    })?;
                    rows.push(row(n, v));
                }
                Ok(())
            })?;
            Ok((rows, Some(TrainedPolicy::Ilpo { lpn, remap: out.net })))
        }
    }
}

/// Runs the experiment once per latent count on identical demonstrations;
/// each curve's method column reads `<method>-z<k>`.
pub fn sweep_latent(cfg: &ExperimentConfig, z_values: &[usize]) -> Result<Vec<(usize, LearningCurve)>> {
    if z_values.is_empty() {
        return Err(Error::Config("latent sweep needs at least one value".into()));
    }
    if let Some(&bad) = z_values.iter().find(|&&z| z == 0) {
        return Err(Error::Config(format!("latent count {bad} must be at least 1")));
    }
    z_values
        .iter()
        .map(|&z| {
            let run = ExperimentConfig {
                latent_count: Some(z),
                ..cfg.clone()
            };
            let curve = run_experiment(&run)?.relabel(&format!("{}-z{z}", cfg.method));
            Ok((z, curve))
        })
        .collect()
}

/// Deterministic (eta = 0) and stochastic (eta = `cfg.eta`) demonstrations
/// through an otherwise identical pipeline; returns `(deterministic, stochastic)`.
pub fn ablate_stochasticity(cfg: &ExperimentConfig) -> Result<(LearningCurve, LearningCurve)> {
    if cfg.method != Method::Ilpo {
        return Err(Error::Config("the stochasticity ablation runs ilpo only".into()));
    }
    if cfg.demo_path.is_some() {
        return Err(Error::Config("the stochasticity ablation generates its own demonstrations".into()));
    }
    let deterministic = ExperimentConfig {
        eta: 0.0,
        ..cfg.clone()
    };
    let a = run_experiment(&deterministic)?.relabel("ilpo-eta0");
    let b = run_experiment(cfg)?.relabel(&format!("ilpo-eta{}", cfg.eta));
    Ok((a, b))
}
