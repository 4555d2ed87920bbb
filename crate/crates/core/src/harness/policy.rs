use std::path::Path;

use crate::baselines::{BcNet, BcoModel};
use crate::checkpoint::Checkpoint;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::latent_policy::LatentPolicyNet;
use crate::remap::{IlpoPolicy, RemapNet};

/// Any trained policy the harness can save, reload and evaluate greedily.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedPolicy {
    Ilpo { lpn: LatentPolicyNet, remap: RemapNet },
    Bco(BcoModel),
    Bc(BcNet),
}

impl TrainedPolicy {
    pub fn method(&self) -> &'static str {
        match self {
            TrainedPolicy::Ilpo { .. } => "ilpo",
            TrainedPolicy::Bco(_) => "bco",
            TrainedPolicy::Bc(_) => "bc",
        }
    }

    pub fn greedy_action(&self, s: &[f64]) -> Result<usize> {
        match self {
            TrainedPolicy::Ilpo { lpn, remap } => IlpoPolicy { lpn, remap }.greedy_action(s),
            TrainedPolicy::Bco(m) => m.greedy_action(s),
            TrainedPolicy::Bc(m) => m.greedy_action(s),
        }
    }

    pub fn to_checkpoint(&self, spec: &EnvSpec) -> Checkpoint {
        let mut ck = Checkpoint::new(self.method());
        ck.set_meta("env", spec.name());
        match self {
            TrainedPolicy::Ilpo { lpn, remap } => {
                lpn.save_into(&mut ck, "lpn_");
                remap.save_into(&mut ck, "remap_");
            }
            TrainedPolicy::Bco(m) => m.save_into(&mut ck, ""),
            TrainedPolicy::Bc(m) => m.save_into(&mut ck, ""),
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(EnvSpec, Self)> {
        let spec = EnvSpec::by_name(ck.meta("env")?)?;
        let policy = match ck.kind.as_str() {
            "ilpo" => TrainedPolicy::Ilpo {
                lpn: LatentPolicyNet::load_from(ck, "lpn_")?,
                remap: RemapNet::load_from(ck, "remap_")?,
            },
            "bco" => TrainedPolicy::Bco(BcoModel::load_from(ck, "")?),
            "bc" => TrainedPolicy::Bc(BcNet::load_from(ck, "")?),
            other => return Err(Error::Config(format!("checkpoint holds no policy (kind '{other}')"))),
        };
        Ok((spec, policy))
    }

    pub fn write(&self, spec: &EnvSpec, path: &Path) -> Result<()> {
        self.to_checkpoint(spec).write(path)
    }

    pub fn read(path: &Path) -> Result<(EnvSpec, Self)> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Mean greedy return over `episodes` fresh episodes.
    pub fn evaluate(&self, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<f64> {
        Self::evaluate_with(spec, episodes, seed, |s| self.greedy_action(s))
    }
}

impl TrainedPolicy {
    /// Mean return of a fallible policy; the first policy error aborts.
    pub fn evaluate_with<P>(spec: &EnvSpec, episodes: usize, seed: u64, mut policy: P) -> Result<f64>
    where
        P: FnMut(&[f64]) -> Result<usize>,
    {
        let mut failure = None;
        let mean = spec.evaluate_policy(
            |s| match policy(s) {
                Ok(a) => a,
                Err(e) => {
                    failure.get_or_insert(e);
                    0
                }
            },
            episodes,
            seed,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(mean),
        }
    }
}
