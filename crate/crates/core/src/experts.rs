//! Scripted expert controllers and state-only demonstration datasets.
//!
//! Demo files are plain text:
//!
//! ```text
//! # env=cartpole dim=4 actions=2 eta=0.1
//! episode_id,t,s0,...,s{d-1},a
//! ```
//!
//! `a` is `-1` on the last row of every episode and on every row of an
//! observation-only export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Scripted controller with an action-noise rate `eta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertPolicy {
    pub spec: EnvSpec,
    pub eta: f64,
}

impl ExpertPolicy {
    pub fn new(spec: EnvSpec, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("action noise {eta} outside [0, 1]")));
        }
        Ok(ExpertPolicy { spec, eta })
    }

    /// The noise-free control law.
    pub fn control(&self, s: &[f64]) -> usize {
        match self.spec.kind {
            EnvKind::CartPole => usize::from(0.5 * s[2] + s[3] > 0.0),
            EnvKind::MountainCar => {
                if s[1] < 0.0 {
                    0
                } else {
                    2
                }
            }
            // Torque on the elbow reacts on the first link, so pushing
            // against its swing pumps energy into it.
            EnvKind::Acrobot => {
                let w = s[4];
                if w.abs() < 1e-3 {
                    1
                } else if w > 0.0 {
                    0
                } else {
                    2
                }
            }
            EnvKind::Walker => 1,
        }
    }

    /// With probability `eta` a uniformly random action, else the control law.
    pub fn action(&self, s: &[f64], rng: &mut Rng) -> Result<usize> {
        if s.len() != self.spec.state_dim {
            return Err(Error::Shape(format!(
                "state of dimension {} for {}",
                s.len(),
                self.spec.name()
            )));
        }
        if self.eta > 0.0 && rng.gen::<f64>() < self.eta {
            Ok(rng.gen_range(0..self.spec.action_count))
        } else {
            Ok(self.control(s))
        }
    }

    /// Rolls whole episodes until at least `min_observations` states are stored.
    pub fn generate_demonstrations(&self, min_observations: usize, seed: u64) -> Result<DemoDataset> {
        if min_observations < 2 {
            return Err(Error::Config("need at least two observations".into()));
        }
        let mut rng = seed::rng(seed::derive(seed, u64::MAX));
        let mut episodes = Vec::new();
        let mut total = 0;
        while total < min_observations {
            let mut state = self.spec.reset(seed::derive(seed, episodes.len() as u64));
            let mut states = vec![state.vector.clone()];
            let mut actions = Vec::new();
            while !state.done {
                let a = self.action(&state.vector, &mut rng)?;
                self.spec.step(&mut state, a)?;
                actions.push(a);
                states.push(state.vector.clone());
            }
            total += states.len();
            episodes.push(Episode {
                states,
                actions: Some(actions),
            });
        }
        Ok(DemoDataset {
            spec: self.spec,
            eta: self.eta,
            episodes,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    /// `states.len() - 1` actions when present.
    pub actions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub spec: EnvSpec,
    pub eta: f64,
    pub episodes: Vec<Episode>,
}

impl DemoDataset {
    pub fn observation_count(&self) -> usize {
        self.episodes.iter().map(|e| e.states.len()).sum()
    }

    pub fn has_actions(&self) -> bool {
        !self.episodes.is_empty() && self.episodes.iter().all(|e| e.actions.is_some())
    }

    /// Same states with every action withheld.
    pub fn observation_only(&self) -> DemoDataset {
        DemoDataset {
            spec: self.spec,
            eta: self.eta,
            episodes: self
                .episodes
                .iter()
                .map(|e| Episode {
                    states: e.states.clone(),
                    actions: None,
                })
                .collect(),
        }
    }

    /// Consecutive `(s_t, s_{t+1})` pairs within episodes; never across a boundary.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.episodes
            .iter()
            .flat_map(|e| e.states.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())))
    }

    /// The pair starting at step `t` of `episode`.
    pub fn pair(&self, episode: usize, t: usize) -> Result<(&[f64], &[f64])> {
        let ep = self
            .episodes
            .get(episode)
            .ok_or_else(|| Error::InvalidPair(format!("no episode {episode}")))?;
        if t + 1 >= ep.states.len() {
            return Err(Error::InvalidPair(format!(
                "step {t} of episode {episode} has no successor within the episode ({} states)",
                ep.states.len()
            )));
        }
        Ok((&ep.states[t], &ep.states[t + 1]))
    }

    /// `(s_t, a_t)` pairs for action-supervised learning.
    pub fn state_actions(&self) -> Result<Vec<(&[f64], usize)>> {
        if !self.has_actions() {
            return Err(Error::MissingActions);
        }
        Ok(self
            .episodes
            .iter()
            .flat_map(|e| {
                let acts = e.actions.as_deref().unwrap_or_default();
                e.states.iter().zip(acts).map(|(s, &a)| (s.as_slice(), a))
            })
            .collect())
    }

    pub fn to_text(&self) -> String {
        self.render(|e, t| match &e.actions {
            Some(a) if t < a.len() => a[t] as i64,
            _ => -1,
        })
    }

    /// Demo rows with an extra column of inferred actions (one per pair).
    pub fn to_labeled_text(&self, labels: &[usize]) -> Result<String> {
        let pairs: usize = self.episodes.iter().map(|e| e.states.len().saturating_sub(1)).sum();
        if labels.len() != pairs {
            return Err(Error::Shape(format!("{} labels for {pairs} pairs", labels.len())));
        }
        let mut offsets = Vec::with_capacity(self.episodes.len());
        let mut acc = 0;
        for e in &self.episodes {
            offsets.push(acc);
            acc += e.states.len().saturating_sub(1);
        }
        let mut out = String::new();
        writeln!(out, "{}", self.header()).unwrap();
        for (ei, e) in self.episodes.iter().enumerate() {
            for (t, s) in e.states.iter().enumerate() {
                let truth = match &e.actions {
                    Some(a) if t < a.len() => a[t] as i64,
                    _ => -1,
                };
                let inferred = if t + 1 < e.states.len() {
                    labels[offsets[ei] + t] as i64
                } else {
                    -1
                };
                writeln!(out, "{ei},{t},{},{truth},{inferred}", format_floats(s)).unwrap();
            }
        }
        Ok(out)
    }

    fn header(&self) -> String {
        format!(
            "# env={} dim={} actions={} eta={}",
            self.spec.name(),
            self.spec.state_dim,
            self.spec.action_count,
            self.eta
        )
    }

    fn render(&self, action_at: impl Fn(&Episode, usize) -> i64) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.header()).unwrap();
        for (ei, e) in self.episodes.iter().enumerate() {
            for (t, s) in e.states.iter().enumerate() {
                writeln!(out, "{ei},{t},{},{}", format_floats(s), action_at(e, t)).unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: &Path, observation_only: bool) -> Result<()> {
        let text = if observation_only {
            self.observation_only().to_text()
        } else {
            self.to_text()
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(source, 1, "empty demo file"))?;
        let (spec, eta) = parse_header(header).map_err(|m| Error::parse(source, 1, m))?;

        let mut episodes: Vec<(Vec<Vec<f64>>, Vec<i64>)> = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != spec.state_dim + 3 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("expected {} fields, got {}", spec.state_dim + 3, fields.len()),
                ));
            }
            let ep: usize = fields[0].parse().map_err(|_| Error::parse(source, lineno, "bad episode id"))?;
            let t: usize = fields[1].parse().map_err(|_| Error::parse(source, lineno, "bad step index"))?;
            let state = fields[2..2 + spec.state_dim]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(source, lineno, "bad state value"))?;
            let a: i64 = fields[2 + spec.state_dim]
                .parse()
                .map_err(|_| Error::parse(source, lineno, "bad action"))?;
            if ep == episodes.len() {
                episodes.push((Vec::new(), Vec::new()));
            } else if ep + 1 != episodes.len() {
                return Err(Error::parse(source, lineno, "episodes out of order"));
            }
            let cur = episodes.last_mut().expect("episode pushed");
            if t != cur.0.len() {
                return Err(Error::parse(source, lineno, "steps out of order"));
            }
            if a >= spec.action_count as i64 || a < -1 {
                return Err(Error::parse(source, lineno, format!("action {a} out of range")));
            }
            cur.0.push(state);
            cur.1.push(a);
        }

        let has_actions = episodes
            .iter()
            .any(|(_, acts)| acts[..acts.len() - 1].iter().any(|&a| a >= 0));
        let mut out = Vec::with_capacity(episodes.len());
        for (states, acts) in episodes {
            let actions = if has_actions {
                let inner = &acts[..acts.len() - 1];
                if inner.iter().any(|&a| a < 0) {
                    return Err(Error::parse(source, 0, "missing action inside an episode"));
                }
                Some(inner.iter().map(|&a| a as usize).collect())
            } else {
                None
            };
            out.push(Episode { states, actions });
        }
        Ok(DemoDataset {
            spec,
            eta,
            episodes: out,
        })
    }
}

fn parse_header(line: &str) -> std::result::Result<(EnvSpec, f64), String> {
    let body = line.strip_prefix('#').ok_or("header must start with '#'")?;
    let mut env = None;
    let mut dim = None;
    let mut actions = None;
    let mut eta = None;
    for kv in body.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field '{kv}'"))?;
        match k {
            "env" => env = Some(EnvSpec::by_name(v).map_err(|e| e.to_string())?),
            "dim" => dim = v.parse::<usize>().ok(),
            "actions" => actions = v.parse::<usize>().ok(),
            "eta" => eta = v.parse::<f64>().ok(),
            _ => return Err(format!("unknown header field '{k}'")),
        }
    }
    let spec = env.ok_or("header lacks env")?;
    if dim != Some(spec.state_dim) || actions != Some(spec.action_count) {
        return Err(format!("header dimensions disagree with {}", spec.name()));
    }
    Ok((spec, eta.ok_or("header lacks eta")?))
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn format_floats(values: &[f64]) -> String {
    values.iter().map(|&v| format_float(v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_laws() {
        let cp = ExpertPolicy::new(EnvSpec::cartpole(), 0.0).unwrap();
        let mut rng = seed::rng(0);
        assert_eq!(cp.action(&[0.0, 0.0, 0.1, 0.1], &mut rng).unwrap(), 1);
        assert_eq!(cp.action(&[0.0, 0.0, 0.1, -0.2], &mut rng).unwrap(), 0);
        let mc = ExpertPolicy::new(EnvSpec::mountain_car(), 0.0).unwrap();
        assert_eq!(mc.action(&[-0.5, -0.01], &mut rng).unwrap(), 0);
        assert_eq!(mc.action(&[-0.5, 0.0], &mut rng).unwrap(), 2);
        let ac = ExpertPolicy::new(EnvSpec::acrobot(), 0.0).unwrap();
        assert_eq!(ac.action(&[1.0, 0.0, 1.0, 0.0, 0.5, 0.0], &mut rng).unwrap(), 0);
        assert_eq!(ac.action(&[1.0, 0.0, 1.0, 0.0, -0.5, 0.0], &mut rng).unwrap(), 2);
        assert_eq!(ac.action(&[1.0, 0.0, 1.0, 0.0, 1e-4, 0.0], &mut rng).unwrap(), 1);
        assert!(matches!(cp.action(&[0.0], &mut rng), Err(Error::Shape(_))));
    }

    #[test]
    fn noise_out_of_range() {
        assert!(ExpertPolicy::new(EnvSpec::cartpole(), 1.5).is_err());
    }

    #[test]
    fn full_noise_is_uniform() {
        let spec = EnvSpec::acrobot();
        let ex = ExpertPolicy::new(spec, 1.0).unwrap();
        let mut rng = seed::rng(42);
        let n = 10_000;
        let mut counts = [0usize; 3];
        let s = spec.reset(0).vector;
        for _ in 0..n {
            counts[ex.action(&s, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let ex = ExpertPolicy::new(EnvSpec::cartpole(), 0.1).unwrap();
        let a = ex.generate_demonstrations(1000, 5).unwrap();
        let b = ex.generate_demonstrations(1000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.observation_count() >= 1000);
        for e in &a.episodes {
            assert_eq!(e.actions.as_ref().unwrap().len() + 1, e.states.len());
        }
    }

    #[test]
    fn pair_across_boundary_is_invalid() {
        let ex = ExpertPolicy::new(EnvSpec::mountain_car(), 0.1).unwrap();
        let d = ex.generate_demonstrations(300, 1).unwrap();
        let last = d.episodes[0].states.len() - 1;
        assert!(d.pair(0, last - 1).is_ok());
        assert!(matches!(d.pair(0, last), Err(Error::InvalidPair(_))));
    }

    #[test]
    fn observation_only_drops_actions() {
        let ex = ExpertPolicy::new(EnvSpec::cartpole(), 0.1).unwrap();
        let d = ex.generate_demonstrations(300, 1).unwrap().observation_only();
        assert!(!d.has_actions());
        assert!(matches!(d.state_actions(), Err(Error::MissingActions)));
        let text = d.to_text();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",-1")));
    }

    #[test]
    fn text_header_and_rows() {
        let ex = ExpertPolicy::new(EnvSpec::mountain_car(), 0.1).unwrap();
        let d = ex.generate_demonstrations(10, 3).unwrap();
        let text = d.to_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# env=mountaincar dim=2 actions=3 eta=0.1");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], "0");
        assert_eq!(row[1], "0");
        assert_eq!(DemoDataset::parse(&text, "mem").unwrap(), d);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(DemoDataset::parse("", "x").is_err());
        assert!(DemoDataset::parse("# env=cartpole dim=3 actions=2 eta=0\n", "x").is_err());
        assert!(DemoDataset::parse("# env=cartpole dim=4 actions=2 eta=0\n0,0,1,2\n", "x").is_err());
    }
}
