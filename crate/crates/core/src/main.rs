use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ilpo::envs::EnvSpec;
use ilpo::experts::ExpertPolicy;
use ilpo::harness::{self, ExperimentConfig, LearningCurve, TrainedPolicy};
use ilpo::{Error, Result};

#[derive(Parser)]
#[command(name = "ilpo", about = "Latent policy imitation from observation on classic control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and store its demonstrations.
    GenerateDemos {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 50_000)]
        count: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Omit the action column.
        #[arg(long)]
        observation_only: bool,
    },
    /// Train one method over several trials and write learning curves.
    Train(ExperimentArgs),
    /// Repeat ILPO training for several latent counts.
    SweepZ {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated latent counts.
        #[arg(long = "z-values", value_delimiter = ',', default_value = "1,2,3")]
        z_values: Vec<usize>,
    },
    /// Compare deterministic and noisy demonstrations.
    AblateNoise(ExperimentArgs),
    /// Greedy evaluation of a saved policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// File of `key = value` lines applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Demonstration file; generated per trial when absent.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    z: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Paper trial count and training schedules.
    #[arg(long)]
    paper_scale: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        let flags = [
            ("env", self.env.clone()),
            ("method", self.method.clone()),
            ("budget", self.budget.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("z", self.z.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if let Some(p) = &self.demos {
            cfg.demo_path = Some(p.clone());
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(&self.out_dir)
    }
}

fn report(curve: &LearningCurve) {
    for r in curve.summary() {
        println!("{} {:>5} {:>10.2} ± {:.2}", r.method, r.interactions, r.mean, r.stderr);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateDemos {
            env,
            count,
            eta,
            seed,
            out,
            observation_only,
        } => {
            let spec = EnvSpec::by_name(&env)?;
            let demos = ExpertPolicy::new(spec, eta)?.generate_demonstrations(count, seed)?;
            demos.write(&out, observation_only)?;
            println!(
                "wrote {} states in {} episodes to {}",
                demos.observation_count(),
                demos.episodes.len(),
                out.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let dir = args.out_dir()?;
            let out = harness::run_experiment_full(&cfg)?;
            let path = dir.join(format!("{}_{}.csv", cfg.method, cfg.env));
            harness::write_curves(&out.curve, &path)?;
            for (t, p) in out.policies.iter().enumerate() {
                if let Some(p) = p {
                    p.write(&cfg.spec(), &dir.join(format!("{}_{}_trial{t}.ckpt", cfg.method, cfg.env)))?;
                }
            }
            report(&out.curve);
            println!("curves written to {}", path.display());
        }
        Command::SweepZ { exp, z_values } => {
            let cfg = exp.config()?;
            let dir = exp.out_dir()?;
            let mut all = LearningCurve::default();
            for (_, c) in harness::sweep_latent(&cfg, &z_values)? {
                all.extend(c);
            }
            let path = dir.join(format!("sweep_z_{}.csv", cfg.env));
            harness::write_curves(&all, &path)?;
            report(&all);
            println!("curves written to {}", path.display());
        }
        Command::AblateNoise(args) => {
            let cfg = args.config()?;
            let dir = args.out_dir()?;
            let (a, b) = harness::ablate_stochasticity(&cfg)?;
            let mut all = a;
            all.extend(b);
            let path = dir.join(format!("ablate_noise_{}.csv", cfg.env));
            harness::write_curves(&all, &path)?;
            report(&all);
            println!("curves written to {}", path.display());
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            seed,
        } => {
            let (spec, policy) = TrainedPolicy::read(&checkpoint)?;
            let mean = policy.evaluate(&spec, episodes, seed)?;
            println!("{} on {}: mean return {mean:.2} over {episodes} episodes", policy.method(), spec.name());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
