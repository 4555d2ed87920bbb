//! The `ilpo` binary end to end on the cheap walker task.

use std::fs;
use std::process::{Command, Output};

use ilpo::experts::DemoDataset;
use ilpo::harness::LearningCurve;

fn ilpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilpo")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let demos = dir.path().join("walker.csv");
    let out_dir = dir.path().join("runs");
    let d = demos.to_str().unwrap();
    let o = ilpo(&["generate-demos", "--env", "walker", "--count", "400", "--eta", "0.3", "--seed", "1", "--out", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = DemoDataset::read(&demos).unwrap();
    assert!(data.observation_count() >= 400 && data.has_actions());

    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "# small run\neval_every = 20\neval_episodes = 2\nstep1_epochs = 3\nbudget = 100\n").unwrap();
    let args = [
        "train", "--config", cfg.to_str().unwrap(), "--method", "ilpo", "--env", "walker", "--demos", d,
        "--budget", "40", "--trials", "2", "--z", "2", "--seed", "3", "--out-dir", out_dir.to_str().unwrap(),
    ];
    let o = ilpo(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = LearningCurve::read(&out_dir.join("ilpo_walker.csv")).unwrap();
    // the flag overrides the file's budget
    assert_eq!(curve.rows.len(), 4);
    assert!(out_dir.join("ilpo_walker_summary.csv").exists());
    let first = fs::read(out_dir.join("ilpo_walker.csv")).unwrap();
    assert!(ilpo(&args).status.success());
    assert_eq!(fs::read(out_dir.join("ilpo_walker.csv")).unwrap(), first);

    let ck = out_dir.join("ilpo_walker_trial0.ckpt");
    let o = ilpo(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--episodes", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean return"));
}

#[test]
fn sweep_and_ablation_write_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = [
        "--env", "walker", "--trials", "1", "--budget", "20", "--set", "eval_every=20", "--set", "eval_episodes=1",
        "--set", "demos=200", "--set", "step1_epochs=1", "--out-dir", out,
    ];
    let mut sweep = vec!["sweep-z", "--z-values", "1,2"];
    sweep.extend(common);
    let o = ilpo(&sweep);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = LearningCurve::read(&dir.path().join("sweep_z_walker.csv")).unwrap();
    let methods: Vec<&str> = curve.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, vec!["ilpo-z1", "ilpo-z2"]);

    let mut ablate = vec!["ablate-noise"];
    ablate.extend(common);
    let o = ilpo(&ablate);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(LearningCurve::read(&dir.path().join("ablate_noise_walker.csv")).unwrap().rows.len(), 2);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &["train", "--env", "pong", "--out-dir", out],
        &["train", "--method", "gail", "--out-dir", out],
        &["evaluate", "--checkpoint", "/no/such/file.ckpt"],
        &["train", "--set", "trials=0", "--out-dir", out],
    ];
    for args in cases {
        let o = ilpo(args);
        assert!(!o.status.success(), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}
