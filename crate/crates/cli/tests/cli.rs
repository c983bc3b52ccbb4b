use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
iterations = 4
horizon = 20
policy_hidden = 8
grid = 10
eval_episodes = 2
branching = 4
n1 = 2
n2 = 2
ppo.n_envs = 4
ppo.rollout_len = 10
ppo.critic_hidden = 8
reward.hidden = 16
reward_minibatch = 16
pool_size = 10
num_demos = 2
";

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn wqdil(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_wqdil")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn run_writes_every_artifact_and_eval_reads_them_back() {
    let dir = scratch("run");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, format!("{TINY}variant = mcwae-wgail\n")).unwrap();
    let out_dir = dir.join("out");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());
    let stdout = String::from_utf8(wqdil(&["run", "--config", c, "--out-dir", o]).stdout).unwrap();
    assert!(stdout.contains("qd_score"), "{stdout}");
    for f in [
        "metrics.csv",
        "archive.csv",
        "archive_params.bin",
        "heatmap.csv",
        "heatmap.pgm",
        "visits.csv",
        "reward_model.bin",
        "demos.csv",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    let eval = String::from_utf8(wqdil(&["eval", "--config", c, "--archive", o]).stdout).unwrap();
    let archive_rows = fs::read_to_string(out_dir.join("archive.csv")).unwrap().lines().count();
    assert_eq!(eval.lines().count(), archive_rows);

    let heat = dir.join("heat");
    wqdil(&["export-heatmap", "--config", c, "--archive", o, "--out-dir", heat.to_str().unwrap()]);
    assert_eq!(
        fs::read(heat.join("heatmap.csv")).unwrap(),
        fs::read(out_dir.join("heatmap.csv")).unwrap()
    );
}

#[test]
fn saved_demonstrations_can_be_reused() {
    let dir = scratch("demos");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let demos = dir.join("demos.csv");
    let c = cfg.to_str().unwrap();
    let stdout = String::from_utf8(wqdil(&["gen-demos", "--config", c, "--out", demos.to_str().unwrap()]).stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("demo ")).count(), 2);

    fs::write(&cfg, format!("{TINY}variant = gail\nbonus = false\ndemos = {}\n", demos.display())).unwrap();
    let o = dir.join("out");
    wqdil(&["run", "--config", c, "--seed", "3", "--out-dir", o.to_str().unwrap()]);
    assert!(!o.join("demos.csv").exists());
}

#[test]
fn bad_config_fails_with_line_number() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "iterations = 2\nbranching = lots\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wqdil"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:2:"), "{err}");
}
