mod common;

use std::io::Cursor;
use std::path::Path;

use common::{drac, run_ok, tiny_config, write_tiny_config, TINY};
use drac::checkpoint::{self, Checkpoint};
use drac::plot::{choice_csv, curve_csv, emit_plots, parse_curve_csv, CURVE_HEADER};
use drac::remote::{serve, Reply, Request, SubprocessEnv};
use drac::robustness::{self, RobustnessRow, CSV_HEADER};
use drac::run::{
    self, read_final_eval, RunOptions, CHECKPOINT_FILE, CONFIG_FILE, FINAL_CHECKPOINT_FILE, FINAL_EVAL_FILE,
    MANIFEST_FILE,
};
use drac::runlog::{read_log, METRICS_FILE};
use drac::CODE_VERSION;
use drac_core::config::ExperimentConfig;
use drac_core::env::{level_split, Environment, GridEnv};
use drac_core::eval::RobustnessReport;
use drac_core::trainer::{MetricsRecord, Trainer};
use tempfile::tempdir;

const QUIET: RunOptions = RunOptions { max_updates: None, progress_every: 0 };

fn strip_clock(mut records: Vec<MetricsRecord>) -> Vec<MetricsRecord> {
    for r in &mut records {
        r.wall_clock = 0.0;
    }
    records
}

#[test]
fn config_round_trip_is_byte_identical() {
    let desk = include_str!("../../../configs/desk.conf");
    for text in [desk, TINY] {
        let once = ExperimentConfig::parse(text).unwrap().to_text();
        let twice = ExperimentConfig::parse(&once).unwrap().to_text();
        assert_eq!(once, twice);
    }
}

#[test]
fn desk_defaults_match_the_hyperparameter_table() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.ppo.gamma, 0.999);
    assert_eq!(cfg.ppo.gae_lambda, 0.95);
    assert_eq!(cfg.ppo.rollout_length, 256);
    assert_eq!(cfg.ppo.epochs, 3);
    assert_eq!(cfg.ppo.minibatches, 8);
    assert_eq!(cfg.ppo.entropy_coef, 0.01);
    assert_eq!(cfg.ppo.clip, 0.2);
    assert_eq!(cfg.ppo.learning_rate, 5e-4);
    assert_eq!(cfg.drac.alpha_r, 0.1);
    assert_eq!(cfg.ucb_c, 0.1);
    assert_eq!(cfg.ucb_window, 10);
    assert_eq!(cfg.ppo.num_envs, 16);
    assert_eq!(cfg.ppo.total_steps, 500_000);
    assert_eq!(cfg.n_train_levels, 50);
}

#[test]
fn drac_fixed_requires_an_augmentation() {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.apply_override("method=drac_fixed").unwrap();
    assert!(cfg.validate().is_err());
    cfg.apply_override("fixed_aug=flip").unwrap();
    cfg.validate().unwrap();
}

#[test]
fn zero_alpha_drac_reproduces_ppo_curve() {
    let dir = tempdir().unwrap();
    let run = |extra: &[&str]| {
        let mut t = Trainer::new(tiny_config(dir.path(), extra)).unwrap();
        (0..t.total_updates()).map(|_| t.step().unwrap().mean_episode_return).collect::<Vec<f64>>()
    };
    let ppo = run(&[]);
    let drac = run(&["method=drac_fixed", "fixed_aug=random_conv", "alpha_r=0"]);
    assert_eq!(ppo.len(), drac.len());
    for (a, b) in ppo.iter().zip(&drac) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn run_directory_holds_every_artifact() {
    let dir = tempdir().unwrap();
    let run_dir = run::start(tiny_config(dir.path(), &[]), &QUIET).unwrap();
    assert_eq!(run_dir.file_name().unwrap(), "ppo-background-s1");
    for f in [CONFIG_FILE, METRICS_FILE, FINAL_CHECKPOINT_FILE, CHECKPOINT_FILE, MANIFEST_FILE, FINAL_EVAL_FILE] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["code_version"], CODE_VERSION);
    let snapshot = std::fs::read_to_string(run_dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(snapshot, tiny_config(dir.path(), &[]).to_text());

    let first = std::fs::read_to_string(run_dir.join(METRICS_FILE)).unwrap();
    let header: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], 1);
    let log = read_log(&run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(log.records.len(), 6);
    assert!(log.records.windows(2).all(|w| w[1].env_steps > w[0].env_steps && w[1].update == w[0].update + 1));

    let eval = read_final_eval(&run_dir).unwrap();
    assert_eq!(eval.updates, 6);
    assert_eq!(eval.env_steps, 384);
}

#[test]
fn one_seed_per_training_process() {
    let dir = tempdir().unwrap();
    assert!(run::start(tiny_config(dir.path(), &["seeds=1,2"]), &QUIET).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let whole = tempdir().unwrap();
    let split = tempdir().unwrap();
    let cfg = |d: &Path| tiny_config(d, &["method=ucb_drac"]);
    let a = run::start(cfg(whole.path()), &QUIET).unwrap();

    let b = run::start(cfg(split.path()), &RunOptions { max_updates: Some(3), progress_every: 0 }).unwrap();
    assert!(!b.join(FINAL_CHECKPOINT_FILE).exists());
    // The log may run ahead of the checkpoint; resume trims it back.
    run::resume(&b.join(CHECKPOINT_FILE), &QUIET).unwrap();

    let la = read_log(&a.join(METRICS_FILE)).unwrap();
    let lb = read_log(&b.join(METRICS_FILE)).unwrap();
    assert_eq!(strip_clock(la.records), strip_clock(lb.records));
    let ca = checkpoint::load(&a.join(FINAL_CHECKPOINT_FILE)).unwrap();
    let cb = checkpoint::load(&b.join(FINAL_CHECKPOINT_FILE)).unwrap();
    assert_eq!(ca.state.params, cb.state.params);
    assert_eq!(read_final_eval(&a).unwrap(), read_final_eval(&b).unwrap());
}

#[test]
fn checkpoint_round_trip_restores_the_network() {
    let dir = tempdir().unwrap();
    let mut t = Trainer::new(tiny_config(dir.path(), &["method=rl2_drac"])).unwrap();
    t.step().unwrap();
    let path = dir.path().join("c.bin");
    checkpoint::save(&path, &Checkpoint { code_version: CODE_VERSION.into(), state: t.state() }).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.code_version, CODE_VERSION);
    let mut u = Trainer::from_state(loaded.state).unwrap();
    assert_eq!(t.net().params(), u.net().params());
    let (ra, rb) = (t.step().unwrap(), u.step().unwrap());
    assert_eq!(strip_clock(vec![ra]), strip_clock(vec![rb]));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    assert!(checkpoint::read_from(Cursor::new(b"NOTACKPT\x01\0\0\0".to_vec())).is_err());
    let mut bytes = checkpoint::MAGIC.to_vec();
    bytes.extend(99u32.to_le_bytes());
    let err = checkpoint::read_from(Cursor::new(bytes)).unwrap_err();
    assert!(err.to_string().contains("version 99"));
}

#[test]
fn ucb_log_replays_selector_counts() {
    let dir = tempdir().unwrap();
    let run_dir = run::start(tiny_config(dir.path(), &["method=ucb_drac", "total_env_steps=640"]), &QUIET).unwrap();
    let log = read_log(&run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(log.records.len(), 10);
    let mut replay = [1u64; 8];
    for r in &log.records {
        let id = r.aug_id.expect("one decision per update");
        let pos = drac_core::augment::SAMPLED.iter().position(|&s| s == id).unwrap();
        // Snapshots are taken before the chosen arm's feedback arrives.
        assert_eq!(r.counts, replay.to_vec());
        replay[pos] += 1;
    }
    let csv = choice_csv(&log).unwrap();
    let last = csv.lines().last().unwrap();
    let cumulative: Vec<u64> = last.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(cumulative, replay.iter().map(|c| c - 1).collect::<Vec<_>>());
    assert_eq!(cumulative.iter().sum::<u64>(), 10);
}

#[test]
fn plots_round_trip_through_csv() {
    let dir = tempdir().unwrap();
    let run_dir = run::start(tiny_config(dir.path(), &["method=ucb_drac"]), &QUIET).unwrap();
    let written = emit_plots(dir.path()).unwrap();
    let csv_path = written.iter().find(|p| p.to_string_lossy().ends_with(".returns.csv")).unwrap();
    assert!(written.iter().any(|p| p.to_string_lossy().ends_with(".returns.svg")));
    assert!(written.iter().any(|p| p.to_string_lossy().ends_with(".choices.csv")));
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CURVE_HEADER);
    let rows = parse_curve_csv(&text).unwrap();
    let log = read_log(&run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), log.records.len());
    for (row, r) in rows.iter().zip(&log.records) {
        assert_eq!(*row, (r.update, r.env_steps, r.mean_episode_return, r.median_episode_return, r.test_return));
    }
    assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));
    assert_eq!(text, curve_csv(&log));
}

#[test]
fn empty_log_directory_is_a_schema_error() {
    let dir = tempdir().unwrap();
    let err = emit_plots(dir.path()).unwrap_err().to_string();
    assert!(err.contains("schema error"), "{err}");
}

#[test]
fn missing_log_key_is_named() {
    let dir = tempdir().unwrap();
    let run_dir = run::start(tiny_config(dir.path(), &[]), &QUIET).unwrap();
    let path = run_dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    rec.as_object_mut().unwrap().remove("grad_norm");
    lines[1] = rec.to_string();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = emit_plots(dir.path()).unwrap_err().to_string();
    assert!(err.contains("schema error") && err.contains("`grad_norm`"), "{err}");

    lines[0] = r#"{"run":"x"}"#.into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = read_log(&path).unwrap_err().to_string();
    assert!(err.contains("`schema`"), "{err}");
}

#[test]
fn robustness_rows_round_trip() {
    let report = RobustnessReport { jsd: vec![0.1, 0.3, 0.2], cycle2: vec![0.5, 0.25], cycle3: vec![0.0, 1.0, 0.5] };
    let row = RobustnessRow::from_report("ucb_drac", &report).unwrap();
    assert!((row.jsd_mean - 0.2).abs() < 1e-12);
    assert_eq!(row.jsd_median, 0.2);
    assert_eq!(row.cycle2_median, 0.375);
    let csv = robustness::to_csv(&[row.clone()]);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(robustness::parse_csv(&csv).unwrap(), vec![row]);
}

#[test]
fn remote_protocol_round_trip() {
    let cfg = tiny_config(Path::new("."), &[]);
    let (train, _) = level_split(cfg.n_train_levels, cfg.test_pool_size).unwrap();
    let mut local = GridEnv::new(cfg.env.clone(), train.clone(), 0).unwrap();
    let mut served = GridEnv::new(cfg.env.clone(), train, 0).unwrap();
    let requests = [Request::Reset, Request::Step { action: 1 }, Request::Step { action: 3 }];
    let input: String = requests.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    assert!(input.starts_with(r#"{"cmd":"reset"}"#));
    let mut output = Vec::new();
    serve(&mut served, Cursor::new(input), &mut output).unwrap();
    let replies: Vec<Reply> =
        String::from_utf8(output).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies[0].decode(8).unwrap(), local.reset().unwrap());
    for (reply, action) in replies[1..].iter().zip([1, 3]) {
        let t = local.step(action).unwrap();
        assert_eq!(reply.decode(8).unwrap(), t.observation);
        assert_eq!((reply.reward, reply.done), (t.reward, t.done));
    }
    assert!(replies[0].decode(7).is_err());
}

#[test]
fn subprocess_environment_matches_in_process() {
    let dir = tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    let mut cmd = drac();
    cmd.arg("serve-env").arg("--config").arg(&conf).arg("--stream").arg("4");
    let mut remote = SubprocessEnv::spawn(cmd, 8).unwrap();
    let cfg = tiny_config(dir.path(), &[]);
    let (train, _) = level_split(cfg.n_train_levels, cfg.test_pool_size).unwrap();
    let mut local = GridEnv::new(cfg.env, train, 4).unwrap();
    assert_eq!(remote.reset().unwrap(), local.reset().unwrap());
    for k in 0..30 {
        let a = k % 5;
        let (r, l) = (remote.step(a).unwrap(), local.step(a).unwrap());
        assert_eq!((r.observation, r.reward, r.done), (l.observation, l.reward, l.done));
        if l.done {
            assert_eq!(remote.reset().unwrap(), local.reset().unwrap());
        }
    }
}

#[test]
fn cli_train_eval_and_log_dir_variable() {
    let dir = tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    let logs = dir.path().join("elsewhere");
    let out = run_ok(
        drac()
            .env("DRAC_LOG_DIR", &logs)
            .args(["train", "--progress-every", "0", "--config"])
            .arg(&conf)
            .args(["--override", "seeds=3"]),
    );
    let run_dir = logs.join("ppo-background-s3");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), run_dir.display().to_string());
    let ckpt = run_dir.join(FINAL_CHECKPOINT_FILE);
    let eval = |split: &str, episodes: &str| {
        drac().arg("eval").arg("--checkpoint").arg(&ckpt).args(["--split", split, "--episodes", episodes]).output().unwrap()
    };
    let a = eval("test", "6");
    assert!(a.status.success());
    assert_eq!(a.stdout, eval("test", "6").stdout);
    let row: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(row["split"], "test");
    assert!(row["mean_return"].as_f64().is_some());
    assert!(eval("train", "3").status.success());
    assert!(!eval("train", "0").status.success());
}

#[test]
fn cli_robustness_plot_and_sweep() {
    let dir = tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    let logs = dir.path().join("runs");
    run_ok(drac().env("DRAC_LOG_DIR", &logs).arg("sweep").arg("--config").arg(&conf).args(["--seeds", "1,2", "--jobs", "2"]));
    for s in [1, 2] {
        assert!(logs.join(format!("ppo-background-s{s}")).join(FINAL_EVAL_FILE).is_file());
    }
    let ckpt = logs.join("ppo-background-s1").join(FINAL_CHECKPOINT_FILE);
    run_ok(drac().arg("robustness").arg("--checkpoint").arg(&ckpt).args(["--levels", "3"]));
    let rows = robustness::parse_csv(
        &std::fs::read_to_string(logs.join("ppo-background-s1").join(drac::plot::ROBUSTNESS_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(rows[0].method, "ppo");
    run_ok(drac().arg("plot").arg("--log-dir").arg(&logs));
    assert!(logs.join("plots").join("robustness_report.csv").is_file());
    assert!(logs.join("plots").join("ppo.test_returns.svg").is_file());
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = drac().arg("plot").arg("--log-dir").arg(&empty).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema error"));
}

#[test]
fn registry_lists_every_augmentation() {
    let out = run_ok(drac().arg("registry"));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = v.to_string();
    for id in drac_core::augment::REGISTRY {
        assert!(text.contains(id.as_str()), "{}", id.as_str());
    }
}
