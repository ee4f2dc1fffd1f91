use std::fs;
use std::path::Path;
use std::process::Command;

use ssdrl::harness::{read_csv, run_experiment, ExperimentConfig, ExperimentKind};

fn config(kind: ExperimentKind, text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(kind, text, None).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

const TINY_CONTROL: &str = r#"
trials = 2
seed = 5
[learner]
episodes = 2
particles = 4
horizon = 60
[proximal]
max_gradient_steps = 6
[[methods]]
name = "ssd"
policy = { kind = "ssd" }
[[methods]]
name = "qr"
learner = "qr"
policy = { kind = "egreedy", epsilon = 0.1 }
"#;

const TINY_REGRESS: &str = r#"
trials = 3
[regress]
sample_counts = [5, 10]
reference_samples = 500
gradient_steps = 10
qr_iterations = 200
"#;

const TINY_ABLATE: &str = r#"
trials = 2
[ablate]
temperatures = [0.25, 0.5]
step_sizes = [0.1, 1.0, 10.0]
samples = 5
reference_samples = 200
gradient_steps = 5
"#;

const TINY_EVALUATE: &str = r#"
trials = 2
[evaluate]
q_episodes = 300
rollouts = 20
depth = 60
particles = 20
gradient_steps = 5
"#;

fn header(path: &Path) -> Vec<String> {
    read_csv(path).unwrap().0
}

#[test]
fn golden_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (ExperimentKind::Control, TINY_CONTROL, "raw_ssd_0.csv",
         "episode,return,steps,cliff_falls,multi_solution_events,path_class,greedy_return"),
        (ExperimentKind::Regress, TINY_REGRESS, "raw_qr_0.csv",
         "samples,first_moment_rmse,second_moment_rmse"),
        (ExperimentKind::Ablate, TINY_ABLATE, "raw_wgf_0.csv",
         "temperature,h,first_moment_rmse,second_moment_rmse"),
        (ExperimentKind::Evaluate, TINY_EVALUATE, "raw_wgf_0.csv",
         "step,loss,value_error,fitted_mean"),
    ];
    for (kind, text, raw, expected) in cases {
        let out = dir.path().join(kind.name());
        run_experiment(&config(kind, text, &out)).unwrap();
        assert_eq!(header(&out.join(raw)).join(","), expected, "{}", kind.name());
    }
    let agg = header(&dir.path().join("control/agg_ssd.csv")).join(",");
    assert_eq!(
        agg,
        "episode,return_mean,return_ci,steps_mean,steps_ci,cliff_falls_mean,cliff_falls_ci,\
         multi_solution_events_mean,multi_solution_events_ci,path_class_top_mean,path_class_top_ci,\
         path_class_bottom_mean,path_class_bottom_ci,path_class_none_mean,path_class_none_ci,\
         greedy_return_mean,greedy_return_ci"
    );
    let agg = header(&dir.path().join("regress/agg_wgf.csv")).join(",");
    assert_eq!(
        agg,
        "samples,first_moment_rmse_mean,first_moment_rmse_ci,second_moment_rmse_mean,second_moment_rmse_ci"
    );
}

#[test]
fn output_files_per_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let run = run_experiment(&config(ExperimentKind::Control, TINY_CONTROL, &out)).unwrap();
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "agg_qr.csv", "agg_ssd.csv", "fig_cliff_falls.svg", "fig_multi_solution.svg",
            "fig_return.svg", "fig_steps.svg", "fig_top_path.svg", "raw_qr_0.csv", "raw_qr_1.csv",
            "raw_ssd_0.csv", "raw_ssd_1.csv"
        ]
    );
    assert_eq!(run.files.len(), names.len());
    // two trials: every figure carries a band per method
    let svg = fs::read_to_string(out.join("fig_return.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("class=\"band\"").count(), 2);
}

#[test]
fn single_trial_has_one_row_per_episode_and_no_band() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ExperimentKind::Control, TINY_CONTROL, dir.path());
    cfg.trials = 1;
    run_experiment(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("raw_ssd_0.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let svg = fs::read_to_string(dir.path().join("fig_return.svg")).unwrap();
    assert!(!svg.contains("class=\"band\""));
}

#[test]
fn ablation_grid_has_a_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(ExperimentKind::Ablate, TINY_ABLATE, dir.path())).unwrap();
    let (_, rows) = read_csv(&dir.path().join("raw_wgf_1.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r[2].parse::<f64>().unwrap().is_finite());
        assert!(r[3].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn aggregates_are_means_of_raw_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::Control, TINY_CONTROL, dir.path());
    run_experiment(&cfg).unwrap();
    for method in ["ssd", "qr"] {
        let raws: Vec<_> = (0..cfg.trials)
            .map(|k| read_csv(&dir.path().join(format!("raw_{method}_{k}.csv"))).unwrap())
            .collect();
        let (agg_header, agg_rows) = read_csv(&dir.path().join(format!("agg_{method}.csv"))).unwrap();
        for metric in ["return", "steps", "cliff_falls", "multi_solution_events", "greedy_return"] {
            let col = raws[0].0.iter().position(|h| h == metric).unwrap();
            let agg_col = agg_header.iter().position(|h| *h == format!("{metric}_mean")).unwrap();
            for (r, agg_row) in agg_rows.iter().enumerate() {
                let mean = raws.iter().map(|(_, rows)| rows[r][col].parse::<f64>().unwrap()).sum::<f64>()
                    / raws.len() as f64;
                let got: f64 = agg_row[agg_col].parse().unwrap();
                assert!((got - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{metric}: {got} vs {mean}");
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let kinds = [
        (ExperimentKind::Control, TINY_CONTROL),
        (ExperimentKind::Regress, TINY_REGRESS),
        (ExperimentKind::Evaluate, TINY_EVALUATE),
    ];
    for (kind, text) in kinds {
        let a = dir.path().join(format!("{}_a", kind.name()));
        let b = dir.path().join(format!("{}_b", kind.name()));
        let mut cfg = config(kind, text, &a);
        cfg.threads = 1;
        run_experiment(&cfg).unwrap();
        cfg.out = b.clone();
        cfg.threads = 3;
        run_experiment(&cfg).unwrap();
        // and a rerun into the same directory overwrites with the same bytes
        run_experiment(&cfg).unwrap();
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{name:?}"
            );
        }
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ExperimentKind::Regress, TINY_REGRESS, &dir.path().join("a"));
    run_experiment(&cfg).unwrap();
    cfg.seed += 1;
    cfg.out = dir.path().join("b");
    run_experiment(&cfg).unwrap();
    assert_ne!(
        fs::read(dir.path().join("a/raw_wgf_0.csv")).unwrap(),
        fs::read(dir.path().join("b/raw_wgf_0.csv")).unwrap()
    );
    // trial 1 of seed s is trial 0 of seed s + 1
    assert_eq!(
        fs::read(dir.path().join("a/raw_wgf_1.csv")).unwrap(),
        fs::read(dir.path().join("b/raw_wgf_0.csv")).unwrap()
    );
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ssdrl"));
    c.env_remove("SSDRL_OUT");
    c
}

#[test]
fn cli_exit_codes_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("regress.toml");
    fs::write(&cfg_path, format!("kind = \"regress\"\nout = \"from-config\"\n{TINY_REGRESS}")).unwrap();

    let status = cli().args(["regress", "--trials", "0"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = cli().args(["control", "--config"]).arg(&cfg_path).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = cli().args(["regress", "--no-such-flag"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    // environment beats the config file
    let env_out = dir.path().join("from-env");
    let status = cli()
        .args(["regress", "--config"])
        .arg(&cfg_path)
        .env("SSDRL_OUT", &env_out)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert!(env_out.join("agg_wgf.csv").exists());

    // and the flag beats the environment
    let flag_out = dir.path().join("from-flag");
    let status = cli()
        .args(["regress", "--trials", "2", "--seed", "9", "--threads", "1", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&flag_out)
        .env("SSDRL_OUT", &env_out)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert!(flag_out.join("raw_wgf_1.csv").exists());
    assert!(!flag_out.join("raw_wgf_2.csv").exists());
}
