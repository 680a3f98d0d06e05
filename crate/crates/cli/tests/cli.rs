use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use raretok::report::Report;

fn raretok(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raretok"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small planted model under `dir/toy` plus a matching run config.
fn small_toy(dir: &Path, d_model: usize) {
    let spec = format!(
        r#"{{"arch": {{"n_layers": 2, "d_model": {d_model}, "d_mlp": 128, "n_heads": 4, "vocab_size": 128, "max_context": 32}},
            "n_planted": 4, "n_docs": 250, "min_rare_positions": 200}}"#
    );
    fs::write(dir.join("spec.json"), spec).unwrap();
    let o = raretok(&["synth", "--spec", "spec.json", "--seed", "3", "--out", "toy"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let config = "model = \"toy\"\ncorpus = [\"toy/corpus.bin\"]\n[pipeline]\nelbow_window = 11\nbaselines = 10\n";
    fs::write(dir.join("run.toml"), config).unwrap();
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = raretok(&["run-all", "--model", "m", "--corpus", "c.bin", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("seed is required") && err.contains("--help"), "{err}");
    assert!(err.contains(r#""stage":"load""#), "{err}");
    let o = raretok(&["synth", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n[pipeline]\nbinz = 8\n").unwrap();
    let o = raretok(&["run-all", "--config", "bad.toml", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("binz"));
}

#[test]
fn unreadable_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = raretok(
        &["run-all", "--model", "absent.safetensors", "--corpus", "c.bin", "--seed", "1", "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn rank_deficient_spectrum_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    small_toy(dir.path(), 16);
    let group = (0..20).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    let o = raretok(
        &["spectrum", "--config", "run.toml", "--seed", "1", "--group", &group, "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(
        err.contains(r#""category":"numerical""#) && err.contains(r#""code":4"#) && err.contains("SpectrumTooSmall"),
        "{err}"
    );
}

#[test]
fn common_power_law_sweep_reports_no_plateau() {
    let dir = tempfile::tempdir().unwrap();
    // a shuffled r^(−0.8) curve over 400 neurons, no plateau
    let mut csv = String::from("neuron_index,delta_loss_rare,delta_loss_common\n");
    for i in 0..400usize {
        let rank = (i * 151) % 400 + 1;
        csv.push_str(&format!("{i},1e-3,{}\n", (rank as f64).powf(-0.8)));
    }
    fs::write(dir.path().join("sweep.csv"), csv).unwrap();
    let o = raretok(&["regimes", "--sweep", "sweep.csv", "--class", "common", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("plateau: absent"), "{}", stdout(&o));
    assert!(dir.path().join("r/regimes_common.json").exists());
}

#[test]
fn stage_commands_chain_on_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_toy(d, 16);
    let o = raretok(&["freq", "--corpus", "toy/corpus.bin", "--elbow-window", "11", "--out", "f"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("f/split.json").exists() && d.join("f/freq.csv").exists());

    let o = raretok(
        &[
            "ablate",
            "--model",
            "toy",
            "--corpus",
            "toy/corpus.bin",
            "--split",
            "f/split.json",
            "--out",
            "s",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = raretok(&["regimes", "--sweep", "s/sweep.json", "--class", "rare"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("plateau: "));

    let o = raretok(
        &[
            "geometry",
            "--config",
            "run.toml",
            "--seed",
            "2",
            "--group",
            "0,1,2,3,4,5,6,7,8,9",
            "--out",
            "g",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = Report::load(&d.join("g/report.json")).unwrap();
    assert!(report.results.geometry.is_some());
    assert!(report.results.graph.is_none() && report.results.attention.is_none() && report.results.spectral.is_none());
    assert!(!report.partial_results);
    assert_eq!(report.config.seed, 2);

    let o = raretok(&["report", "--report", "g/report.json", "--out", "again"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "tables/geometry.csv"] {
        assert_eq!(fs::read(d.join("g").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_all_is_reproducible_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_toy(d, 32);
    for (out, threads) in [("r1", "1"), ("r2", "2")] {
        let o = raretok(
            &[
                "--threads",
                threads,
                "run-all",
                "--config",
                "run.toml",
                "--seed",
                "5",
                "--tau",
                "0.9",
                "--out",
                out,
            ],
            d,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(d.join("r1/report.json")).unwrap();
    assert_eq!(a, fs::read(d.join("r2/report.json")).unwrap());
    let report = Report::load(&d.join("r1/report.json")).unwrap();
    assert_eq!(report.config.pipeline.tau, 0.9);
    assert_eq!(report.config.pipeline.baselines, 10);
    assert_eq!(report.inputs.len(), 3);
    for f in ["tables/sweep.csv", "tables/regimes.csv", "plots/rank_delta_rare.json", "plots/alpha_hill.json"] {
        assert!(d.join("r1").join(f).exists(), "{f}");
    }
    let plot: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r1/plots/rank_delta_rare.json")).unwrap()).unwrap();
    assert_eq!(plot["x"]["scale"], "log");
    assert_eq!(plot["y"]["scale"], "log");
    assert_eq!(plot["markers"].as_array().unwrap().len(), 2);
}
