use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use narnn_rrm::dataset::{mape, mse};
use narnn_rrm::narnn::io::{read_binary, write_binary};

const SMALL: &str = r#"
seed = 3

[scenario]
n_transmitters = 5
mean_snr_db = 20.0
inr_min_db = -5.0
inr_max_db = 15.0
fading_correlation = 0.997
noise_power = 1.0
tx_power = 1.0
payload_bits = 256
target_bler = 1e-2
horizon = 3000

[dataset]
n_delays = 6

[topology]
n_hidden = 4

[trainer]
max_epochs = 4

[sweep]
steps = 4000
chunk_len = 1500
eps_targets = [0.1, 0.01]

[table]
neurons = [2, 3]
activations = ["logsig", "tansig"]
delays = [2, 6]
"#;

fn narrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrm")).args(args).output().expect("spawn narrm")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("run.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    let mut full: Vec<&str> = args.to_vec();
    let config = config.to_str().unwrap().to_string();
    let out = dir.join("out").to_str().unwrap().to_string();
    full.extend(["--config", &config, "--out", &out]);
    narrm(&full)
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn help_for_every_subcommand() {
    assert!(narrm(&["--help"]).status.success());
    for cmd in ["simulate", "train", "evaluate", "sweep", "calibrate", "table"] {
        let o = narrm(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--config"));
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(narrm(&["simulate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(narrm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(narrm(&["calibrate", "--mode", "sideways"]).status.code(), Some(1));
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL.replace("horizon = 3000\n", "")).unwrap();
    let o = run(dir.path(), &["simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // no series yet
    let o = run(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("series.csv"));
}

#[test]
fn simulate_writes_series_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(dir.path(), &["simulate"]));
    let first = read(dir.path(), "series.csv");
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "t,interference_linear");
    assert_eq!(lines.len(), 3001);
    assert!(lines[1].starts_with("0,"));
    assert!(!first.contains('\r'));
    assert!(read(dir.path(), "simulate_config.toml").contains("seed = 3"));

    ok(&run(dir.path(), &["simulate"]));
    assert_eq!(read(dir.path(), "series.csv"), first);
    ok(&run(dir.path(), &["simulate", "--seed", "4"]));
    assert_ne!(read(dir.path(), "series.csv"), first);
}

#[test]
fn train_then_evaluate_sweep_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(dir.path(), &["simulate"]));
    let stdout = ok(&run(dir.path(), &["train"]));

    // model file survives a load/store cycle byte for byte
    let bytes = fs::read(dir.path().join("out/model.narnn")).unwrap();
    let model = read_binary(&bytes[..]).unwrap();
    let mut again = Vec::new();
    write_binary(&model, &mut again).unwrap();
    assert_eq!(again, bytes);
    assert_eq!(model.topology.n_delays, 6);

    // printed metrics equal the ones recomputed from the emitted predictions
    let preds = read(dir.path(), "test_predictions.csv");
    let (mut y, mut p) = (Vec::new(), Vec::new());
    for line in preds.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        y.push(cols[1]);
        p.push(cols[2]);
    }
    assert_eq!(y.len(), 600);
    let want = format!("test mse {} mape {}%", mse(&y, &p).unwrap(), mape(&y, &p).unwrap());
    assert!(stdout.contains(&want), "{stdout}\nwanted {want}");
    let history = read(dir.path(), "train_history.csv");
    assert!(history.starts_with("epoch,sse_before,sse_after,lambda,accepted,grad_norm\n"));

    let out = ok(&run(dir.path(), &["sweep"]));
    assert!(out.contains("genie"));
    let report = read(dir.path(), "sweep_report.csv");
    // 5 default predictors x 2 targets
    assert_eq!(report.lines().count(), 1 + 5 * 2);
    assert!(report.starts_with("predictor,eps_target,alpha,mean_outage,mean_ru,mean_ru_normalized,steps,flagged\n"));
    let ru = read(dir.path(), "plot_ru_alpha1.45.csv");
    assert!(ru.starts_with("eps_target,genie,iir,quantile,nar\n"));
    assert_eq!(ru.lines().count(), 3);
    assert!(dir.path().join("out/plot_outage_alpha1.2.csv").exists());

    ok(&run(dir.path(), &["evaluate", "--records", "50"]));
    assert_eq!(read(dir.path(), "evaluate_report.csv").lines().count(), 6);
    let records = read(dir.path(), "evaluate_records.csv");
    assert_eq!(records.lines().count(), 1 + 5 * 50);

    let out = ok(&run(dir.path(), &["calibrate", "--mode", "match-outage"]));
    assert_eq!(out.matches("alpha* =").count(), 2);
    assert!(out.contains("outage nar/quantile ="));
    let cal = read(dir.path(), "calibrate_match_outage.csv");
    assert_eq!(cal.lines().count(), 3);
    for line in cal.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let alpha: f64 = cols[2].parse().unwrap();
        assert!((1.0..=2.0).contains(&alpha));
    }
}

#[test]
fn goal_met_at_start_trains_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(dir.path(), &["simulate"]));
    let out = ok(&run(dir.path(), &["train", "--set", "trainer.goal_sse=1e300"]));
    assert!(out.contains("trained 0 epochs (goal_reached)"), "{out}");
    assert_eq!(read(dir.path(), "train_history.csv").lines().count(), 1);
}

#[test]
fn sweep_without_nar_needs_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}\n[[predictors]]\nkind = \"genie\"\n\n[[predictors]]\nkind = \"quantile\"\nwindow = 200\n");
    fs::write(dir.path().join("run.toml"), config).unwrap();
    ok(&run(dir.path(), &["sweep"]));
    assert_eq!(read(dir.path(), "sweep_report.csv").lines().count(), 1 + 2 * 2);
    assert!(dir.path().join("out/plot_ru.csv").exists());
}

#[test]
fn table_emits_the_neuron_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&run(dir.path(), &["table"]));
    assert!(out.contains("iir reference"));
    let table = read(dir.path(), "table.csv");
    // 2 activations x 2 neuron counts + 2 delay cells
    assert_eq!(table.lines().count(), 1 + 6);
    let grid = read(dir.path(), "table_grid.csv");
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "n_hidden,logsig_mse,logsig_mape,logsig_epochs,tansig_mse,tansig_mape,tansig_epochs");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
}
