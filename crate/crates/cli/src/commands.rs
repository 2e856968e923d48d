use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use narnn_rrm::channel_sim::{build_seeded_scenario, generate_seeded_series, read_series_csv, Scenario};
use narnn_rrm::eval::accuracy::{iir_test_metrics, test_start, write_neuron_grid, write_table_csv};
use narnn_rrm::eval::{
    accuracy_experiment, at_target, calibrate_alpha, common_start, fit_narnn, score_step, sweep_targets, CalibrationMode,
    EvalConfig, EvalReport,
};
use narnn_rrm::fbl::Allocator;
use narnn_rrm::narnn::{io as model_io, NarnnModel, Topology};
use narnn_rrm::predictors::{trace_from, PredictorKind, PredictorSpec};

use crate::config::RunConfig;

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_echo(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    let path = dir.join(format!("{command}_config.toml"));
    fs::write(&path, cfg.echo()).with_context(|| format!("writing {}", path.display()))
}

fn scenario(cfg: &RunConfig) -> Result<Scenario> {
    Ok(build_seeded_scenario(&cfg.scenario)?)
}

fn load_series(cfg: &RunConfig, path: Option<PathBuf>) -> Result<Vec<f64>> {
    let path = path.unwrap_or_else(|| cfg.out_dir.join("series.csv"));
    let f = File::open(&path).with_context(|| format!("opening series {} (run `narrm simulate` first?)", path.display()))?;
    read_series_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_model(cfg: &RunConfig, path: Option<PathBuf>) -> Result<Arc<NarnnModel>> {
    let path = path.unwrap_or_else(|| cfg.out_dir.join("model.narnn"));
    let bytes = fs::read(&path).with_context(|| format!("reading model {} (run `narrm train` first?)", path.display()))?;
    Ok(Arc::new(model_io::read_any(&bytes).with_context(|| format!("parsing {}", path.display()))?))
}

/// Resolve the configured predictors, loading the model only if a NAR
/// predictor needs it.
fn predictors(cfg: &RunConfig, model_path: Option<PathBuf>) -> Result<Vec<PredictorKind>> {
    let needs_model = cfg.predictors.iter().any(|p| matches!(p, PredictorSpec::Nar { .. }));
    let model = if needs_model { Some(load_model(cfg, model_path)?) } else { None };
    cfg.predictors
        .iter()
        .map(|p| p.resolve(model.as_ref()).map_err(Into::into))
        .collect()
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let sc = scenario(cfg)?;
    let series = generate_seeded_series(&sc, cfg.scenario.horizon, cfg.seed, "fading");
    write_file(&dir.join("series.csv"), |w| Ok(series.write_csv(w)?))?;

    let mut echo = cfg.echo();
    echo.push_str(&format!("# drawn desired mean gain = {}\n", sc.desired_gain));
    for (k, (db, g)) in sc.interferer_inr_db.iter().zip(&sc.interferer_gains).enumerate() {
        echo.push_str(&format!("# interferer {k}: mean INR {db} dB, mean gain {g}\n"));
    }
    fs::write(dir.join("simulate_config.toml"), echo).context("writing simulate_config.toml")?;
    println!(
        "wrote {} samples to {} (mean interference {})",
        series.len(),
        dir.join("series.csv").display(),
        sc.mean_interference()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, series_path: Option<PathBuf>, model_out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let series = load_series(cfg, series_path)?;
    let settings = cfg.fit_settings()?;
    let fit = fit_narnn(&series, &settings, cfg.seed).context("training")?;

    let model_path = model_out.unwrap_or_else(|| dir.join("model.narnn"));
    write_file(&model_path, |w| Ok(model_io::write_binary(&fit.model, w)?))?;
    write_file(&dir.join("model.txt"), |w| Ok(model_io::write_text(&fit.model, w)?))?;
    write_file(&dir.join("train_history.csv"), |w| Ok(fit.history.write_csv(w)?))?;
    write_file(&dir.join("test_predictions.csv"), |w| {
        writeln!(w, "t,actual,predicted")?;
        for (i, (y, p)) in fit.test_actual.iter().zip(&fit.test_predicted).enumerate() {
            writeln!(w, "{},{y},{p}", fit.test_start + i)?;
        }
        Ok(())
    })?;
    write_echo(cfg, dir, "train")?;

    let (iir_mse, iir_mape) = iir_test_metrics(&series, fit.test_start, 0.01)?;
    println!(
        "trained {} epochs ({}), training sse {} -> {}",
        fit.history.epochs, fit.history.stop_reason, fit.history.initial_sse, fit.history.final_sse
    );
    println!("test mse {} mape {}%", fit.test_mse, fit.test_mape);
    println!("iir  mse {iir_mse} mape {iir_mape}%");
    println!("model written to {}", model_path.display());
    Ok(())
}

fn write_report(dir: &Path, name: &str, report: &EvalReport) -> Result<()> {
    write_file(&dir.join(name), |w| Ok(report.write_csv(w)?))
}

pub fn evaluate(cfg: &RunConfig, model: Option<PathBuf>, records: usize) -> Result<()> {
    let dir = out_dir(cfg)?;
    let sc = scenario(cfg)?;
    let kinds = predictors(cfg, model)?;
    let eps = cfg.scenario.target_bler;
    let eval = EvalConfig {
        eps_targets: vec![eps],
        ..cfg.sweep.clone()
    };
    let report = sweep_targets(&sc, &kinds, &eval, cfg.seed)?;
    write_report(dir, "evaluate_report.csv", &report)?;

    // The first `records` scored steps of chunk 0, for every predictor.
    let start = common_start(&kinds);
    let head = generate_seeded_series(&sc, start + records.min(eval.chunk_len), cfg.seed, "chunk-0");
    let alloc = Allocator::new(f64::from(cfg.scenario.payload_bits), eps)?;
    write_file(&dir.join("evaluate_records.csv"), |w| {
        writeln!(w, "predictor,alpha,t,actual,predicted,sinr_hat,channel_uses,outage")?;
        if head.len() <= start {
            return Ok(());
        }
        for kind in &kinds {
            let kind = at_target(kind, eps);
            let alpha = kind.alpha().map(|a| a.to_string()).unwrap_or_default();
            let trace = trace_from(&kind, &head.samples, start)?;
            for (i, &p) in trace.predicted.iter().enumerate() {
                let t = start + i;
                let r = score_step(&alloc, cfg.scenario.noise_power, t, head.desired_gain[t], head.samples[t], p)?;
                let ru = r.channel_uses.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{alpha},{t},{},{},{},{ru},{}",
                    kind.id(),
                    r.actual,
                    r.predicted,
                    r.sinr_hat,
                    u8::from(r.outage)
                )?;
            }
        }
        Ok(())
    })?;
    write_echo(cfg, dir, "evaluate")?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<10} {:>8} {:>6} {:>12} {:>12} {:>8}", "predictor", "eps", "alpha", "outage", "mean_ru", "ru/genie");
    for r in &report.rows {
        let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
        println!(
            "{:<10} {:>8} {:>6} {:>12.4e} {:>12.2} {:>8.4}{}",
            r.predictor,
            r.eps_target,
            alpha,
            r.mean_outage,
            r.mean_ru,
            r.mean_ru_normalized,
            if r.flagged { "  (fewer than 100/eps steps)" } else { "" }
        );
    }
}

pub fn sweep(cfg: &RunConfig, model: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let sc = scenario(cfg)?;
    let kinds = predictors(cfg, model)?;
    let report = sweep_targets(&sc, &kinds, &cfg.sweep, cfg.seed)?;
    write_report(dir, "sweep_report.csv", &report)?;
    for (name, body) in report.plot_tables() {
        fs::write(dir.join(&name), body).with_context(|| format!("writing {name}"))?;
    }
    write_echo(cfg, dir, "sweep")?;
    print_report(&report);
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, model: Option<PathBuf>, mode: CalibrationMode) -> Result<()> {
    let dir = out_dir(cfg)?;
    let sc = scenario(cfg)?;
    let model = load_model(cfg, model)?;
    let cal = calibrate_alpha(&sc, &model, cfg.quantile_window(), &cfg.sweep, mode, cfg.seed)?;
    write_file(&dir.join(format!("calibrate_{mode}.csv")), |w| Ok(cal.write_csv(w)?))?;
    write_echo(cfg, dir, "calibrate")?;
    for p in &cal.points {
        println!(
            "eps {}: alpha* = {}  outage nar/quantile = {} / {}  ru nar/quantile = {} / {}",
            p.eps_target, p.alpha, p.nar_outage, p.baseline_outage, p.nar_ru, p.baseline_ru
        );
        if let Some(d) = &p.diagnostic {
            println!("  note: {d}");
        }
    }
    Ok(())
}

pub fn table(cfg: &RunConfig, series_path: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let series = match series_path {
        Some(p) => load_series(cfg, Some(p))?,
        None => generate_seeded_series(&scenario(cfg)?, cfg.scenario.horizon, cfg.seed, "fading").samples,
    };
    let base = cfg.fit_settings()?;
    let mut cells = Vec::new();
    for act in cfg.table_activations()? {
        for &h in &cfg.table.neurons {
            cells.push(Topology::new(base.topology.n_delays, h, act)?);
        }
    }
    let n_grid = cells.len();
    for &d in &cfg.table.delays {
        cells.push(Topology::new(d, base.topology.n_hidden, base.topology.activation)?);
    }

    let rows = accuracy_experiment(&series, &cells, &base, cfg.seed, |r| {
        let t = r.topology;
        eprintln!(
            "{} h={} d={}: mse {:?} mape {:?} epochs {:?} ({})",
            t.activation, t.n_hidden, t.n_delays, r.mse, r.mape, r.epochs, r.status
        );
    });
    write_file(&dir.join("table.csv"), |w| Ok(write_table_csv(&rows, w)?))?;
    let grid_rows = &rows[..n_grid];
    write_file(&dir.join("table_grid.csv"), |w| Ok(write_neuron_grid(grid_rows, base.topology.n_delays, w)?))?;
    write_echo(cfg, dir, "table")?;

    let (iir_mse, iir_mape) = iir_test_metrics(&series, test_start(series.len(), base.train_fraction)?, 0.01)?;
    let mut grid = Vec::new();
    write_neuron_grid(grid_rows, base.topology.n_delays, &mut grid)?;
    print!("{}", String::from_utf8_lossy(&grid));
    println!("iir reference: mse {iir_mse} mape {iir_mape}%");
    Ok(())
}
