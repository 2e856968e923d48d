//! One-step prediction accuracy of trained networks.

use std::io::Write;
use std::sync::Arc;

use crate::dataset::{fit_normalizer, make_windows, mape, mse, split_at_time};
use crate::error::{Error, Result};
use crate::lm::{train_with_validation, LmConfig, TrainHistory};
use crate::narnn::{init_weights, Activation, NarnnModel, Topology};
use crate::predictors::{trace_from, PredictorKind};
use crate::seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub topology: Topology,
    /// Share of the series, by time, used for training.
    pub train_fraction: f64,
    /// Tail share of the training pairs held out for early stopping; 0 disables.
    pub validation_fraction: f64,
    pub trainer: LmConfig,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Arc<NarnnModel>,
    pub history: TrainHistory,
    /// First series index of the test targets.
    pub test_start: usize,
    pub test_actual: Vec<f64>,
    pub test_predicted: Vec<f64>,
    pub test_mse: f64,
    /// Percent.
    pub test_mape: f64,
}

/// Series index where the test part starts.
pub fn test_start(len: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    Ok((len as f64 * train_fraction).floor() as usize)
}

/// Window, split by time, scale, initialise from the `"init"` stream of
/// `seed`, train, and score the test part in the original units.
pub fn fit_narnn(series: &[f64], settings: &FitSettings, seed: u64) -> Result<FitOutcome> {
    settings.topology.validate()?;
    if !(0.0..1.0).contains(&settings.validation_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation_fraction must lie in [0, 1), got {}",
            settings.validation_fraction
        )));
    }
    let ds = make_windows(series, settings.topology.n_delays)?;
    let t0 = test_start(series.len(), settings.train_fraction)?;
    let (train, test) = split_at_time(&ds, t0)?;

    let n_val = (train.len() as f64 * settings.validation_fraction).floor() as usize;
    let (fit_part, val_part) = if n_val > 0 {
        if n_val >= train.len() {
            return Err(Error::EmptySplit { train: 0, test: n_val });
        }
        let cut = train.len() - n_val;
        (train.slice(0..cut), Some(train.slice(cut..train.len())))
    } else {
        (train, None)
    };

    let normalizer = fit_normalizer(&fit_part)?;
    let init = init_weights(settings.topology, &mut seeds::stream(seed, "init"))?.with_normalizer(normalizer.clone())?;
    let scaled = normalizer.apply(&fit_part)?;
    let scaled_val = val_part.as_ref().map(|v| normalizer.apply(v)).transpose()?;
    let (model, history) = train_with_validation(&init, &scaled, scaled_val.as_ref(), &settings.trainer)?;

    let mut scratch = Vec::new();
    let test_predicted = test
        .rows()
        .map(|r| model.predict_raw(r, &mut scratch))
        .collect::<Result<Vec<_>>>()?;
    let test_actual = test.targets.clone();
    Ok(FitOutcome {
        model: Arc::new(model),
        history,
        test_start: t0,
        test_mse: mse(&test_actual, &test_predicted)?,
        test_mape: mape(&test_actual, &test_predicted)?,
        test_actual,
        test_predicted,
    })
}

/// `(MSE, MAPE %)` of the IIR average over the test targets `series[t0..]`.
pub fn iir_test_metrics(series: &[f64], t0: usize, forgetting: f64) -> Result<(f64, f64)> {
    let kind = PredictorKind::IirAverage { forgetting };
    let trace = trace_from(&kind, series, t0.max(kind.warm_up()))?;
    let actual = &series[trace.warm_up..];
    Ok((mse(actual, &trace.predicted)?, mape(actual, &trace.predicted)?))
}

/// One row of the accuracy table. A failed training leaves the metrics
/// empty and the error in `status`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub topology: Topology,
    pub mse: Option<f64>,
    pub mape: Option<f64>,
    pub epochs: Option<usize>,
    pub status: String,
}

pub type AccuracyCell = Topology;

pub const TABLE_HEADER: &str = "activation,n_hidden,n_delays,mse,mape,epochs,status";

/// Train one network per cell on the same series and split. Cells repeating
/// an earlier topology reuse its row.
pub fn accuracy_experiment(
    series: &[f64],
    cells: &[AccuracyCell],
    base: &FitSettings,
    seed: u64,
    mut progress: impl FnMut(&AccuracyRow),
) -> Vec<AccuracyRow> {
    let mut rows: Vec<AccuracyRow> = Vec::with_capacity(cells.len());
    for &cell in cells {
        if let Some(done) = rows.iter().find(|r| r.topology == cell) {
            rows.push(done.clone());
            continue;
        }
        let settings = FitSettings {
            topology: cell,
            ..base.clone()
        };
        let row = match fit_narnn(series, &settings, seed) {
            Ok(fit) => AccuracyRow {
                topology: cell,
                mse: Some(fit.test_mse),
                mape: Some(fit.test_mape),
                epochs: Some(fit.history.epochs),
                status: fit.history.stop_reason.to_string(),
            },
            Err(e) => AccuracyRow {
                topology: cell,
                mse: None,
                mape: None,
                epochs: None,
                status: format!("error: {e}").replace(',', ";"),
            },
        };
        progress(&row);
        rows.push(row);
    }
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_table_csv<W: Write>(rows: &[AccuracyRow], mut out: W) -> Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        let t = r.topology;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.activation,
            t.n_hidden,
            t.n_delays,
            opt(r.mse),
            opt(r.mape),
            opt(r.epochs),
            r.status
        )?;
    }
    Ok(())
}

/// Neuron counts down, `{activation}_{mse,mape,epochs}` across, for the
/// rows with `n_delays` taps.
pub fn write_neuron_grid<W: Write>(rows: &[AccuracyRow], n_delays: usize, mut out: W) -> Result<()> {
    let mut acts: Vec<Activation> = Vec::new();
    let mut neurons: Vec<usize> = Vec::new();
    for r in rows.iter().filter(|r| r.topology.n_delays == n_delays) {
        if !acts.contains(&r.topology.activation) {
            acts.push(r.topology.activation);
        }
        if !neurons.contains(&r.topology.n_hidden) {
            neurons.push(r.topology.n_hidden);
        }
    }
    write!(out, "n_hidden")?;
    for a in &acts {
        write!(out, ",{a}_mse,{a}_mape,{a}_epochs")?;
    }
    writeln!(out)?;
    for &h in &neurons {
        write!(out, "{h}")?;
        for &a in &acts {
            let cell = rows
                .iter()
                .find(|r| r.topology == Topology { n_delays, n_hidden: h, activation: a });
            match cell {
                Some(r) => write!(out, ",{},{},{}", opt(r.mse), opt(r.mape), opt(r.epochs))?,
                None => write!(out, ",,,")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
