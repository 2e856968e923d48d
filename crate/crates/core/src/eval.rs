//! Monte Carlo evaluation of the two-stage pipeline.
//!
//! A predictor forecasts `Î(t)`, the allocator sizes the packet for
//! `γ̂(t) = p|h(t)|²/(σ² + Î(t))`, and the step is in outage when the forecast
//! under-estimated the interference, `Î(t) < I(t)`.
//!
//! Sweeps run on fixed-length chunks of fading, each drawn from its own named
//! stream (`chunk-0`, `chunk-1`, ...). Every predictor sees the same chunks
//! and is scored from the same first step, so differences between curves come
//! from the predictors alone. Chunk tallies are merged in chunk order, so the
//! result does not depend on how rayon schedules them.

pub mod accuracy;
pub mod calibrate;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_sim::{generate_seeded_series, InterferenceSeries, Scenario};
use crate::error::{Error, Result};
use crate::fbl::{predicted_sinr, Allocator};
use crate::predictors::{trace_from, PredictorKind};

pub use accuracy::{accuracy_experiment, fit_narnn, AccuracyCell, AccuracyRow, FitOutcome, FitSettings};
pub use calibrate::{bisect_monotone, calibrate_alpha, Bisection, Calibration, CalibrationMode, CalibrationPoint, Side};

/// One scored time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub t: usize,
    pub actual: f64,
    pub predicted: f64,
    pub sinr_hat: f64,
    /// `None` when no finite allocation exists for `sinr_hat`.
    pub channel_uses: Option<f64>,
    pub outage: bool,
}

/// Score a single step.
pub fn score_step(alloc: &Allocator, noise: f64, t: usize, desired: f64, actual: f64, predicted: f64) -> Result<EvalRecord> {
    let sinr_hat = predicted_sinr(desired, predicted, noise)?;
    let channel_uses = match alloc.channel_usage(sinr_hat) {
        Ok(r) => Some(r),
        Err(Error::InfeasibleAllocation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalRecord {
        t,
        actual,
        predicted,
        sinr_hat,
        channel_uses,
        // an infeasible step cannot carry the packet either
        outage: predicted < actual || channel_uses.is_none(),
    })
}

/// Run `kind` over one series from its warm-up to the end.
pub fn run_episode(series: &InterferenceSeries, kind: &PredictorKind, payload_bits: f64, target_bler: f64) -> Result<Vec<EvalRecord>> {
    let warm_up = kind.warm_up();
    if series.len() <= warm_up {
        return Err(Error::SeriesTooShort {
            needed: warm_up + 1,
            got: series.len(),
        });
    }
    let alloc = Allocator::new(payload_bits, target_bler)?;
    let noise = series.scenario.config.noise_power;
    let trace = trace_from(kind, &series.samples, warm_up)?;
    trace
        .predicted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = warm_up + i;
            score_step(&alloc, noise, t, series.desired_gain[t], series.samples[t], p)
        })
        .collect()
}

/// Running outage and resource-usage sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub steps: u64,
    pub outages: u64,
    pub infeasible: u64,
    pub ru_sum: f64,
}

impl Tally {
    pub fn push(&mut self, rec: &EvalRecord) {
        self.steps += 1;
        self.outages += u64::from(rec.outage);
        match rec.channel_uses {
            Some(r) => self.ru_sum += r,
            None => self.infeasible += 1,
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.steps += other.steps;
        self.outages += other.outages;
        self.infeasible += other.infeasible;
        self.ru_sum += other.ru_sum;
    }

    pub fn mean_outage(&self) -> f64 {
        self.outages as f64 / self.steps as f64
    }

    /// Mean channel uses over the feasible steps.
    pub fn mean_ru(&self) -> f64 {
        self.ru_sum / (self.steps - self.infeasible) as f64
    }
}

/// Tally the forecasts `predicted[i]` for steps `start + i` of `series`.
pub fn tally_trace(series: &InterferenceSeries, start: usize, predicted: &[f64], alloc: &Allocator) -> Result<Tally> {
    let noise = series.scenario.config.noise_power;
    let mut tally = Tally::default();
    for (i, &p) in predicted.iter().enumerate() {
        let t = start + i;
        tally.push(&score_step(alloc, noise, t, series.desired_gain[t], series.samples[t], p)?);
    }
    Ok(tally)
}

/// Sample budget and targets of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Scored steps summed over all chunks.
    pub steps: usize,
    /// Scored steps per chunk of fading.
    pub chunk_len: usize,
    pub eps_targets: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: 10_000_000,
            chunk_len: 100_000,
            eps_targets: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.chunk_len == 0 {
            return Err(Error::InvalidConfig("eval.steps and eval.chunk_len must be positive".into()));
        }
        if self.eps_targets.is_empty() {
            return Err(Error::InvalidConfig("eval.eps_targets is empty".into()));
        }
        if let Some(e) = self.eps_targets.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::InvalidConfig(format!("eval.eps_targets: {e} is not in (0, 1)")));
        }
        Ok(())
    }

    /// Scored steps in each chunk; the last one takes the remainder.
    pub fn chunk_sizes(&self) -> Vec<usize> {
        let full = self.steps / self.chunk_len;
        let mut sizes = vec![self.chunk_len; full];
        if self.steps % self.chunk_len != 0 {
            sizes.push(self.steps % self.chunk_len);
        }
        sizes
    }
}

/// Fading chunks shared by every predictor of a sweep. Chunk `i` has
/// `start + sizes[i]` samples; the first `start` only feed the predictors.
pub fn realizations(scenario: &Scenario, config: &EvalConfig, start: usize, seed: u64) -> Vec<InterferenceSeries> {
    config
        .chunk_sizes()
        .into_par_iter()
        .enumerate()
        .map(|(i, n)| generate_seeded_series(scenario, start + n, seed, &format!("chunk-{i}")))
        .collect()
}

/// One aggregate line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub predictor: String,
    pub eps_target: f64,
    pub alpha: Option<f64>,
    pub mean_outage: f64,
    pub mean_ru: f64,
    /// `mean_ru` over the genie's mean RU at the same target.
    pub mean_ru_normalized: f64,
    pub steps: u64,
    pub outages: u64,
    /// Fewer than `100/ε` steps observed.
    pub flagged: bool,
}

impl ReportRow {
    fn new(kind: &PredictorKind, eps: f64, tally: &Tally, genie: &Tally) -> Self {
        Self {
            predictor: kind.id().to_string(),
            eps_target: eps,
            alpha: kind.alpha(),
            mean_outage: tally.mean_outage(),
            mean_ru: tally.mean_ru(),
            mean_ru_normalized: tally.mean_ru() / genie.mean_ru(),
            steps: tally.steps,
            outages: tally.outages,
            flagged: (tally.steps as f64) < 100.0 / eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "predictor,eps_target,alpha,mean_outage,mean_ru,mean_ru_normalized,steps,flagged";

impl EvalReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{alpha},{},{},{},{},{}",
                r.predictor, r.eps_target, r.mean_outage, r.mean_ru, r.mean_ru_normalized, r.steps, r.flagged
            )?;
        }
        Ok(())
    }

    pub fn find(&self, predictor: &str, eps: f64, alpha: Option<f64>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.predictor == predictor && r.eps_target == eps && r.alpha == alpha)
    }

    /// Plot tables, one pair (resource usage, outage) per NAR scaling:
    /// `x = eps_target`, one column per predictor.
    pub fn plot_tables(&self) -> Vec<(String, String)> {
        let mut alphas: Vec<Option<f64>> = Vec::new();
        for r in &self.rows {
            if r.predictor == "nar" && !alphas.contains(&r.alpha) {
                alphas.push(r.alpha);
            }
        }
        if alphas.is_empty() {
            alphas.push(None);
        }
        let mut eps: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !eps.contains(&r.eps_target) {
                eps.push(r.eps_target);
            }
        }

        let mut files = Vec::new();
        for alpha in alphas {
            let columns: Vec<&str> = {
                let mut c: Vec<&str> = Vec::new();
                for r in &self.rows {
                    let shown = r.predictor != "nar" || r.alpha == alpha;
                    if shown && !c.contains(&r.predictor.as_str()) {
                        c.push(&r.predictor);
                    }
                }
                c
            };
            let suffix = alpha.map(|a| format!("_alpha{a}")).unwrap_or_default();
            for (name, value) in [("ru", (|r: &ReportRow| r.mean_ru) as fn(&ReportRow) -> f64), ("outage", |r| r.mean_outage)] {
                let mut csv = format!("eps_target,{}\n", columns.join(","));
                for &e in &eps {
                    csv.push_str(&e.to_string());
                    for &c in &columns {
                        let a = if c == "nar" { alpha } else { None };
                        let cell = self.find(c, e, a).map(|r| value(r).to_string()).unwrap_or_default();
                        csv.push(',');
                        csv.push_str(&cell);
                    }
                    csv.push('\n');
                }
                files.push((format!("plot_{name}{suffix}.csv"), csv));
            }
        }
        files
    }
}

/// Predictor as scored at target `eps`: the quantile benchmark follows
/// `η = 1 − ε`.
pub fn at_target(kind: &PredictorKind, eps: f64) -> PredictorKind {
    kind.with_confidence(1.0 - eps)
}

/// First scored step shared by all `kinds`.
pub fn common_start<'a>(kinds: impl IntoIterator<Item = &'a PredictorKind>) -> usize {
    kinds.into_iter().map(PredictorKind::warm_up).max().unwrap_or(1).max(1)
}

/// Score every predictor at every target on common fading chunks.
pub fn sweep_targets(scenario: &Scenario, predictors: &[PredictorKind], config: &EvalConfig, seed: u64) -> Result<EvalReport> {
    config.validate()?;
    for p in predictors {
        p.validate()?;
    }
    let start = common_start(predictors);
    let chunks = realizations(scenario, config, start, seed);
    let allocs = config
        .eps_targets
        .iter()
        .map(|&e| Allocator::new(f64::from(scenario.config.payload_bits), e))
        .collect::<Result<Vec<_>>>()?;

    // Per chunk: [eps][predictor] tallies, genie in slot 0.
    let genie = PredictorKind::Genie;
    let per_chunk = chunks
        .par_iter()
        .map(|chunk| -> Result<Vec<Vec<Tally>>> {
            let mut grid = vec![vec![Tally::default(); predictors.len() + 1]; allocs.len()];
            for (j, kind) in std::iter::once(&genie).chain(predictors).enumerate() {
                let mut shared: Option<Vec<f64>> = None;
                for (e, (alloc, &eps)) in allocs.iter().zip(&config.eps_targets).enumerate() {
                    let scored = at_target(kind, eps);
                    let owned;
                    let trace = if scored == *kind {
                        if shared.is_none() {
                            shared = Some(trace_from(kind, &chunk.samples, start)?.predicted);
                        }
                        shared.as_deref().expect("set above")
                    } else {
                        owned = trace_from(&scored, &chunk.samples, start)?.predicted;
                        &owned
                    };
                    grid[e][j] = tally_trace(chunk, start, trace, alloc)?;
                }
            }
            Ok(grid)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = vec![vec![Tally::default(); predictors.len() + 1]; allocs.len()];
    for grid in &per_chunk {
        for (row, add) in total.iter_mut().zip(grid) {
            for (t, a) in row.iter_mut().zip(add) {
                t.merge(a);
            }
        }
    }

    let mut rows = Vec::with_capacity(predictors.len() * allocs.len());
    for (j, kind) in predictors.iter().enumerate() {
        for (e, &eps) in config.eps_targets.iter().enumerate() {
            rows.push(ReportRow::new(&at_target(kind, eps), eps, &total[e][j + 1], &total[e][0]));
        }
    }
    Ok(EvalReport { seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{build_seeded_scenario, ScenarioConfig};

    fn small_scenario() -> Scenario {
        let cfg = ScenarioConfig {
            horizon: 2000,
            ..ScenarioConfig::default()
        };
        build_seeded_scenario(&cfg).unwrap()
    }

    fn small_eval() -> EvalConfig {
        EvalConfig {
            steps: 6000,
            chunk_len: 2500,
            eps_targets: vec![1e-1, 1e-2, 1e-3],
        }
    }

    #[test]
    fn genie_never_outages() {
        let s = small_scenario();
        let series = generate_seeded_series(&s, 3000, 9, "chunk-0");
        let recs = run_episode(&series, &PredictorKind::Genie, 256.0, 1e-3).unwrap();
        assert_eq!(recs.len(), 3000 - 1);
        assert!(recs.iter().all(|r| !r.outage && r.channel_uses.is_some()));
        assert_eq!(recs[0].t, 1);
    }

    #[test]
    fn record_count_is_horizon_minus_warm_up() {
        let s = small_scenario();
        let series = generate_seeded_series(&s, 1200, 2, "chunk-0");
        let q = PredictorKind::Quantile { confidence: 0.9, window: 500 };
        assert_eq!(run_episode(&series, &q, 256.0, 1e-2).unwrap().len(), 700);
        let short = generate_seeded_series(&s, 500, 2, "chunk-0");
        assert!(run_episode(&short, &q, 256.0, 1e-2).is_err());
    }

    #[test]
    fn huge_overestimate_is_safe_but_costly() {
        let s = small_scenario();
        let series = generate_seeded_series(&s, 2000, 4, "chunk-0");
        let genie = run_episode(&series, &PredictorKind::Genie, 256.0, 1e-3).unwrap();
        let big = run_episode(&series, &PredictorKind::ScaledGenie { factor: 1e6 }, 256.0, 1e-3).unwrap();
        let mean = |r: &[EvalRecord]| r.iter().filter_map(|x| x.channel_uses).sum::<f64>() / r.len() as f64;
        assert!(big.iter().all(|r| !r.outage));
        assert!(mean(&big) > mean(&genie));
    }

    #[test]
    fn underestimate_counts_outage() {
        let alloc = Allocator::new(256.0, 1e-3).unwrap();
        let r = score_step(&alloc, 1.0, 7, 100.0, 2.0, 1.999).unwrap();
        assert!(r.outage);
        let r = score_step(&alloc, 1.0, 7, 100.0, 2.0, 2.0).unwrap();
        assert!(!r.outage);
        assert!((r.sinr_hat - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_step_is_outage_and_leaves_ru_mean() {
        let alloc = Allocator::new(256.0, 1e-3).unwrap();
        // zero desired power gives γ̂ = 0
        let bad = score_step(&alloc, 1.0, 0, 0.0, 1.0, 5.0).unwrap();
        assert!(bad.outage && bad.channel_uses.is_none());
        let good = score_step(&alloc, 1.0, 1, 100.0, 1.0, 5.0).unwrap();
        let mut t = Tally::default();
        t.push(&bad);
        t.push(&good);
        assert_eq!(t.steps, 2);
        assert_eq!(t.outages, 1);
        assert_eq!(t.mean_ru(), good.channel_uses.unwrap());
    }

    #[test]
    fn chunk_sizes_cover_the_budget() {
        let c = small_eval();
        assert_eq!(c.chunk_sizes(), vec![2500, 2500, 1000]);
        assert_eq!(c.chunk_sizes().iter().sum::<usize>(), c.steps);
    }

    #[test]
    fn sweep_shape_and_genie_bound() {
        let s = small_scenario();
        let preds = vec![
            PredictorKind::Genie,
            PredictorKind::IirAverage { forgetting: 0.01 },
            PredictorKind::Quantile { confidence: 0.99, window: 500 },
            PredictorKind::ScaledGenie { factor: 1.3 },
        ];
        let cfg = small_eval();
        let rep = sweep_targets(&s, &preds, &cfg, 5).unwrap();
        assert_eq!(rep.rows.len(), preds.len() * cfg.eps_targets.len());
        for r in &rep.rows {
            assert!((0.0..=1.0).contains(&r.mean_outage));
            assert_eq!(r.steps, 6000);
            assert_eq!(r.flagged, r.eps_target < 1e-1);
            if r.outages == 0 {
                assert!(r.mean_ru_normalized >= 1.0, "{r:?}");
            }
        }
        for &e in &cfg.eps_targets {
            let g = rep.find("genie", e, None).unwrap();
            assert_eq!(g.outages, 0);
            assert_eq!(g.mean_ru_normalized, 1.0);
            assert_eq!(rep.find("scaled_genie", e, None).unwrap().outages, 0);
        }
        // RU grows as the target tightens
        for p in ["genie", "iir", "quantile", "scaled_genie"] {
            let ru: Vec<f64> = cfg.eps_targets.iter().map(|&e| rep.find(p, e, None).unwrap().mean_ru).collect();
            if p != "quantile" {
                assert!(ru.windows(2).all(|w| w[0] <= w[1]), "{p}: {ru:?}");
            }
        }
    }

    #[test]
    fn sweep_is_deterministic_across_pools() {
        let s = small_scenario();
        let preds = vec![PredictorKind::Quantile { confidence: 0.9, window: 100 }, PredictorKind::IirAverage { forgetting: 0.05 }];
        let cfg = small_eval();
        let csv = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let rep = pool.install(|| sweep_targets(&s, &preds, &cfg, 11).unwrap());
            let mut buf = Vec::new();
            rep.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(1), csv(3));
    }

    #[test]
    fn report_csv_and_plot_tables() {
        let s = small_scenario();
        let preds = vec![PredictorKind::IirAverage { forgetting: 0.01 }, PredictorKind::Genie];
        let cfg = EvalConfig {
            steps: 500,
            chunk_len: 500,
            eps_targets: vec![1e-1, 1e-2],
        };
        let rep = sweep_targets(&s, &preds, &cfg, 1).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("iir,0.1,,"));
        assert!(!text.contains('\r'));

        let plots = rep.plot_tables();
        assert_eq!(plots.len(), 2);
        assert_eq!(plots[0].0, "plot_ru.csv");
        assert!(plots[1].1.starts_with("eps_target,iir,genie\n0.1,"));
        assert_eq!(plots[1].1.lines().count(), 3);
    }
}
