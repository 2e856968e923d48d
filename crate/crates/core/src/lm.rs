//! Levenberg–Marquardt training of the NAR network.
//!
//! Residuals are `eᵢ = yᵢ − ŷᵢ` in the normalized domain and the Jacobian is
//! `J = ∂e/∂θ` with the parameter order of [`NarnnModel::params`]. Each step
//! solves `(JᵀJ + λI)·Δ = −Jᵀe` by Cholesky.
//!
//! `JᵀJ` and `Jᵀe` are accumulated over fixed-size row chunks so the full
//! `M × P` Jacobian is never held in memory. Chunks may run on any number of
//! rayon workers; partial sums are added in chunk order, so the result does
//! not depend on the worker count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::narnn::{NarnnModel, Trace};

const CHUNK_ROWS: usize = 2048;
const CHUNKS_PER_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_epochs: usize,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub damping_max: f64,
    /// Stop once the training SSE is at or below this; 0 disables.
    pub goal_sse: f64,
    /// Stop once `‖Jᵀe‖∞` falls below this.
    pub min_gradient: f64,
    /// Consecutive validation-SSE increases tolerated when a validation set
    /// is supplied.
    pub max_validation_failures: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            damping_max: 1e10,
            goal_sse: 0.0,
            min_gradient: 1e-7,
            max_validation_failures: 6,
            seed: 1,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.damping_init > 0.0
            && self.damping_max >= self.damping_init
            && self.goal_sse >= 0.0
            && self.min_gradient >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "LM config needs damping_up > 1 > damping_down > 0, 0 < damping_init ≤ damping_max, thresholds ≥ 0".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    GoalReached,
    GradientSmall,
    DampingCeiling,
    ValidationStop,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::GoalReached => "goal_reached",
            StopReason::GradientSmall => "gradient_small",
            StopReason::DampingCeiling => "damping_ceiling",
            StopReason::ValidationStop => "validation_stop",
        })
    }
}

/// One proposed step. Several records may share an epoch when steps are
/// rejected and the damping is raised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub sse_before: f64,
    pub sse_after: f64,
    pub lambda: f64,
    pub accepted: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub stop_reason: StopReason,
    /// Jacobian evaluations performed.
    pub epochs: usize,
    pub initial_sse: f64,
    pub final_sse: f64,
}

impl TrainHistory {
    pub fn accepted_sse(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter(|r| r.accepted).map(|r| r.sse_after)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,sse_before,sse_after,lambda,accepted,grad_norm")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.sse_before, r.sse_after, r.lambda, r.accepted as u8, r.grad_norm
            )?;
        }
        Ok(())
    }
}

fn check_width(model: &NarnnModel, data: &WindowedDataset) -> Result<()> {
    if data.n_delays != model.topology.n_delays {
        return Err(Error::DimensionMismatch {
            expected: model.topology.n_delays,
            got: data.n_delays,
        });
    }
    Ok(())
}

/// `eᵢ = yᵢ − ŷᵢ` on normalized data.
pub fn residuals(model: &NarnnModel, data: &WindowedDataset) -> Result<Vec<f64>> {
    check_width(model, data)?;
    Ok(data
        .rows()
        .zip(&data.targets)
        .map(|(x, y)| y - model.forward_unchecked(x, None))
        .collect())
}

pub fn sse(model: &NarnnModel, data: &WindowedDataset) -> Result<f64> {
    check_width(model, data)?;
    let partial: Vec<f64> = data
        .inputs()
        .par_chunks(CHUNK_ROWS * data.n_delays)
        .zip(data.targets.par_chunks(CHUNK_ROWS))
        .map(|(xs, ys)| {
            xs.chunks_exact(data.n_delays)
                .zip(ys)
                .map(|(x, y)| {
                    let e = y - model.forward_unchecked(x, None);
                    e * e
                })
                .sum::<f64>()
        })
        .collect();
    Ok(partial.iter().sum())
}

/// Fill `row` with `∂e/∂θ` for one sample and return the residual.
fn jacobian_row(model: &NarnnModel, x: &[f64], y: f64, trace: &mut Trace, row: &mut [f64]) -> f64 {
    let n = model.topology.n_delays;
    let h = model.topology.n_hidden;
    let act = model.topology.activation;
    let out = model.forward_unchecked(x, Some(trace));
    let (dw1, rest) = row.split_at_mut(n * h);
    let (db1, rest) = rest.split_at_mut(h);
    let (dw2, db2) = rest.split_at_mut(h);
    for j in 0..h {
        let a = trace.hidden[j];
        let delta = -model.w2[j] * act.derivative_from_output(a);
        for (d, xi) in dw1[j * n..(j + 1) * n].iter_mut().zip(x) {
            *d = delta * xi;
        }
        db1[j] = delta;
        dw2[j] = -a;
    }
    db2[0] = -1.0;
    y - out
}

/// Row-major `M × P` Jacobian `∂eᵢ/∂θⱼ`.
pub fn jacobian(model: &NarnnModel, data: &WindowedDataset) -> Result<Vec<f64>> {
    check_width(model, data)?;
    let p = model.n_params();
    let mut jac = vec![0.0; data.len() * p];
    jac.par_chunks_mut(p)
        .zip(data.inputs().par_chunks(data.n_delays))
        .zip(data.targets.par_iter())
        .for_each_init(Trace::default, |tr, ((row, x), &y)| {
            jacobian_row(model, x, y, tr, row);
        });
    Ok(jac)
}

/// Gauss–Newton pieces at the current parameters.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    /// `JᵀJ`, `P × P`, row-major.
    pub jtj: Vec<f64>,
    /// `Jᵀe`.
    pub jte: Vec<f64>,
    pub sse: f64,
}

impl NormalEquations {
    pub fn gradient_norm(&self) -> f64 {
        self.jte.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn chunk_normal_equations(model: &NarnnModel, xs: &[f64], ys: &[f64]) -> NormalEquations {
    let p = model.n_params();
    let n = model.topology.n_delays;
    let rows = ys.len();
    let mut jac = vec![0.0; rows * p];
    let mut e = vec![0.0; rows];
    let mut tr = Trace::default();
    for ((row, x), (ei, &y)) in jac.chunks_exact_mut(p).zip(xs.chunks_exact(n)).zip(e.iter_mut().zip(ys)) {
        *ei = jacobian_row(model, x, y, &mut tr, row);
    }
    let mut jtj = vec![0.0; p * p];
    // C (P×P) = Jᵀ (P×rows) · J (rows×P); Jᵀ is J read with swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            p,
            rows,
            p,
            1.0,
            jac.as_ptr(),
            1,
            p as isize,
            jac.as_ptr(),
            p as isize,
            1,
            0.0,
            jtj.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    let mut jte = vec![0.0; p];
    for (row, ei) in jac.chunks_exact(p).zip(&e) {
        for (g, j) in jte.iter_mut().zip(row) {
            *g += j * ei;
        }
    }
    NormalEquations {
        jtj,
        jte,
        sse: e.iter().map(|v| v * v).sum(),
    }
}

/// `JᵀJ`, `Jᵀe` and the SSE over the whole dataset.
pub fn normal_equations(model: &NarnnModel, data: &WindowedDataset) -> Result<NormalEquations> {
    check_width(model, data)?;
    let p = model.n_params();
    let n = data.n_delays;
    let mut acc = NormalEquations {
        jtj: vec![0.0; p * p],
        jte: vec![0.0; p],
        sse: 0.0,
    };
    let chunks: Vec<(&[f64], &[f64])> = data
        .inputs()
        .chunks(CHUNK_ROWS * n)
        .zip(data.targets.chunks(CHUNK_ROWS))
        .collect();
    for batch in chunks.chunks(CHUNKS_PER_BATCH) {
        let parts: Vec<NormalEquations> = batch
            .par_iter()
            .map(|(xs, ys)| chunk_normal_equations(model, xs, ys))
            .collect();
        for part in parts {
            for (a, b) in acc.jtj.iter_mut().zip(&part.jtj) {
                *a += b;
            }
            for (a, b) in acc.jte.iter_mut().zip(&part.jte) {
                *a += b;
            }
            acc.sse += part.sse;
        }
    }
    Ok(acc)
}

/// Solve `(JᵀJ + λI)·Δ = −Jᵀe`; `None` when the factorization fails.
pub fn solve_damped(eq: &NormalEquations, lambda: f64) -> Option<Vec<f64>> {
    let p = eq.jte.len();
    let mut a = DMatrix::from_row_slice(p, p, &eq.jtj);
    for i in 0..p {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky()?;
    let rhs = DVector::from_iterator(p, eq.jte.iter().map(|g| -g));
    let delta = chol.solve(&rhs);
    delta.iter().all(|v| v.is_finite()).then(|| delta.as_slice().to_vec())
}

/// Candidate model after one damped step at `lambda`, and `‖Δ‖₂`.
pub fn lm_step(model: &NarnnModel, data: &WindowedDataset, lambda: f64) -> Result<(NarnnModel, f64)> {
    let eq = normal_equations(model, data)?;
    step_from(model, &eq, lambda)
}

fn step_from(model: &NarnnModel, eq: &NormalEquations, lambda: f64) -> Result<(NarnnModel, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("damping must be non-negative, got {lambda}")));
    }
    let delta = solve_damped(eq, lambda)
        .ok_or_else(|| Error::Domain(format!("damped normal equations not positive definite at λ = {lambda}")))?;
    let mut candidate = model.clone();
    let theta: Vec<f64> = model.params().iter().zip(&delta).map(|(t, d)| t + d).collect();
    candidate.set_params(&theta)?;
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok((candidate, norm))
}

/// Full-batch LM on normalized training data.
pub fn train(model: &NarnnModel, data: &WindowedDataset, config: &LmConfig) -> Result<(NarnnModel, TrainHistory)> {
    train_with_validation(model, data, None, config)
}

/// As [`train`], additionally stopping after `max_validation_failures`
/// consecutive epochs in which the validation SSE rose. The returned model
/// is then the one with the lowest validation SSE.
pub fn train_with_validation(
    model: &NarnnModel,
    data: &WindowedDataset,
    validation: Option<&WindowedDataset>,
    config: &LmConfig,
) -> Result<(NarnnModel, TrainHistory)> {
    config.validate()?;
    check_width(model, data)?;
    let mut current = model.clone();
    let mut lambda = config.damping_init;
    let mut records = Vec::new();
    let mut epochs = 0;

    let mut best_val = match validation {
        Some(v) => Some((sse(&current, v)?, current.clone())),
        None => None,
    };
    let mut val_failures = 0;

    let mut eq = normal_equations(&current, data)?;
    if !eq.sse.is_finite() {
        return Err(Error::NonFiniteSse { epoch: 0 });
    }
    let initial_sse = eq.sse;

    let stop_reason = 'outer: loop {
        if eq.sse <= config.goal_sse {
            break StopReason::GoalReached;
        }
        if eq.gradient_norm() < config.min_gradient {
            break StopReason::GradientSmall;
        }
        if epochs >= config.max_epochs {
            break StopReason::MaxEpochs;
        }
        epochs += 1;
        let grad_norm = eq.gradient_norm();

        // Raise the damping until a step lowers the SSE.
        loop {
            if lambda > config.damping_max {
                break 'outer StopReason::DampingCeiling;
            }
            let Some(delta) = solve_damped(&eq, lambda) else {
                lambda *= config.damping_up;
                continue;
            };
            let theta: Vec<f64> = current.params().iter().zip(&delta).map(|(t, d)| t + d).collect();
            let mut candidate = current.clone();
            candidate.set_params(&theta)?;
            let sse_after = sse(&candidate, data)?;
            let accepted = sse_after.is_finite() && sse_after < eq.sse;
            records.push(StepRecord {
                epoch: epochs,
                sse_before: eq.sse,
                sse_after,
                lambda,
                accepted,
                grad_norm,
            });
            if accepted {
                current = candidate;
                lambda = (lambda * config.damping_down).max(f64::MIN_POSITIVE);
                break;
            }
            lambda *= config.damping_up;
        }

        eq = normal_equations(&current, data)?;
        if !eq.sse.is_finite() {
            return Err(Error::NonFiniteSse { epoch: epochs });
        }

        if let (Some(v), Some((best, best_model))) = (validation, best_val.as_mut()) {
            let val = sse(&current, v)?;
            if val < *best {
                *best = val;
                *best_model = current.clone();
                val_failures = 0;
            } else {
                val_failures += 1;
                if val_failures >= config.max_validation_failures {
                    current = best_model.clone();
                    break StopReason::ValidationStop;
                }
            }
        }
    };

    let final_sse = sse(&current, data)?;
    Ok((
        current,
        TrainHistory {
            records,
            stop_reason,
            epochs,
            initial_sse,
            final_sse,
        },
    ))
}
