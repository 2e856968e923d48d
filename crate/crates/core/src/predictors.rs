//! Interference predictors compared by the evaluation harness.
//!
//! All predictors forecast `I(t)` from the true samples `I(0..t)`. The genie
//! additionally reads `I(t)` itself and only serves as the lower bound on
//! resource usage.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narnn::NarnnModel;

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    /// Perfect knowledge of the next interference value.
    Genie,
    /// Exponentially weighted average `s(t) = (1−μ)·s(t−1) + μ·I(t−1)`, `s(0) = 0`.
    IirAverage { forgetting: f64 },
    /// Empirical `η`-quantile of the last `window` samples.
    Quantile { confidence: f64, window: usize },
    /// `α ×` the clamped NARNN forecast.
    Nar { model: Arc<NarnnModel>, alpha: f64 },
    /// `factor × I(t)`; a fixed over- or under-estimating oracle used in tests.
    ScaledGenie { factor: f64 },
}

impl PredictorKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match *self {
            PredictorKind::IirAverage { forgetting } if !(forgetting > 0.0 && forgetting <= 1.0) => {
                bad(format!("IIR forgetting factor must lie in (0, 1], got {forgetting}"))
            }
            PredictorKind::Quantile { confidence, .. } if !(confidence > 0.0 && confidence < 1.0) => {
                bad(format!("quantile confidence must lie in (0, 1), got {confidence}"))
            }
            PredictorKind::Quantile { window, .. } if window < 2 => bad(format!("quantile window must be ≥ 2, got {window}")),
            // α = 1 is allowed so the raw network output can be traced.
            PredictorKind::Nar { alpha, .. } if !(1.0..2.0).contains(&alpha) => {
                bad(format!("NAR scaling α must lie in [1, 2), got {alpha}"))
            }
            PredictorKind::ScaledGenie { factor } if !(factor >= 0.0) => bad(format!("bad oracle factor {factor}")),
            _ => Ok(()),
        }
    }

    /// Samples of history needed before the first prediction.
    pub fn warm_up(&self) -> usize {
        match self {
            PredictorKind::Genie | PredictorKind::IirAverage { .. } | PredictorKind::ScaledGenie { .. } => 1,
            PredictorKind::Quantile { window, .. } => *window,
            PredictorKind::Nar { model, .. } => model.topology.n_delays,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            PredictorKind::Genie => "genie",
            PredictorKind::IirAverage { .. } => "iir",
            PredictorKind::Quantile { .. } => "quantile",
            PredictorKind::Nar { .. } => "nar",
            PredictorKind::ScaledGenie { .. } => "scaled_genie",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            PredictorKind::Nar { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    /// Same predictor with the NAR scaling replaced.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        match self {
            PredictorKind::Nar { model, .. } => PredictorKind::Nar { model: model.clone(), alpha },
            other => other.clone(),
        }
    }

    /// Same predictor with the quantile confidence replaced.
    pub fn with_confidence(&self, confidence: f64) -> Self {
        match self {
            PredictorKind::Quantile { window, .. } => PredictorKind::Quantile { confidence, window: *window },
            other => other.clone(),
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Genie => write!(f, "genie"),
            PredictorKind::IirAverage { forgetting } => write!(f, "iir(mu={forgetting})"),
            PredictorKind::Quantile { confidence, window } => write!(f, "quantile(eta={confidence},W={window})"),
            PredictorKind::Nar { model, alpha } => write!(
                f,
                "nar({}x{} {},alpha={alpha})",
                model.topology.n_delays, model.topology.n_hidden, model.topology.activation
            ),
            PredictorKind::ScaledGenie { factor } => write!(f, "scaled_genie({factor})"),
        }
    }
}

/// Serializable predictor description; the NAR model is supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    Genie,
    Iir {
        #[serde(default = "default_forgetting")]
        forgetting: f64,
    },
    Quantile {
        #[serde(default = "default_window")]
        window: usize,
        /// Used by single-target runs; sweeps set `η = 1 − ε` per point.
        #[serde(default = "default_confidence")]
        confidence: f64,
    },
    Nar {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn default_forgetting() -> f64 {
    0.01
}
fn default_window() -> usize {
    500
}
fn default_confidence() -> f64 {
    0.99
}
fn default_alpha() -> f64 {
    1.45
}

impl PredictorSpec {
    pub fn resolve(&self, model: Option<&Arc<NarnnModel>>) -> Result<PredictorKind> {
        let kind = match self {
            PredictorSpec::Genie => PredictorKind::Genie,
            PredictorSpec::Iir { forgetting } => PredictorKind::IirAverage { forgetting: *forgetting },
            PredictorSpec::Quantile { window, confidence } => PredictorKind::Quantile {
                confidence: *confidence,
                window: *window,
            },
            PredictorSpec::Nar { alpha } => PredictorKind::Nar {
                model: model
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig("a NAR predictor needs a trained model".into()))?,
                alpha: *alpha,
            },
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn defaults() -> Vec<PredictorSpec> {
        vec![
            PredictorSpec::Genie,
            PredictorSpec::Iir { forgetting: default_forgetting() },
            PredictorSpec::Quantile {
                window: default_window(),
                confidence: default_confidence(),
            },
            PredictorSpec::Nar { alpha: 1.45 },
            PredictorSpec::Nar { alpha: 1.2 },
        ]
    }
}

/// Sorted sliding window supporting order statistics.
#[derive(Debug, Clone)]
struct SortedWindow {
    fifo: VecDeque<f64>,
    sorted: Vec<f64>,
    capacity: usize,
}

impl SortedWindow {
    fn new(capacity: usize) -> Self {
        Self {
            fifo: VecDeque::with_capacity(capacity + 1),
            sorted: Vec::with_capacity(capacity + 1),
            capacity,
        }
    }

    fn push(&mut self, v: f64) {
        self.fifo.push_back(v);
        let at = self.sorted.partition_point(|x| x.total_cmp(&v).is_lt());
        self.sorted.insert(at, v);
        if self.fifo.len() > self.capacity {
            let old = self.fifo.pop_front().expect("non-empty");
            let at = self.sorted.partition_point(|x| x.total_cmp(&old).is_lt());
            self.sorted.remove(at);
        }
    }

    /// Inverted-CDF quantile: the `⌈η·W⌉`-th smallest value.
    fn quantile(&self, eta: f64) -> f64 {
        let w = self.sorted.len();
        let k = ((eta * w as f64) - 1e-9).ceil().clamp(1.0, w as f64) as usize;
        self.sorted[k - 1]
    }
}

#[derive(Debug, Clone)]
enum State {
    Stateless,
    Iir { value: f64 },
    Quantile(SortedWindow),
    Nar { window: Vec<f64>, scratch: Vec<f64> },
}

/// A predictor with its running state, fed one time step at a time.
#[derive(Debug, Clone)]
pub struct Predictor {
    kind: PredictorKind,
    state: State,
    /// Number of history samples already absorbed into the state.
    absorbed: usize,
}

impl Predictor {
    pub fn new(kind: PredictorKind) -> Result<Self> {
        kind.validate()?;
        let state = match &kind {
            PredictorKind::Genie | PredictorKind::ScaledGenie { .. } => State::Stateless,
            PredictorKind::IirAverage { .. } => State::Iir { value: 0.0 },
            PredictorKind::Quantile { window, .. } => State::Quantile(SortedWindow::new(*window)),
            PredictorKind::Nar { model, .. } => State::Nar {
                window: vec![0.0; model.topology.n_delays],
                scratch: Vec::with_capacity(model.topology.n_delays),
            },
        };
        Ok(Self { kind, state, absorbed: 0 })
    }

    pub fn kind(&self) -> &PredictorKind {
        &self.kind
    }

    /// Forecast `Î(t)` from `samples[..t]`; only oracle kinds read `samples[t]`.
    /// Calls must use non-decreasing `t`.
    pub fn predict_next(&mut self, samples: &[f64], t: usize) -> Result<f64> {
        let need = self.kind.warm_up();
        if t < need || t > samples.len() {
            return Err(Error::SeriesTooShort { needed: need, got: t.min(samples.len()) });
        }
        if t < self.absorbed {
            return Err(Error::Domain(format!("predictor already advanced past t = {t}")));
        }
        let history = &samples[..t];
        match (&self.kind, &mut self.state) {
            (PredictorKind::Genie, _) => {
                samples.get(t).copied().ok_or(Error::SeriesTooShort { needed: t + 1, got: samples.len() })
            }
            (PredictorKind::ScaledGenie { factor }, _) => samples
                .get(t)
                .map(|v| factor * v)
                .ok_or(Error::SeriesTooShort { needed: t + 1, got: samples.len() }),
            (PredictorKind::IirAverage { forgetting }, State::Iir { value }) => {
                for &x in &history[self.absorbed..] {
                    *value = (1.0 - forgetting) * *value + forgetting * x;
                }
                self.absorbed = t;
                Ok(*value)
            }
            (PredictorKind::Quantile { confidence, window }, State::Quantile(win)) => {
                let from = self.absorbed.max(t.saturating_sub(*window));
                for &x in &history[from..] {
                    win.push(x);
                }
                self.absorbed = t;
                Ok(win.quantile(*confidence))
            }
            (PredictorKind::Nar { model, alpha }, State::Nar { window, scratch }) => {
                for (k, w) in window.iter_mut().enumerate() {
                    *w = history[t - 1 - k];
                }
                let raw = model.predict_raw(window, scratch)?;
                Ok(alpha * raw.max(0.0))
            }
            _ => unreachable!("state matches kind by construction"),
        }
    }
}

/// Forecasts aligned with the series from `warm_up` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub predictor: String,
    pub warm_up: usize,
    pub predicted: Vec<f64>,
}

impl PredictionTrace {
    pub fn write_csv<W: Write>(&self, actual: &[f64], mut out: W) -> Result<()> {
        writeln!(out, "t,actual,predicted,predictor")?;
        for (i, p) in self.predicted.iter().enumerate() {
            let t = self.warm_up + i;
            writeln!(out, "{t},{},{p},{}", actual[t], self.predictor)?;
        }
        Ok(())
    }
}

/// Run `kind` over every step from its own warm-up.
pub fn trace_series(kind: &PredictorKind, samples: &[f64]) -> Result<PredictionTrace> {
    trace_from(kind, samples, kind.warm_up())
}

/// Run `kind` over steps `start..T`, `start ≥ warm-up`.
pub fn trace_from(kind: &PredictorKind, samples: &[f64], start: usize) -> Result<PredictionTrace> {
    if start < kind.warm_up() || samples.len() <= start {
        return Err(Error::SeriesTooShort {
            needed: start.max(kind.warm_up()) + 1,
            got: samples.len(),
        });
    }
    let mut p = Predictor::new(kind.clone())?;
    let predicted = (start..samples.len())
        .map(|t| p.predict_next(samples, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTrace {
        predictor: kind.id().to_string(),
        warm_up: start,
        predicted,
    })
}
