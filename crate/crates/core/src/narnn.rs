//! Open-loop NAR network: a tapped delay line of `n` past values feeding one
//! sigmoid hidden layer and a linear output neuron.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_windows, Normalizer};
use crate::error::{Error, Result};

pub mod io;

/// Hidden-layer transfer function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `1 / (1 + e^(−x))`
    Logsig,
    /// `2 / (1 + e^(−2x)) − 1`, i.e. `tanh`.
    Tansig,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Logsig => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tansig => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        self.derivative_from_output(self.eval(x))
    }

    /// Derivative expressed through the activation's own output `a = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Logsig => a * (1.0 - a),
            Activation::Tansig => 1.0 - a * a,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Logsig => 0,
            Activation::Tansig => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Logsig),
            1 => Ok(Activation::Tansig),
            _ => Err(Error::Parse(format!("unknown activation code {c}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Logsig => "logsig",
            Activation::Tansig => "tansig",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logsig" => Ok(Activation::Logsig),
            "tansig" => Ok(Activation::Tansig),
            other => Err(Error::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub n_delays: usize,
    pub n_hidden: usize,
    pub activation: Activation,
}

impl Topology {
    pub fn new(n_delays: usize, n_hidden: usize, activation: Activation) -> Result<Self> {
        let t = Self { n_delays, n_hidden, activation };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_delays < 1 || self.n_hidden < 1 {
            return Err(Error::InvalidConfig("n_delays and n_hidden must be at least 1".into()));
        }
        Ok(())
    }

    /// `n·h + h + h + 1`.
    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_delays + 2) + 1
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            n_delays: 20,
            n_hidden: 16,
            activation: Activation::Logsig,
        }
    }
}

/// Hidden-layer values kept from a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarnnModel {
    pub topology: Topology,
    /// `n_hidden × n_delays`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub normalizer: Normalizer,
}

impl NarnnModel {
    /// All-zero weights with an identity normalizer.
    pub fn zeros(topology: Topology) -> Self {
        let (n, h) = (topology.n_delays, topology.n_hidden);
        Self {
            topology,
            w1: vec![0.0; n * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
            normalizer: Normalizer::identity(n),
        }
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Result<Self> {
        if normalizer.n_features() != self.topology.n_delays {
            return Err(Error::DimensionMismatch {
                expected: self.topology.n_delays,
                got: normalizer.n_features(),
            });
        }
        self.normalizer = normalizer;
        Ok(self)
    }

    pub fn n_params(&self) -> usize {
        self.topology.n_params()
    }

    /// Flat parameter vector: `W1` row-major, `b1`, `W2`, `b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let (n, h) = (self.topology.n_delays, self.topology.n_hidden);
        let (w1, rest) = p.split_at(n * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// Output for an already-normalized window; fills `trace` when given.
    pub fn forward_into(&self, window: &[f64], trace: Option<&mut Trace>) -> Result<f64> {
        let n = self.topology.n_delays;
        if window.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: window.len() });
        }
        Ok(self.forward_unchecked(window, trace))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, window: &[f64], trace: Option<&mut Trace>) -> f64 {
        let n = self.topology.n_delays;
        let act = self.topology.activation;
        match trace {
            Some(tr) => {
                tr.pre_activation.clear();
                tr.hidden.clear();
                let mut out = self.b2;
                for (j, row) in self.w1.chunks_exact(n).enumerate() {
                    let z = self.b1[j] + dot(row, window);
                    let a = act.eval(z);
                    tr.pre_activation.push(z);
                    tr.hidden.push(a);
                    out += self.w2[j] * a;
                }
                out
            }
            None => {
                let mut out = self.b2;
                for (j, row) in self.w1.chunks_exact(n).enumerate() {
                    out += self.w2[j] * act.eval(self.b1[j] + dot(row, window));
                }
                out
            }
        }
    }

    /// `f₂(W2·f₁(W1·x + b1) + b2)` for a normalized window.
    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        self.forward_into(window, None)
    }

    pub fn forward_traced(&self, window: &[f64]) -> Result<(f64, Trace)> {
        let mut tr = Trace::default();
        let y = self.forward_into(window, Some(&mut tr))?;
        Ok((y, tr))
    }

    /// Physical-domain prediction from a raw window (most recent first).
    pub fn predict_raw(&self, raw_window: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
        let n = self.topology.n_delays;
        if raw_window.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: raw_window.len() });
        }
        scratch.resize(n, 0.0);
        self.normalizer.apply_window(raw_window, scratch);
        Ok(self.normalizer.invert_target(self.forward_unchecked(scratch, None)))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniform `[−s, s]` weights and biases with `s = 1/√fan-in` per layer.
pub fn init_weights<R: Rng + ?Sized>(topology: Topology, rng: &mut R) -> Result<NarnnModel> {
    topology.validate()?;
    let s1 = 1.0 / (topology.n_delays as f64).sqrt();
    let s2 = 1.0 / (topology.n_hidden as f64).sqrt();
    let mut m = NarnnModel::zeros(topology);
    for w in m.w1.iter_mut().chain(m.b1.iter_mut()) {
        *w = rng.random_range(-s1..=s1);
    }
    for w in m.w2.iter_mut() {
        *w = rng.random_range(-s2..=s2);
    }
    m.b2 = rng.random_range(-s2..=s2);
    Ok(m)
}

/// Open-loop one-step predictions `ŷ(t)` for `t = n..T`, each from the true
/// past values only.
pub fn predict_series(model: &NarnnModel, series: &[f64]) -> Result<Vec<f64>> {
    let n = model.topology.n_delays;
    if series.len() <= n {
        return Err(Error::SeriesTooShort { needed: n + 1, got: series.len() });
    }
    let mut window = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(series.len() - n);
    for t in n..series.len() {
        for (k, w) in window.iter_mut().enumerate() {
            *w = series[t - 1 - k];
        }
        out.push(model.predict_raw(&window, &mut scratch)?);
    }
    Ok(out)
}

/// Same as [`predict_series`], by way of the windowed dataset.
pub fn predict_windows(model: &NarnnModel, series: &[f64]) -> Result<Vec<f64>> {
    let ds = make_windows(series, model.topology.n_delays)?;
    let mut scratch = Vec::new();
    ds.rows().map(|r| model.predict_raw(r, &mut scratch)).collect()
}
