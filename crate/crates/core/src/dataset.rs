//! Supervised one-step-ahead windows over a scalar series, their scaling, and
//! the accuracy metrics used to score predictions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `M` input windows of `n` delayed samples and their next-step targets.
///
/// Row `i` of `inputs` is `(y(t−1), …, y(t−n))`, most recent first, for
/// `targets[i] = y(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n_delays: usize,
    pub source_len: usize,
}

impl WindowedDataset {
    pub fn from_parts(inputs: Vec<f64>, targets: Vec<f64>, n_delays: usize) -> Result<Self> {
        if n_delays == 0 {
            return Err(Error::InvalidConfig("n_delays must be at least 1".into()));
        }
        if inputs.len() != targets.len() * n_delays {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * n_delays,
                got: inputs.len(),
            });
        }
        let source_len = targets.len() + n_delays;
        Ok(Self { inputs, targets, n_delays, source_len })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_delays..(i + 1) * self.n_delays]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.n_delays)
    }

    /// Row-major `M × n` input matrix.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Pairs `range` as a standalone dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let n = self.n_delays;
        Self {
            inputs: self.inputs[range.start * n..range.end * n].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            n_delays: n,
            source_len: range.len() + n,
        }
    }

    /// Header `lag1,…,lagn,target`, one row per pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.n_delays).map(|k| format!("lag{k}")).collect();
        writeln!(out, "{},target", header.join(","))?;
        for (row, y) in self.rows().zip(&self.targets) {
            for v in row {
                write!(out, "{v},")?;
            }
            writeln!(out, "{y}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let cols = header.split(',').count();
        if cols < 2 || !header.ends_with(",target") {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let n = cols - 1;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
            if vals.len() != cols {
                return Err(Error::Parse(format!("line {}: expected {cols} columns, got {}", i + 2, vals.len())));
            }
            inputs.extend_from_slice(&vals[..n]);
            targets.push(vals[n]);
        }
        Self::from_parts(inputs, targets, n)
    }
}

/// Build every `(window, next value)` pair of `series`.
pub fn make_windows(series: &[f64], n_delays: usize) -> Result<WindowedDataset> {
    if n_delays == 0 {
        return Err(Error::InvalidConfig("n_delays must be at least 1".into()));
    }
    if series.len() <= n_delays {
        return Err(Error::SeriesTooShort {
            needed: n_delays + 1,
            got: series.len(),
        });
    }
    let m = series.len() - n_delays;
    let mut inputs = Vec::with_capacity(m * n_delays);
    for t in n_delays..series.len() {
        inputs.extend(series[t - n_delays..t].iter().rev());
    }
    Ok(WindowedDataset {
        inputs,
        targets: series[n_delays..].to_vec(),
        n_delays,
        source_len: series.len(),
    })
}

/// Chronological split: the first `⌊M·fraction⌋` pairs train, the rest test.
pub fn split(ds: &WindowedDataset, train_fraction: f64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let m = ds.len();
    let n_train = (m as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::EmptySplit {
            train: n_train,
            test: m - n_train,
        });
    }
    Ok((ds.slice(0..n_train), ds.slice(n_train..m)))
}

/// Split by series time: pairs whose target index is below `t` train.
/// Test sets cut this way line up across different `n_delays`.
pub fn split_at_time(ds: &WindowedDataset, t: usize) -> Result<(WindowedDataset, WindowedDataset)> {
    let m = ds.len();
    let n_train = t.saturating_sub(ds.n_delays).min(m);
    if n_train == 0 || n_train == m {
        return Err(Error::EmptySplit {
            train: n_train,
            test: m - n_train,
        });
    }
    Ok((ds.slice(0..n_train), ds.slice(n_train..m)))
}

/// Affine map of the training range onto `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn fit(values: impl Iterator<Item = f64>, feature: usize) -> Result<Self> {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(Error::DegenerateFeature { feature });
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        2.0 * (x - self.min) / (self.max - self.min) - 1.0
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        (z + 1.0) * 0.5 * (self.max - self.min) + self.min
    }

    /// `d apply / dx`.
    pub fn gain(&self) -> f64 {
        2.0 / (self.max - self.min)
    }
}

/// Per-feature min-max scaling fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub inputs: Vec<MinMax>,
    pub target: MinMax,
}

impl Normalizer {
    /// Identity-like scaler mapping `[−1, 1]` onto itself.
    pub fn identity(n_features: usize) -> Self {
        let unit = MinMax { min: -1.0, max: 1.0 };
        Self {
            inputs: vec![unit; n_features],
            target: unit,
        }
    }

    pub fn n_features(&self) -> usize {
        self.inputs.len()
    }

    pub fn apply_window(&self, window: &[f64], out: &mut [f64]) {
        for ((o, &x), s) in out.iter_mut().zip(window).zip(&self.inputs) {
            *o = s.apply(x);
        }
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        self.target.apply(y)
    }

    pub fn invert_target(&self, z: f64) -> f64 {
        self.target.invert(z)
    }

    /// Scale a whole dataset. Out-of-range values are not clamped.
    pub fn apply(&self, data: &WindowedDataset) -> Result<WindowedDataset> {
        if data.n_delays != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: data.n_delays,
            });
        }
        let mut inputs = vec![0.0; data.inputs.len()];
        for (dst, src) in inputs.chunks_exact_mut(data.n_delays).zip(data.rows()) {
            self.apply_window(src, dst);
        }
        Ok(WindowedDataset {
            inputs,
            targets: data.targets.iter().map(|&y| self.target.apply(y)).collect(),
            n_delays: data.n_delays,
            source_len: data.source_len,
        })
    }
}

pub fn fit_normalizer(train: &WindowedDataset) -> Result<Normalizer> {
    let n = train.n_delays;
    let inputs = (0..n)
        .map(|j| MinMax::fit(train.rows().map(|r| r[j]), j))
        .collect::<Result<Vec<_>>>()?;
    let target = MinMax::fit(train.targets.iter().copied(), n)?;
    Ok(Normalizer { inputs, target })
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Domain("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(sse / actual.len() as f64)
}

/// Mean absolute percentage error, in percent. Divides by `yᵢ` as written,
/// not `|yᵢ|`; a zero actual is an error.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let mut acc = 0.0;
    for (i, (y, p)) in actual.iter().zip(predicted).enumerate() {
        if *y == 0.0 {
            return Err(Error::ZeroActual { index: i });
        }
        acc += (y - p).abs() / y;
    }
    Ok(acc / actual.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_counts_and_order() {
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(make_windows(&s, 2).unwrap().len(), 8);

        let ds = make_windows(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(ds.row(0), &[2.0, 1.0]);
        assert_eq!(ds.row(1), &[3.0, 2.0]);
        assert_eq!(ds.targets, vec![3.0, 4.0]);
    }

    #[test]
    fn windows_reject_short_series() {
        assert_eq!(
            make_windows(&[1.0, 2.0], 2),
            Err(Error::SeriesTooShort { needed: 3, got: 2 })
        );
        assert!(make_windows(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn windows_match_preceding_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let ds = make_windows(&s, 20).unwrap();
        assert_eq!(ds.len(), 9980);
        for _ in 0..200 {
            let i = rng.random_range(0..ds.len());
            let mut w = ds.row(i).to_vec();
            w.reverse();
            assert_eq!(&w[..], &s[i..i + 20]);
            assert_eq!(ds.targets[i], s[i + 20]);
        }
    }

    #[test]
    fn split_sizes() {
        let s: Vec<f64> = (0..102).map(f64::from).collect();
        let ds = make_windows(&s, 2).unwrap();
        let (a, b) = split(&ds, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));

        let ds = make_windows(&[0.0, 1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let (a, b) = split(&ds, 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (1, 2));
        assert_eq!([a.targets.clone(), b.targets.clone()].concat(), ds.targets);
        assert_eq!(b.row(0), ds.row(1));
    }

    #[test]
    fn split_rejects_empty_sides() {
        let ds = make_windows(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert!(matches!(split(&ds, 0.4), Err(Error::EmptySplit { .. })));
        assert!(split(&ds, 0.0).is_err());
        assert!(split(&ds, 1.0).is_err());
    }

    #[test]
    fn time_split_aligns_test_targets() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        let tests: Vec<Vec<f64>> = [2, 20, 50]
            .iter()
            .map(|&n| split_at_time(&make_windows(&s, n).unwrap(), 80).unwrap().1.targets)
            .collect();
        assert_eq!(tests[0], (80..100).map(f64::from).collect::<Vec<_>>());
        assert!(tests.iter().all(|t| *t == tests[0]));
        let ds = make_windows(&s, 20).unwrap();
        assert!(split_at_time(&ds, 20).is_err());
        assert!(split_at_time(&ds, 100).is_err());
    }

    #[test]
    fn normalizer_midpoint_and_extrapolation() {
        let s: Vec<f64> = (0..=10).map(f64::from).collect();
        let ds = make_windows(&s, 1).unwrap();
        let norm = fit_normalizer(&ds).unwrap();
        // target range is [1, 10]; input range [0, 9]
        assert_eq!(norm.inputs[0].apply(4.5), 0.0);
        assert_eq!(norm.target.apply(5.5), 0.0);
        assert!(norm.target.apply(50.0) > 1.0);
        assert!(norm.target.apply(-3.0) < -1.0);

        let unit = MinMax { min: 0.0, max: 10.0 };
        assert_eq!(unit.apply(5.0), 0.0);
    }

    #[test]
    fn normalizer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MinMax { min: 0.37, max: 81.2 };
        for _ in 0..100 {
            let x = rng.random_range(m.min..m.max);
            let back = m.invert(m.apply(x));
            assert!(((back - x) / x).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_rejects_constant_feature() {
        let ds = make_windows(&[2.0; 10], 3).unwrap();
        assert!(matches!(fit_normalizer(&ds), Err(Error::DegenerateFeature { feature: 0 })));
    }

    #[test]
    fn normalized_training_data_spans_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 7.0).collect();
        let ds = make_windows(&s, 4).unwrap();
        let (train, test) = split(&ds, 0.7).unwrap();
        let norm = fit_normalizer(&train).unwrap();
        let t = norm.apply(&train).unwrap();
        assert!(t.inputs().iter().chain(&t.targets).all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        // test data reuses the training fit unchanged
        let z = norm.apply(&test).unwrap();
        assert_eq!(z.targets[0], norm.target.apply(test.targets[0]));
    }

    #[test]
    fn metric_hand_values() {
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mape(&[2.0], &[1.0]).unwrap(), 50.0);
        assert_eq!(mape(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
        assert!((mape(&[1.0, 2.0, 4.0], &[1.1, 1.8, 4.4]).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroActual { index: 1 })));
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn mse_matches_pairwise_summation() {
        fn pairwise(v: &[f64]) -> f64 {
            if v.len() <= 8 {
                v.iter().sum()
            } else {
                let (a, b) = v.split_at(v.len() / 2);
                pairwise(a) + pairwise(b)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 10.0).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 10.0).collect();
        let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).collect();
        let oracle = pairwise(&sq) / 1000.0;
        assert!(((mse(&a, &b).unwrap() - oracle) / oracle).abs() < 1e-12);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let s: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let ds = make_windows(&s, 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"lag1,lag2,lag3,target\n"));
        assert_eq!(WindowedDataset::read_csv(&buf[..]).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn every_sample_after_warmup_is_a_target_once(
            s in prop::collection::vec(0.0f64..100.0, 3..200),
            n in 1usize..3,
        ) {
            let ds = make_windows(&s, n).unwrap();
            prop_assert_eq!(&ds.targets[..], &s[n..]);
        }

        #[test]
        fn metrics_nonnegative_and_zero_on_identity(
            a in prop::collection::vec(0.1f64..100.0, 1..100),
        ) {
            let b: Vec<f64> = a.iter().map(|x| x * 1.01).collect();
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(mape(&a, &a).unwrap(), 0.0);
            prop_assert!(mse(&a, &b).unwrap() > 0.0);
            prop_assert!(mape(&a, &b).unwrap() > 0.0);
        }
    }
}
