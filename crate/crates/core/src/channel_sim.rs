//! Correlated Rayleigh fading and aggregate interference for one downlink user.
//!
//! Each link carries a complex gain `h(t) ~ CN(0, β)` that evolves as a
//! first-order Gauss–Markov process, `h' = ρ·h + √(1−ρ²)·w`. The user of
//! interest sees its own link with mean gain `β_n` and `N − 1` interferers
//! whose mean INRs are drawn uniformly (in dB) once per scenario.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Channel and system parameters of a simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of transmitters `N`, including the serving one.
    pub n_transmitters: usize,
    /// Mean SNR of the desired link, dB.
    pub mean_snr_db: f64,
    pub inr_min_db: f64,
    pub inr_max_db: f64,
    /// Per-step correlation `ρ` of the complex gains.
    pub fading_correlation: f64,
    pub noise_power: f64,
    pub tx_power: f64,
    /// Packet size `D` in bits.
    pub payload_bits: u32,
    /// Target block error rate `ε`.
    pub target_bler: f64,
    /// Number of time steps `T`.
    pub horizon: usize,
    /// Seed of the `"scenario"` and `"fading"` streams. Run configs set it
    /// from their top-level seed.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_transmitters: 5,
            mean_snr_db: 20.0,
            inr_min_db: -5.0,
            inr_max_db: 15.0,
            fading_correlation: 0.997,
            noise_power: 1.0,
            tx_power: 1.0,
            payload_bits: 256,
            target_bler: 1e-5,
            horizon: 200_000,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_transmitters < 1 {
            return fail("n_transmitters must be at least 1");
        }
        if !(self.inr_min_db <= self.inr_max_db) {
            return fail("inr_min_db must not exceed inr_max_db");
        }
        if !(0.0..=1.0).contains(&self.fading_correlation) {
            return fail("fading_correlation must lie in [0, 1]");
        }
        if !(self.noise_power > 0.0) {
            return fail("noise_power must be positive");
        }
        if !(self.tx_power > 0.0) {
            return fail("tx_power must be positive");
        }
        if self.payload_bits < 1 {
            return fail("payload_bits must be at least 1");
        }
        if !(self.target_bler > 0.0 && self.target_bler < 1.0) {
            return fail("target_bler must lie in (0, 1)");
        }
        if self.horizon < 1 {
            return fail("horizon must be at least 1");
        }
        if !self.mean_snr_db.is_finite() || !self.inr_min_db.is_finite() || !self.inr_max_db.is_finite() {
            return fail("SNR/INR values must be finite");
        }
        Ok(())
    }
}

/// Mean path gains of one realised scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Mean gain `β_n` of the desired link.
    pub desired_gain: f64,
    /// Mean gains `β_k` of the `N − 1` interferers.
    pub interferer_gains: Vec<f64>,
    /// The per-interferer mean INR draws, dB.
    pub interferer_inr_db: Vec<f64>,
    pub config: ScenarioConfig,
}

impl Scenario {
    /// Mean aggregate interference power, `Σ p_k β_k`.
    pub fn mean_interference(&self) -> f64 {
        self.config.tx_power * self.interferer_gains.iter().sum::<f64>()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Draw the per-interferer mean INRs and fix the desired mean gain.
pub fn build_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    config.validate()?;
    let span = config.inr_max_db - config.inr_min_db;
    let inr_db: Vec<f64> = (1..config.n_transmitters)
        .map(|_| config.inr_min_db + span * rng.random::<f64>())
        .collect();
    let interferer_gains = inr_db
        .iter()
        .map(|&db| db_to_linear(db) * config.noise_power / config.tx_power)
        .collect();
    let desired_gain = db_to_linear(config.mean_snr_db) * config.noise_power / config.tx_power;
    Ok(Scenario {
        desired_gain,
        interferer_gains,
        interferer_inr_db: inr_db,
        config: config.clone(),
    })
}

/// Scenario built from the config's own `"scenario"` sub-seed.
pub fn build_seeded_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    build_scenario(config, &mut seeds::stream(config.seed, "scenario"))
}

fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// One Gauss–Markov step of a complex gain with stationary law `CN(0, variance)`.
pub fn step_fading<R: Rng + ?Sized>(state: Complex64, correlation: f64, variance: f64, rng: &mut R) -> Complex64 {
    if correlation >= 1.0 {
        return state;
    }
    let w = complex_gaussian(variance, rng);
    state * correlation + w * (1.0 - correlation * correlation).sqrt()
}

/// Aggregate interference and desired-link power over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceSeries {
    /// `I(t) = Σ_{k≠n} p_k |h_k(t)|²`.
    pub samples: Vec<f64>,
    /// `p_n |h_n(t)|²`.
    pub desired_gain: Vec<f64>,
    pub scenario: Scenario,
}

impl InterferenceSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Write the two-column `t,interference_linear` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_series_csv(&self.samples, out)
    }
}

/// Evolve every link for `horizon` steps. Gains start in the stationary law.
pub fn generate_series<R: Rng + ?Sized>(scenario: &Scenario, horizon: usize, rng: &mut R) -> InterferenceSeries {
    let cfg = &scenario.config;
    let rho = cfg.fading_correlation;
    let p = cfg.tx_power;

    let mut desired = complex_gaussian(scenario.desired_gain, rng);
    let mut interferers: Vec<Complex64> = scenario
        .interferer_gains
        .iter()
        .map(|&b| complex_gaussian(b, rng))
        .collect();

    let mut samples = Vec::with_capacity(horizon);
    let mut desired_gain = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            desired = step_fading(desired, rho, scenario.desired_gain, rng);
            for (h, &b) in interferers.iter_mut().zip(&scenario.interferer_gains) {
                *h = step_fading(*h, rho, b, rng);
            }
        }
        samples.push(interferers.iter().map(|h| p * h.norm_sqr()).sum());
        desired_gain.push(p * desired.norm_sqr());
    }
    InterferenceSeries {
        samples,
        desired_gain,
        scenario: scenario.clone(),
    }
}

/// Series for `scenario` drawn from the named fading stream of `seed`.
pub fn generate_seeded_series(scenario: &Scenario, horizon: usize, seed: u64, label: &str) -> InterferenceSeries {
    generate_series(scenario, horizon, &mut seeds::stream(seed, label))
}

pub fn sinr(desired_power: f64, interference: f64, noise: f64) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(Error::NonPositiveNoise(noise));
    }
    Ok(desired_power / (interference + noise))
}

pub fn write_series_csv<W: Write>(samples: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "t,interference_linear")?;
    for (t, v) in samples.iter().enumerate() {
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}

/// Read back a `t,interference_linear` CSV. Rows must be in time order.
pub fn read_series_csv<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "t,interference_linear" => {}
        Some(Ok(h)) => return Err(Error::Parse(format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::Parse("empty series file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let t: usize = cols
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {}: bad time index", i + 2)))?;
        if t != out.len() {
            return Err(Error::Parse(format!("line {}: expected t = {}, got {t}", i + 2, out.len())));
        }
        let v: f64 = cols
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {}: bad interference value", i + 2)))?;
        if !(v >= 0.0) {
            return Err(Error::Parse(format!("line {}: negative or NaN interference", i + 2)));
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig {
            horizon: 1000,
            ..ScenarioConfig::default()
        }
    }

    fn lag1_autocorr(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    }

    #[test]
    fn single_transmitter_has_no_interferers() {
        let c = ScenarioConfig { n_transmitters: 1, ..cfg() };
        let s = build_scenario(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s.interferer_gains.is_empty());
        let series = generate_series(&s, 100, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(series.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_zero_transmitters_and_bad_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_scenario(&ScenarioConfig { n_transmitters: 0, ..cfg() }, &mut rng).is_err());
        assert!(build_scenario(&ScenarioConfig { inr_min_db: 3.0, inr_max_db: 2.0, ..cfg() }, &mut rng).is_err());
        assert!(build_scenario(&ScenarioConfig { fading_correlation: 1.5, ..cfg() }, &mut rng).is_err());
        assert!(build_scenario(&ScenarioConfig { noise_power: 0.0, ..cfg() }, &mut rng).is_err());
        assert!(build_scenario(&ScenarioConfig { horizon: 0, ..cfg() }, &mut rng).is_err());
    }

    #[test]
    fn collapsed_inr_range_gives_unit_gains() {
        let c = ScenarioConfig { inr_min_db: 0.0, inr_max_db: 0.0, ..cfg() };
        let s = build_scenario(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(s.interferer_gains, vec![1.0; 4]);
        assert!((s.desired_gain - 100.0).abs() < 1e-9);
    }

    #[test]
    fn inr_draws_are_uniform_in_db() {
        let c = ScenarioConfig {
            n_transmitters: 100_001,
            inr_min_db: -10.0,
            inr_max_db: 10.0,
            ..cfg()
        };
        let s = build_scenario(&c, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let mean = s.interferer_inr_db.iter().sum::<f64>() / s.interferer_inr_db.len() as f64;
        assert!(mean.abs() < 0.1, "mean INR {mean} dB");
        assert!(s.interferer_inr_db.iter().all(|&d| (-10.0..=10.0).contains(&d)));
        for (g, d) in s.interferer_gains.iter().zip(&s.interferer_inr_db) {
            assert!(*g > 0.0);
            assert!((linear_to_db(*g) - d).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_channel_when_fully_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Complex64::new(0.3, -1.2);
        assert_eq!(step_fading(h, 1.0, 2.0, &mut rng), h);
    }

    #[test]
    fn uncorrelated_steps_decorrelate_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut h = Complex64::new(1.0, 0.0);
        let p: Vec<f64> = (0..100_000)
            .map(|_| {
                h = step_fading(h, 0.0, 1.0, &mut rng);
                h.norm_sqr()
            })
            .collect();
        assert!(lag1_autocorr(&p).abs() < 0.02);
    }

    #[test]
    fn ergodic_mean_matches_variance() {
        for (i, &rho) in [0.0, 0.5, 0.9].iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(20 + i as u64);
            let beta = 2.5;
            let mut h = complex_gaussian(beta, &mut rng);
            let mut acc = 0.0;
            for _ in 0..100_000 {
                h = step_fading(h, rho, beta, &mut rng);
                acc += h.norm_sqr();
            }
            let mean = acc / 100_000.0;
            assert!((mean / beta - 1.0).abs() < 0.02, "rho {rho}: mean {mean}");
        }
    }

    #[test]
    fn autocorrelation_increases_with_rho() {
        let est: Vec<f64> = [0.0, 0.5, 0.9, 0.99]
            .iter()
            .map(|&rho| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                let mut h = complex_gaussian(1.0, &mut rng);
                let p: Vec<f64> = (0..100_000)
                    .map(|_| {
                        h = step_fading(h, rho, 1.0, &mut rng);
                        h.norm_sqr()
                    })
                    .collect();
                lag1_autocorr(&p)
            })
            .collect();
        assert!(est.windows(2).all(|w| w[0] < w[1]), "{est:?}");
    }

    #[test]
    fn aggregate_mean_is_sum_of_link_means() {
        let c = ScenarioConfig {
            inr_min_db: 0.0,
            inr_max_db: 0.0,
            fading_correlation: 0.95,
            ..cfg()
        };
        let s = build_scenario(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let series = generate_series(&s, 100_000, &mut ChaCha8Rng::seed_from_u64(2));
        let mean = series.samples.iter().sum::<f64>() / series.len() as f64;
        assert!((mean / 4.0 - 1.0).abs() < 0.03, "mean {mean}");
        assert!(series.samples.iter().all(|&v| v >= 0.0));
        assert!(series.desired_gain.iter().all(|&v| v >= 0.0));
        assert_eq!(series.desired_gain.len(), 100_000);
    }

    #[test]
    fn per_interferer_stationary_mean() {
        // Single interferer at a time, ρ = 0.95, T = 10⁵.
        for (i, db) in [-5.0, 3.0, 15.0].iter().enumerate() {
            let c = ScenarioConfig {
                n_transmitters: 2,
                inr_min_db: *db,
                inr_max_db: *db,
                fading_correlation: 0.95,
                ..cfg()
            };
            let s = build_scenario(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let series = generate_series(&s, 100_000, &mut ChaCha8Rng::seed_from_u64(40 + i as u64));
            let mean = series.samples.iter().sum::<f64>() / series.len() as f64;
            assert!((mean / s.mean_interference() - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let s = build_seeded_scenario(&cfg()).unwrap();
        let a = generate_seeded_series(&s, 500, 9, "fading");
        let b = generate_seeded_series(&build_seeded_scenario(&cfg()).unwrap(), 500, 9, "fading");
        assert_eq!(a, b);
    }

    #[test]
    fn sinr_arithmetic() {
        assert_eq!(sinr(4.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(sinr(3.0, 0.0, 0.5).unwrap(), 6.0);
        assert_eq!(sinr(0.0, 7.0, 1.0).unwrap(), 0.0);
        assert!(sinr(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let s = build_seeded_scenario(&cfg()).unwrap();
        let series = generate_seeded_series(&s, 50, 1, "fading");
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,interference_linear\n"));
        assert_eq!(text.lines().count(), 51);
        assert_eq!(read_series_csv(&buf[..]).unwrap(), series.samples);
    }

    #[test]
    fn csv_reader_rejects_garbage() {
        assert!(read_series_csv(&b"x,y\n0,1\n"[..]).is_err());
        assert!(read_series_csv(&b"t,interference_linear\n1,1\n"[..]).is_err());
        assert!(read_series_csv(&b"t,interference_linear\n0,-1\n"[..]).is_err());
    }
}
