//! Monte Carlo harness: reproducible parallel trials, tail curves with Wilson
//! intervals, exponential-rate fits and Kolmogorov-Smirnov tests.
//!
//! Every trial draws from its own ChaCha8 stream, keyed by the master seed
//! and an experiment tag and selected by the trial index, so results do not
//! depend on the number of workers.

mod experiments;

pub use experiments::*;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CouplingError, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Smallest sample accepted by the Kolmogorov-Smirnov tests.
pub const KS_MIN_SAMPLES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: usize,
    pub master_seed: u64,
    /// Worker threads. Results are identical for every value, so it is left
    /// out of serialized reports.
    #[serde(skip, default = "one")]
    pub parallelism: usize,
}

fn one() -> usize {
    1
}

impl McConfig {
    pub fn new(trials: usize, master_seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(CouplingError::invalid("trials", 0.0, "must be at least 1"));
        }
        Ok(McConfig {
            trials,
            master_seed,
            parallelism: 1,
        })
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials.max(1);
        self
    }
}

/// Stream for one trial: the key hashes `(master_seed, tag)`, the stream id
/// is the trial index.
pub fn trial_rng(master_seed: u64, tag: &str, trial: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(tag.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    rng.set_stream(trial);
    rng
}

/// Runs `f` on every trial index and returns the results in index order.
pub fn run_trials<T, F>(cfg: &McConfig, tag: &str, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| CouplingError::Pool(e.to_string()))?;
    pool.install(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| f(i, &mut trial_rng(cfg.master_seed, tag, i)))
            .collect()
    })
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// Mean, sample standard deviation and standard error, summed in order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

pub fn summarize(x: &[f64]) -> Summary {
    let n = x.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            sd: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        n,
        mean,
        sd,
        se: sd / (n as f64).sqrt(),
    }
}

/// Pearson correlation; NaN when either sample is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (mx, my) = (summarize(&x[..n]).mean, summarize(&y[..n]).mean);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 when `y` is constant.
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(CouplingError::TooFewSamples { got: n, need: 2 });
    }
    let (mx, my) = (summarize(&x[..n]).mean, summarize(&y[..n]).mean);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CouplingError::Degenerate("all abscissae coincide".into()));
    }
    let flat = y[..n].iter().all(|v| *v == y[0]);
    let slope = if flat { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..n).map(|i| (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let r_squared = if flat || syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Fitted `p(t) ~ C exp(-c t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub c_hat: f64,
    #[serde(rename = "C_hat")]
    pub big_c_hat: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Empirical survival curve `P(tau > t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub ts: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub trials: usize,
    pub n_censored: usize,
    pub fitted_rate: Option<RateFit>,
}

impl TailCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,p_hat,ci_lower,ci_upper")?;
        for i in 0..self.ts.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.ts[i], self.p_hat[i], self.ci_lower[i], self.ci_upper[i]
            )?;
        }
        Ok(())
    }
}

/// Tail curve from coupling times; `None` is a censored trial and counts as
/// surviving every `t`.
pub fn estimate_tail_from(taus: &[Option<f64>], ts: &[f64]) -> Result<TailCurve> {
    if taus.is_empty() {
        return Err(CouplingError::TooFewSamples { got: 0, need: 1 });
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CouplingError::Degenerate("evaluation times must increase".into()));
    }
    let n = taus.len();
    let n_censored = taus.iter().filter(|t| t.is_none()).count();
    let mut p_hat = Vec::with_capacity(ts.len());
    let mut ci_lower = Vec::with_capacity(ts.len());
    let mut ci_upper = Vec::with_capacity(ts.len());
    for &t in ts {
        let survivors = taus.iter().filter(|tau| tau.map_or(true, |v| v > t)).count();
        let (lo, hi) = wilson_interval(survivors, n, Z95);
        p_hat.push(survivors as f64 / n as f64);
        ci_lower.push(lo);
        ci_upper.push(hi);
    }
    Ok(TailCurve {
        ts: ts.to_vec(),
        p_hat,
        ci_lower,
        ci_upper,
        trials: n,
        n_censored,
        fitted_rate: None,
    })
}

/// Runs `sampler` on every trial and builds the tail curve of its times.
pub fn estimate_tail<F>(sampler: F, ts: &[f64], cfg: &McConfig, tag: &str) -> Result<TailCurve>
where
    F: Fn(u64, &mut ChaCha8Rng) -> Result<Option<f64>> + Sync,
{
    let taus = run_trials(cfg, tag, sampler)?;
    estimate_tail_from(&taus, ts)
}

/// Least squares of `ln p_hat` on `t` over `window`, keeping only points with
/// `p_hat > 5 / trials`.
pub fn fit_exponential_rate(curve: &TailCurve, window: Range<usize>) -> Result<RateFit> {
    let floor = 5.0 / curve.trials as f64;
    let end = window.end.min(curve.ts.len());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in window.start..end {
        if curve.p_hat[i] > floor {
            x.push(curve.ts[i]);
            y.push(curve.p_hat[i].ln());
        }
    }
    let line = fit_line(&x, &y)?;
    Ok(RateFit {
        c_hat: -line.slope,
        big_c_hat: line.intercept.exp(),
        r_squared: line.r_squared,
        n_points: line.n_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form, fast for small arguments
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|j| ((2 * j - 1) as f64).powi(2) * c).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS test against a continuous `cdf`, asymptotic p-value with
/// the Stephens small-sample correction.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(CouplingError::TooFewSamples {
            got: n,
            need: KS_MIN_SAMPLES,
        });
    }
    let mut x = samples.to_vec();
    if x.iter().any(|v| v.is_nan()) {
        return Err(CouplingError::Degenerate("NaN sample".into()));
    }
    x.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
        n,
    })
}

pub fn ks_test_standard_normal(samples: &[f64]) -> Result<KsResult> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    ks_test(samples, |x| normal.cdf(x))
}
