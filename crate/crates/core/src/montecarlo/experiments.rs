//! Verification suites and coupling experiments built on the harness.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    correlation, estimate_tail_from, fit_exponential_rate, fit_line, ks_test_standard_normal, run_trials,
    summarize, wilson_interval, KsResult, LineFit, McConfig, Summary, TailCurve, Z95,
};
use crate::bridge::{compute_k, run_block, run_block_detailed, run_until_coupled, BlockConfig, RunRecord};
use crate::error::{CouplingError, Result};
use crate::geometry::{
    swept_polygon_area, to_frame, triangle_area, wrap_mod_4pi, Curvature, FrameIsometry, SurfacePoint,
};
use crate::onedim::{
    exit_hits_upper_prob, exit_mean, exit_mgf_neg, exit_mgf_pos, exit_weighted_bound, hitting_tail_bound,
    hitting_tail_exact, sample_exit, ExitInterval, ExitSide,
};
use crate::reflection::{
    coupled_pair_trajectory, ensure_spherical, mean_tau1_bound, reflection_tail_bound, run_full_su2,
    run_reflection, stopped_time, FullCouplingResult, ReflectionConfig, ReflectionRecord,
};
use crate::sde::{simulate_radial, SdeConfig};

/// z-score threshold used by every two-sided comparison.
pub const Z_THRESHOLD: f64 = 3.0;

fn z_score(estimate: f64, exact: f64, se: f64) -> f64 {
    let diff = estimate - exact;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

fn grid(step: f64, end: f64) -> Vec<f64> {
    let n = (end / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

// ---------------------------------------------------------------------------
// exit times of the one-dimensional walk

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitCheck {
    pub quantity: String,
    pub a: f64,
    pub b: f64,
    pub delta: Option<f64>,
    pub estimate: f64,
    pub se: f64,
    /// Closed form, or the upper bound for one-sided checks.
    pub exact: f64,
    pub z_score: f64,
    pub one_sided: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub mc: McConfig,
    pub dt_w: f64,
    pub n_censored: usize,
    pub checks: Vec<ExitCheck>,
    pub all_pass: bool,
}

/// Monte Carlo exit times of each interval against the closed forms: mean,
/// exit side, `E exp(-delta H)`, `E exp(delta H)` where finite with finite
/// variance, and the bound on `E[H exp(delta H)]`.
pub fn verify_exit_formulas(
    intervals: &[(f64, f64)],
    deltas: &[f64],
    dt_w: f64,
    mc: &McConfig,
) -> Result<ExitReport> {
    let mut checks = Vec::new();
    let mut n_censored = 0;
    for &(a, b) in intervals {
        let iv = ExitInterval::new(a, b)?;
        let horizon = 10.0 * (b - a) * (b - a);
        let tag = format!("exit:{a}:{b}");
        let exits = run_trials(mc, &tag, |_, rng| sample_exit(&iv, horizon, dt_w, rng))?;
        n_censored += exits.iter().filter(|e| e.is_none()).count();
        let h: Vec<f64> = exits.iter().map(|e| e.map_or(horizon, |(t, _)| t)).collect();
        let up: Vec<f64> = exits
            .iter()
            .map(|e| matches!(e, Some((_, ExitSide::Upper))) as u8 as f64)
            .collect();
        let mut push = |quantity: &str, delta: Option<f64>, s: Summary, exact: f64, one_sided: bool| {
            let z = z_score(s.mean, exact, s.se);
            let pass = if one_sided { z <= Z_THRESHOLD } else { z.abs() <= Z_THRESHOLD };
            checks.push(ExitCheck {
                quantity: quantity.into(),
                a,
                b,
                delta,
                estimate: s.mean,
                se: s.se,
                exact,
                z_score: z,
                one_sided,
                pass,
            });
        };
        push("mean_exit_time", None, summarize(&h), exit_mean(&iv), false);
        push("upper_exit_prob", None, summarize(&up), exit_hits_upper_prob(&iv), false);
        for &delta in deltas {
            let v: Vec<f64> = h.iter().map(|t| (-delta * t).exp()).collect();
            push("laplace_transform", Some(delta), summarize(&v), exit_mgf_neg(&iv, delta)?, false);
            // the estimator has finite variance only when 2 delta is admissible
            if exit_mgf_pos(&iv, 2.0 * delta).is_ok() {
                let v: Vec<f64> = h.iter().map(|t| (delta * t).exp()).collect();
                push("exp_moment", Some(delta), summarize(&v), exit_mgf_pos(&iv, delta)?, false);
                let v: Vec<f64> = h.iter().map(|t| t * (delta * t).exp()).collect();
                push("weighted_moment_bound", Some(delta), summarize(&v), exit_weighted_bound(&iv, delta)?, true);
            }
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(ExitReport {
        mc: *mc,
        dt_w,
        n_censored,
        checks,
        all_pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTailRow {
    pub t: f64,
    pub p_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub bound: f64,
    pub exact: f64,
    pub below_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTailReport {
    pub mc: McConfig,
    pub level: f64,
    pub dt_w: f64,
    pub rows: Vec<HittingTailRow>,
    pub all_below_bound: bool,
}

/// Empirical `P(D_a > t)` for the first hitting time of `level`, against the
/// bound `min(|a|/sqrt(2 pi t), 1)` and the exact tail.
pub fn verify_hitting_tail(level: f64, ts: &[f64], dt_w: f64, mc: &McConfig) -> Result<HittingTailReport> {
    if level == 0.0 || !level.is_finite() {
        return Err(CouplingError::invalid("level", level, "must be finite and nonzero"));
    }
    let iv = if level > 0.0 {
        ExitInterval::new(f64::NEG_INFINITY, level)?
    } else {
        ExitInterval::new(level, f64::INFINITY)?
    };
    let horizon = ts.iter().cloned().fold(0.0, f64::max);
    let taus = run_trials(mc, &format!("hit:{level}"), |_, rng| {
        Ok(sample_exit(&iv, horizon, dt_w, rng)?.map(|(t, _)| t))
    })?;
    let curve = estimate_tail_from(&taus, ts)?;
    let rows: Vec<HittingTailRow> = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let bound = hitting_tail_bound(level, t);
            HittingTailRow {
                t,
                p_hat: curve.p_hat[i],
                ci_lower: curve.ci_lower[i],
                ci_upper: curve.ci_upper[i],
                bound,
                exact: hitting_tail_exact(level, t),
                below_bound: curve.p_hat[i] <= bound,
            }
        })
        .collect();
    let all_below_bound = rows.iter().all(|r| r.below_bound);
    Ok(HittingTailReport {
        mc: *mc,
        level,
        dt_w,
        rows,
        all_below_bound,
    })
}

// ---------------------------------------------------------------------------
// small-block law of K(T)

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtConfig {
    pub k: Curvature,
    pub phi0: f64,
    /// Block lengths, in decreasing order.
    pub t_list: Vec<f64>,
    /// Grid steps per block, the same for every block length so that all
    /// lengths share their normal draws.
    pub n_steps: usize,
}

impl KtConfig {
    pub fn new(k: Curvature, t_list: Vec<f64>) -> Self {
        KtConfig {
            k,
            phi0: 0.5 * PI,
            t_list,
            n_steps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtRow {
    pub t_block: f64,
    pub mean: f64,
    pub variance: f64,
    pub ks: KsResult,
    /// Correlation of `pi K(T) / (2T)` with `-A(T)`, where
    /// `A(T) = sqrt(2/T) int sin(pi t/T) dB1` on the same path.
    pub corr_with_area: f64,
    pub clamp_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtReport {
    pub config: KtConfig,
    pub mc: McConfig,
    pub rows: Vec<KtRow>,
    /// KS statistic strictly decreases along `t_list`.
    pub ks_monotone: bool,
}

/// First sine coefficient `sqrt(2/T) int_0^T sin(pi t/T) dB1`, midpoint rule.
pub fn sine_coefficient(increments: &[f64], dt: f64) -> f64 {
    let t = dt * increments.len() as f64;
    let acc: f64 = increments
        .iter()
        .enumerate()
        .map(|(i, db)| (PI * (i as f64 + 0.5) * dt / t).sin() * db)
        .sum();
    (2.0 / t).sqrt() * acc
}

pub fn verify_kt_asymptotics(cfg: &KtConfig, mc: &McConfig) -> Result<KtReport> {
    let mut rows = Vec::new();
    for &t_block in &cfg.t_list {
        let sde = SdeConfig::new(cfg.k, t_block / cfg.n_steps as f64)?;
        let samples = run_trials(mc, "kt", |_, rng| {
            let radial = simulate_radial(&sde, cfg.phi0, t_block, rng)?;
            let (_, k_t) = compute_k(&radial);
            let a = sine_coefficient(&radial.b1_increments, sde.dt);
            Ok((PI * k_t / (2.0 * t_block), -a, radial.clamp_count))
        })?;
        let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let s = summarize(&x);
        rows.push(KtRow {
            t_block,
            mean: s.mean,
            variance: s.sd * s.sd,
            ks: ks_test_standard_normal(&x)?,
            corr_with_area: correlation(&x, &y),
            clamp_count: samples.iter().map(|s| s.2).sum(),
        });
    }
    let ks_monotone = rows.windows(2).all(|w| w[1].ks.statistic < w[0].ks.statistic);
    Ok(KtReport {
        config: cfg.clone(),
        mc: *mc,
        rows,
        ks_monotone,
    })
}

// ---------------------------------------------------------------------------
// single bridge blocks

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockValidityReport {
    pub block: BlockConfig,
    pub delta_z_in: f64,
    pub mc: McConfig,
    /// Blocks whose end points differ in `phi` or `theta`.
    pub endpoint_mismatches: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub success_ci: (f64, f64),
    pub mean_abs_k: f64,
    /// KS of the reconstructed normalized `B2` increments, for each copy.
    pub ks_b2: KsResult,
    pub ks_b2_prime: KsResult,
    pub corr_b1_b2: f64,
    pub corr_b1_b2_prime: f64,
    pub max_quadrature_residual: f64,
    pub residual_tolerance: f64,
    pub clamp_count: usize,
}

impl BlockValidityReport {
    pub fn marginals_ok(&self) -> bool {
        self.ks_b2.p_value > 0.01
            && self.ks_b2_prime.p_value > 0.01
            && self.corr_b1_b2.abs() < 0.05
            && self.corr_b1_b2_prime.abs() < 0.05
    }

    pub fn pass(&self) -> bool {
        self.endpoint_mismatches == 0
            && self.marginals_ok()
            && self.max_quadrature_residual <= self.residual_tolerance
            && self.success_rate > 0.01
    }
}

/// Runs independent blocks and checks the end-point coupling, the marginal
/// law of the reconstructed angular noise, the fiber-gap identity and the
/// success rate.
///
/// Each block contributes one normalized increment, taken at a step index
/// that cycles with the trial number, so the samples are independent.
pub fn verify_block_validity(block: &BlockConfig, delta_z_in: f64, mc: &McConfig) -> Result<BlockValidityReport> {
    let dt = block.dt();
    let sq = dt.sqrt();
    let k = block.k;
    let rows = run_trials(mc, "block-validity", |trial, rng| {
        let d = run_block_detailed(block, delta_z_in, rng)?;
        let n = d.radial.n_steps();
        let i = (trial as usize * 7919) % n;
        let s = k.sin_k(d.radial.phi[i]);
        let b1 = d.radial.b1_increments[i] / sq;
        let b2 = s * (d.theta[i + 1] - d.theta[i]) / sq;
        let b2p = s * (d.theta_prime[i + 1] - d.theta_prime[i]) / sq;
        let matched = d.theta[n] == d.theta_prime[n];
        Ok((b1, b2, b2p, matched, d.result))
    })?;
    let b1: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let b2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let b2p: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let successes = rows.iter().filter(|r| r.4.success).count();
    Ok(BlockValidityReport {
        block: *block,
        delta_z_in,
        mc: *mc,
        endpoint_mismatches: rows.iter().filter(|r| !r.3).count(),
        successes,
        success_rate: successes as f64 / rows.len() as f64,
        success_ci: wilson_interval(successes, rows.len(), Z95),
        mean_abs_k: rows.iter().map(|r| r.4.k_t.abs()).sum::<f64>() / rows.len() as f64,
        ks_b2: ks_test_standard_normal(&b2)?,
        ks_b2_prime: ks_test_standard_normal(&b2p)?,
        corr_b1_b2: correlation(&b1, &b2),
        corr_b1_b2_prime: correlation(&b1, &b2p),
        max_quadrature_residual: rows.iter().map(|r| r.4.quadrature_residual.abs()).fold(0.0, f64::max),
        residual_tolerance: 10.0 * dt,
        clamp_count: rows.iter().map(|r| r.4.clamp_count).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSuccessRow {
    pub t_block: f64,
    pub successes: usize,
    pub p_hat: f64,
    pub ci: (f64, f64),
    pub mean_abs_k: f64,
}

/// Block success probability for each block length, `n_steps` steps each.
pub fn block_success_by_length(
    template: &BlockConfig,
    t_list: &[f64],
    delta_z_in: f64,
    mc: &McConfig,
) -> Result<Vec<BlockSuccessRow>> {
    t_list
        .iter()
        .map(|&t_block| {
            let mut cfg = *template;
            cfg.t_block = t_block;
            cfg.kappa_min = 1e-8 * t_block;
            cfg.validate()?;
            let res = run_trials(mc, &format!("block-success:{t_block}"), |_, rng| {
                let r = run_block(&cfg, delta_z_in, rng)?;
                Ok((r.success, r.k_t.abs()))
            })?;
            let successes = res.iter().filter(|r| r.0).count();
            Ok(BlockSuccessRow {
                t_block,
                successes,
                p_hat: successes as f64 / res.len() as f64,
                ci: wilson_interval(successes, res.len(), Z95),
                mean_abs_k: res.iter().map(|r| r.1).sum::<f64>() / res.len() as f64,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fiber coupling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberConfig {
    pub block: BlockConfig,
    pub delta_z0: f64,
    pub max_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberReport {
    pub config: FiberConfig,
    pub mc: McConfig,
    /// Survival at `t = n T`, `n = 0..=max_blocks`.
    pub tail: TailCurve,
    pub blocks_run: usize,
    pub block_successes: usize,
    pub block_success_ci: (f64, f64),
    /// `(1 - p_lower)^n`.
    pub geometric_bound: Vec<f64>,
    pub below_geometric: bool,
    pub clamp_count: usize,
}

impl FiberReport {
    pub fn decay_ok(&self) -> bool {
        self.tail
            .fitted_rate
            .map_or(false, |f| f.c_hat > 0.0 && f.r_squared > 0.9)
    }
}

pub fn fiber_coupling(cfg: &FiberConfig, mc: &McConfig) -> Result<(FiberReport, Vec<RunRecord>)> {
    let runs = run_trials(mc, "fiber", |_, rng| {
        run_until_coupled(&cfg.block, cfg.delta_z0, cfg.max_blocks, rng)
    })?;
    let taus: Vec<Option<f64>> = runs.iter().map(|r| r.tau).collect();
    let ts: Vec<f64> = (0..=cfg.max_blocks).map(|n| n as f64 * cfg.block.t_block).collect();
    let mut tail = estimate_tail_from(&taus, &ts)?;
    tail.fitted_rate = fit_exponential_rate(&tail, 0..ts.len()).ok();
    let blocks_run: usize = runs.iter().map(|r| r.blocks.len()).sum();
    let block_successes = runs.iter().filter(|r| r.tau.is_some()).count();
    let ci = wilson_interval(block_successes, blocks_run, Z95);
    let geometric_bound: Vec<f64> = (0..=cfg.max_blocks).map(|n| (1.0 - ci.0).powi(n as i32)).collect();
    let below_geometric = tail.p_hat.iter().zip(&geometric_bound).all(|(p, g)| p <= g);
    let clamp_count = runs.iter().flat_map(|r| &r.blocks).map(|b| b.clamp_count).sum();
    let records = runs.iter().enumerate().map(|(i, r)| r.record(i as u64)).collect();
    Ok((
        FiberReport {
            config: cfg.clone(),
            mc: *mc,
            tail,
            blocks_run,
            block_successes,
            block_success_ci: ci,
            geometric_bound,
            below_geometric,
            clamp_count,
        },
        records,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub delta_z0: f64,
    pub p_hat: f64,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub block: BlockConfig,
    pub t_final: f64,
    pub mc: McConfig,
    pub rows: Vec<ScalingRow>,
    pub nondecreasing: bool,
    /// Fit of `ln p_hat` on `ln delta_z0` over rows with `p_hat > 0`; the
    /// slope is the exponent.
    pub power_fit: Option<LineFit>,
}

impl ScalingReport {
    pub fn exponent(&self) -> Option<f64> {
        self.power_fit.map(|f| f.slope)
    }
}

/// `P(tau > t_final)` as a function of the initial gap.
pub fn initial_gap_scaling(
    block: &BlockConfig,
    delta_z0s: &[f64],
    t_final: f64,
    mc: &McConfig,
) -> Result<ScalingReport> {
    let max_blocks = (t_final / block.t_block).round().max(1.0) as usize;
    let mut rows = Vec::new();
    for &dz in delta_z0s {
        let taus = run_trials(mc, &format!("scaling:{dz}"), |_, rng| {
            Ok(run_until_coupled(block, dz, max_blocks, rng)?.tau)
        })?;
        let survivors = taus.iter().filter(|t| t.map_or(true, |v| v > t_final)).count();
        rows.push(ScalingRow {
            delta_z0: dz,
            p_hat: survivors as f64 / taus.len() as f64,
            ci: wilson_interval(survivors, taus.len(), Z95),
        });
    }
    let nondecreasing = rows.windows(2).all(|w| w[1].p_hat >= w[0].p_hat);
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.p_hat > 0.0)
        .map(|r| (r.delta_z0.ln(), r.p_hat.ln()))
        .unzip();
    Ok(ScalingReport {
        block: *block,
        t_final,
        mc: *mc,
        rows,
        nondecreasing,
        power_fit: fit_line(&x, &y).ok(),
    })
}

// ---------------------------------------------------------------------------
// mirror coupling on the sphere

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionSuiteConfig {
    pub rho0s: Vec<f64>,
    pub refl: ReflectionConfig,
    pub delta: f64,
    pub ts: Vec<f64>,
    /// `(rho0, u)` of the stopped-time check.
    pub stopped: (f64, f64),
}

impl Default for ReflectionSuiteConfig {
    fn default() -> Self {
        ReflectionSuiteConfig {
            rho0s: vec![0.5, 1.0, 2.0, 3.0],
            refl: ReflectionConfig::new(1e-3, 50.0).expect("valid defaults"),
            delta: 0.4,
            ts: grid(0.5, 10.0)[1..].to_vec(),
            stopped: (1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRow {
    pub rho0: f64,
    pub mean_tau1: Summary,
    pub mean_bound: f64,
    pub mean_ok: bool,
    pub n_censored: usize,
    pub clamp_count: usize,
    pub tail: TailCurve,
    pub tail_bound: Vec<f64>,
    pub tail_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppedCheck {
    pub rho0: f64,
    pub u: f64,
    pub with_drift: Summary,
    /// `(rho0/2)(2u - rho0/2)`.
    pub bound: f64,
    pub bound_ok: bool,
    pub drift_free: Summary,
    /// Mean exit time of `(0, u)` from `rho0/2`: `(rho0/2)(u - rho0/2)`.
    pub drift_free_exact: f64,
    pub drift_free_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionSuiteReport {
    pub config: ReflectionSuiteConfig,
    pub mc: McConfig,
    pub rows: Vec<ReflectionRow>,
    pub stopped: StoppedCheck,
}

impl ReflectionSuiteReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.mean_ok && r.tail_ok && r.clamp_count == 0 && r.n_censored == 0)
            && self.stopped.bound_ok
    }
}

pub fn stopped_expectation_check(rho0: f64, u: f64, dt: f64, mc: &McConfig) -> Result<StoppedCheck> {
    if !(u > 0.5 * rho0 && u < 0.5 * PI) {
        return Err(CouplingError::invalid("u", u, "must lie in (rho0/2, pi/2)"));
    }
    let drift = run_trials(mc, "stopped:drift", |_, rng| Ok(stopped_time(rho0, u, true, dt, rng)))?;
    let free = run_trials(mc, "stopped:free", |_, rng| Ok(stopped_time(rho0, u, false, dt, rng)))?;
    let (h0, with_drift, drift_free) = (0.5 * rho0, summarize(&drift), summarize(&free));
    let bound = h0 * (2.0 * u - h0);
    let exact = h0 * (u - h0);
    Ok(StoppedCheck {
        rho0,
        u,
        with_drift,
        bound,
        bound_ok: with_drift.mean <= bound + Z_THRESHOLD * with_drift.se,
        drift_free,
        drift_free_exact: exact,
        drift_free_z: z_score(drift_free.mean, exact, drift_free.se),
    })
}

pub fn reflection_suite(cfg: &ReflectionSuiteConfig, mc: &McConfig) -> Result<ReflectionSuiteReport> {
    let mut rows = Vec::new();
    for &rho0 in &cfg.rho0s {
        let res = run_trials(mc, &format!("reflection:{rho0}"), |_, rng| run_reflection(rho0, 0.0, &cfg.refl, rng))?;
        let taus: Vec<Option<f64>> = res.iter().map(|r| (!r.censored).then_some(r.tau1)).collect();
        let done: Vec<f64> = taus.iter().flatten().cloned().collect();
        let mean_tau1 = summarize(&done);
        let mean_bound = mean_tau1_bound(rho0);
        let tail = estimate_tail_from(&taus, &cfg.ts)?;
        let tail_bound = cfg
            .ts
            .iter()
            .map(|&t| reflection_tail_bound(rho0, t, cfg.delta))
            .collect::<Result<Vec<_>>>()?;
        let tail_ok = tail.p_hat.iter().zip(&tail_bound).all(|(p, b)| p <= b);
        rows.push(ReflectionRow {
            rho0,
            mean_ok: mean_tau1.mean <= mean_bound + Z_THRESHOLD * mean_tau1.se,
            mean_tau1,
            mean_bound,
            n_censored: taus.len() - done.len(),
            clamp_count: res.iter().map(|r| r.clamp_count).sum(),
            tail,
            tail_bound,
            tail_ok,
        });
    }
    let (rho0, u) = cfg.stopped;
    let stopped = stopped_expectation_check(rho0, u, cfg.refl.dt, mc)?;
    Ok(ReflectionSuiteReport {
        config: cfg.clone(),
        mc: *mc,
        rows,
        stopped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaMomentRow {
    pub rho0: f64,
    pub moment: Summary,
    /// Moment divided by `rho0`.
    pub ratio: f64,
    pub n_censored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaMomentReport {
    pub p: f64,
    pub refl: ReflectionConfig,
    pub mc: McConfig,
    pub rows: Vec<ZetaMomentRow>,
    pub max_min_ratio: f64,
}

/// `E|zeta_tau1|^(1/2 + p)` from `zeta0 = 0` over a grid of distances.
pub fn zeta_moment_check(rho0s: &[f64], p: f64, refl: &ReflectionConfig, mc: &McConfig) -> Result<ZetaMomentReport> {
    if !(p > 0.0 && p < 0.5) {
        return Err(CouplingError::invalid("p", p, "must lie in (0, 1/2)"));
    }
    let mut rows = Vec::new();
    for &rho0 in rho0s {
        let res = run_trials(mc, &format!("zeta-moment:{rho0}"), |_, rng| run_reflection(rho0, 0.0, refl, rng))?;
        let v: Vec<f64> = res.iter().map(|r| r.zeta_tau1.abs().powf(0.5 + p)).collect();
        let moment = summarize(&v);
        rows.push(ZetaMomentRow {
            rho0,
            ratio: moment.mean / rho0,
            moment,
            n_censored: res.iter().filter(|r| r.censored).count(),
        });
    }
    let max = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(ZetaMomentReport {
        p,
        refl: *refl,
        mc: *mc,
        rows,
        max_min_ratio: max / min,
    })
}

// ---------------------------------------------------------------------------
// full coupling and the semigroup demonstration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCouplingConfig {
    pub rho0: f64,
    pub zeta0: f64,
    pub block: BlockConfig,
    pub refl: ReflectionConfig,
    pub max_blocks: usize,
    pub ts: Vec<f64>,
}

impl FullCouplingConfig {
    /// Sampling grid every `step` up to the longest uncensored time.
    pub fn with_grid(mut self, step: f64) -> Self {
        self.ts = grid(step, self.refl.horizon + self.max_blocks as f64 * self.block.t_block);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCouplingReport {
    pub config: FullCouplingConfig,
    pub mc: McConfig,
    pub tail: TailCurve,
    pub success_fraction: f64,
    pub mean_tau1: f64,
    pub mean_blocks: f64,
}

impl FullCouplingReport {
    pub fn pass(&self) -> bool {
        self.success_fraction >= 0.99
            && self
                .tail
                .fitted_rate
                .map_or(false, |f| f.c_hat > 0.0 && f.r_squared > 0.9)
    }
}

pub fn full_coupling(cfg: &FullCouplingConfig, mc: &McConfig) -> Result<(FullCouplingReport, Vec<ReflectionRecord>)> {
    ensure_spherical(cfg.block.k)?;
    let res: Vec<FullCouplingResult> = run_trials(mc, "full", |_, rng| {
        run_full_su2(cfg.rho0, cfg.zeta0, &cfg.block, &cfg.refl, cfg.max_blocks, rng)
    })?;
    let taus: Vec<Option<f64>> = res.iter().map(|r| r.tau).collect();
    let mut tail = estimate_tail_from(&taus, &cfg.ts)?;
    tail.fitted_rate = fit_exponential_rate(&tail, 0..cfg.ts.len()).ok();
    let n = res.len() as f64;
    let report = FullCouplingReport {
        config: cfg.clone(),
        mc: *mc,
        success_fraction: taus.iter().filter(|t| t.is_some()).count() as f64 / n,
        mean_tau1: res.iter().map(|r| r.tau1).sum::<f64>() / n,
        mean_blocks: res.iter().map(|r| r.n_blocks as f64).sum::<f64>() / n,
        tail,
    };
    let records = res.iter().enumerate().map(|(i, r)| r.record(i as u64)).collect();
    Ok((report, records))
}

/// Bounded test functions of one copy's `(phi, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Const,
    /// `cos(z/2)`
    F1,
    /// `cos(phi)`
    F2,
    /// `cos(z/2) cos(phi)`
    F3,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [TestFunction::Const, TestFunction::F1, TestFunction::F2, TestFunction::F3];

    pub fn eval(self, phi: f64, z: f64) -> f64 {
        match self {
            TestFunction::Const => 1.0,
            TestFunction::F1 => (0.5 * z).cos(),
            TestFunction::F2 => phi.cos(),
            TestFunction::F3 => (0.5 * z).cos() * phi.cos(),
        }
    }

    pub fn sup_abs(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Const => "const",
            TestFunction::F1 => "f1",
            TestFunction::F2 => "f2",
            TestFunction::F3 => "f3",
        }
    }
}

impl FromStr for TestFunction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown test function `{s}` (expected const, f1, f2 or f3)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub f: TestFunction,
    pub t: f64,
    pub mean_f: f64,
    pub mean_f_prime: f64,
    pub difference: f64,
    pub p_hat: f64,
    pub bound: f64,
    /// Paired standard error of the difference plus that of `2 sup|f| p_hat`.
    pub combined_se: f64,
    /// Trials coupled by `t` whose two samples differ; always 0.
    pub post_coupling_mismatches: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub config: FullCouplingConfig,
    pub mc: McConfig,
    pub rows: Vec<GradientRow>,
    pub all_pass: bool,
}

/// `|E f(B_t) - E f(B'_t)|` against `2 sup|f| P(tau > t)` on the same coupled
/// trials, for every function and every `t` in `cfg.ts`.
pub fn gradient_demo(fs: &[TestFunction], cfg: &FullCouplingConfig, mc: &McConfig) -> Result<GradientReport> {
    let trajs = run_trials(mc, "gradient", |_, rng| {
        coupled_pair_trajectory(cfg.rho0, cfg.zeta0, &cfg.block, &cfg.refl, &cfg.ts, rng)
    })?;
    let n = trajs.len() as f64;
    let mut rows = Vec::new();
    for &f in fs {
        for (j, &t) in cfg.ts.iter().enumerate() {
            let mut diffs = Vec::with_capacity(trajs.len());
            let (mut sf, mut sfp) = (0.0, 0.0);
            let mut survivors = 0usize;
            let mut mismatches = 0usize;
            for tr in &trajs {
                let s = tr.states[j];
                let (a, b) = (f.eval(s.phi, s.z), f.eval(s.phi_prime, s.z_prime));
                sf += a;
                sfp += b;
                diffs.push(a - b);
                match tr.tau {
                    Some(tau) if tau <= t => mismatches += (a != b) as usize,
                    _ => survivors += 1,
                }
            }
            let p_hat = survivors as f64 / n;
            let d = summarize(&diffs);
            let se_p = 2.0 * f.sup_abs() * (p_hat * (1.0 - p_hat) / n).sqrt();
            let combined_se = d.se + se_p;
            let bound = 2.0 * f.sup_abs() * p_hat;
            let difference = (sf / n - sfp / n).abs();
            rows.push(GradientRow {
                f,
                t,
                mean_f: sf / n,
                mean_f_prime: sfp / n,
                difference,
                p_hat,
                bound,
                combined_se,
                post_coupling_mismatches: mismatches,
                pass: difference <= bound + Z_THRESHOLD * combined_se && mismatches == 0,
            });
        }
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(GradientReport {
        config: cfg.clone(),
        mc: *mc,
        rows,
        all_pass,
    })
}

// ---------------------------------------------------------------------------
// frame invariance of the enclosed area

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInvarianceReport {
    pub block: BlockConfig,
    pub mc: McConfig,
    /// Largest spread, mod `4 pi`, of the swept-area gap between the two
    /// copies across two random frames.
    pub max_loop_residual: f64,
    /// Largest change of a triangle's area across the same frames.
    pub max_triangle_residual: f64,
    pub flagged_points: usize,
}

impl FrameInvarianceReport {
    pub fn pass(&self) -> bool {
        self.max_loop_residual < 1e-6 && self.max_triangle_residual < 1e-9
    }
}

fn area_gap(k: Curvature, frame: &FrameIsometry, p: &[SurfacePoint], q: &[SurfacePoint], flagged: &mut usize) -> Result<f64> {
    let mut map = |path: &[SurfacePoint]| -> Result<Vec<SurfacePoint>> {
        path.iter()
            .map(|&x| {
                let y = to_frame(k, frame, x)?;
                *flagged += y.flagged as usize;
                Ok(y.value)
            })
            .collect()
    };
    let (pf, qf) = (map(p)?, map(q)?);
    Ok(swept_polygon_area(k, &qf) - swept_polygon_area(k, &pf))
}

/// For coupled block paths with matched end points, the gap between their
/// swept areas does not depend on the frame (mod `4 pi` on the sphere).
pub fn frame_invariance(block: &BlockConfig, mc: &McConfig) -> Result<FrameInvarianceReport> {
    let k = block.k;
    let rows = run_trials(mc, "frames", |_, rng| {
        let dz = rng.gen_range(0.1..4.0 * PI - 0.1);
        let d = run_block_detailed(block, dz, rng)?;
        let path: Vec<SurfacePoint> = d
            .radial
            .phi
            .iter()
            .zip(&d.theta)
            .map(|(&phi, &th)| SurfacePoint::from_unwrapped(phi, th))
            .collect();
        let path_prime: Vec<SurfacePoint> = d
            .radial
            .phi
            .iter()
            .zip(&d.theta_prime)
            .map(|(&phi, &th)| SurfacePoint::from_unwrapped(phi, th))
            .collect();
        let (f1, f2) = (FrameIsometry::random(k, rng), FrameIsometry::random(k, rng));
        let mut flagged = 0;
        let g1 = area_gap(k, &f1, &path, &path_prime, &mut flagged)?;
        let g2 = area_gap(k, &f2, &path, &path_prime, &mut flagged)?;
        let loop_residual = wrap_mod_4pi(g1 - g2).abs();

        let n = path.len() - 1;
        let (a, b, c) = (path[0], path[n / 3], path_prime[2 * n / 3]);
        let in_frame = |f: &FrameIsometry| -> Result<f64> {
            let m = |x| to_frame(k, f, x).map(|y| y.value);
            Ok(triangle_area(k, m(a)?, m(b)?, m(c)?)?.value)
        };
        let tri_residual = (in_frame(&f1)? - in_frame(&f2)?).abs();
        Ok((loop_residual, tri_residual, flagged))
    })?;
    Ok(FrameInvarianceReport {
        block: *block,
        mc: *mc,
        max_loop_residual: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        max_triangle_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        flagged_points: rows.iter().map(|r| r.2).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(trials: usize) -> McConfig {
        McConfig::new(trials, 2024).unwrap()
    }

    #[test]
    fn test_function_parsing() {
        assert_eq!("f1".parse::<TestFunction>().unwrap(), TestFunction::F1);
        assert!("".parse::<TestFunction>().is_err());
        assert!("g".parse::<TestFunction>().is_err());
        // 4 pi periodic in z
        let f = TestFunction::F3;
        assert!((f.eval(0.3, 1.0) - f.eval(0.3, 1.0 + 4.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn sine_coefficient_of_the_mode_itself() {
        let n = 10_000;
        let dt = 1.0 / n as f64;
        // dB = sqrt(2) sin(pi t) dt integrates against the mode to 1
        let inc: Vec<f64> = (0..n)
            .map(|i| 2f64.sqrt() * (PI * (i as f64 + 0.5) * dt).sin() * dt)
            .collect();
        assert!((sine_coefficient(&inc, dt) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exit_report_small() {
        let r = verify_exit_formulas(&[(-1.0, 1.0)], &[0.5], 1e-3, &mc(3000)).unwrap();
        assert_eq!(r.n_censored, 0);
        assert!(r.checks.iter().any(|c| c.quantity == "laplace_transform"));
        for c in &r.checks {
            assert!(c.z_score.abs() < 4.5, "{c:?}");
        }
    }

    #[test]
    fn exit_report_skips_infinite_moments() {
        let r = verify_exit_formulas(&[(-1.0, 2.0)], &[0.5], 1e-3, &mc(500)).unwrap();
        assert!(r.checks.iter().all(|c| c.quantity != "exp_moment"));
    }

    #[test]
    fn kt_flat_block_is_symmetric() {
        let cfg = KtConfig {
            n_steps: 100,
            ..KtConfig::new(Curvature::Spherical, vec![0.02])
        };
        let r = verify_kt_asymptotics(&cfg, &mc(600)).unwrap();
        assert!(r.rows[0].mean.abs() < 0.2);
        assert!(r.rows[0].corr_with_area > 0.9);
    }

    #[test]
    fn gradient_constant_function_has_zero_gap() {
        let block = BlockConfig::equatorial(1.0, 100).unwrap();
        let cfg = FullCouplingConfig {
            rho0: 0.5,
            zeta0: PI,
            block,
            refl: ReflectionConfig::new(1e-2, 20.0).unwrap(),
            max_blocks: 5,
            ts: vec![0.0, 1.0, 2.0, 4.0],
        };
        let r = gradient_demo(&[TestFunction::Const, TestFunction::F1], &cfg, &mc(50)).unwrap();
        for row in r.rows.iter().filter(|r| r.f == TestFunction::Const) {
            assert_eq!(row.difference, 0.0);
            assert!(row.pass);
        }
        assert!(r.rows.iter().all(|row| row.post_coupling_mismatches == 0));
    }

    #[test]
    fn frame_invariance_small() {
        let block = BlockConfig::equatorial(0.1, 100).unwrap();
        let r = frame_invariance(&block, &mc(20)).unwrap();
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn scaling_rows_follow_the_grid() {
        let block = BlockConfig::equatorial(0.1, 50).unwrap();
        let r = initial_gap_scaling(&block, &[0.01, 1.0], 0.5, &mc(40)).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.ci.0 <= row.p_hat && row.p_hat <= row.ci.1));
    }
}
