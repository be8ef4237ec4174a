//! Non-co-adapted fiber coupling over a block `[0, T]`.
//!
//! Both copies share the radial path. Their angle paths are built from one
//! Brownian bridge in the sigma clock whose first sine mode is replaced by
//! `W_1` for one copy and by `W'_1` for the other, where `W'` is `W` mirrored
//! at its exit from an interval chosen so that the fiber gap closes exactly
//! when `W` exits before time 1.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, CouplingError, Result};
use crate::geometry::{wrap_mod_4pi, wrap_pos_4pi, Curvature, FOUR_PI};
use crate::onedim::{coarse_walk, reflect_at_exit, sample_walk_with_exit, ExitInterval, WalkPath};
use crate::sde::{simulate_radial, RadialPath, SdeConfig};

/// The auxiliary walk runs on `[0, 1]`.
pub const WALK_HORIZON: f64 = 1.0;

/// Number of sub-intervals of the per-block walk trace.
pub const TRACE_POINTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub k: Curvature,
    /// Block length `T`.
    pub t_block: f64,
    pub n_steps: usize,
    pub phi0: f64,
    pub theta0: f64,
    pub dt_w: f64,
    /// Blocks with `|K(T)|` below this fail without sampling an exit.
    pub kappa_min: f64,
    /// When both interval ends are farther than this many standard
    /// deviations of `W_1`, the walk is drawn on the coarse trace grid only.
    pub wide_interval_sigmas: f64,
}

impl BlockConfig {
    pub fn new(k: Curvature, t_block: f64, n_steps: usize, phi0: f64) -> Result<Self> {
        let cfg = BlockConfig {
            k,
            t_block,
            n_steps,
            phi0,
            theta0: 0.0,
            dt_w: 1e-4,
            kappa_min: 1e-8 * t_block,
            wide_interval_sigmas: 9.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sphere, `phi0 = pi/2`, `n` steps per block.
    pub fn equatorial(t_block: f64, n_steps: usize) -> Result<Self> {
        Self::new(Curvature::Spherical, t_block, n_steps, 0.5 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("T", self.t_block)?;
        ensure_positive("dt_w", self.dt_w)?;
        ensure_positive("kappa_min", self.kappa_min)?;
        if self.n_steps < 2 {
            return Err(CouplingError::invalid("n_steps", self.n_steps as f64, "need at least 2 steps"));
        }
        self.sde()?.check_start(self.phi0)
    }

    pub fn dt(&self) -> f64 {
        self.t_block / self.n_steps as f64
    }

    pub fn sde(&self) -> Result<SdeConfig> {
        SdeConfig::new(self.k, self.dt())
    }

    pub fn with_phi0(mut self, phi0: f64) -> Self {
        self.phi0 = phi0;
        self
    }
}

/// Outcome of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    #[serde(rename = "K_T")]
    pub k_t: f64,
    pub sigma_t: f64,
    pub varsigma: Option<f64>,
    pub success: bool,
    pub delta_z_in: f64,
    /// Gap carried to the next block, in `[0, 4pi)`; 0 on success.
    pub delta_z_out: f64,
    pub z1: f64,
    pub z1_prime: f64,
    pub degenerate_k: bool,
    pub coarse_walk: bool,
    pub clamp_count: usize,
    /// Integrated `z - z'` at `T` minus `dz_in + K(T)(Z1 - Z1')/2`.
    pub quadrature_residual: f64,
    /// `wrap_mod_4pi(dz_in + K(T) W_{1 ^ varsigma})`; near 0 on success.
    pub closure_residual: f64,
    /// `W_{s ^ varsigma}` at `s = i / TRACE_POINTS`.
    pub walk_trace: Vec<f64>,
}

/// The part of a block that depends only on `K(T)`, the incoming gap and the
/// walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOutcome {
    pub success: bool,
    pub varsigma: Option<f64>,
    pub z1: f64,
    pub z1_prime: f64,
    pub delta_z_out: f64,
    pub closure_residual: f64,
}

/// Interval whose exit closes the gap: `(-dz/K, (4pi - dz)/K)` put in order,
/// or the whole line when `K` is negligible.
pub fn exit_interval(k_t: f64, delta_z_in: f64, kappa_min: f64) -> Result<ExitInterval> {
    if !(delta_z_in > 0.0 && delta_z_in < FOUR_PI) {
        return Err(CouplingError::invalid("delta_z_in", delta_z_in, "must lie in (0, 4pi)"));
    }
    if k_t.abs() < kappa_min {
        return Ok(ExitInterval::unbounded());
    }
    let e1 = -delta_z_in / k_t;
    let e2 = (FOUR_PI - delta_z_in) / k_t;
    ExitInterval::new(e1.min(e2), e1.max(e2))
}

/// Success, coefficients and outgoing gap for a given walk.
pub fn block_outcome(k_t: f64, delta_z_in: f64, walk: &WalkPath) -> BlockOutcome {
    let mirrored = reflect_at_exit(walk);
    let raw = delta_z_in + k_t * walk.stopped_end();
    let varsigma = walk.exit_time();
    let success = varsigma.map_or(false, |t| t <= WALK_HORIZON + 1e-12);
    let delta_z_out = if success { 0.0 } else { wrap_pos_4pi(raw) };
    debug_assert!(success || delta_z_out != 0.0);
    BlockOutcome {
        success,
        varsigma,
        z1: walk.end_value(),
        z1_prime: mirrored.end_value(),
        delta_z_out,
        closure_residual: wrap_mod_4pi(raw),
    }
}

/// Trapezoidal evaluation of
/// `K(t) = 2 sqrt(2/S) int_0^t cos(pi sigma(s)/S) / (1 + cos_k phi_s) ds`
/// on the path grid, with `S = sigma(T)`. Returns the whole curve and `K(T)`.
pub fn compute_k(radial: &RadialPath) -> (Vec<f64>, f64) {
    let s_total = radial.sigma_total();
    let c = 2.0 * (2.0 / s_total).sqrt();
    let integrand = |i: usize| {
        (PI * radial.sigma[i] / s_total).cos() / (1.0 + radial.k.cos_k(radial.phi[i]))
    };
    let mut out = Vec::with_capacity(radial.phi.len());
    out.push(0.0);
    let mut acc = 0.0;
    let mut prev = integrand(0);
    for i in 1..radial.phi.len() {
        let cur = integrand(i);
        acc += 0.5 * radial.dt * (prev + cur);
        out.push(c * acc);
        prev = cur;
    }
    let k_t = *out.last().unwrap_or(&0.0);
    (out, k_t)
}

/// Brownian bridge from 0 to 0 on a strictly increasing grid, sampled point
/// by point from its exact conditional law.
pub fn sample_bridge<R: Rng + ?Sized>(sigma: &[f64], rng: &mut R) -> Vec<f64> {
    let n = sigma.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        return out;
    }
    let s_total = sigma[n - 1];
    for i in 1..n - 1 {
        let (s, u) = (sigma[i - 1], sigma[i]);
        let rest = s_total - s;
        let mean = out[i - 1] * (s_total - u) / rest;
        let var = (u - s) * (s_total - u) / rest;
        let z: f64 = StandardNormal.sample(rng);
        out[i] = mean + var.max(0.0).sqrt() * z;
    }
    out
}

/// First sine mode scaled as in the bridge expansion,
/// `sqrt(S) (sqrt(2)/pi) sin(pi sigma / S)`, with the last value set to 0.
pub fn first_mode(sigma: &[f64]) -> Vec<f64> {
    let n = sigma.len();
    let s_total = sigma[n - 1];
    let amp = s_total.sqrt() * 2f64.sqrt() / PI;
    let mut e: Vec<f64> = sigma.iter().map(|s| amp * (PI * s / s_total).sin()).collect();
    e[n - 1] = 0.0;
    e[0] = 0.0;
    e
}

/// First expansion coefficient `(pi/S) int B e_1` with
/// `e_1 = sqrt(2/S) sin(pi sigma/S)`, by the trapezoidal rule.
pub fn kl_first_coefficient(bridge: &[f64], sigma: &[f64]) -> f64 {
    let n = sigma.len();
    let s_total = sigma[n - 1];
    let norm = (2.0 / s_total).sqrt();
    let f = |i: usize| bridge[i] * norm * (PI * sigma[i] / s_total).sin();
    let mut acc = 0.0;
    for i in 1..n {
        acc += 0.5 * (sigma[i] - sigma[i - 1]) * (f(i - 1) + f(i));
    }
    PI / s_total * acc
}

/// A block together with the coupled paths that produced it.
#[derive(Clone, Debug)]
pub struct BlockDetail {
    pub result: BlockResult,
    pub radial: RadialPath,
    /// Angle of the copy with the larger fiber coordinate, and of the other.
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    /// Fiber coordinates started at `dz_in` and `0` respectively.
    pub z: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub walk: WalkPath,
}

fn sample_block_walk<R: Rng + ?Sized>(
    cfg: &BlockConfig,
    iv: &ExitInterval,
    rng: &mut R,
) -> Result<(WalkPath, bool)> {
    let wide = cfg.wide_interval_sigmas * WALK_HORIZON.sqrt();
    if iv.is_unbounded() || (iv.a < -wide && iv.b > wide) {
        Ok((coarse_walk(WALK_HORIZON, TRACE_POINTS, rng), true))
    } else {
        Ok((sample_walk_with_exit(iv, WALK_HORIZON, cfg.dt_w, rng)?, false))
    }
}

fn walk_trace(walk: &WalkPath) -> Vec<f64> {
    (0..=TRACE_POINTS)
        .map(|i| walk.stopped_value(i as f64 * WALK_HORIZON / TRACE_POINTS as f64))
        .collect()
}

/// One block with the given incoming gap `z - z' = dz_in` in `(0, 4pi)`.
pub fn run_block<R: Rng + ?Sized>(cfg: &BlockConfig, delta_z_in: f64, rng: &mut R) -> Result<BlockResult> {
    Ok(run_block_detailed(cfg, delta_z_in, rng)?.result)
}

pub fn run_block_detailed<R: Rng + ?Sized>(
    cfg: &BlockConfig,
    delta_z_in: f64,
    rng: &mut R,
) -> Result<BlockDetail> {
    let sde = cfg.sde()?;
    let radial = simulate_radial(&sde, cfg.phi0, cfg.t_block, rng)?;
    let (_, k_t) = compute_k(&radial);
    let sigma = &radial.sigma;
    let s_total = radial.sigma_total();

    let bridge = sample_bridge(sigma, rng);
    let g = s_total.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
    let z1_hat = kl_first_coefficient(&bridge, sigma);
    let mode = first_mode(sigma);

    let iv = exit_interval(k_t, delta_z_in, cfg.kappa_min)?;
    let (walk, coarse) = sample_block_walk(cfg, &iv, rng)?;
    let outcome = block_outcome(k_t, delta_z_in, &walk);

    let n = sigma.len();
    let shift = outcome.z1_prime - outcome.z1;
    let mut theta = Vec::with_capacity(n);
    let mut theta_prime = Vec::with_capacity(n);
    for i in 0..n {
        let residual = bridge[i] - z1_hat * mode[i];
        let beta = residual + outcome.z1 * mode[i] + (sigma[i] / s_total) * g;
        theta.push(cfg.theta0 + beta);
        theta_prime.push(cfg.theta0 + (beta + shift * mode[i]));
    }

    // z is driven by the area form against the angle; the two angle paths
    // share no increment with the radial noise, so the trapezoidal weight is
    // as good as the left point and tracks K(T) more closely
    let mut z = Vec::with_capacity(n);
    let mut z_prime = Vec::with_capacity(n);
    z.push(delta_z_in);
    z_prime.push(0.0);
    let mut prev_a = cfg.k.area_form(radial.phi[0]);
    for i in 1..n {
        let a = cfg.k.area_form(radial.phi[i]);
        let w = 0.5 * (prev_a + a);
        z.push(z[i - 1] + w * (theta[i] - theta[i - 1]));
        z_prime.push(z_prime[i - 1] + w * (theta_prime[i] - theta_prime[i - 1]));
        prev_a = a;
    }
    let predicted = delta_z_in + 0.5 * k_t * (outcome.z1 - outcome.z1_prime);
    let quadrature_residual = (z[n - 1] - z_prime[n - 1]) - predicted;

    let result = BlockResult {
        k_t,
        sigma_t: s_total,
        varsigma: outcome.varsigma,
        success: outcome.success,
        delta_z_in,
        delta_z_out: outcome.delta_z_out,
        z1: outcome.z1,
        z1_prime: outcome.z1_prime,
        degenerate_k: iv.is_unbounded(),
        coarse_walk: coarse,
        clamp_count: radial.clamp_count,
        quadrature_residual,
        closure_residual: outcome.closure_residual,
        walk_trace: walk_trace(&walk),
    };
    Ok(BlockDetail {
        result,
        radial,
        theta,
        theta_prime,
        z,
        z_prime,
        walk,
    })
}

/// Sequence of blocks ending at the first success or at `max_blocks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    pub delta_z0: f64,
    pub t_block: f64,
    pub max_blocks: usize,
    pub blocks: Vec<BlockResult>,
    /// Coupling time; absent when every block failed (censored).
    pub tau: Option<f64>,
}

/// Per-trial JSON record of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: u64,
    pub tau: Option<f64>,
    pub n_blocks: usize,
    #[serde(rename = "K_T")]
    pub k_t: Vec<f64>,
    pub varsigma: Vec<Option<f64>>,
    pub delta_z: Vec<f64>,
}

impl CouplingRun {
    pub fn censored(&self) -> bool {
        self.tau.is_none()
    }

    pub fn record(&self, trial: u64) -> RunRecord {
        RunRecord {
            trial,
            tau: self.tau,
            n_blocks: self.blocks.len(),
            k_t: self.blocks.iter().map(|b| b.k_t).collect(),
            varsigma: self.blocks.iter().map(|b| b.varsigma).collect(),
            delta_z: self.blocks.iter().map(|b| b.delta_z_out).collect(),
        }
    }
}

/// Iterates blocks produced by `next_block`, each starting from the relative
/// state `(phi0, theta0)` and the gap left by the previous block.
pub fn run_until_coupled_with<F>(
    cfg: &BlockConfig,
    delta_z0: f64,
    max_blocks: usize,
    mut next_block: F,
) -> Result<CouplingRun>
where
    F: FnMut(&BlockConfig, f64) -> Result<BlockResult>,
{
    if !(delta_z0 > 0.0 && delta_z0 < FOUR_PI) {
        return Err(CouplingError::invalid("delta_z0", delta_z0, "must lie in (0, 4pi)"));
    }
    if max_blocks == 0 {
        return Err(CouplingError::invalid("max_blocks", 0.0, "must be at least 1"));
    }
    let mut blocks = Vec::new();
    let mut gap = delta_z0;
    let mut tau = None;
    for j in 0..max_blocks {
        let block = next_block(cfg, gap)?;
        let success = block.success;
        gap = block.delta_z_out;
        blocks.push(block);
        if success {
            tau = Some((j + 1) as f64 * cfg.t_block);
            break;
        }
    }
    Ok(CouplingRun {
        delta_z0,
        t_block: cfg.t_block,
        max_blocks,
        blocks,
        tau,
    })
}

pub fn run_until_coupled<R: Rng + ?Sized>(
    cfg: &BlockConfig,
    delta_z0: f64,
    max_blocks: usize,
    rng: &mut R,
) -> Result<CouplingRun> {
    run_until_coupled_with(cfg, delta_z0, max_blocks, |c, dz| run_block(c, dz, rng))
}

/// The gap martingale `M_t = dz0 + sum_j K^j(T) W^j_{((t - t_j)/T) ^ varsigma_j}`
/// and its clock `S(t) = sum_j K^j(T)^2 ((t - t_j)/T ^ varsigma_j)`, sampled
/// on the trace grid of every block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

pub fn martingale_trace(run: &CouplingRun) -> MartingaleTrace {
    let mut times = vec![0.0];
    let mut m = vec![run.delta_z0];
    let mut s = vec![0.0];
    let (mut m0, mut s0) = (run.delta_z0, 0.0);
    for (j, b) in run.blocks.iter().enumerate() {
        let t0 = j as f64 * run.t_block;
        for i in 1..=TRACE_POINTS {
            let frac = i as f64 / TRACE_POINTS as f64;
            let clock = b.varsigma.map_or(frac, |v| frac.min(v));
            times.push(t0 + frac * run.t_block);
            m.push(m0 + b.k_t * b.walk_trace[i]);
            s.push(s0 + b.k_t * b.k_t * clock);
        }
        m0 = *m.last().unwrap();
        s0 = *s.last().unwrap();
    }
    MartingaleTrace { times, m, s }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onedim::walk_from_increments;
    use crate::sde::simulate_radial_with_increments;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still_radial(n: usize, t: f64) -> RadialPath {
        let sde = SdeConfig::new(Curvature::Spherical, t / n as f64).unwrap();
        simulate_radial_with_increments(&sde, PI / 2.0, vec![0.0; n]).unwrap()
    }

    #[test]
    fn k_of_equatorial_path() {
        let t = 0.1;
        let radial = still_radial(1000, t);
        let (curve, k_t) = compute_k(&radial);
        assert!(k_t.abs() < 1e-12, "K(T) = {k_t}");
        assert_abs_diff_eq!(curve[500], 2.0 / PI * (2.0 * t).sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn bridge_endpoints_and_short_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_bridge(&[0.0, 1.0], &mut rng), vec![0.0, 0.0]);
        let b = sample_bridge(&[0.0, 0.3, 0.7, 1.5], &mut rng);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn bridge_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s_total = 2.0;
        // uneven grid containing S/4, S/2 and 3S/4
        let mut grid: Vec<f64> = (0..=40).map(|i| s_total * (i as f64 / 40.0).powf(1.3)).collect();
        grid.extend_from_slice(&[0.5, 1.0, 1.5]);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let idx = |v: f64| grid.iter().position(|&x| (x - v).abs() < 1e-15).unwrap();
        let (iq, im, i3) = (idx(0.5), idx(1.0), idx(1.5));
        let trials = 10_000;
        let (mut vm, mut c13) = (0.0, 0.0);
        for _ in 0..trials {
            let b = sample_bridge(&grid, &mut rng);
            vm += b[im] * b[im];
            c13 += b[iq] * b[i3];
        }
        let vm = vm / trials as f64;
        let c13 = c13 / trials as f64;
        assert!((vm / (s_total / 4.0) - 1.0).abs() < 0.05, "var {vm}");
        assert!((c13 / (s_total / 16.0) - 1.0).abs() < 0.05, "cov {c13}");
    }

    #[test]
    fn first_coefficient_examples() {
        let n = 10_000;
        let s_total = 0.7;
        let grid: Vec<f64> = (0..=n).map(|i| s_total * i as f64 / n as f64).collect();
        assert_eq!(kl_first_coefficient(&vec![0.0; n + 1], &grid), 0.0);
        let mode1: Vec<f64> = grid
            .iter()
            .map(|s| s_total.sqrt() * 2f64.sqrt() / PI * (PI * s / s_total).sin())
            .collect();
        assert_abs_diff_eq!(kl_first_coefficient(&mode1, &grid), 1.0, epsilon = 1e-6);
        let mode2: Vec<f64> = grid
            .iter()
            .map(|s| s_total.sqrt() * 2f64.sqrt() / (2.0 * PI) * (2.0 * PI * s / s_total).sin())
            .collect();
        assert_abs_diff_eq!(kl_first_coefficient(&mode2, &grid), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn injected_lower_crossing_succeeds() {
        let (dz, k_t) = (PI, 2.0);
        let iv = exit_interval(k_t, dz, 1e-9).unwrap();
        assert_abs_diff_eq!(iv.a, -PI / 2.0, epsilon = 1e-15);
        // straight descent that leaves through -pi/2 at t = 0.5
        let n = 100;
        let dt = 0.01;
        let slope = -(PI / 2.0 + 1e-9) / 50.0;
        let walk = walk_from_increments(&iv, vec![slope; n], dt);
        let out = block_outcome(k_t, dz, &walk);
        assert!(out.success);
        assert_abs_diff_eq!(out.varsigma.unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(out.delta_z_out, 0.0);
        assert!(out.closure_residual.abs() < 1e-8);
    }

    #[test]
    fn injected_walk_without_exit_fails() {
        let (dz, k_t) = (PI, 0.5);
        let iv = exit_interval(k_t, dz, 1e-9).unwrap();
        let walk = walk_from_increments(&iv, vec![0.01; 100], 0.01);
        let out = block_outcome(k_t, dz, &walk);
        assert!(!out.success);
        assert_abs_diff_eq!(out.delta_z_out, wrap_pos_4pi(dz + k_t * walk.end_value()), epsilon = 1e-15);
        assert_abs_diff_eq!(out.z1_prime, -out.z1, epsilon = 1e-15);
    }

    #[test]
    fn negative_k_orders_the_interval() {
        let iv = exit_interval(-0.5, 1.0, 1e-9).unwrap();
        assert!(iv.a < 0.0 && iv.b > 0.0);
        assert_abs_diff_eq!(iv.b, 2.0, epsilon = 1e-15);
        assert!(exit_interval(1e-12, 1.0, 1e-9).unwrap().is_unbounded());
        assert!(exit_interval(1.0, 0.0, 1e-9).is_err());
        assert!(exit_interval(1.0, FOUR_PI, 1e-9).is_err());
    }

    #[test]
    fn blocks_match_endpoints_and_gap_algebra() {
        let cfg = BlockConfig::equatorial(0.1, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = run_block_detailed(&cfg, PI, &mut rng).unwrap();
            let n = d.theta.len() - 1;
            assert_eq!(d.theta[n], d.theta_prime[n]);
            assert!(d.result.quadrature_residual.abs() < 10.0 * cfg.dt(), "{}", d.result.quadrature_residual);
            if d.result.success {
                assert!(d.result.closure_residual.abs() < 3.0 * d.result.k_t.abs() * cfg.dt_w.sqrt() + 1e-9);
            } else {
                assert!(d.result.delta_z_out > 0.0 && d.result.delta_z_out < FOUR_PI);
            }
        }
    }

    #[test]
    fn injected_runs() {
        let cfg = BlockConfig::equatorial(0.1, 10).unwrap();
        let ok = |dz: f64| BlockResult {
            k_t: 1.0,
            sigma_t: 0.1,
            varsigma: Some(0.5),
            success: true,
            delta_z_in: dz,
            delta_z_out: 0.0,
            z1: 0.0,
            z1_prime: 0.0,
            degenerate_k: false,
            coarse_walk: false,
            clamp_count: 0,
            quadrature_residual: 0.0,
            closure_residual: 0.0,
            walk_trace: vec![0.0; TRACE_POINTS + 1],
        };
        let run = run_until_coupled_with(&cfg, 1.0, 50, |_, dz| Ok(ok(dz))).unwrap();
        assert_eq!(run.tau, Some(0.1));
        assert_eq!(run.blocks.len(), 1);

        let fail = |dz: f64| BlockResult {
            success: false,
            varsigma: None,
            delta_z_out: dz,
            ..ok(dz)
        };
        let run = run_until_coupled_with(&cfg, 1.0, 7, |_, dz| Ok(fail(dz))).unwrap();
        assert!(run.tau.is_none());
        assert_eq!(run.blocks.len(), 7);
        assert!(run_until_coupled_with(&cfg, 1.0, 0, |_, dz| Ok(fail(dz))).is_err());
    }

    #[test]
    fn martingale_trace_examples() {
        let run = CouplingRun {
            delta_z0: 2.0,
            t_block: 0.1,
            max_blocks: 5,
            blocks: vec![],
            tau: None,
        };
        let tr = martingale_trace(&run);
        assert_eq!(tr.m, vec![2.0]);
        assert_eq!(tr.s, vec![0.0]);

        let trace: Vec<f64> = (0..=TRACE_POINTS).map(|i| 0.1 * i as f64).collect();
        let block = BlockResult {
            k_t: 0.5,
            sigma_t: 0.1,
            varsigma: None,
            success: false,
            delta_z_in: 2.0,
            delta_z_out: 2.5,
            z1: 1.0,
            z1_prime: -1.0,
            degenerate_k: false,
            coarse_walk: false,
            clamp_count: 0,
            quadrature_residual: 0.0,
            closure_residual: 0.0,
            walk_trace: trace.clone(),
        };
        let run = CouplingRun {
            blocks: vec![block],
            ..run
        };
        let tr = martingale_trace(&run);
        for i in 0..=TRACE_POINTS {
            assert_abs_diff_eq!(tr.m[i], 2.0 + 0.5 * trace[i], epsilon = 1e-15);
            assert_abs_diff_eq!(tr.times[i], 0.01 * i as f64, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(*tr.s.last().unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn run_block_is_reproducible() {
        let cfg = BlockConfig::equatorial(0.1, 200).unwrap();
        let a = run_block(&cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = run_block(&cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn outcome_invariants(seed in any::<u64>(), dz in 0.01f64..12.5, k_t in prop_oneof![-3.0f64..-0.05, 0.05f64..3.0]) {
            let iv = exit_interval(k_t, dz, 1e-9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let walk = sample_walk_with_exit(&iv, 1.0, 1e-3, &mut rng).unwrap();
            let out = block_outcome(k_t, dz, &walk);
            prop_assert!(out.delta_z_out >= 0.0 && out.delta_z_out < FOUR_PI);
            prop_assert_eq!(out.success, out.varsigma.is_some());
            if out.success {
                prop_assert!(out.closure_residual.abs() < 1e-9);
            } else {
                prop_assert!(out.delta_z_out > 0.0);
            }
            prop_assert!((0.5 * (out.z1 - out.z1_prime) - walk.stopped_end()).abs() < 1e-12);
        }
    }
}
