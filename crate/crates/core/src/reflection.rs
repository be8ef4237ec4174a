//! Mirror coupling of two spherical Brownian motions and its composition with
//! the fiber coupling.
//!
//! In the mirror frame the two surface points are `(pi/2 - h, theta)` and
//! `(pi/2 + h, theta)` with `h = rho/2` half their distance; they meet when
//! `h` reaches 0.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge::{run_block_detailed, run_until_coupled, BlockConfig};
use crate::error::{ensure_positive, CouplingError, Result};
use crate::geometry::{wrap_mod_4pi, wrap_pos_4pi, Curvature};
use crate::sde::{diffusion_coeffs, drift_phi};


#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionConfig {
    pub dt: f64,
    pub horizon: f64,
    /// The surfaces count as coupled once `h` drops to this value.
    pub h_tol: f64,
}

impl ReflectionConfig {
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        ensure_positive("dt", dt)?;
        ensure_positive("horizon", horizon)?;
        Ok(ReflectionConfig {
            dt,
            horizon,
            h_tol: 1e-3,
        })
    }

    /// Step used at `v = pi/2 - h`, the distance to the antipodal pair. The
    /// base step is shortened so that one step moves `v` by about `v/10`.
    #[inline]
    fn step_at(&self, v: f64) -> f64 {
        self.dt.min(v.max(ANTIPODAL_ZONE).powi(2) / 100.0)
    }
}

/// Below this distance to the antipodal pair, `v` moves as the radius of a
/// planar Brownian motion.
const ANTIPODAL_ZONE: f64 = 1e-3;

/// One step of `v = pi/2 - h`, which solves `dv = dB + cot(v)/2 dt`.
///
/// Away from the antipodal pair this is an Euler step; inside
/// [`ANTIPODAL_ZONE`] it is the exact step of the two-dimensional Bessel
/// radius, drawing a second normal from `extra`. Returns the new `v`, the
/// step, `tan h` at the left point and whether an Euler step overshot the
/// antipodal pair (then `v` is halved instead).
#[inline]
fn mirror_step(cfg: &ReflectionConfig, v: f64, xi1: f64, extra: impl FnOnce() -> f64) -> (f64, f64, f64, bool) {
    let step = cfg.step_at(v);
    let sq = step.sqrt();
    let tan_h = 1.0 / v.tan();
    if v < ANTIPODAL_ZONE {
        return ((v + sq * xi1).hypot(sq * extra()), step, tan_h, false);
    }
    let next = v + sq * xi1 + 0.5 * tan_h * step;
    if next > 0.0 {
        (next, step, tan_h, false)
    } else {
        (0.5 * v, step, tan_h, true)
    }
}

/// Rejects any model surface other than the sphere.
pub fn ensure_spherical(k: Curvature) -> Result<()> {
    match k {
        Curvature::Spherical => Ok(()),
        Curvature::Hyperbolic => Err(CouplingError::UnsupportedCurvature(
            -1,
            "no successful coupling exists on the hyperbolic plane",
        )),
        Curvature::Flat => Err(CouplingError::UnsupportedCurvature(
            0,
            "the mirror coupling here is built on the sphere's equator",
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionResult {
    pub tau1: f64,
    pub zeta_tau1: f64,
    pub censored: bool,
    pub clamp_count: usize,
    pub n_steps: usize,
    /// `(t, rho_t)` when requested.
    pub rho_path: Option<Vec<(f64, f64)>>,
}

/// Per-trial JSON record of a reflection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub trial: u64,
    pub tau1: Option<f64>,
    pub zeta_tau1: f64,
    pub tau2: Option<f64>,
    pub tau: Option<f64>,
    pub censored: bool,
}

fn check_start(rho0: f64, zeta0: f64) -> Result<()> {
    if !(rho0 >= 0.0 && rho0 < PI) {
        return Err(CouplingError::invalid("rho0", rho0, "must lie in [0, pi)"));
    }
    if !(zeta0 > -2.0 * PI && zeta0 <= 2.0 * PI) {
        return Err(CouplingError::invalid("zeta0", zeta0, "must lie in (-2pi, 2pi]"));
    }
    Ok(())
}

/// Core loop, driven by pairs of standard normals `(xi1, xi2)`.
fn reflect_with<N: FnMut() -> (f64, f64)>(
    rho0: f64,
    zeta0: f64,
    cfg: &ReflectionConfig,
    keep_path: bool,
    mut noise: N,
) -> ReflectionResult {
    let mut v = FRAC_PI_2 - 0.5 * rho0;
    let v_tol = FRAC_PI_2 - cfg.h_tol;
    let mut zeta = zeta0;
    let mut t = 0.0;
    let mut clamp_count = 0;
    let mut n_steps = 0;
    let mut path = keep_path.then(|| vec![(0.0, rho0)]);
    let mut censored = false;
    while v < v_tol {
        if t >= cfg.horizon {
            censored = true;
            break;
        }
        let (xi1, xi2) = noise();
        let (next, step, tan_h, clamped) = mirror_step(cfg, v, xi1, || noise().0);
        zeta -= 2.0 * tan_h * step.sqrt() * xi2;
        v = next;
        clamp_count += clamped as usize;
        t += step;
        n_steps += 1;
        if let Some(p) = path.as_mut() {
            p.push((t, (PI - 2.0 * v).max(0.0)));
        }
    }
    ReflectionResult {
        tau1: t,
        zeta_tau1: wrap_mod_4pi(zeta),
        censored,
        clamp_count,
        n_steps,
        rho_path: path,
    }
}

fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    (StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Runs the mirror coupling from distance `rho0` and fiber gap `zeta0` until
/// the surface points meet or the horizon is reached.
pub fn run_reflection<R: Rng + ?Sized>(
    rho0: f64,
    zeta0: f64,
    cfg: &ReflectionConfig,
    rng: &mut R,
) -> Result<ReflectionResult> {
    check_start(rho0, zeta0)?;
    Ok(reflect_with(rho0, zeta0, cfg, false, || normal_pair(rng)))
}

/// Same as [`run_reflection`] with the normals supplied by `noise` and the
/// distance path recorded.
pub fn run_reflection_with_noise<N: FnMut() -> (f64, f64)>(
    rho0: f64,
    zeta0: f64,
    cfg: &ReflectionConfig,
    noise: N,
) -> Result<ReflectionResult> {
    check_start(rho0, zeta0)?;
    Ok(reflect_with(rho0, zeta0, cfg, true, noise))
}

/// Tail bound `e^{-delta t}/t * (pi - rho0/2)(rho0/2) / cos^2(sqrt(delta/2) pi)`
/// on `P(tau1 > t)`, for `delta` in `(0, 1/2)`.
pub fn reflection_tail_bound(rho0: f64, t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(CouplingError::invalid("delta", delta, "must lie in (0, 1/2)"));
    }
    ensure_positive("t", t)?;
    let h0 = 0.5 * rho0;
    let c = ((0.5 * delta).sqrt() * PI).cos();
    Ok((-delta * t).exp() / t * (PI - h0) * h0 / (c * c))
}

/// Bound `(rho0/2)(pi - rho0/2)` on the mean coupling time of the surfaces.
pub fn mean_tau1_bound(rho0: f64) -> f64 {
    0.5 * rho0 * (PI - 0.5 * rho0)
}

/// `T_0 ^ T_u` for the half distance started at `rho0/2`, with or without
/// the drift. Both barriers use the bridge crossing probability between
/// grid points.
pub fn stopped_time<R: Rng + ?Sized>(rho0: f64, u: f64, with_drift: bool, dt: f64, rng: &mut R) -> f64 {
    let mut h = 0.5 * rho0;
    let mut t = 0.0;
    loop {
        let step = if with_drift { dt.min((FRAC_PI_2 - h).powi(2) / 36.0) } else { dt };
        let xi: f64 = StandardNormal.sample(rng);
        let drift = if with_drift { -0.5 * h.tan() } else { 0.0 };
        let next = h + drift * step - step.sqrt() * xi;
        t += step;
        if next <= 0.0 || next >= u {
            return t;
        }
        let p0 = (-2.0 * h * next / step).exp();
        let pu = (-2.0 * (u - h) * (u - next) / step).exp();
        if p0 > 1e-12 || pu > 1e-12 {
            let v: f64 = rng.gen();
            if v < p0 + pu {
                return t;
            }
        }
        h = next;
    }
}

/// Result of the full coupling: mirror phase, then fiber blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCouplingResult {
    pub tau1: f64,
    pub zeta_tau1: f64,
    pub tau2: Option<f64>,
    pub tau: Option<f64>,
    pub censored: bool,
    pub n_blocks: usize,
}

impl FullCouplingResult {
    pub fn record(&self, trial: u64) -> ReflectionRecord {
        ReflectionRecord {
            trial,
            tau1: (!self.censored || self.tau2.is_some() || self.n_blocks > 0).then_some(self.tau1),
            zeta_tau1: self.zeta_tau1,
            tau2: self.tau2,
            tau: self.tau,
            censored: self.censored,
        }
    }
}

/// Maps a nonzero gap in `(-2pi, 2pi]` to `(0, 4pi)` by exchanging the roles
/// of the two copies when it is negative.
pub fn handoff_gap(zeta: f64) -> f64 {
    wrap_pos_4pi(zeta.abs())
}

pub fn run_full_su2<R: Rng + ?Sized>(
    rho0: f64,
    zeta0: f64,
    block: &BlockConfig,
    refl: &ReflectionConfig,
    max_blocks: usize,
    rng: &mut R,
) -> Result<FullCouplingResult> {
    ensure_spherical(block.k)?;
    let phase1 = run_reflection(rho0, zeta0, refl, rng)?;
    if phase1.censored {
        return Ok(FullCouplingResult {
            tau1: phase1.tau1,
            zeta_tau1: phase1.zeta_tau1,
            tau2: None,
            tau: None,
            censored: true,
            n_blocks: 0,
        });
    }
    let gap = handoff_gap(phase1.zeta_tau1);
    if gap == 0.0 {
        return Ok(FullCouplingResult {
            tau1: phase1.tau1,
            zeta_tau1: phase1.zeta_tau1,
            tau2: Some(0.0),
            tau: Some(phase1.tau1),
            censored: false,
            n_blocks: 0,
        });
    }
    let run = run_until_coupled(block, gap, max_blocks, rng)?;
    Ok(FullCouplingResult {
        tau1: phase1.tau1,
        zeta_tau1: phase1.zeta_tau1,
        tau2: run.tau,
        tau: run.tau.map(|t2| phase1.tau1 + t2),
        censored: run.tau.is_none(),
        n_blocks: run.blocks.len(),
    })
}

/// State of both copies at one sampling time: radius and fiber coordinate in
/// the fixed frame whose equator is the mirror.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub phi: f64,
    pub z: f64,
    pub phi_prime: f64,
    pub z_prime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrajectory {
    /// Meeting time of the surface points, if before the last sampling time.
    pub tau1: Option<f64>,
    /// Coupling time, if before the last sampling time.
    pub tau: Option<f64>,
    pub states: Vec<PairState>,
}

struct Recorder<'a> {
    ts: &'a [f64],
    next: usize,
    states: Vec<PairState>,
}

impl Recorder<'_> {
    fn record_until(&mut self, t: f64, state: PairState) {
        while self.next < self.ts.len() && self.ts[self.next] <= t + 1e-12 {
            self.states.push(state);
            self.next += 1;
        }
    }

    fn done(&self) -> bool {
        self.next >= self.ts.len()
    }

    fn next_time(&self) -> f64 {
        self.ts[self.next]
    }
}

/// Coupled pair started at `(pi/2 - rho0/2, theta, 0)` and
/// `(pi/2 + rho0/2, theta, zeta0)`, observed at the sorted times `ts`.
///
/// The mirror phase runs in the fixed frame. Once the surface points meet,
/// both are projected to the equator and fiber blocks run from the current
/// radius without frame resets. After coupling the copies are merged and
/// continue as one path, so their states coincide exactly.
pub fn coupled_pair_trajectory<R: Rng + ?Sized>(
    rho0: f64,
    zeta0: f64,
    block: &BlockConfig,
    refl: &ReflectionConfig,
    ts: &[f64],
    rng: &mut R,
) -> Result<PairTrajectory> {
    ensure_spherical(block.k)?;
    check_start(rho0, zeta0)?;
    if ts.windows(2).any(|w| w[1] < w[0]) || ts.first().map_or(false, |&t| t < 0.0) {
        return Err(CouplingError::Degenerate("sampling times must be sorted and nonnegative".into()));
    }
    let k = Curvature::Spherical;
    let mut rec = Recorder {
        ts,
        next: 0,
        states: Vec::with_capacity(ts.len()),
    };
    let mut t = 0.0;
    let mut v = FRAC_PI_2 - 0.5 * rho0;
    let v_tol = FRAC_PI_2 - refl.h_tol;
    let (mut z, mut zp) = (0.0, zeta0);
    let state = |v: f64, z: f64, zp: f64| PairState {
        phi: v.min(FRAC_PI_2),
        z,
        phi_prime: (PI - v).max(FRAC_PI_2),
        z_prime: zp,
    };

    // mirror phase
    rec.record_until(t, state(v, z, zp));
    while v < v_tol && !rec.done() {
        let (xi1, xi2) = normal_pair(rng);
        let (next, step, _, _) = mirror_step(refl, v, xi1, || normal_pair(rng).0);
        let db2 = step.sqrt() * xi2;
        z += diffusion_coeffs(k, v).1 * db2;
        zp += diffusion_coeffs(k, PI - v).1 * db2;
        v = next;
        t += step;
        rec.record_until(t, state(v, z, zp));
    }
    if rec.done() {
        return Ok(PairTrajectory {
            tau1: (v >= v_tol).then_some(t),
            tau: None,
            states: rec.states,
        });
    }
    let tau1 = t;

    // fiber blocks from the common point on the equator
    let mut phi = FRAC_PI_2;
    let mut tau = None;
    while !rec.done() {
        let gap = wrap_pos_4pi(z - zp);
        if gap == 0.0 {
            tau = Some(t);
            zp = z;
            break;
        }
        let cfg = block.with_phi0(phi);
        let d = run_block_detailed(&cfg, gap, rng)?;
        let dt = cfg.dt();
        let (z_start, zp_start) = (z, zp);
        let n = d.z.len() - 1;
        for i in 0..=n {
            let ti = t + i as f64 * dt;
            if rec.done() || rec.next_time() > ti + 1e-12 {
                continue;
            }
            let zi = z_start + (d.z[i] - gap);
            let merged = d.result.success && i == n;
            rec.record_until(
                ti,
                PairState {
                    phi: d.radial.phi[i],
                    z: zi,
                    phi_prime: d.radial.phi[i],
                    z_prime: if merged { zi } else { zp_start + d.z_prime[i] },
                },
            );
        }
        z = z_start + (d.z[n] - gap);
        zp = zp_start + d.z_prime[n];
        phi = d.radial.phi[n];
        t += block.t_block;
        if d.result.success {
            tau = Some(t);
            zp = z;
            break;
        }
    }

    // merged: one path for both copies
    let dt = block.dt();
    let sq = dt.sqrt();
    let (floor, ceiling) = (1e-4, PI - 1e-4);
    while !rec.done() {
        rec.record_until(
            t,
            PairState {
                phi,
                z,
                phi_prime: phi,
                z_prime: z,
            },
        );
        if rec.done() {
            break;
        }
        let (xi1, xi2) = normal_pair(rng);
        z += diffusion_coeffs(k, phi).1 * sq * xi2;
        phi = (phi + drift_phi(k, phi) * dt + sq * xi1).clamp(floor, ceiling);
        t += dt;
    }
    let _ = zp;
    Ok(PairTrajectory {
        tau1: Some(tau1),
        tau,
        states: rec.states,
    })
}
