//! Euler-Maruyama integration of the cylindrical-coordinate SDE
//!
//! ```text
//! dphi   = dB1 + 1/2 sqrt(k) cot(sqrt(k) phi) dt
//! dtheta = sqrt(k) / sin(sqrt(k) phi) dB2
//! dz     = tan(sqrt(k) phi / 2) / sqrt(k) dB2
//! ```
//!
//! and of the time change `sigma(t) = int_0^t 1 / sin_k(phi_s)^2 ds`.
//! Angles and the fiber coordinate are kept unwrapped along paths.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, CouplingError, Result};
use crate::geometry::{CylPoint, Curvature, SurfacePoint};

/// Fraction of clamped steps above which a path is reported as saturated.
pub const CLAMP_WARN_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub k: Curvature,
    pub dt: f64,
    pub phi_floor: f64,
    /// `pi - eps` on the sphere, `+inf` otherwise.
    pub phi_ceiling: f64,
}

impl SdeConfig {
    pub fn new(k: Curvature, dt: f64) -> Result<Self> {
        ensure_positive("dt", dt)?;
        Ok(SdeConfig {
            k,
            dt,
            phi_floor: 1e-4,
            phi_ceiling: match k {
                Curvature::Spherical => PI - 1e-4,
                _ => f64::INFINITY,
            },
        })
    }

    pub fn check_start(&self, phi0: f64) -> Result<()> {
        if !(phi0.is_finite() && phi0 > self.phi_floor && phi0 < self.phi_ceiling) {
            return Err(CouplingError::invalid(
                "phi0",
                phi0,
                format!("must lie strictly between {} and {}", self.phi_floor, self.phi_ceiling),
            ));
        }
        Ok(())
    }

    /// Number of steps covering `horizon`; the horizon must be a whole number
    /// of steps.
    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        ensure_positive("horizon", horizon)?;
        let n = (horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(CouplingError::invalid(
                "horizon",
                horizon,
                format!("must be a positive multiple of dt = {}", self.dt),
            ));
        }
        Ok(n as usize)
    }
}

/// Radial drift `1/2 sqrt(k) cot(sqrt(k) phi)`.
#[inline]
pub fn drift_phi(k: Curvature, phi: f64) -> f64 {
    match k {
        Curvature::Spherical => 0.5 / phi.tan(),
        Curvature::Hyperbolic => 0.5 / phi.tanh(),
        Curvature::Flat => 0.5 / phi,
    }
}

/// `(theta_coeff, z_coeff)`: the `dB2` coefficients of the angle and fiber
/// equations.
#[inline]
pub fn diffusion_coeffs(k: Curvature, phi: f64) -> (f64, f64) {
    let z = match k {
        Curvature::Spherical => (0.5 * phi).tan(),
        Curvature::Hyperbolic => (0.5 * phi).tanh(),
        Curvature::Flat => 0.5 * phi,
    };
    (1.0 / k.sin_k(phi), z)
}

/// Radial part of the motion on a uniform grid, with its driving increments
/// and the sigma clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialPath {
    pub k: Curvature,
    pub dt: f64,
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub b1_increments: Vec<f64>,
    pub sigma: Vec<f64>,
    pub clamp_count: usize,
}

impl RadialPath {
    pub fn n_steps(&self) -> usize {
        self.b1_increments.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn sigma_total(&self) -> f64 {
        *self.sigma.last().unwrap_or(&0.0)
    }

    /// True when more than 1% of the steps hit a clamp.
    pub fn clamp_saturated(&self) -> bool {
        self.n_steps() > 0 && self.clamp_count as f64 > CLAMP_WARN_FRACTION * self.n_steps() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullPath {
    pub radial: RadialPath,
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub b2_increments: Vec<f64>,
}

impl FullPath {
    /// Endpoint with the angle and fiber coordinate reduced.
    pub fn end_point(&self) -> CylPoint {
        let n = self.theta.len() - 1;
        CylPoint {
            surface: SurfacePoint::from_unwrapped(self.radial.phi[n], self.theta[n]),
            z: crate::geometry::wrap_mod_4pi(self.z[n]),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,phi,theta,z,sigma")?;
        for i in 0..self.theta.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.radial.times[i], self.radial.phi[i], self.theta[i], self.z[i], self.radial.sigma[i]
            )?;
        }
        Ok(())
    }
}

/// `1 / sin_k(phi)^2`, the density of the sigma clock.
#[inline]
pub fn sigma_rate(k: Curvature, phi: f64) -> f64 {
    let s = k.sin_k(phi);
    1.0 / (s * s)
}

/// Cumulative trapezoidal integral of the sigma-clock density on a uniform grid.
pub fn sigma_from_phi(k: Curvature, dt: f64, phi: &[f64]) -> Vec<f64> {
    let mut sigma = Vec::with_capacity(phi.len());
    let mut acc = 0.0;
    sigma.push(0.0);
    let mut prev = phi.first().map(|&p| sigma_rate(k, p)).unwrap_or(0.0);
    for &p in phi.iter().skip(1) {
        let cur = sigma_rate(k, p);
        acc += 0.5 * dt * (prev + cur);
        sigma.push(acc);
        prev = cur;
    }
    sigma
}

/// Recomputes the sigma clock of a radial path.
pub fn sigma_clock(radial: &RadialPath) -> Vec<f64> {
    sigma_from_phi(radial.k, radial.dt, &radial.phi)
}

fn integrate_radial(cfg: &SdeConfig, phi0: f64, increments: Vec<f64>) -> RadialPath {
    let n = increments.len();
    let mut phi = Vec::with_capacity(n + 1);
    let mut clamp_count = 0;
    phi.push(phi0);
    let mut cur = phi0;
    for db in &increments {
        let mut next = cur + drift_phi(cfg.k, cur) * cfg.dt + db;
        if next <= cfg.phi_floor {
            next = cfg.phi_floor;
            clamp_count += 1;
        } else if next >= cfg.phi_ceiling {
            next = cfg.phi_ceiling;
            clamp_count += 1;
        }
        phi.push(next);
        cur = next;
    }
    let sigma = sigma_from_phi(cfg.k, cfg.dt, &phi);
    RadialPath {
        k: cfg.k,
        dt: cfg.dt,
        times: (0..=n).map(|i| i as f64 * cfg.dt).collect(),
        phi,
        b1_increments: increments,
        sigma,
        clamp_count,
    }
}

pub(crate) fn normal_increments<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

pub fn simulate_radial<R: Rng + ?Sized>(
    cfg: &SdeConfig,
    phi0: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<RadialPath> {
    cfg.check_start(phi0)?;
    let n = cfg.steps_for(horizon)?;
    let increments = normal_increments(n, cfg.dt.sqrt(), rng);
    Ok(integrate_radial(cfg, phi0, increments))
}

/// Radial path driven by the given `B1` increments instead of fresh noise.
pub fn simulate_radial_with_increments(cfg: &SdeConfig, phi0: f64, b1: Vec<f64>) -> Result<RadialPath> {
    cfg.check_start(phi0)?;
    Ok(integrate_radial(cfg, phi0, b1))
}

/// Integrates the angle and fiber equations along a given radial path.
/// Left-point (Ito) rule; `z` is not wrapped.
pub fn integrate_angular(radial: &RadialPath, theta0: f64, z0: f64, b2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut theta = Vec::with_capacity(b2.len() + 1);
    let mut z = Vec::with_capacity(b2.len() + 1);
    theta.push(theta0);
    z.push(z0);
    let (mut th, mut zz) = (theta0, z0);
    for (i, db) in b2.iter().enumerate() {
        let (ct, cz) = diffusion_coeffs(radial.k, radial.phi[i]);
        th += ct * db;
        zz += cz * db;
        theta.push(th);
        z.push(zz);
    }
    (theta, z)
}

pub fn simulate_full<R: Rng + ?Sized>(
    cfg: &SdeConfig,
    start: CylPoint,
    horizon: f64,
    rng: &mut R,
) -> Result<FullPath> {
    cfg.check_start(start.surface.phi)?;
    let n = cfg.steps_for(horizon)?;
    let scale = cfg.dt.sqrt();
    let mut b1 = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    for _ in 0..n {
        b1.push(scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        b2.push(scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    }
    simulate_full_with_increments(cfg, start, b1, b2)
}

/// Full path driven by the given increments.
pub fn simulate_full_with_increments(
    cfg: &SdeConfig,
    start: CylPoint,
    b1: Vec<f64>,
    b2: Vec<f64>,
) -> Result<FullPath> {
    if b1.len() != b2.len() {
        return Err(CouplingError::Degenerate(format!(
            "increment streams differ in length: {} vs {}",
            b1.len(),
            b2.len()
        )));
    }
    let radial = simulate_radial_with_increments(cfg, start.surface.phi, b1)?;
    let (theta, z) = integrate_angular(&radial, start.surface.theta, start.z, &b2);
    Ok(FullPath {
        radial,
        theta,
        z,
        b2_increments: b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL_K: [Curvature; 3] = [Curvature::Hyperbolic, Curvature::Flat, Curvature::Spherical];

    #[test]
    fn drift_examples() {
        assert_eq!(drift_phi(Curvature::Flat, 2.0), 0.25);
        assert_abs_diff_eq!(drift_phi(Curvature::Spherical, PI / 2.0), 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(drift_phi(Curvature::Hyperbolic, 1.0), 0.6565, epsilon = 1e-4);
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(diffusion_coeffs(Curvature::Flat, 2.0), (0.5, 1.0));
        let (a, b) = diffusion_coeffs(Curvature::Spherical, PI / 2.0);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-15);
        let (a, b) = diffusion_coeffs(Curvature::Hyperbolic, 1.0);
        assert_abs_diff_eq!(a, 0.8509, epsilon = 1e-4);
        assert_abs_diff_eq!(b, 0.4621, epsilon = 1e-4);
    }

    #[test]
    fn zero_noise_radial_paths() {
        let cfg = SdeConfig::new(Curvature::Spherical, 1e-3).unwrap();
        let p = simulate_radial_with_increments(&cfg, PI / 2.0, vec![0.0; 1000]).unwrap();
        assert!(p.phi.iter().all(|&x| (x - PI / 2.0).abs() < 1e-15));
        for (t, s) in p.times.iter().zip(&p.sigma) {
            assert_abs_diff_eq!(t, s, epsilon = 1e-12);
        }

        let cfg = SdeConfig::new(Curvature::Flat, 0.01).unwrap();
        let p = simulate_radial_with_increments(&cfg, 1.0, vec![0.0]).unwrap();
        assert_abs_diff_eq!(p.phi[1], 1.005, epsilon = 1e-15);
    }

    #[test]
    fn sigma_clock_examples() {
        let mk = |k, phi: f64| RadialPath {
            k,
            dt: 0.1,
            times: (0..=10).map(|i| i as f64 * 0.1).collect(),
            phi: vec![phi; 11],
            b1_increments: vec![0.0; 10],
            sigma: vec![],
            clamp_count: 0,
        };
        let s = sigma_clock(&mk(Curvature::Spherical, PI / 2.0));
        assert_abs_diff_eq!(s[10], 1.0, epsilon = 1e-12);
        let s = sigma_clock(&mk(Curvature::Flat, 2.0));
        assert_abs_diff_eq!(s[10], 0.25, epsilon = 1e-12);
        let s = sigma_clock(&mk(Curvature::Hyperbolic, 1.0));
        assert_abs_diff_eq!(s[10], 1.0 / 1f64.sinh().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_full_path_stays_put() {
        let cfg = SdeConfig::new(Curvature::Spherical, 1e-3).unwrap();
        let start = CylPoint::new(Curvature::Spherical, PI / 2.0, 0.0, 0.0).unwrap();
        let p = simulate_full_with_increments(&cfg, start, vec![0.0; 1000], vec![0.0; 1000]).unwrap();
        let end = p.end_point();
        assert_abs_diff_eq!(end.surface.phi, PI / 2.0, epsilon = 1e-15);
        assert_eq!(end.surface.theta, 0.0);
        assert_eq!(end.z, 0.0);
    }

    #[test]
    fn constant_b2_with_frozen_radius() {
        // phi frozen at 1 on the flat model: no noise and no drift is impossible
        // through the SDE, so integrate the angular part along a frozen path
        let n = 50;
        let c = 0.03;
        let radial = RadialPath {
            k: Curvature::Flat,
            dt: 0.01,
            times: (0..=n).map(|i| i as f64 * 0.01).collect(),
            phi: vec![1.0; n + 1],
            b1_increments: vec![0.0; n],
            sigma: vec![0.0; n + 1],
            clamp_count: 0,
        };
        let (_, z) = integrate_angular(&radial, 0.0, 0.0, &vec![c; n]);
        assert_abs_diff_eq!(z[n], 0.5 * c * n as f64, epsilon = 1e-12);
    }

    #[test]
    fn radial_variance_at_small_horizon() {
        let cfg = SdeConfig::new(Curvature::Spherical, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 10_000;
        let t = 0.01;
        let d: Vec<f64> = (0..trials)
            .map(|_| {
                let p = simulate_radial(&cfg, PI / 2.0, t, &mut rng).unwrap();
                p.phi[p.phi.len() - 1] - PI / 2.0
            })
            .collect();
        let mean = d.iter().sum::<f64>() / trials as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        assert!((var / t - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn fiber_coordinate_is_centered() {
        let cfg = SdeConfig::new(Curvature::Spherical, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = CylPoint::new(Curvature::Spherical, PI / 2.0, 0.0, 0.0).unwrap();
        let trials = 10_000;
        let z: Vec<f64> = (0..trials)
            .map(|_| {
                let p = simulate_full(&cfg, start, 0.5, &mut rng).unwrap();
                p.z[p.z.len() - 1]
            })
            .collect();
        let mean = z.iter().sum::<f64>() / trials as f64;
        let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (trials as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn weak_error_against_finer_grid() {
        let trials = 4_000;
        let t = 0.5;
        let estimate = |dt: f64, seed: u64| {
            let cfg = SdeConfig::new(Curvature::Spherical, dt).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..trials)
                .map(|_| {
                    let p = simulate_radial(&cfg, PI / 2.0, t, &mut rng).unwrap();
                    p.phi[p.phi.len() - 1].cos()
                })
                .collect();
            let m = v.iter().sum::<f64>() / trials as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
            (m, var / trials as f64)
        };
        let (coarse, v1) = estimate(1e-3, 3);
        let (fine, v2) = estimate(1e-4, 4);
        assert!((coarse - fine).abs() < 3.0 * (v1 + v2).sqrt(), "{coarse} vs {fine}");
    }

    #[test]
    fn invalid_configurations() {
        assert!(SdeConfig::new(Curvature::Flat, 0.0).is_err());
        let cfg = SdeConfig::new(Curvature::Spherical, 0.1).unwrap();
        assert!(cfg.check_start(0.0).is_err());
        assert!(cfg.check_start(PI).is_err());
        assert!(cfg.steps_for(0.25).is_err());
        assert_eq!(cfg.steps_for(1.0).unwrap(), 10);
    }

    #[test]
    fn csv_header_and_rows() {
        let cfg = SdeConfig::new(Curvature::Flat, 0.1).unwrap();
        let start = CylPoint::new(Curvature::Flat, 1.0, 0.0, 0.0).unwrap();
        let p = simulate_full_with_increments(&cfg, start, vec![0.0; 3], vec![0.0; 3]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,phi,theta,z,sigma");
        assert_eq!(lines.len(), 5);
    }

    proptest! {
        #[test]
        fn coefficient_identity(phi in 0.01f64..3.1) {
            for k in ALL_K {
                let (_, cz) = diffusion_coeffs(k, phi);
                let lhs = cz * k.sin_k(phi);
                prop_assert!((lhs - k.area_form(phi)).abs() < 1e-12 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn coefficients_continuous_at_zero_curvature(u in 0.1f64..3.0) {
            let eps = 1e-4;
            let phi = eps * u;
            let d0 = drift_phi(Curvature::Flat, phi);
            let (t0, z0) = diffusion_coeffs(Curvature::Flat, phi);
            for k in [Curvature::Spherical, Curvature::Hyperbolic] {
                let (t, z) = diffusion_coeffs(k, phi);
                prop_assert!(((drift_phi(k, phi) - d0) / d0).abs() < 1e-6);
                prop_assert!(((t - t0) / t0).abs() < 1e-6);
                prop_assert!(((z - z0) / z0).abs() < 1e-6);
            }
        }

        #[test]
        fn sigma_is_strictly_increasing(seed in any::<u64>(), kk in 0usize..3) {
            let k = ALL_K[kk];
            let cfg = SdeConfig::new(k, 1e-3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = simulate_radial(&cfg, 1.0, 0.2, &mut rng).unwrap();
            prop_assert!(p.sigma.windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(p.sigma[0], 0.0);
            prop_assert!(p.phi.iter().all(|&x| x >= cfg.phi_floor && x <= cfg.phi_ceiling));
        }
    }
}
