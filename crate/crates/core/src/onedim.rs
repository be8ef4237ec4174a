//! One-dimensional Brownian first passage: closed forms for hitting and exit
//! times, a grid walk with exit detection, and the path reflected at its exit.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{ensure_positive, CouplingError, Result};

/// Open interval `(a, b)` with `a < 0 < b`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitInterval {
    pub a: f64,
    pub b: f64,
}

impl ExitInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a.is_nan() || !(a < 0.0) {
            return Err(CouplingError::invalid("a", a, "lower end must be < 0"));
        }
        if b.is_nan() || !(b > 0.0) {
            return Err(CouplingError::invalid("b", b, "upper end must be > 0"));
        }
        Ok(ExitInterval { a, b })
    }

    /// The whole line; a walk never leaves it.
    pub fn unbounded() -> Self {
        ExitInterval {
            a: f64::NEG_INFINITY,
            b: f64::INFINITY,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.a == f64::NEG_INFINITY && self.b == f64::INFINITY
    }

    fn check_finite(&self) -> Result<()> {
        if self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(CouplingError::Domain("closed form needs a bounded interval".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSide {
    Lower,
    Upper,
}

impl ExitSide {
    pub fn flipped(self) -> Self {
        match self {
            ExitSide::Lower => ExitSide::Upper,
            ExitSide::Upper => ExitSide::Lower,
        }
    }
}

/// Upper bound `min(|a| / sqrt(2 pi t), 1)` on `P(D_a > t)`.
pub fn hitting_tail_bound(a: f64, t: f64) -> f64 {
    (a.abs() / (2.0 * PI * t).sqrt()).min(1.0)
}

/// Exact `P(D_a > t) = erf(|a| / sqrt(2 t))` from the reflection principle.
pub fn hitting_tail_exact(a: f64, t: f64) -> f64 {
    erf(a.abs() / (2.0 * t).sqrt())
}

/// Density of the first hitting time of `a`.
pub fn hitting_density(a: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    a.abs() / (2.0 * PI * u * u * u).sqrt() * (-a * a / (2.0 * u)).exp()
}

/// Mean exit time `-ab`.
pub fn exit_mean(iv: &ExitInterval) -> f64 {
    -iv.a * iv.b
}

/// Probability `-a / (b - a)` of leaving through the upper end.
pub fn exit_hits_upper_prob(iv: &ExitInterval) -> f64 {
    -iv.a / (iv.b - iv.a)
}

/// `E[exp(-delta H)]`.
pub fn exit_mgf_neg(iv: &ExitInterval, delta: f64) -> Result<f64> {
    iv.check_finite()?;
    ensure_positive("delta", delta)?;
    let r = (0.5 * delta).sqrt();
    Ok((r * (iv.a + iv.b)).cosh() / (r * (iv.b - iv.a)).cosh())
}

fn positive_side_arg(iv: &ExitInterval, delta: f64) -> Result<f64> {
    iv.check_finite()?;
    ensure_positive("delta", delta)?;
    let x = (0.5 * delta).sqrt() * (iv.b - iv.a);
    if x >= 0.5 * PI {
        return Err(CouplingError::Domain(format!(
            "sqrt(delta/2)(b-a) = {x} >= pi/2: exponential moment is infinite"
        )));
    }
    Ok(x)
}

/// `E[exp(delta H)]`, finite only while `sqrt(delta/2)(b-a) < pi/2`.
pub fn exit_mgf_pos(iv: &ExitInterval, delta: f64) -> Result<f64> {
    let x = positive_side_arg(iv, delta)?;
    Ok(((0.5 * delta).sqrt() * (iv.a + iv.b)).cos() / x.cos())
}

/// Upper bound `-ab / cos^2(sqrt(delta/2)(b-a))` on `E[H exp(delta H)]`.
pub fn exit_weighted_bound(iv: &ExitInterval, delta: f64) -> Result<f64> {
    let x = positive_side_arg(iv, delta)?;
    Ok(exit_mean(iv) / (x.cos() * x.cos()))
}

/// Exit event of a walk. The crossing step is split in two parts, before and
/// after the boundary, so the path can be mirrored exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkExit {
    /// Grid index of the first point after the exit.
    pub step: usize,
    pub time: f64,
    pub side: ExitSide,
    pub pre: f64,
    pub post: f64,
}

/// Grid walk `W_0 = 0, W_1, ...` with spacing `dt_w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub dt_w: f64,
    pub increments: Vec<f64>,
    pub values: Vec<f64>,
    pub exit: Option<WalkExit>,
}

fn accumulate(increments: &[f64], exit: Option<&WalkExit>) -> Vec<f64> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut w = 0.0;
    values.push(w);
    for (j, inc) in increments.iter().enumerate() {
        w = match exit {
            Some(e) if e.step == j + 1 => (w + e.pre) + e.post,
            _ => w + inc,
        };
        values.push(w);
    }
    values
}

impl WalkPath {
    pub fn horizon(&self) -> f64 {
        self.increments.len() as f64 * self.dt_w
    }

    pub fn end_value(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn exit_time(&self) -> Option<f64> {
        self.exit.map(|e| e.time)
    }

    /// Value of the walk at the exit, `W_varsigma`.
    pub fn exit_value(&self) -> Option<f64> {
        self.exit.map(|e| self.values[e.step - 1] + e.pre)
    }

    /// `W_{min(t, varsigma)}`, read off the grid at or below `t`.
    pub fn stopped_value(&self, t: f64) -> f64 {
        if let Some(e) = self.exit {
            if t >= e.time {
                return self.values[e.step - 1] + e.pre;
            }
        }
        let i = ((t / self.dt_w + 1e-9).floor() as usize).min(self.values.len() - 1);
        self.values[i]
    }

    /// `W_{min(horizon, varsigma)}`.
    pub fn stopped_end(&self) -> f64 {
        match self.exit_value() {
            Some(c) => c,
            None => self.end_value(),
        }
    }
}

const CROSSING_CUTOFF: f64 = 20.0;

/// Probability that a Brownian bridge from `x` to `y` over `dt` touches
/// `level` when both ends lie on the same side of it.
#[inline]
fn bridge_crossing_prob(x: f64, y: f64, level: f64, dt: f64) -> f64 {
    let e = 2.0 * (level - x) * (level - y) / dt;
    if e > CROSSING_CUTOFF {
        0.0
    } else {
        (-e).exp()
    }
}

/// Decides whether the step `x -> y` leaves `iv`. Grid points outside the
/// closed interval count as exits; with an RNG, a crossing hidden between
/// two inside points is detected with its exact bridge probability.
#[inline]
fn step_exit<R: Rng + ?Sized>(
    iv: &ExitInterval,
    x: f64,
    y: f64,
    dt: f64,
    rng: Option<&mut R>,
) -> Option<ExitSide> {
    if y > iv.b {
        return Some(ExitSide::Upper);
    }
    if y < iv.a {
        return Some(ExitSide::Lower);
    }
    let rng = rng?;
    let p_up = if iv.b.is_finite() {
        bridge_crossing_prob(x, y, iv.b, dt)
    } else {
        0.0
    };
    let p_lo = if iv.a.is_finite() {
        bridge_crossing_prob(x, y, iv.a, dt)
    } else {
        0.0
    };
    if p_up == 0.0 && p_lo == 0.0 {
        return None;
    }
    let u: f64 = rng.gen();
    if u < p_up {
        Some(ExitSide::Upper)
    } else if u < p_up + p_lo {
        Some(ExitSide::Lower)
    } else {
        None
    }
}

fn steps(horizon: f64, dt_w: f64) -> Result<usize> {
    ensure_positive("dt_w", dt_w)?;
    ensure_positive("horizon", horizon)?;
    Ok((horizon / dt_w).round().max(1.0) as usize)
}

/// Samples a walk on `[0, horizon]` and records its first exit from `iv`.
///
/// The walk keeps running after the exit; the crossing step is split at the
/// boundary so that `W_varsigma` is the boundary value.
pub fn sample_walk_with_exit<R: Rng + ?Sized>(
    iv: &ExitInterval,
    horizon: f64,
    dt_w: f64,
    rng: &mut R,
) -> Result<WalkPath> {
    let n = steps(horizon, dt_w)?;
    let scale = dt_w.sqrt();
    let mut increments = Vec::with_capacity(n);
    let mut exit = None;
    let mut w = 0.0;
    for j in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        let mut inc = scale * z;
        let y = w + inc;
        if exit.is_none() {
            if let Some(side) = step_exit(iv, w, y, dt_w, Some(&mut *rng)) {
                let level = match side {
                    ExitSide::Upper => iv.b,
                    ExitSide::Lower => iv.a,
                };
                let pre = level - w;
                let post = inc - pre;
                inc = pre + post;
                exit = Some(WalkExit {
                    step: j + 1,
                    time: (j + 1) as f64 * dt_w,
                    side,
                    pre,
                    post,
                });
            }
        }
        increments.push(inc);
        w += inc;
    }
    let values = accumulate(&increments, exit.as_ref());
    Ok(WalkPath {
        dt_w,
        increments,
        values,
        exit,
    })
}

/// Walk built from given increments; exit detected on the grid only (first
/// point strictly outside `[a, b]`), and `W_varsigma` is that grid value.
pub fn walk_from_increments(iv: &ExitInterval, increments: Vec<f64>, dt_w: f64) -> WalkPath {
    let mut exit = None;
    let mut w = 0.0;
    for (j, inc) in increments.iter().enumerate() {
        let y = w + inc;
        if let Some(side) = step_exit::<rand_chacha::ChaCha8Rng>(iv, w, y, dt_w, None) {
            exit = Some(WalkExit {
                step: j + 1,
                time: (j + 1) as f64 * dt_w,
                side,
                pre: *inc,
                post: 0.0,
            });
            break;
        }
        w = y;
    }
    let values = accumulate(&increments, exit.as_ref());
    WalkPath {
        dt_w,
        increments,
        values,
        exit,
    }
}

/// Walk sampled only at `n` coarse points, with no exit; used when the exit
/// interval is so wide that leaving it before the horizon is negligible.
pub fn coarse_walk<R: Rng + ?Sized>(horizon: f64, n: usize, rng: &mut R) -> WalkPath {
    let dt = horizon / n as f64;
    let scale = dt.sqrt();
    let increments: Vec<f64> = (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let values = accumulate(&increments, None);
    WalkPath {
        dt_w: dt,
        increments,
        values,
        exit: None,
    }
}

/// First exit of a fresh walk without storing it: `(time, side)` or `None`
/// when the walk stays inside up to `horizon`.
pub fn sample_exit<R: Rng + ?Sized>(
    iv: &ExitInterval,
    horizon: f64,
    dt_w: f64,
    rng: &mut R,
) -> Result<Option<(f64, ExitSide)>> {
    let n = steps(horizon, dt_w)?;
    let scale = dt_w.sqrt();
    let mut w = 0.0;
    for j in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        let y = w + scale * z;
        if let Some(side) = step_exit(iv, w, y, dt_w, Some(&mut *rng)) {
            return Ok(Some(((j + 1) as f64 * dt_w, side)));
        }
        w = y;
    }
    Ok(None)
}

/// Mirror of the walk at its exit: `-W` up to the exit, `W - 2 W_varsigma`
/// afterwards. Applying it twice gives back the original path bit for bit.
pub fn reflect_at_exit(w: &WalkPath) -> WalkPath {
    let cut = w.exit.map(|e| e.step - 1).unwrap_or(w.increments.len());
    let mut increments = Vec::with_capacity(w.increments.len());
    for (j, inc) in w.increments.iter().enumerate() {
        if j < cut {
            increments.push(-inc);
        } else if j == cut {
            let e = w.exit.expect("cut before the end implies an exit");
            increments.push(-e.pre + e.post);
        } else {
            increments.push(*inc);
        }
    }
    let exit = w.exit.map(|e| WalkExit {
        side: e.side.flipped(),
        pre: -e.pre,
        ..e
    });
    let values = accumulate(&increments, exit.as_ref());
    WalkPath {
        dt_w: w.dt_w,
        increments,
        values,
        exit,
    }
}

/// First grid time at which `|W|` reaches `level`.
pub fn symmetric_exit_time(w: &WalkPath, level: f64) -> Option<f64> {
    w.values
        .iter()
        .position(|v| v.abs() >= level)
        .map(|i| i as f64 * w.dt_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iv(a: f64, b: f64) -> ExitInterval {
        ExitInterval::new(a, b).unwrap()
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(hitting_tail_bound(0.0, 3.0), 0.0);
        assert_abs_diff_eq!(hitting_tail_bound(1.0, 1.0 / (2.0 * PI)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hitting_tail_bound(1.0, 2.0 * PI), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(hitting_tail_bound(1.0, 2.0 * PI), 0.1592, epsilon = 1e-4);
    }

    #[test]
    fn exact_tail_matches_density_integral() {
        // P(D_a > t) = 1 - int_0^t g_a(u) du
        for t in [0.5, 1.0, 2.0] {
            let n = 200_000;
            let h = t / n as f64;
            let mass: f64 = (0..n).map(|i| hitting_density(1.0, (i as f64 + 0.5) * h)).sum::<f64>() * h;
            assert_abs_diff_eq!(1.0 - mass, hitting_tail_exact(1.0, t), epsilon = 1e-6);
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(hitting_density(1.0, 0.0), 0.0);
        assert!(hitting_density(1.0, 1e-4) < 1e-300);
        assert_abs_diff_eq!(hitting_density(1.0, 1.0), (-0.5f64).exp() / (2.0 * PI).sqrt(), epsilon = 1e-15);
        // with u = 1/s^2 the integrand becomes a smooth Gaussian in s
        let n = 400_000;
        let h = 40.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) * h;
                hitting_density(1.0, 1.0 / (s * s)) * 2.0 / (s * s * s)
            })
            .sum::<f64>()
            * h;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn density_matches_simulated_hits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let up = ExitInterval::new(f64::NEG_INFINITY, 1.0).unwrap();
        let trials = 100_000;
        let delta = 0.2;
        let mut hits = 0usize;
        for _ in 0..trials {
            if let Some((t, _)) = sample_exit(&up, 1.0 + delta, 1e-3, &mut rng).unwrap() {
                if t > 1.0 {
                    hits += 1;
                }
            }
        }
        let p = hits as f64 / trials as f64;
        let rate = p / delta;
        let se = (p * (1.0 - p) / trials as f64).sqrt() / delta;
        // the window average of the density, not its value at 1
        let n = 10_000;
        let avg: f64 = (0..n)
            .map(|i| hitting_density(1.0, 1.0 + (i as f64 + 0.5) * delta / n as f64))
            .sum::<f64>()
            / n as f64;
        assert!((rate - avg).abs() < 3.0 * se + 5e-3, "{rate} vs {avg}");
        assert!((hitting_density(1.0, 1.0) - 0.2420).abs() < 1e-4);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(exit_mean(&iv(-1.0, 1.0)), 1.0);
        assert_eq!(exit_mean(&iv(-0.5, 1.0)), 0.5);
        assert!(exit_mean(&iv(-1e-12, 1.0)) < 1e-11);
        assert_eq!(exit_hits_upper_prob(&iv(-1.0, 1.0)), 0.5);
        assert_abs_diff_eq!(exit_hits_upper_prob(&iv(-1.0, 2.0)), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(exit_hits_upper_prob(&iv(-2.0, 1.0)), 2.0 / 3.0, epsilon = 1e-15);

        assert_abs_diff_eq!(exit_mgf_neg(&iv(-1.0, 1.0), 1e-12).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(exit_mgf_neg(&iv(-1.0, 1.0), 0.5).unwrap(), 1.0 / 1f64.cosh(), epsilon = 1e-15);
        assert_abs_diff_eq!(exit_mgf_neg(&iv(-1.0, 1.0), 0.5).unwrap(), 0.6481, epsilon = 1e-4);
        assert_abs_diff_eq!(exit_mgf_neg(&iv(-1.0, 2.0), 2.0).unwrap(), 0.1533, epsilon = 1e-4);

        assert_abs_diff_eq!(exit_mgf_pos(&iv(-1.0, 1.0), 1e-12).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(exit_mgf_pos(&iv(-1.0, 1.0), 0.5).unwrap(), 1.8508, epsilon = 1e-4);
        assert!(matches!(exit_mgf_pos(&iv(-1.0, 1.0), 1.3), Err(CouplingError::Domain(_))));

        assert_abs_diff_eq!(exit_weighted_bound(&iv(-1.0, 1.0), 1e-12).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(exit_weighted_bound(&iv(-1.0, 1.0), 0.5).unwrap(), 3.4255, epsilon = 1e-4);
        let w = exit_weighted_bound(&iv(-2.0, 2.0), 0.1).unwrap();
        assert_abs_diff_eq!(w, 4.0 / (0.05f64.sqrt() * 4.0).cos().powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(w, 10.25, epsilon = 0.06);
        assert!(exit_weighted_bound(&iv(-1.0, 1.0), 1.3).is_err());
    }

    #[test]
    fn interval_validation() {
        assert!(ExitInterval::new(0.0, 1.0).is_err());
        assert!(ExitInterval::new(-1.0, 0.0).is_err());
        assert!(ExitInterval::new(f64::NAN, 1.0).is_err());
        assert!(exit_mgf_neg(&ExitInterval::unbounded(), 0.5).is_err());
    }

    #[test]
    fn unbounded_interval_never_exits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = sample_walk_with_exit(&ExitInterval::unbounded(), 1.0, 1e-3, &mut rng).unwrap();
        assert!(w.exit.is_none());
        assert_eq!(w.values.len(), 1001);
    }

    #[test]
    fn forced_increments_exit_on_upper_side() {
        let w = walk_from_increments(&iv(-1.0, 0.5), vec![0.5; 4], 0.25);
        let e = w.exit.unwrap();
        assert_eq!(e.time, 0.5);
        assert_eq!(e.side, ExitSide::Upper);
        assert_eq!(w.exit_value(), Some(1.0));
        assert_eq!(w.end_value(), 2.0);
    }

    #[test]
    fn reflection_examples() {
        let w = walk_from_increments(&iv(-10.0, 10.0), vec![0.1, -0.3, 0.2], 0.1);
        let r = reflect_at_exit(&w);
        for (a, b) in w.values.iter().zip(&r.values) {
            assert_eq!(*a, -*b);
        }
        let w = walk_from_increments(&iv(-1.0, 0.5), vec![0.5, 0.5, 0.25, -0.75], 0.25);
        let c = w.exit_value().unwrap();
        let r = reflect_at_exit(&w);
        let s = w.exit.unwrap().step;
        for i in s + 1..w.values.len() {
            assert_abs_diff_eq!(r.values[i], w.values[i] - 2.0 * c, epsilon = 1e-15);
        }
    }

    #[test]
    fn mean_exit_time_of_symmetric_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i = iv(-1.0, 1.0);
        let trials = 20_000;
        let ts: Vec<f64> = (0..trials)
            .map(|_| sample_exit(&i, 1e3, 1e-3, &mut rng).unwrap().unwrap().0)
            .collect();
        let m = ts.iter().sum::<f64>() / trials as f64;
        let sd = (ts.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        // grid exit times sit up to one step late
        assert!((m - 1.0).abs() < 3.0 * sd / (trials as f64).sqrt() + 1e-3, "mean {m}");
    }

    #[test]
    fn reflected_increments_are_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dt = 1e-4;
        let mut incs = Vec::new();
        while incs.len() < 10_000 {
            let w = sample_walk_with_exit(&iv(-0.5, 0.5), 1.0, dt, &mut rng).unwrap();
            let r = reflect_at_exit(&w);
            // every 100th increment keeps the sample nearly independent of the exit step
            incs.extend(r.increments.iter().step_by(100).map(|x| x / dt.sqrt()));
        }
        let mut v = incs;
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as f64;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        let d = v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = normal.cdf(*x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the Kolmogorov statistic
        assert!(d * n.sqrt() < 1.63, "KS statistic {d}");
    }

    fn arb_walk() -> impl Strategy<Value = (WalkPath, bool)> {
        (any::<u64>(), 0.05f64..2.0, 0.05f64..2.0, any::<bool>()).prop_map(|(seed, a, b, sampled)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let i = iv(-a, b);
            let w = if sampled {
                sample_walk_with_exit(&i, 1.0, 1e-3, &mut rng).unwrap()
            } else {
                let incs = crate::sde::normal_increments(1000, 1e-3f64.sqrt(), &mut rng);
                walk_from_increments(&i, incs, 1e-3)
            };
            (w, sampled)
        })
    }

    proptest! {
        #[test]
        fn double_reflection_is_identity((w, _) in arb_walk()) {
            let back = reflect_at_exit(&reflect_at_exit(&w));
            prop_assert_eq!(back, w);
        }

        #[test]
        fn reflection_gap_equals_stopped_walk((w, _) in arb_walk()) {
            let r = reflect_at_exit(&w);
            let gap = 0.5 * (w.end_value() - r.end_value());
            prop_assert!((gap - w.stopped_end()).abs() < 1e-12);
            if w.exit.is_none() {
                prop_assert_eq!(r.end_value(), -w.end_value());
            }
        }

        #[test]
        fn exit_point_lies_outside_or_on_boundary((w, sampled) in arb_walk()) {
            prop_assert_eq!(w.values[0], 0.0);
            prop_assert_eq!(w.values.len(), w.increments.len() + 1);
            if let Some(e) = w.exit {
                let c = w.exit_value().unwrap();
                let (lo, hi) = (w.values[..e.step].iter().cloned().fold(f64::INFINITY, f64::min),
                                w.values[..e.step].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                // before the exit step the walk is inside
                prop_assert!(lo > -2.0 - 1e-12 && hi < 2.0 + 1e-12);
                if sampled {
                    prop_assert!(c.abs() <= 2.0 + 1e-12);
                }
            }
        }
    }
}
