//! Constant-curvature model surfaces (sphere, hyperbolic plane, Euclidean
//! plane) in polar coordinates around a reference pole, together with the
//! swept-area bookkeeping that drives the fiber coordinate.
//!
//! Every helper dispatches on [`Curvature`]; the `k = 0` case is always the
//! literal limit of the curved formulas.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CouplingError, Result};

pub const FOUR_PI: f64 = 4.0 * PI;

/// Sectional curvature of the model surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Curvature {
    /// `k = -1`: hyperbolic plane, base of `SL(2, R)`.
    Hyperbolic,
    /// `k = 0`: Euclidean plane, base of the Heisenberg group.
    Flat,
    /// `k = +1`: unit sphere, base of `SU(2)`.
    Spherical,
}

impl TryFrom<i8> for Curvature {
    type Error = CouplingError;

    fn try_from(k: i8) -> Result<Self> {
        match k {
            -1 => Ok(Curvature::Hyperbolic),
            0 => Ok(Curvature::Flat),
            1 => Ok(Curvature::Spherical),
            other => Err(CouplingError::invalid(
                "k",
                other as f64,
                "curvature must be -1, 0 or 1",
            )),
        }
    }
}

impl From<Curvature> for i8 {
    fn from(k: Curvature) -> i8 {
        k.value()
    }
}

impl std::fmt::Display for Curvature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Curvature {
    pub fn value(self) -> i8 {
        match self {
            Curvature::Hyperbolic => -1,
            Curvature::Flat => 0,
            Curvature::Spherical => 1,
        }
    }

    /// `sin(sqrt(k) phi) / sqrt(k)`.
    #[inline]
    pub fn sin_k(self, phi: f64) -> f64 {
        match self {
            Curvature::Spherical => phi.sin(),
            Curvature::Hyperbolic => phi.sinh(),
            Curvature::Flat => phi,
        }
    }

    /// `cos(sqrt(k) phi)`.
    #[inline]
    pub fn cos_k(self, phi: f64) -> f64 {
        match self {
            Curvature::Spherical => phi.cos(),
            Curvature::Hyperbolic => phi.cosh(),
            Curvature::Flat => 1.0,
        }
    }

    /// Area form `(1 - cos(sqrt(k) phi)) / k`, written with half angles so it
    /// stays accurate for small `phi`.
    #[inline]
    pub fn area_form(self, phi: f64) -> f64 {
        match self {
            Curvature::Spherical => {
                let s = (0.5 * phi).sin();
                2.0 * s * s
            }
            Curvature::Hyperbolic => {
                let s = (0.5 * phi).sinh();
                2.0 * s * s
            }
            Curvature::Flat => 0.5 * phi * phi,
        }
    }

    /// Upper end of the radial range (`pi` on the sphere, unbounded otherwise).
    pub fn max_radius(self) -> f64 {
        match self {
            Curvature::Spherical => PI,
            _ => f64::INFINITY,
        }
    }
}

/// Point of the model surface in polar coordinates around the reference pole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub phi: f64,
    pub theta: f64,
}

impl SurfacePoint {
    pub fn new(k: Curvature, phi: f64, theta: f64) -> Result<Self> {
        if !phi.is_finite() || phi < 0.0 || phi >= k.max_radius() {
            return Err(CouplingError::invalid(
                "phi",
                phi,
                format!("radial coordinate must lie in [0, {})", k.max_radius()),
            ));
        }
        if !theta.is_finite() {
            return Err(CouplingError::invalid("theta", theta, "must be finite"));
        }
        Ok(SurfacePoint {
            phi,
            theta: reduce_angle(theta),
        })
    }

    /// Builds a point from a possibly unwrapped angle without validation.
    pub fn from_unwrapped(phi: f64, theta: f64) -> Self {
        SurfacePoint {
            phi,
            theta: reduce_angle(theta),
        }
    }

    pub fn pole() -> Self {
        SurfacePoint {
            phi: 0.0,
            theta: 0.0,
        }
    }
}

/// Point of the three-dimensional group in cylindrical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylPoint {
    pub surface: SurfacePoint,
    /// Fiber coordinate, always the representative in `(-2pi, 2pi]`.
    pub z: f64,
}

impl CylPoint {
    pub fn new(k: Curvature, phi: f64, theta: f64, z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(CouplingError::invalid("z", z, "must be finite"));
        }
        Ok(CylPoint {
            surface: SurfacePoint::new(k, phi, theta)?,
            z: wrap_mod_4pi(z),
        })
    }
}

/// Value together with a flag raised when a degenerate configuration was
/// resolved by convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flagged: bool,
}

/// Reduces an angle into `[0, 2pi)`.
#[inline]
pub fn reduce_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Representative of `x` modulo `4pi` in `(-2pi, 2pi]`.
#[inline]
pub fn wrap_mod_4pi(x: f64) -> f64 {
    let n = ((x - 2.0 * PI) / FOUR_PI).ceil();
    let r = x - FOUR_PI * n;
    // rounding can leave r a hair outside the half-open range
    if r <= -2.0 * PI {
        r + FOUR_PI
    } else if r > 2.0 * PI {
        r - FOUR_PI
    } else {
        r
    }
}

/// Representative of `x` modulo `4pi` in `[0, 4pi)`.
#[inline]
pub fn wrap_pos_4pi(x: f64) -> f64 {
    let r = x.rem_euclid(FOUR_PI);
    if r >= FOUR_PI {
        0.0
    } else {
        r
    }
}

/// Geodesic distance between two surface points.
///
/// Uses the half-angle form of the law of cosines,
/// `s(rho/2)^2 = s((phi-phi')/2)^2 + s(phi) s(phi') sin^2(dtheta/2)` with
/// `s = sin_k`, which is algebraically identical but does not lose
/// precision for nearby points.
pub fn riemannian_distance(k: Curvature, p: SurfacePoint, q: SurfacePoint) -> f64 {
    let half_dphi = k.sin_k(0.5 * (p.phi - q.phi));
    let half_dtheta = (0.5 * (p.theta - q.theta)).sin();
    let h = half_dphi * half_dphi + k.sin_k(p.phi) * k.sin_k(q.phi) * half_dtheta * half_dtheta;
    let h = h.max(0.0);
    match k {
        Curvature::Spherical => 2.0 * h.sqrt().min(1.0).asin(),
        Curvature::Hyperbolic => 2.0 * h.sqrt().asinh(),
        Curvature::Flat => 2.0 * h.sqrt(),
    }
}

/// Embedding of a surface point: unit sphere, upper hyperboloid sheet, or the
/// plane `z = 0`.
pub fn embed(k: Curvature, p: SurfacePoint) -> [f64; 3] {
    let (st, ct) = p.theta.sin_cos();
    match k {
        Curvature::Spherical => {
            let (sp, cp) = p.phi.sin_cos();
            [sp * ct, sp * st, cp]
        }
        Curvature::Hyperbolic => {
            let sp = p.phi.sinh();
            [sp * ct, sp * st, p.phi.cosh()]
        }
        Curvature::Flat => [p.phi * ct, p.phi * st, 0.0],
    }
}

/// Inverse of [`embed`]; flags points at the pole, where `theta` is set to 0.
pub fn from_embedding(k: Curvature, v: [f64; 3]) -> Flagged<SurfacePoint> {
    let r = v[0].hypot(v[1]);
    let phi = match k {
        Curvature::Spherical => r.atan2(v[2]),
        Curvature::Hyperbolic => r.asinh(),
        Curvature::Flat => r,
    };
    if r <= 1e-15 {
        Flagged {
            value: SurfacePoint { phi, theta: 0.0 },
            flagged: true,
        }
    } else {
        Flagged {
            value: SurfacePoint::from_unwrapped(phi, v[1].atan2(v[0])),
            flagged: false,
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance between embedded points.
fn embedded_distance(k: Curvature, a: [f64; 3], b: [f64; 3]) -> f64 {
    match k {
        Curvature::Spherical => norm(cross(a, b)).atan2(dot(a, b)),
        Curvature::Hyperbolic => {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let q = (d[0] * d[0] + d[1] * d[1] - d[2] * d[2]).max(0.0);
            2.0 * (0.5 * q.sqrt()).asinh()
        }
        Curvature::Flat => (a[0] - b[0]).hypot(a[1] - b[1]),
    }
}

/// Area from side lengths: l'Huilier on the sphere and its hyperbolic
/// counterpart (`tanh` in place of `tan`).
fn area_from_sides(k: Curvature, a: f64, b: f64, c: f64) -> f64 {
    let s = 0.5 * (a + b + c);
    let f = |x: f64| match k {
        Curvature::Spherical => (0.5 * x.max(0.0)).tan(),
        _ => (0.5 * x.max(0.0)).tanh(),
    };
    let prod = f(s) * f(s - a) * f(s - b) * f(s - c);
    4.0 * prod.max(0.0).sqrt().atan()
}

fn unsigned_area_embedded(k: Curvature, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    match k {
        Curvature::Flat => {
            let u = [b[0] - a[0], b[1] - a[1], 0.0];
            let v = [c[0] - a[0], c[1] - a[1], 0.0];
            0.5 * cross(u, v)[2].abs()
        }
        _ => area_from_sides(
            k,
            embedded_distance(k, b, c),
            embedded_distance(k, a, c),
            embedded_distance(k, a, b),
        ),
    }
}

fn orientation(k: Curvature, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    match k {
        Curvature::Flat => {
            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        }
        _ => dot(a, cross(b, c)),
    }
}

const DEGENERATE_AREA: f64 = 1e-14;

/// Area of the geodesic triangle with the given vertices: spherical excess,
/// hyperbolic defect or planar area.
///
/// Collinear or coincident vertices give `0` with the flag raised. Antipodal
/// vertices on the sphere are rejected.
pub fn triangle_area(
    k: Curvature,
    a: SurfacePoint,
    b: SurfacePoint,
    c: SurfacePoint,
) -> Result<Flagged<f64>> {
    if k == Curvature::Spherical {
        for (p, q) in [(a, b), (b, c), (a, c)] {
            if riemannian_distance(k, p, q) > PI - 1e-9 {
                return Err(CouplingError::Degenerate(
                    "antipodal vertices on the sphere".into(),
                ));
            }
        }
    }
    let area = unsigned_area_embedded(k, embed(k, a), embed(k, b), embed(k, c));
    if area <= DEGENERATE_AREA {
        Ok(Flagged {
            value: 0.0,
            flagged: true,
        })
    } else {
        Ok(Flagged {
            value: area,
            flagged: false,
        })
    }
}

/// Signed area of the triangle `(a, b, c)`: positive when the vertices turn
/// counterclockwise (the direction in which `theta` increases).
pub fn signed_triangle_area(k: Curvature, a: SurfacePoint, b: SurfacePoint, c: SurfacePoint) -> f64 {
    signed_area_embedded(k, embed(k, a), embed(k, b), embed(k, c))
}

fn signed_area_embedded(k: Curvature, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let area = unsigned_area_embedded(k, a, b, c);
    let o = orientation(k, a, b, c);
    if o > 0.0 {
        area
    } else if o < 0.0 {
        -area
    } else {
        0.0
    }
}

/// Sector area swept relative to the pole when the angle moves by `dtheta` at
/// radius `phi`.
#[inline]
pub fn swept_area_increment(k: Curvature, phi: f64, dtheta: f64) -> f64 {
    k.area_form(phi) * dtheta
}

/// Signed area swept relative to the pole by the geodesic polygon through
/// `path`, i.e. the sum of the signed triangles `(pole, x_i, x_{i+1})`.
pub fn swept_polygon_area(k: Curvature, path: &[SurfacePoint]) -> f64 {
    let pole = embed(k, SurfacePoint::pole());
    let mut total = 0.0;
    let mut prev = match path.first() {
        Some(p) => embed(k, *p),
        None => return 0.0,
    };
    for p in &path[1..] {
        let cur = embed(k, *p);
        total += signed_area_embedded(k, pole, prev, cur);
        prev = cur;
    }
    total
}

/// Carnot-Caratheodory distance proxy `sqrt(phi^2 + |z|)` from the identity.
pub fn dcc_proxy(p: CylPoint) -> f64 {
    (p.surface.phi * p.surface.phi + p.z.abs()).sqrt()
}

/// Third cylindrical coordinate of `x^{-1} x'`, reduced to `(-2pi, 2pi]`.
///
/// A degenerate triangle contributes zero area.
pub fn zeta_from_states(k: Curvature, x: CylPoint, xp: CylPoint) -> Result<f64> {
    let dz = xp.z - x.z;
    if x.surface == xp.surface {
        return Ok(wrap_mod_4pi(dz));
    }
    let area = triangle_area(k, x.surface, xp.surface, SurfacePoint::pole())?;
    let sign = sign_of(x.surface.theta - xp.surface.theta);
    Ok(wrap_mod_4pi(dz + sign * area.value))
}

fn sign_of(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Direct isometry of the model surface sending a reference frame `(N, e)` to
/// the standard frame `(N0, e0)`. Coordinates relative to `(N, e)` are the
/// standard coordinates of the image point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrameIsometry {
    /// Rotation of the unit sphere.
    Sphere { rot: [[f64; 3]; 3] },
    /// Unit-determinant Mobius map of the upper half-plane; the standard pole
    /// is `i`.
    Hyperbolic { mobius: [[f64; 2]; 2] },
    /// Rigid motion `x -> R(angle) x + shift`.
    Plane { angle: f64, shift: [f64; 2] },
}

type C = (f64, f64);

fn c_mul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn c_div(a: C, b: C) -> C {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

fn disk_to_half_plane(w: C) -> C {
    // z = i (1 + w) / (1 - w)
    c_mul((0.0, 1.0), c_div((1.0 + w.0, w.1), (1.0 - w.0, -w.1)))
}

fn half_plane_to_disk(z: C) -> C {
    c_div((z.0, z.1 - 1.0), (z.0, z.1 + 1.0))
}

impl FrameIsometry {
    pub fn identity(k: Curvature) -> Self {
        match k {
            Curvature::Spherical => FrameIsometry::Sphere {
                rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            },
            Curvature::Hyperbolic => FrameIsometry::Hyperbolic {
                mobius: [[1.0, 0.0], [0.0, 1.0]],
            },
            Curvature::Flat => FrameIsometry::Plane {
                angle: 0.0,
                shift: [0.0, 0.0],
            },
        }
    }

    pub fn curvature(&self) -> Curvature {
        match self {
            FrameIsometry::Sphere { .. } => Curvature::Spherical,
            FrameIsometry::Hyperbolic { .. } => Curvature::Hyperbolic,
            FrameIsometry::Plane { .. } => Curvature::Flat,
        }
    }

    /// Frame with the standard pole and reference direction turned by
    /// `alpha`; angles read in it are shifted by `-alpha`.
    pub fn pole_rotation(k: Curvature, alpha: f64) -> Self {
        let (s, c) = (-alpha).sin_cos();
        match k {
            Curvature::Spherical => FrameIsometry::Sphere {
                rot: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            },
            Curvature::Hyperbolic => {
                // [[cos b, sin b], [-sin b, cos b]] turns the disk by 2b
                let (sb, cb) = (0.5 * alpha).sin_cos();
                FrameIsometry::Hyperbolic {
                    mobius: [[cb, -sb], [sb, cb]],
                }
            }
            Curvature::Flat => FrameIsometry::Plane {
                angle: -alpha,
                shift: [0.0, 0.0],
            },
        }
    }

    /// Frame whose pole is `x0`, with reference direction transported along
    /// the geodesic from `x0` to the standard pole.
    pub fn recentered_at(k: Curvature, x0: SurfacePoint) -> Self {
        match k {
            Curvature::Spherical => {
                let v = embed(k, x0);
                let n = [0.0, 0.0, 1.0];
                let axis = cross(v, n);
                let s = norm(axis);
                let c = dot(v, n);
                if s < 1e-15 {
                    return if c > 0.0 {
                        FrameIsometry::identity(k)
                    } else {
                        FrameIsometry::Sphere {
                            rot: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
                        }
                    };
                }
                let u = [axis[0] / s, axis[1] / s, axis[2] / s];
                FrameIsometry::Sphere {
                    rot: rodrigues(u, s, c),
                }
            }
            Curvature::Hyperbolic => {
                let w = x0.theta.sin_cos();
                let r = (0.5 * x0.phi).tanh();
                let z = disk_to_half_plane((r * w.1, r * w.0));
                let sy = z.1.sqrt();
                FrameIsometry::Hyperbolic {
                    mobius: [[1.0 / sy, -z.0 / sy], [0.0, sy]],
                }
            }
            Curvature::Flat => {
                let (s, c) = x0.theta.sin_cos();
                FrameIsometry::Plane {
                    angle: 0.0,
                    shift: [-x0.phi * c, -x0.phi * s],
                }
            }
        }
    }

    pub fn random<R: Rng + ?Sized>(k: Curvature, rng: &mut R) -> Self {
        match k {
            Curvature::Spherical => {
                let mut q = [0.0f64; 4];
                for v in q.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let n = (q.iter().map(|x| x * x).sum::<f64>()).sqrt();
                let [w, x, y, z] = q.map(|v| v / n);
                FrameIsometry::Sphere {
                    rot: [
                        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
                        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
                        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
                    ],
                }
            }
            Curvature::Hyperbolic => {
                let pole = SurfacePoint::from_unwrapped(
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..TAU),
                );
                FrameIsometry::pole_rotation(k, rng.gen_range(0.0..TAU))
                    .compose(&FrameIsometry::recentered_at(k, pole))
            }
            Curvature::Flat => FrameIsometry::Plane {
                angle: rng.gen_range(0.0..TAU),
                shift: [StandardNormal.sample(rng), StandardNormal.sample(rng)],
            },
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &FrameIsometry) -> FrameIsometry {
        match (self, other) {
            (FrameIsometry::Sphere { rot: a }, FrameIsometry::Sphere { rot: b }) => {
                let mut m = [[0.0; 3]; 3];
                for (i, row) in m.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (0..3).map(|l| a[i][l] * b[l][j]).sum();
                    }
                }
                FrameIsometry::Sphere { rot: m }
            }
            (FrameIsometry::Hyperbolic { mobius: a }, FrameIsometry::Hyperbolic { mobius: b }) => {
                let mut m = [[0.0; 2]; 2];
                for (i, row) in m.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (0..2).map(|l| a[i][l] * b[l][j]).sum();
                    }
                }
                FrameIsometry::Hyperbolic { mobius: m }
            }
            (
                FrameIsometry::Plane { angle: a1, shift: s1 },
                FrameIsometry::Plane { angle: a2, shift: s2 },
            ) => {
                let (s, c) = a1.sin_cos();
                FrameIsometry::Plane {
                    angle: a1 + a2,
                    shift: [c * s2[0] - s * s2[1] + s1[0], s * s2[0] + c * s2[1] + s1[1]],
                }
            }
            _ => panic!("composing frame isometries of different curvature"),
        }
    }

    pub fn inverse(&self) -> FrameIsometry {
        match self {
            FrameIsometry::Sphere { rot } => {
                let mut t = [[0.0; 3]; 3];
                for (i, row) in t.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = rot[j][i];
                    }
                }
                FrameIsometry::Sphere { rot: t }
            }
            FrameIsometry::Hyperbolic { mobius: m } => FrameIsometry::Hyperbolic {
                mobius: [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]],
            },
            FrameIsometry::Plane { angle, shift } => {
                let (s, c) = (-angle).sin_cos();
                FrameIsometry::Plane {
                    angle: -angle,
                    shift: [-(c * shift[0] - s * shift[1]), -(s * shift[0] + c * shift[1])],
                }
            }
        }
    }

    /// Largest entrywise deviation from the identity transform.
    pub fn distance_from_identity(&self) -> f64 {
        match self {
            FrameIsometry::Sphere { rot } => {
                let mut d: f64 = 0.0;
                for (i, row) in rot.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        let e = if i == j { 1.0 } else { 0.0 };
                        d = d.max((v - e).abs());
                    }
                }
                d
            }
            FrameIsometry::Hyperbolic { mobius: m } => {
                // a Mobius matrix and its negative act identically
                let s = if m[0][0] + m[1][1] < 0.0 { -1.0 } else { 1.0 };
                [
                    (s * m[0][0] - 1.0).abs(),
                    (s * m[0][1]).abs(),
                    (s * m[1][0]).abs(),
                    (s * m[1][1] - 1.0).abs(),
                ]
                .into_iter()
                .fold(0.0, f64::max)
            }
            FrameIsometry::Plane { angle, shift } => {
                let a = angle.rem_euclid(TAU);
                a.min(TAU - a).max(shift[0].abs()).max(shift[1].abs())
            }
        }
    }

    /// Image of a surface point under the isometry.
    pub fn apply(&self, p: SurfacePoint) -> Flagged<SurfacePoint> {
        let k = self.curvature();
        match self {
            FrameIsometry::Sphere { rot } => {
                let v = embed(k, p);
                let w = [
                    dot(rot[0], v),
                    dot(rot[1], v),
                    dot(rot[2], v),
                ];
                from_embedding(k, w)
            }
            FrameIsometry::Hyperbolic { mobius: m } => {
                let r = (0.5 * p.phi).tanh();
                let (s, c) = p.theta.sin_cos();
                let z = disk_to_half_plane((r * c, r * s));
                let num = (m[0][0] * z.0 + m[0][1], m[0][0] * z.1);
                let den = (m[1][0] * z.0 + m[1][1], m[1][0] * z.1);
                let w = half_plane_to_disk(c_div(num, den));
                let rad = w.0.hypot(w.1).min(1.0 - 1e-16);
                let phi = 2.0 * rad.atanh();
                if rad <= 1e-15 {
                    Flagged {
                        value: SurfacePoint { phi, theta: 0.0 },
                        flagged: true,
                    }
                } else {
                    Flagged {
                        value: SurfacePoint::from_unwrapped(phi, w.1.atan2(w.0)),
                        flagged: false,
                    }
                }
            }
            FrameIsometry::Plane { angle, shift } => {
                let v = embed(k, p);
                let (s, c) = angle.sin_cos();
                let w = [c * v[0] - s * v[1] + shift[0], s * v[0] + c * v[1] + shift[1], 0.0];
                from_embedding(k, w)
            }
        }
    }
}

fn rodrigues(u: [f64; 3], s: f64, c: f64) -> [[f64; 3]; 3] {
    let t = 1.0 - c;
    let [x, y, z] = u;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Coordinates of `p` relative to the frame encoded by `frame`.
///
/// A point that lands on the new pole is returned as `(0, 0)` with the flag
/// raised.
pub fn to_frame(k: Curvature, frame: &FrameIsometry, p: SurfacePoint) -> Result<Flagged<SurfacePoint>> {
    if frame.curvature() != k {
        return Err(CouplingError::UnsupportedCurvature(
            k.value(),
            "frame isometry belongs to another model surface",
        ));
    }
    Ok(frame.apply(p))
}
