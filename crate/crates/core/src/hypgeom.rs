//! Hyperbolic space ℍ^d in the hyperboloid model.
//!
//! Points live on the upper sheet `x₀² − x₁² − … − x_d² = 1`; unit tangent
//! vectors `v` at `p` satisfy `⟨p, v⟩ = 0` and `⟨v, v⟩ = −1` for the Minkowski
//! pairing `⟨x, y⟩ = x₀y₀ − Σ xᵢyᵢ`. The geodesic flow is the linear map
//! `(p, v) ↦ (cosh t·p + sinh t·v, sinh t·p + cosh t·v)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_real, AdaptiveSettings, CompensatedSum, GaussLegendre};

/// Coordinate storage; inline up to d = 5.
pub type Coords = SmallVec<[f64; 6]>;

/// Tolerance on the Minkowski constraints, relative to the squared size of the coordinates.
pub const CONSTRAINT_TOL: f64 = 1e-12;

const DRIFT_TRIGGER: f64 = 1e-11;

/// Dimension of the hyperbolic space, d ≥ 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dim(u32);

impl Dim {
    pub fn new(d: u32) -> Result<Self> {
        if d < 2 {
            return domain(format!("dimension must be at least 2, got {d}"));
        }
        Ok(Self(d))
    }

    pub const TWO: Dim = Dim(2);
    pub const THREE: Dim = Dim(3);

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// `(d − 1)/2`, the exponential growth rate of spheres and the rate of escape.
    #[inline]
    pub fn half_gap(self) -> f64 {
        (self.as_f64() - 1.0) / 2.0
    }

    /// Bottom of the continuous spectrum of ℍ^d, `((d − 1)/2)²`.
    #[inline]
    pub fn sigma(self) -> f64 {
        let h = self.half_gap();
        h * h
    }

    /// Area of the unit (d−1)-sphere in ℝ^d, `2π^{d/2}/Γ(d/2)`.
    pub fn unit_sphere_area(self) -> f64 {
        let d = self.as_f64();
        2.0 * PI.powf(d / 2.0) / gamma(d / 2.0)
    }
}

impl serde::Serialize for Dim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.0)
    }
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Minkowski pairing `x₀y₀ − Σ xᵢyᵢ`.
#[inline]
pub fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut s = x[0] * y[0];
    for i in 1..x.len() {
        s -= x[i] * y[i];
    }
    s
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// A point of ℍ^d on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint {
    coords: Coords,
}

impl HPoint {
    pub fn origin(dim: Dim) -> Self {
        let mut coords = Coords::from_elem(0.0, dim.get() as usize + 1);
        coords[0] = 1.0;
        Self { coords }
    }

    /// Validates the hyperboloid constraint.
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.len() < 3 {
            return domain("a point of ℍ^d needs at least 3 coordinates");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return domain("non-finite coordinate");
        }
        let n = minkowski(coords, coords);
        let scale = sup_norm(coords).powi(2).max(1.0);
        if (n - 1.0).abs() > CONSTRAINT_TOL * scale || coords[0] < 1.0 - CONSTRAINT_TOL {
            return Err(Error::Invariant(format!("not on the upper hyperboloid: ⟨p,p⟩ = {n}, x0 = {}", coords[0])));
        }
        Ok(Self { coords: coords.into() })
    }

    /// Builds a point without validation, rescaling onto the hyperboloid.
    pub(crate) fn from_raw(coords: Coords) -> Self {
        let mut p = Self { coords };
        p.renormalize();
        p
    }

    /// Point at distance `r` from the origin along the unit Euclidean direction `dir`
    /// (length d).
    pub fn from_polar(r: f64, dir: &[f64]) -> Self {
        let mut coords = Coords::with_capacity(dir.len() + 1);
        coords.push(r.cosh());
        let s = r.sinh();
        coords.extend(dir.iter().map(|u| u * s));
        Self::from_raw(coords)
    }

    pub fn dim(&self) -> Dim {
        Dim(self.coords.len() as u32 - 1)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn minkowski_residual(&self) -> f64 {
        minkowski(&self.coords, &self.coords) - 1.0
    }

    fn renormalize(&mut self) {
        let n = minkowski(&self.coords, &self.coords);
        let s = if self.coords[0] < 0.0 { -1.0 } else { 1.0 } / n.sqrt();
        for c in self.coords.iter_mut() {
            *c *= s;
        }
    }
}

/// A point of the unit tangent bundle of ℍ^d.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTangent {
    base: HPoint,
    dir: Coords,
}

impl UnitTangent {
    pub fn new(base: HPoint, dir: &[f64]) -> Result<Self> {
        if dir.len() != base.coords.len() {
            return domain("tangent vector length does not match the base point");
        }
        let scale = (sup_norm(base.coords()) * sup_norm(dir)).max(1.0).powi(2);
        let nv = minkowski(dir, dir);
        let pv = minkowski(base.coords(), dir);
        if (nv + 1.0).abs() > CONSTRAINT_TOL * scale || pv.abs() > CONSTRAINT_TOL * scale {
            return Err(Error::Invariant(format!("not a unit tangent: ⟨v,v⟩ = {nv}, ⟨p,v⟩ = {pv}")));
        }
        Ok(Self { base, dir: dir.into() })
    }

    /// Unit tangent at the origin pointing along the Euclidean unit vector `u` (length d).
    pub fn at_origin(u: &[f64]) -> Result<Self> {
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if u.len() < 2 || !(norm > 0.0) {
            return domain("direction must be a nonzero vector of length d ≥ 2");
        }
        let dim = Dim::new(u.len() as u32)?;
        let mut dir = Coords::with_capacity(u.len() + 1);
        dir.push(0.0);
        dir.extend(u.iter().map(|x| x / norm));
        Ok(Self { base: HPoint::origin(dim), dir })
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn dir(&self) -> &[f64] {
        &self.dir
    }

    pub fn into_base(self) -> HPoint {
        self.base
    }

    /// Maximum violation of the two tangent constraints.
    pub fn constraint_residual(&self) -> f64 {
        let nv = minkowski(&self.dir, &self.dir) + 1.0;
        let pv = minkowski(self.base.coords(), &self.dir);
        self.base.minkowski_residual().abs().max(nv.abs()).max(pv.abs())
    }

    /// Pulls `(p, v)` back onto the constraint set once accumulated drift
    /// reaches `DRIFT_TRIGGER` (relative to the coordinate scale).
    ///
    /// Correcting on every call is harmful. The Minkowski products are only
    /// known to about eps·|p|², so each correction rescales `p` and `v` by
    /// mismatched amounts of that size, and a later backwards flow cancels
    /// `cosh t·p − sinh t·v` and magnifies the mismatch by `e^{2t}`.
    fn renormalize(&mut self) {
        let (sp, sv) = (sup_norm(self.base.coords()), sup_norm(&self.dir));
        let floor = DRIFT_TRIGGER * sp * sp.max(sv);
        let pp = minkowski(self.base.coords(), self.base.coords()) - 1.0;
        let vv = minkowski(&self.dir, &self.dir) + 1.0;
        let pv = minkowski(self.base.coords(), &self.dir);
        if pp.abs() <= floor && vv.abs() <= floor && pv.abs() <= floor {
            return;
        }
        self.base.renormalize();
        let pv = minkowski(self.base.coords(), &self.dir);
        for (v, p) in self.dir.iter_mut().zip(self.base.coords.iter()) {
            *v -= pv * p;
        }
        let n = (-minkowski(&self.dir, &self.dir)).sqrt();
        for v in self.dir.iter_mut() {
            *v /= n;
        }
    }
}

/// Geodesic flow for time `t` (negative times run the flow backwards).
pub fn geodesic_flow(z: &UnitTangent, t: f64) -> Result<UnitTangent> {
    if !t.is_finite() {
        return domain(format!("flow time must be finite, got {t}"));
    }
    let (s, c) = (t.sinh(), t.cosh());
    let p = z.base.coords();
    let v = &z.dir;
    let base: Coords = p.iter().zip(v.iter()).map(|(p, v)| c * p + s * v).collect();
    let dir: Coords = p.iter().zip(v.iter()).map(|(p, v)| s * p + c * v).collect();
    let mut out = UnitTangent { base: HPoint { coords: base }, dir };
    out.renormalize();
    Ok(out)
}

/// Position reached after flowing for time `t`, without building the tangent.
#[inline]
pub(crate) fn flow_position(z: &UnitTangent, t: f64) -> HPoint {
    let (s, c) = (t.sinh(), t.cosh());
    let coords = z.base.coords.iter().zip(z.dir.iter()).map(|(p, v)| c * p + s * v).collect();
    HPoint::from_raw(coords)
}

/// Hyperbolic distance `arccosh⟨p, q⟩`.
///
/// Close points use the chord form `2·asinh(|p − q|/2)`, which keeps full
/// precision where `arccosh` near 1 does not.
pub fn distance(p: &HPoint, q: &HPoint) -> Result<f64> {
    if p.coords.len() != q.coords.len() {
        return domain("points of different dimensions");
    }
    let pairing = minkowski(p.coords(), q.coords());
    let scale = (sup_norm(p.coords()) * sup_norm(q.coords())).max(1.0);
    // tangents are only renormalized once their drift reaches DRIFT_TRIGGER
    if pairing < 1.0 - 4.0 * DRIFT_TRIGGER * scale {
        return Err(Error::Numeric(format!("Minkowski pairing {pairing} < 1")));
    }
    if pairing > 2.0 {
        return Ok(pairing.acosh());
    }
    let diff: Coords = p.coords.iter().zip(q.coords.iter()).map(|(a, b)| a - b).collect();
    let chord2 = (-minkowski(&diff, &diff)).max(0.0);
    Ok(2.0 * (0.5 * chord2.sqrt()).asinh())
}

/// Volume of a ball of radius `r` in ℍ^d: `Γ_d ∫₀^r sinh^{d−1}(u) du`.
pub fn ball_volume(dim: Dim, r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return domain(format!("radius must be finite and non-negative, got {r}"));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    match dim.get() {
        2 => {
            let h = (0.5 * r).sinh();
            Ok(4.0 * PI * h * h)
        }
        3 => Ok(PI * sinh_minus_identity(2.0 * r)),
        _ => {
            let k = dim.get() as i32 - 1;
            let settings = AdaptiveSettings { tol: 1e-14 * r.sinh().powi(k).max(1e-300) * r, initial_panels: 4, max_levels: 20 };
            let (v, _) = integrate_real(|u| u.sinh().powi(k), 0.0, r, settings)?;
            Ok(dim.unit_sphere_area() * v)
        }
    }
}

/// `sinh x − x` without cancellation for small `x`.
fn sinh_minus_identity(x: f64) -> f64 {
    if x.abs() > 0.5 {
        return x.sinh() - x;
    }
    let x2 = x * x;
    let mut term = x * x2 / 6.0;
    let mut sum = 0.0f64;
    let mut k = 3.0;
    while term.abs() > 1e-18 * sum.abs() {
        sum += term;
        term *= x2 / ((k + 1.0) * (k + 2.0));
        k += 2.0;
    }
    sum
}

/// Area of the geodesic sphere of radius `r`: `Γ_d sinh^{d−1}(r)`.
pub fn sphere_area(dim: Dim, r: f64) -> Result<f64> {
    if !r.is_finite() || r <= 0.0 {
        return domain(format!("sphere radius must be positive, got {r}"));
    }
    Ok(dim.unit_sphere_area() * r.sinh().powi(dim.get() as i32 - 1))
}

/// Minkowski-orthonormal frame of the tangent space at `p`, built by
/// Gram–Schmidt from the spatial axes e₁, …, e_d (then e₀ if a projection
/// degenerates).
pub fn tangent_frame(p: &HPoint) -> Vec<Coords> {
    let n = p.coords.len();
    let mut frame: Vec<Coords> = Vec::with_capacity(n - 1);
    let axes = (1..n).chain(std::iter::once(0));
    for axis in axes {
        if frame.len() == n - 1 {
            break;
        }
        let mut w = Coords::from_elem(0.0, n);
        w[axis] = 1.0;
        let pw = minkowski(p.coords(), &w);
        for (wi, pi) in w.iter_mut().zip(p.coords.iter()) {
            *wi -= pw * pi;
        }
        for e in &frame {
            // ⟨e, e⟩ = −1, so the projection coefficient flips sign.
            let c = -minkowski(e, &w);
            for (wi, ei) in w.iter_mut().zip(e.iter()) {
                *wi -= c * ei;
            }
        }
        let n2 = -minkowski(&w, &w);
        if n2 < 1e-12 {
            continue;
        }
        let inv = 1.0 / n2.sqrt();
        for wi in w.iter_mut() {
            *wi *= inv;
        }
        frame.push(w);
    }
    frame
}

/// Uniform direction on the unit tangent sphere at `p`.
pub fn sample_tangent_uniform<R: Rng + ?Sized>(rng: &mut R, p: &HPoint) -> UnitTangent {
    let frame = tangent_frame(p);
    sample_with_frame(rng, p, &frame)
}

pub(crate) fn sample_with_frame<R: Rng + ?Sized>(rng: &mut R, p: &HPoint, frame: &[Coords]) -> UnitTangent {
    let n = p.coords.len();
    loop {
        let g: SmallVec<[f64; 6]> = (0..frame.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            continue;
        }
        let mut dir = Coords::from_elem(0.0, n);
        for (gi, e) in g.iter().zip(frame) {
            for (d, ei) in dir.iter_mut().zip(e.iter()) {
                *d += gi / norm * ei;
            }
        }
        let mut z = UnitTangent { base: p.clone(), dir };
        z.renormalize();
        return z;
    }
}

const RADIAL_GRID: usize = 4096;

/// Inverse-CDF sampler for the radius of a uniform point in a hyperbolic ball.
///
/// The radial density is ∝ sinh^{d−1}(r) on [0, radius]. The CDF is tabulated
/// on a uniform 4096-point grid; sampling inverts `ψ = CDF^{1/d}`, which is
/// smooth and nearly linear in `r`, with monotone (Fritsch–Carlson) cubic
/// Hermite interpolation.
#[derive(Debug, Clone)]
pub struct BallSampler {
    dim: Dim,
    radius: f64,
    /// (r, CDF(r)) on the uniform grid.
    grid: Vec<(f64, f64)>,
    psi: Vec<f64>,
    slopes: Vec<f64>,
}

impl BallSampler {
    pub fn new(dim: Dim, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return domain(format!("ball radius must be positive, got {radius}"));
        }
        let k = dim.get() as i32 - 1;
        let n = RADIAL_GRID;
        let h = radius / (n - 1) as f64;
        let rule = GaussLegendre::new(10);
        let mut mass = Vec::with_capacity(n);
        let mut acc = CompensatedSum::new();
        mass.push(0.0);
        for i in 1..n {
            let (a, b) = (h * (i - 1) as f64, h * i as f64);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                acc.add(w * half * (mid + half * x).sinh().powi(k));
            }
            mass.push(acc.value());
        }
        let total = mass[n - 1];
        let d = dim.as_f64();
        let mut grid = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        for (i, m) in mass.iter().enumerate() {
            let cdf = if i == n - 1 { 1.0 } else { m / total };
            grid.push((h * i as f64, cdf));
            psi.push(cdf.powf(1.0 / d));
        }
        let rs: Vec<f64> = grid.iter().map(|g| g.0).collect();
        let slopes = pchip_slopes(&psi, &rs);
        Ok(Self { dim, radius, grid, psi, slopes })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Tabulated `(r, CDF(r))` pairs.
    pub fn cdf_grid(&self) -> &[(f64, f64)] {
        &self.grid
    }

    /// Radius with CDF value `u ∈ [0, 1]`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let w = u.clamp(0.0, 1.0).powf(1.0 / self.dim.as_f64());
        let i = match self.psi.partition_point(|&p| p <= w) {
            0 => 0,
            k if k >= self.psi.len() => self.psi.len() - 2,
            k => k - 1,
        };
        let (x0, x1) = (self.psi[i], self.psi[i + 1]);
        let (y0, y1) = (self.grid[i].0, self.grid[i + 1].0);
        let hx = x1 - x0;
        if hx <= 0.0 {
            return y0;
        }
        let s = (w - x0) / hx;
        let (h00, h10, h01, h11) = hermite_basis(s);
        (h00 * y0 + h10 * hx * self.slopes[i] + h01 * y1 + h11 * hx * self.slopes[i + 1]).clamp(0.0, self.radius)
    }

    pub fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.random::<f64>())
    }

    /// Uniform point of the ball of radius `self.radius()` about `center`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, center: &HPoint) -> HPoint {
        let z = sample_tangent_uniform(rng, center);
        let r = self.sample_radius(rng);
        flow_position(&z, r)
    }
}

#[inline]
fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2)
}

/// Fritsch–Carlson monotone slopes dy/dx at each knot.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m
}

/// Uniform point in the ball of radius `delta` about `center`.
pub fn sample_ball_uniform<R: Rng + ?Sized>(rng: &mut R, center: &HPoint, delta: f64) -> Result<HPoint> {
    let sampler = BallSampler::new(center.dim(), delta)?;
    Ok(sampler.sample(rng, center))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededStream;
    use approx::assert_relative_eq;

    fn random_tangent(rng: &mut SeededStream, dim: u32, spread: f64) -> UnitTangent {
        let mut u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= n);
        let p = HPoint::from_polar(spread * rng.random::<f64>(), &u);
        sample_tangent_uniform(rng, &p)
    }

    #[test]
    fn dim_rejects_one() {
        assert!(Dim::new(1).is_err());
        assert_eq!(Dim::new(3).unwrap().sigma(), 1.0);
        assert_relative_eq!(Dim::TWO.unit_sphere_area(), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(Dim::THREE.unit_sphere_area(), 4.0 * PI, max_relative = 1e-13);
    }

    #[test]
    fn flow_zero_is_identity() {
        let mut rng = SeededStream::new(1, 0);
        let z = random_tangent(&mut rng, 3, 2.0);
        let w = geodesic_flow(&z, 0.0).unwrap();
        for (a, b) in z.base().coords().iter().zip(w.base().coords()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_is_invertible() {
        let mut rng = SeededStream::new(2, 0);
        for _ in 0..100 {
            let z = random_tangent(&mut rng, 2, 1.5);
            let t = 10.0 * rng.random::<f64>() - 5.0;
            let back = geodesic_flow(&geodesic_flow(&z, t).unwrap(), -t).unwrap();
            assert!(distance(z.base(), back.base()).unwrap() < 1e-9);
        }
    }

    #[test]
    fn flow_distance_matches_arccosh_pairing() {
        let mut rng = SeededStream::new(3, 0);
        let z = random_tangent(&mut rng, 2, 1.0);
        let q = geodesic_flow(&z, 3.7).unwrap();
        // Oracle: plain arccosh of the Minkowski pairing.
        let oracle = minkowski(z.base().coords(), q.base().coords()).acosh();
        assert!((oracle - 3.7).abs() < 1e-9);
        assert!((distance(z.base(), q.base()).unwrap() - 3.7).abs() < 1e-9);
    }

    #[test]
    fn non_finite_flow_time_is_rejected() {
        let z = UnitTangent::at_origin(&[1.0, 0.0]).unwrap();
        assert!(matches!(geodesic_flow(&z, f64::NAN), Err(Error::Domain(_))));
        assert!(geodesic_flow(&z, f64::INFINITY).is_err());
    }

    #[test]
    fn distance_basics() {
        let o = HPoint::origin(Dim::TWO);
        assert_eq!(distance(&o, &o).unwrap(), 0.0);
        let z = UnitTangent::at_origin(&[0.6, 0.8]).unwrap();
        let q = flow_position(&z, 2.5);
        assert!((distance(&o, &q).unwrap() - 2.5).abs() < 1e-12);
        assert!((distance(&q, &o).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_bad_pairing() {
        let o = HPoint::origin(Dim::TWO);
        let fake = HPoint { coords: Coords::from_slice(&[0.5, 0.0, 0.0]) };
        assert!(matches!(distance(&o, &fake), Err(Error::Numeric(_))));
    }

    #[test]
    fn point_validation() {
        assert!(HPoint::new(&[1.0, 0.0, 0.0]).is_ok());
        assert!(HPoint::new(&[2.0, 0.0, 0.0]).is_err());
        assert!(HPoint::new(&[-1.0, 0.0, 0.0]).is_err());
        let o = HPoint::origin(Dim::TWO);
        assert!(UnitTangent::new(o.clone(), &[0.0, 1.0, 0.0]).is_ok());
        assert!(UnitTangent::new(o, &[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = SeededStream::new(4, 0);
        for _ in 0..1000 {
            let a = random_tangent(&mut rng, 3, 3.0).into_base();
            let b = random_tangent(&mut rng, 3, 3.0).into_base();
            let c = random_tangent(&mut rng, 3, 3.0).into_base();
            let ab = distance(&a, &b).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn ball_volume_closed_forms() {
        for r in [1e-3, 0.1, 1.0, 4.0] {
            // 2π(cosh r − 1), integrated by hand.
            assert_relative_eq!(ball_volume(Dim::TWO, r).unwrap(), 2.0 * PI * (r.cosh() - 1.0), max_relative = 1e-9);
        }
        assert_eq!(ball_volume(Dim::new(4).unwrap(), 0.0).unwrap(), 0.0);
        // 4π∫₀¹ sinh²u du = π(sinh 2 − 2)
        assert_relative_eq!(ball_volume(Dim::THREE, 1.0).unwrap(), PI * (2.0f64.sinh() - 2.0), max_relative = 1e-14);
        assert!(ball_volume(Dim::TWO, -1.0).is_err());
        assert!(ball_volume(Dim::TWO, f64::NAN).is_err());
    }

    #[test]
    fn ball_volume_quadrature_matches_closed_form_d4() {
        // d = 4: Γ_4 = 2π², ∫ sinh³ = cosh³/3 − cosh + 2/3
        let d4 = Dim::new(4).unwrap();
        for r in [0.3, 0.7, 2.0, 6.0] {
            let c: f64 = f64::cosh(r);
            let exact = 2.0 * PI * PI * (c.powi(3) / 3.0 - c + 2.0 / 3.0);
            assert_relative_eq!(ball_volume(d4, r).unwrap(), exact, max_relative = 1e-10);
        }
    }

    #[test]
    fn sphere_area_values_and_derivative() {
        assert_relative_eq!(sphere_area(Dim::TWO, 1.3).unwrap(), 2.0 * PI * 1.3f64.sinh(), max_relative = 1e-13);
        assert_relative_eq!(sphere_area(Dim::THREE, 1.0).unwrap(), 4.0 * PI * 1.0f64.sinh().powi(2), max_relative = 1e-13);
        assert!(sphere_area(Dim::TWO, 0.0).is_err());
        for d in 2..=5 {
            let dim = Dim::new(d).unwrap();
            for r in [0.3, 1.0, 2.5] {
                let h = 1e-5;
                let fd = (ball_volume(dim, r + h).unwrap() - ball_volume(dim, r - h).unwrap()) / (2.0 * h);
                let sa = sphere_area(dim, r).unwrap();
                assert!((fd - sa).abs() <= 1e-8 * sa.max(1.0), "d={d} r={r}: {fd} vs {sa}");
            }
        }
    }

    #[test]
    fn euclidean_limit_and_monotonicity() {
        for d in 2..=5 {
            let dim = Dim::new(d).unwrap();
            let r = 1e-4;
            let ratio = sphere_area(dim, r).unwrap() / ball_volume(dim, r).unwrap();
            assert_relative_eq!(ratio, d as f64 / r, max_relative = 1e-3);
            let mut prev = 0.0;
            for k in 1..50 {
                let v = ball_volume(dim, 0.2 * k as f64).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn flow_additivity_and_unit_speed() {
        let mut rng = SeededStream::new(5, 0);
        for _ in 0..200 {
            let z = random_tangent(&mut rng, 2, 1.0);
            // Rounding in the first leg grows like e^{|t|} along the second
            // (the flow is Anosov), so a 1e-9 match needs |s| + |t| ≲ 12.
            let s = 24.0 * rng.random::<f64>() - 12.0;
            let t = (12.0 - s.abs()) * (2.0 * rng.random::<f64>() - 1.0);
            let a = geodesic_flow(&geodesic_flow(&z, s).unwrap(), t).unwrap();
            let b = geodesic_flow(&z, s + t).unwrap();
            let gap = distance(a.base(), b.base()).unwrap();
            assert!(gap < 1e-9, "s={s} t={t}: {gap}");
        }
        for _ in 0..200 {
            let z = random_tangent(&mut rng, 2, 1.0);
            let t = 40.0 * rng.random::<f64>() - 20.0;
            let q = geodesic_flow(&z, t).unwrap();
            assert!((distance(z.base(), q.base()).unwrap() - t.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn renormalization_keeps_drift_small() {
        let mut rng = SeededStream::new(6, 0);
        let mut z = random_tangent(&mut rng, 3, 0.5);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let step = if rng.random::<bool>() { 0.1 } else { -0.1 };
            z = geodesic_flow(&z, step).unwrap();
            let scale = sup_norm(z.base().coords()).powi(2);
            worst = worst.max(z.constraint_residual() / scale);
        }
        assert!(worst <= 1e-9, "worst residual {worst}");
    }

    #[test]
    fn tangent_samples_are_tangent_and_centered() {
        let mut rng = SeededStream::new(7, 0);
        let p = HPoint::from_polar(1.2, &[0.6, 0.0, 0.8]);
        let n = 1_000_000;
        let mut mean = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let z = sample_tangent_uniform(&mut rng, &p);
            assert!(minkowski(p.coords(), z.dir()).abs() < 1e-12);
            for i in 0..4 {
                mean[i] += z.dir()[i];
                sq[i] += z.dir()[i] * z.dir()[i];
            }
        }
        for i in 0..4 {
            let m = mean[i] / n as f64;
            let se = ((sq[i] / n as f64 - m * m) / n as f64).sqrt();
            assert!(m.abs() <= 3.0 * se + 1e-15, "component {i}: mean {m}, se {se}");
        }
    }

    #[test]
    fn tangent_angles_uniform_in_d2() {
        let mut rng = SeededStream::new(8, 0);
        let o = HPoint::origin(Dim::TWO);
        let bins = 36;
        let n = 360_000;
        let mut counts = vec![0u64; bins];
        for _ in 0..n {
            let z = sample_tangent_uniform(&mut rng, &o);
            let a = z.dir()[2].atan2(z.dir()[1]).rem_euclid(2.0 * PI);
            counts[((a / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99% quantile of χ²(35)
        assert!(chi2 < 57.34, "chi2 = {chi2}");
    }

    #[test]
    fn ball_samples_stay_inside_and_match_mean_radius() {
        let mut rng = SeededStream::new(9, 0);
        let c = HPoint::from_polar(0.7, &[0.0, 1.0]);
        let sampler = BallSampler::new(Dim::TWO, 1.0).unwrap();
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let q = sampler.sample(&mut rng, &c);
            let r = distance(&c, &q).unwrap();
            assert!(r <= 1.0 + 1e-12);
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        // Oracle: ∫₀¹ r sinh r dr / (cosh 1 − 1), by quadrature.
        let (num, _) = integrate_real(|r| r * r.sinh(), 0.0, 1.0, AdaptiveSettings::default()).unwrap();
        let expected = num / (1.0f64.cosh() - 1.0);
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
    }

    #[test]
    fn ball_radius_passes_ks() {
        for (d, delta) in [(2, 1.0), (3, 0.5), (2, (-4.0f64).exp())] {
            let dim = Dim::new(d).unwrap();
            let sampler = BallSampler::new(dim, delta).unwrap();
            assert_eq!(sampler.cdf_grid()[0].1, 0.0);
            assert_eq!(sampler.cdf_grid().last().unwrap().1, 1.0);
            assert!(sampler.cdf_grid().windows(2).all(|w| w[1].1 > w[0].1));
            let mut rng = SeededStream::new(10, d as u64);
            let n = 20_000;
            let mut rs: Vec<f64> = (0..n).map(|_| sampler.sample_radius(&mut rng)).collect();
            rs.sort_by(f64::total_cmp);
            let vmax = ball_volume(dim, delta).unwrap();
            let ks = rs
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let f = ball_volume(dim, r).unwrap() / vmax;
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            // 1% critical value of the Kolmogorov distribution.
            assert!(ks * (n as f64).sqrt() < 1.628, "d={d}: KS statistic {ks}");
        }
    }

    #[test]
    fn inverse_cdf_is_accurate() {
        let delta = 1.0;
        let sampler = BallSampler::new(Dim::TWO, delta).unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            let exact = (1.0 + u * (delta.cosh() - 1.0)).acosh();
            assert!((sampler.inverse_cdf(u) - exact).abs() < 1e-10);
        }
    }
}
