//! Compact hyperbolic surfaces as quotients of the Poincaré disk.
//!
//! A surface is given by side-pairing isometries `g_0, …, g_{n−1}` in SU(1,1)
//! with `g_{k+n/2} = g_k⁻¹`. Their Dirichlet domain about the origin is the
//! polygon bounded by the bisectors of `0` and `g_k(0)`; the built-in Bolza
//! surface is the regular octagon with interior angles π/4.
//!
//! Points of the surface are represented by the orbit representative inside
//! the closed polygon, found by greedy Dirichlet reduction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hypgeom::{Coords, HPoint};
use crate::quadrature::{integrate_real, AdaptiveSettings};

/// Tolerance on `|a|² − |b|² = 1`, relative to `|a|²`.
pub const DETERMINANT_TOL: f64 = 1e-12;

/// Tolerance of the side-pairing and angle self-checks.
pub const CLOSURE_TOL: f64 = 1e-10;

/// Tolerance of the area self-check against Gauss–Bonnet.
pub const AREA_TOL: f64 = 1e-8;

/// A generator step must shorten the distance to the origin by more than this.
pub const REDUCTION_MARGIN: f64 = 1e-13;

pub const MAX_REDUCTION_STEPS: usize = 1_000_000;

/// Largest word length accepted by the word-ball enumerations.
pub const MAX_WORD_BOUND: usize = 8;

/// Element of SU(1,1) acting on the unit disk by `z ↦ (az + b)/(b̄z + ā)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusElement {
    a: Complex64,
    b: Complex64,
}

impl MobiusElement {
    pub fn new(a: Complex64, b: Complex64) -> Result<Self> {
        let det = a.norm_sqr() - b.norm_sqr();
        if !det.is_finite() || (det - 1.0).abs() > DETERMINANT_TOL * a.norm_sqr().max(1.0) {
            return Err(Error::Invariant(format!("|a|² − |b|² = {det}, expected 1")));
        }
        Ok(Self { a, b })
    }

    pub fn identity() -> Self {
        Self { a: Complex64::new(1.0, 0.0), b: Complex64::new(0.0, 0.0) }
    }

    pub fn a(&self) -> Complex64 {
        self.a
    }

    pub fn b(&self) -> Complex64 {
        self.b
    }

    #[inline]
    pub fn apply(&self, z: Complex64) -> Complex64 {
        (self.a * z + self.b) / (self.b.conj() * z + self.a.conj())
    }

    /// Image of `z` together with `1 − |g z|²`, given `1 − |z|²`.
    ///
    /// `1 − |gz|² = (1 − |z|²)/|b̄z + ā|²` keeps full relative precision near
    /// the boundary circle, where subtracting `|gz|²` from 1 would not.
    #[inline]
    pub fn apply_with_defect(&self, z: Complex64, defect: f64) -> (Complex64, f64) {
        let den = self.b.conj() * z + self.a.conj();
        ((self.a * z + self.b) / den, defect / den.norm_sqr())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            a: self.a * other.a + self.b * other.b.conj(),
            b: self.a * other.b + self.b * other.a.conj(),
        }
    }

    /// The same isometry acting linearly on hyperboloid coordinates
    /// `(x₀, x₁, x₂)` with `z = (x₁ + i x₂)/(1 + x₀)`. Columns are the images
    /// of the origin and of the two unit tangent vectors there.
    pub fn lorentz(&self) -> [[f64; 3]; 3] {
        let (a, b) = (self.a, self.b);
        let ab = 2.0 * a * b;
        let abc = a * b.conj();
        let plus = a * a + b * b;
        let minus = a * a - b * b;
        [
            [a.norm_sqr() + b.norm_sqr(), 2.0 * abc.re, -2.0 * abc.im],
            [ab.re, plus.re, -minus.im],
            [ab.im, plus.im, minus.re],
        ]
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.a.conj(), b: -self.b }
    }

    /// Trace of the matrix `[[a, b], [b̄, ā]]`.
    pub fn trace(&self) -> f64 {
        2.0 * self.a.re
    }

    pub fn determinant_residual(&self) -> f64 {
        self.a.norm_sqr() - self.b.norm_sqr() - 1.0
    }

    /// `d(0, g·0) = 2 asinh|b|`.
    pub fn displacement_of_origin(&self) -> f64 {
        2.0 * self.b.norm().asinh()
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_entry_gap(&self, other: &Self) -> f64 {
        (self.a - other.a).norm().max((self.b - other.b).norm())
    }

    /// Hyperboloid coordinates `(x₁, x₂)` of `g·0`, namely `2ab`.
    fn origin_image_spatial(&self) -> Complex64 {
        2.0 * self.a * self.b
    }
}

/// Hyperbolic distance in the disk.
pub fn disk_distance(z: Complex64, w: Complex64) -> f64 {
    disk_distance_with_defects(z, 1.0 - z.norm_sqr(), w, 1.0 - w.norm_sqr())
}

#[inline]
fn disk_distance_with_defects(z: Complex64, dz: f64, w: Complex64, dw: f64) -> f64 {
    2.0 * ((z - w).norm() / (dz * dw).sqrt()).asinh()
}

/// Distance from the origin, `2 atanh|z|`.
#[inline]
pub fn distance_to_origin(z: Complex64) -> f64 {
    2.0 * z.norm().atanh()
}

/// Disk coordinate of a point of ℍ² in the hyperboloid model.
pub fn hyperboloid_to_disk(p: &HPoint) -> Result<Complex64> {
    let c = p.coords();
    if c.len() != 3 {
        return domain("the disk chart is only defined for d = 2");
    }
    Ok(Complex64::new(c[1], c[2]) / (1.0 + c[0]))
}

/// Hyperboloid point for a disk coordinate.
pub fn disk_to_hyperboloid(z: Complex64) -> Result<HPoint> {
    let r2 = z.norm_sqr();
    if !(r2 < 1.0) {
        return domain(format!("point {z} is not inside the unit disk"));
    }
    let s = 1.0 / (1.0 - r2);
    let coords: Coords = [(1.0 + r2) * s, 2.0 * z.re * s, 2.0 * z.im * s].into_iter().collect();
    Ok(HPoint::from_raw(coords))
}

/// An element of the word ball together with its cached data.
#[derive(Debug, Clone, Copy)]
pub struct BallElement {
    pub element: MobiusElement,
    pub word_length: usize,
    /// `d(0, γ·0)`.
    pub displacement: f64,
}

/// All group elements represented by words of length ≤ `word_bound`, each
/// once, sorted by displacement of the origin.
#[derive(Debug)]
pub struct WordBall {
    pub word_bound: usize,
    pub elements: Vec<BallElement>,
}

/// Side-pairing generators of a cocompact Fuchsian group.
#[derive(Debug, Clone)]
pub struct FuchsianGroup {
    generators: Vec<MobiusElement>,
    genus: u32,
    balls: [OnceLock<Arc<WordBall>>; MAX_WORD_BOUND + 1],
}

impl FuchsianGroup {
    /// Validates the generator list: `4·genus` hyperbolic elements of SU(1,1)
    /// with `g_{k+2·genus} = g_k⁻¹`.
    pub fn new(generators: Vec<MobiusElement>, genus: u32) -> Result<Self> {
        if genus < 2 {
            return domain(format!("genus must be at least 2, got {genus}"));
        }
        let n = 4 * genus as usize;
        if generators.len() != n {
            return Err(Error::Invariant(format!("genus {genus} needs {n} generators, got {}", generators.len())));
        }
        for (k, g) in generators.iter().enumerate() {
            if g.determinant_residual().abs() > DETERMINANT_TOL * g.a.norm_sqr().max(1.0) {
                return Err(Error::Invariant(format!("generator {k} is not in SU(1,1)")));
            }
            if g.trace().abs() <= 2.0 {
                return Err(Error::Invariant(format!("generator {k} has |trace| = {} ≤ 2", g.trace().abs())));
            }
            let inv = &generators[(k + n / 2) % n];
            let gap = g.compose(inv).max_entry_gap(&MobiusElement::identity());
            if gap > DETERMINANT_TOL * g.a.norm_sqr().max(1.0) {
                return Err(Error::Invariant(format!("generator {} is not the inverse of generator {k} (gap {gap:e})", (k + n / 2) % n)));
            }
        }
        Ok(Self { generators, genus, balls: Default::default() })
    }

    pub fn generators(&self) -> &[MobiusElement] {
        &self.generators
    }

    pub fn genus(&self) -> u32 {
        self.genus
    }

    /// Index of the inverse generator.
    pub fn inverse_index(&self, k: usize) -> usize {
        let n = self.generators.len();
        (k + n / 2) % n
    }

    /// Word ball of radius `word_bound`, built on first use and cached.
    pub fn word_ball(&self, word_bound: usize) -> Result<Arc<WordBall>> {
        if word_bound > MAX_WORD_BOUND {
            return Err(Error::Precondition(format!("word bound {word_bound} exceeds {MAX_WORD_BOUND}")));
        }
        Ok(self.balls[word_bound].get_or_init(|| Arc::new(self.build_word_ball(word_bound))).clone())
    }

    fn build_word_ball(&self, word_bound: usize) -> WordBall {
        // Distinct orbit points of 0 are at least 2·r apart, r = ½ min_k d(0, g_k 0),
        // hence at least 2 sinh r apart in the spatial hyperboloid coordinates.
        // Bucketing those coordinates on a grid of that pitch makes duplicates
        // (the same element reached by different words) easy to spot.
        let r = self.generators.iter().map(|g| 0.5 * g.displacement_of_origin()).fold(f64::INFINITY, f64::min);
        let pitch = r.sinh().min(1.0);
        let key = |x: Complex64| ((x.re / pitch).floor() as i64, (x.im / pitch).floor() as i64);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut elements = vec![BallElement { element: MobiusElement::identity(), word_length: 0, displacement: 0.0 }];
        buckets.entry(key(Complex64::new(0.0, 0.0))).or_default().push(0);
        let mut frontier = vec![0usize];
        for len in 1..=word_bound {
            let mut next = Vec::new();
            for &i in &frontier {
                let base = elements[i].element;
                for g in &self.generators {
                    let e = base.compose(g);
                    let x = e.origin_image_spatial();
                    let (kx, ky) = key(x);
                    let seen = (kx - 1..=kx + 1).any(|bx| {
                        (ky - 1..=ky + 1).any(|by| {
                            buckets.get(&(bx, by)).is_some_and(|v| {
                                v.iter().any(|&j| (elements[j].element.origin_image_spatial() - x).norm() < pitch)
                            })
                        })
                    });
                    if seen {
                        continue;
                    }
                    let j = elements.len();
                    elements.push(BallElement { element: e, word_length: len, displacement: e.displacement_of_origin() });
                    buckets.entry((kx, ky)).or_default().push(j);
                    next.push(j);
                }
            }
            frontier = next;
        }
        elements.sort_by(|p, q| p.displacement.total_cmp(&q.displacement).then(p.word_length.cmp(&q.word_length)));
        WordBall { word_bound, elements }
    }
}

/// One side of a Dirichlet polygon: the bisector of `0` and `g_k(0)`, a
/// circle orthogonal to the unit circle with centre `c` and radius `ρ`.
/// The polygon lies outside it, where `|z|² − 2 Re(z c̄) + 1 ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Side {
    pub generator: usize,
    #[serde(serialize_with = "ser_complex")]
    pub center: Complex64,
    pub radius: f64,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

impl Side {
    fn from_generator(generator: usize, g: &MobiusElement) -> Self {
        let w = g.apply(Complex64::new(0.0, 0.0));
        let center = w / w.norm_sqr();
        Self { generator, center, radius: (center.norm_sqr() - 1.0).sqrt() }
    }

    /// `|z|² − 2 Re(z c̄) + 1`; non-negative on the polygon's side of the bisector.
    #[inline]
    pub fn level(&self, z: Complex64) -> f64 {
        z.norm_sqr() - 2.0 * (z * self.center.conj()).re + 1.0
    }

    /// Distance along the ray of angle `theta` from 0 to this side, if it is hit.
    fn ray_hit(&self, theta: f64) -> Option<f64> {
        let beta = (Complex64::from_polar(1.0, theta) * self.center.conj()).re;
        (beta > 1.0).then(|| 1.0 / (beta + (beta * beta - 1.0).sqrt()))
    }
}

/// Dirichlet polygon of the origin for a [`FuchsianGroup`].
#[derive(Debug, Clone, Serialize)]
pub struct FundamentalDomain {
    /// Sides in counter-clockwise order.
    pub sides: Vec<Side>,
    /// `vertices[i]` joins `sides[i]` and `sides[i + 1]`.
    #[serde(serialize_with = "ser_complex_vec")]
    pub vertices: Vec<Complex64>,
    pub interior_angles: Vec<f64>,
    /// Hyperbolic area by polar quadrature.
    pub area: f64,
    /// `d(0, ·)` of the farthest vertex.
    pub circumradius: f64,
    /// Distance from 0 to the nearest side.
    pub inradius: f64,
}

fn ser_complex_vec<S: serde::Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
}

impl FundamentalDomain {
    /// Builds the Dirichlet polygon and runs the self-checks: every vertex on
    /// the closed polygon, side pairing vertex-to-vertex, angle sum 2π and
    /// area 4π(genus − 1).
    pub fn for_group(group: &FuchsianGroup) -> Result<Self> {
        let mut sides: Vec<Side> =
            group.generators().iter().enumerate().map(|(k, g)| Side::from_generator(k, g)).collect();
        sides.sort_by(|p, q| p.center.arg().total_cmp(&q.center.arg()));
        let n = sides.len();
        let mut vertices = Vec::with_capacity(n);
        for i in 0..n {
            vertices.push(circle_intersection(&sides[i], &sides[(i + 1) % n])?);
        }
        for (i, v) in vertices.iter().enumerate() {
            for s in &sides {
                if s.level(*v) < -CLOSURE_TOL {
                    return Err(Error::Invariant(format!("vertex {i} lies outside side {}", s.generator)));
                }
            }
        }
        let interior_angles: Vec<f64> = (0..n).map(|i| interior_angle(&sides[i], &sides[(i + 1) % n], vertices[i])).collect();

        let domain = Self {
            area: polar_area(&sides, &vertices)?,
            circumradius: vertices.iter().map(|v| distance_to_origin(*v)).fold(0.0, f64::max),
            inradius: group.generators().iter().map(|g| 0.5 * g.displacement_of_origin()).fold(f64::INFINITY, f64::min),
            sides,
            vertices,
            interior_angles,
        };
        domain.check_pairing(group)?;

        let angle_sum: f64 = domain.interior_angles.iter().sum();
        if (angle_sum - 2.0 * PI).abs() > CLOSURE_TOL {
            return Err(Error::Invariant(format!("vertex angles sum to {angle_sum}, expected 2π")));
        }
        let expected = 4.0 * PI * (group.genus() as f64 - 1.0);
        if (domain.area - expected).abs() > AREA_TOL {
            return Err(Error::Invariant(format!("polygon area {} differs from Gauss–Bonnet {expected}", domain.area)));
        }
        Ok(domain)
    }

    /// `g_k` maps the side of `g_k⁻¹` onto the side of `g_k`, endpoints to endpoints.
    fn check_pairing(&self, group: &FuchsianGroup) -> Result<()> {
        let n = self.sides.len();
        let position = |k: usize| self.sides.iter().position(|s| s.generator == k).expect("every generator has a side");
        for (k, g) in group.generators().iter().enumerate() {
            let src = position(group.inverse_index(k));
            let dst = position(k);
            let from = [self.vertices[(src + n - 1) % n], self.vertices[src]];
            let to = [self.vertices[(dst + n - 1) % n], self.vertices[dst]];
            let img = [g.apply(from[0]), g.apply(from[1])];
            let direct = (img[0] - to[0]).norm().max((img[1] - to[1]).norm());
            let swapped = (img[0] - to[1]).norm().max((img[1] - to[0]).norm());
            if direct.min(swapped) > CLOSURE_TOL {
                return Err(Error::Invariant(format!("generator {k} does not pair its sides (gap {:e})", direct.min(swapped))));
            }
        }
        Ok(())
    }

    /// Whether `z` lies in the closed polygon, up to `tol` on the side levels.
    pub fn contains(&self, z: Complex64, tol: f64) -> bool {
        z.norm_sqr() < 1.0 && self.sides.iter().all(|s| s.level(z) >= -tol)
    }

    /// Euclidean radius of the polygon boundary along the ray of angle `theta`.
    pub fn boundary_radius(&self, theta: f64) -> f64 {
        self.sides.iter().filter_map(|s| s.ray_hit(theta)).fold(1.0, f64::min)
    }

    pub fn vertex_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn circle_intersection(p: &Side, q: &Side) -> Result<Complex64> {
    // Both circles satisfy |z|² − 2 Re(z c̄) + 1 = 0, so the common chord is
    // the line Re(z (c̄_p − c̄_q)) = 0 through the origin.
    let diff = p.center - q.center;
    let e = Complex64::i() * diff / diff.norm();
    let beta = (e * p.center.conj()).re;
    let disc = beta * beta - 1.0;
    if !(disc >= 0.0) {
        return Err(Error::Invariant(format!("sides {} and {} do not meet", p.generator, q.generator)));
    }
    let s = if beta >= 0.0 { 1.0 / (beta + disc.sqrt()) } else { -1.0 / (-beta + disc.sqrt()) };
    Ok(e * s)
}

fn interior_angle(p: &Side, q: &Side, v: Complex64) -> f64 {
    let u1 = (v - p.center) / p.radius;
    let u2 = (v - q.center) / q.radius;
    let cos = (u1.re * u2.re + u1.im * u2.im).clamp(-1.0, 1.0);
    PI - cos.acos()
}

/// `∫ 2R(θ)²/(1 − R(θ)²) dθ`, one smooth piece per side.
fn polar_area(sides: &[Side], vertices: &[Complex64]) -> Result<f64> {
    let n = sides.len();
    let settings = AdaptiveSettings { tol: 1e-13, initial_panels: 4, max_levels: 20 };
    let mut total = 0.0;
    for i in 0..n {
        let lo = vertices[(i + n - 1) % n].arg();
        let mut hi = vertices[i].arg();
        if hi <= lo {
            hi += 2.0 * PI;
        }
        let side = sides[i];
        let (v, _) = integrate_real(
            |theta| {
                let r = side.ray_hit(theta).unwrap_or(1.0);
                let r2 = r * r;
                2.0 * r2 / (1.0 - r2)
            },
            lo,
            hi,
            settings,
        )?;
        total += v;
    }
    Ok(total)
}

/// The Bolza surface: `a = 1 + √2`, `b_k = √(2 + 2√2)·e^{ikπ/4}`.
pub fn bolza_group() -> Result<(FuchsianGroup, FundamentalDomain)> {
    let a = Complex64::new(1.0 + 2f64.sqrt(), 0.0);
    let m = (2.0 + 2.0 * 2f64.sqrt()).sqrt();
    let generators = (0..8)
        .map(|k| MobiusElement::new(a, Complex64::from_polar(m, k as f64 * PI / 4.0)))
        .collect::<Result<Vec<_>>>()?;
    let group = FuchsianGroup::new(generators, 2)?;
    let domain = FundamentalDomain::for_group(&group)?;
    Ok((group, domain))
}

/// Orbit representative in the closed fundamental polygon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    #[serde(serialize_with = "ser_complex")]
    rep: Complex64,
}

impl SurfacePoint {
    /// Reduces `z` and keeps the representative.
    pub fn from_disk(group: &FuchsianGroup, domain: &FundamentalDomain, z: Complex64) -> Result<Self> {
        Ok(reduce(group, domain, z)?.0)
    }

    pub fn rep(&self) -> Complex64 {
        self.rep
    }

    /// Wraps a point already known to lie in the closed polygon.
    pub(crate) fn from_rep_unchecked(rep: Complex64) -> Self {
        Self { rep }
    }
}

/// `(Re, Im)` order, with real parts within rounding treated as equal.
#[inline]
fn lex_less(z: Complex64, w: Complex64) -> bool {
    if (z.re - w.re).abs() > 1e-12 {
        z.re < w.re
    } else {
        z.im < w.im
    }
}

/// Greedy Dirichlet reduction: apply the generator whose image is closest to
/// 0 while that gains more than [`REDUCTION_MARGIN`]; among images tied with
/// the current point to within the margin, move to the lexicographically
/// smallest `(Re, Im)`. Returns the representative and the number of steps.
pub fn reduce(group: &FuchsianGroup, domain: &FundamentalDomain, z: Complex64) -> Result<(SurfacePoint, usize)> {
    reduce_impl(group, domain, z, None)
}

/// [`reduce`] that also records the generator indices applied, in order.
pub fn reduce_with_word(group: &FuchsianGroup, domain: &FundamentalDomain, z: Complex64) -> Result<(SurfacePoint, Vec<usize>)> {
    let mut word = Vec::new();
    let (p, _) = reduce_impl(group, domain, z, Some(&mut word))?;
    Ok((p, word))
}

fn reduce_impl(
    group: &FuchsianGroup,
    domain: &FundamentalDomain,
    z: Complex64,
    mut word: Option<&mut Vec<usize>>,
) -> Result<(SurfacePoint, usize)> {
    if !(z.norm_sqr() < 1.0) {
        return self::domain(format!("point {z} is not inside the unit disk"));
    }
    let gens = group.generators();
    let mut z = z;
    let mut steps = 0usize;
    let mut record = |k: usize, steps: &mut usize| -> Result<()> {
        *steps += 1;
        if *steps > MAX_REDUCTION_STEPS {
            return Err(Error::NonTermination { steps: *steps });
        }
        if let Some(w) = word.as_deref_mut() {
            w.push(k);
        }
        Ok(())
    };
    loop {
        loop {
            let here = distance_to_origin(z);
            let mut best = (usize::MAX, here, z);
            for (k, g) in gens.iter().enumerate() {
                let w = g.apply(z);
                let d = distance_to_origin(w);
                if d < best.1 {
                    best = (k, d, w);
                }
            }
            if here - best.1 > REDUCTION_MARGIN {
                z = best.2;
                record(best.0, &mut steps)?;
            } else {
                break;
            }
        }
        // Tied orbit points form a small cluster (two points on a side, a
        // vertex cycle at a corner); search all of it for the lexicographic
        // minimum so every entry point of the cluster lands on the same one.
        let here = distance_to_origin(z);
        let mut cluster: Vec<(Complex64, Option<(usize, usize)>)> = vec![(z, None)];
        let mut i = 0;
        while i < cluster.len() && cluster.len() < 64 {
            let from = cluster[i].0;
            for (k, g) in gens.iter().enumerate() {
                let w = g.apply(from);
                if (distance_to_origin(w) - here).abs() <= REDUCTION_MARGIN && cluster.iter().all(|(c, _)| (*c - w).norm() > 1e-12) {
                    cluster.push((w, Some((i, k))));
                }
            }
            i += 1;
        }
        let target = (0..cluster.len()).fold(0, |b, j| if lex_less(cluster[j].0, cluster[b].0) { j } else { b });
        if target == 0 {
            break;
        }
        let mut path = Vec::new();
        let mut j = target;
        while let Some((parent, k)) = cluster[j].1 {
            path.push(k);
            j = parent;
        }
        for k in path.into_iter().rev() {
            record(k, &mut steps)?;
        }
        z = cluster[target].0;
    }
    if !domain.contains(z, 1e-9) {
        return Err(Error::Invariant(format!("reduced point {z} lies outside the fundamental polygon")));
    }
    Ok((SurfacePoint { rep: z }, steps))
}

/// `min_γ d(p, γq)` over the word ball of radius `word_bound`: an upper bound
/// on the quotient distance, exact once the minimising element is enumerated.
pub fn surface_distance_upper(group: &FuchsianGroup, p: &SurfacePoint, q: &SurfacePoint, word_bound: usize) -> Result<f64> {
    let ball = group.word_ball(word_bound)?;
    let (zp, zq) = (p.rep, q.rep);
    let (dp, dq) = (1.0 - zp.norm_sqr(), 1.0 - zq.norm_sqr());
    let reach = distance_to_origin(zp) + distance_to_origin(zq);
    let mut best = disk_distance_with_defects(zp, dp, zq, dq);
    for e in &ball.elements {
        // d(p, γq) ≥ d(0, γ0) − d(0, p) − d(0, q)
        if e.displacement - reach >= best {
            break;
        }
        let (w, dw) = e.element.apply_with_defect(zq, dq);
        best = best.min(disk_distance_with_defects(zp, dp, w, dw));
    }
    Ok(best)
}

/// `½ min_{γ ≠ 1} d(p, γp)` over the word ball of radius `word_bound`.
///
/// Enlarging the ball can only lower the value, which converges to the
/// injectivity radius at `p` from above.
pub fn injectivity_radius_lower(group: &FuchsianGroup, p: &SurfacePoint, word_bound: usize) -> Result<f64> {
    let ball = group.word_ball(word_bound)?;
    let z = p.rep;
    let dz = 1.0 - z.norm_sqr();
    let reach = 2.0 * distance_to_origin(z);
    let mut best = f64::INFINITY;
    for e in ball.elements.iter().filter(|e| e.word_length > 0) {
        if e.displacement - reach >= best {
            break;
        }
        let (w, dw) = e.element.apply_with_defect(z, dz);
        best = best.min(disk_distance_with_defects(z, dz, w, dw));
    }
    Ok(0.5 * best)
}

/// On-disk description of a surface: generator matrices `[[a, b], [b̄, ā]]`,
/// row-major, each entry a `[re, im]` pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceFile {
    pub genus: u32,
    pub generators: Vec<[[[f64; 2]; 2]; 2]>,
}

impl SurfaceFile {
    pub fn from_group(group: &FuchsianGroup) -> Self {
        let pair = |z: Complex64| [z.re, z.im];
        Self {
            genus: group.genus(),
            generators: group
                .generators()
                .iter()
                .map(|g| [[pair(g.a), pair(g.b)], [pair(g.b.conj()), pair(g.a.conj())]])
                .collect(),
        }
    }

    /// Validates the matrices and builds the group and its polygon.
    pub fn build(&self) -> Result<(FuchsianGroup, FundamentalDomain)> {
        let c = |p: [f64; 2]| Complex64::new(p[0], p[1]);
        let mut gens = Vec::with_capacity(self.generators.len());
        for (k, m) in self.generators.iter().enumerate() {
            let (a, b) = (c(m[0][0]), c(m[0][1]));
            let scale = a.norm().max(1.0);
            if (c(m[1][0]) - b.conj()).norm() > DETERMINANT_TOL * scale || (c(m[1][1]) - a.conj()).norm() > DETERMINANT_TOL * scale {
                return Err(Error::Invariant(format!("generator {k} is not of the form [[a, b], [b̄, ā]]")));
            }
            gens.push(MobiusElement::new(a, b)?);
        }
        let group = FuchsianGroup::new(gens, self.genus)?;
        let domain = FundamentalDomain::for_group(&group)?;
        Ok((group, domain))
    }
}

/// Reads and validates a JSON surface description.
pub fn load_surface(path: &Path) -> Result<(FuchsianGroup, FundamentalDomain)> {
    let text = std::fs::read_to_string(path)?;
    let file: SurfaceFile = serde_json::from_str(&text)?;
    file.build()
}
