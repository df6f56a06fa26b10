//! Monte Carlo engines on a compact surface: the geodesic process started
//! uniformly on a small ball, Brownian motion through the radial coupling
//! `W_t = X_{D_t}`, binned empirical measures on the fundamental polygon and
//! the total-variation estimators built on them.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Error, Result};
use crate::hypgeom::{ball_volume, flow_position, sample_tangent_uniform, BallSampler, Dim, HPoint, UnitTangent};
use crate::quadrature::{integrate_real, AdaptiveSettings, CompensatedSum};
use crate::rng::SeededStream;
use crate::surface::{
    disk_to_hyperboloid, hyperboloid_to_disk, injectivity_radius_lower, reduce_with_word, FuchsianGroup, FundamentalDomain, Side,
    SurfacePoint,
};

/// Word bound used when checking δ against the injectivity radius.
pub const INJECTIVITY_WORD_BOUND: usize = 3;

/// Starting radius of the radial process.
pub const BROWNIAN_START: f64 = 1e-6;

/// Slack on the octagon membership test for reduced samples.
const MEMBERSHIP_TOL: f64 = 1e-9;

/// Longest flow segment between two pull-backs to the polygon. From the
/// polygon (radius ≤ 2.45) this keeps hyperboloid coordinates below e⁷.
const FLOW_SEGMENT: f64 = 4.0;

/// A unit tangent vector of ℍ² in hyperboloid coordinates whose base point is
/// kept near the fundamental polygon. Long flows are cut into segments and
/// the state is pulled back by the reducing group element after each one,
/// so the flow never has to represent a point near the boundary circle.
#[derive(Debug, Clone, Copy)]
struct Carried {
    p: [f64; 3],
    v: [f64; 3],
    rep: SurfacePoint,
}

#[inline]
fn mink(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    -x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

impl Carried {
    fn new(group: &FuchsianGroup, domain: &FundamentalDomain, z: &UnitTangent) -> Result<Self> {
        let (b, d) = (z.base().coords(), z.dir());
        if b.len() != 3 {
            return self::domain("surface flows need a tangent vector of ℍ²");
        }
        let mut c = Self { p: [b[0], b[1], b[2]], v: [d[0], d[1], d[2]], rep: SurfacePoint::from_rep_unchecked(Complex64::new(0.0, 0.0)) };
        c.pull_back(group, domain)?;
        Ok(c)
    }

    fn pull_back(&mut self, group: &FuchsianGroup, domain: &FundamentalDomain) -> Result<()> {
        let z = Complex64::new(self.p[1], self.p[2]) / (1.0 + self.p[0]);
        let (rep, word) = reduce_with_word(group, domain, z)?;
        self.rep = rep;
        if let Some((&first, rest)) = word.split_first() {
            let gens = group.generators();
            let g = rest.iter().fold(gens[first], |acc, &k| gens[k].compose(&acc));
            let l = g.lorentz();
            let map = |x: &[f64; 3]| -> [f64; 3] { std::array::from_fn(|i| l[i][0] * x[0] + l[i][1] * x[1] + l[i][2] * x[2]) };
            self.p = map(&self.p);
            self.v = map(&self.v);
        }
        // re-project onto the unit tangent bundle; coordinates are O(1) here
        self.p[0] = (1.0 + self.p[1] * self.p[1] + self.p[2] * self.p[2]).sqrt();
        let pv = mink(&self.p, &self.v);
        for i in 0..3 {
            self.v[i] += pv * self.p[i];
        }
        let nv = mink(&self.v, &self.v).sqrt();
        for x in &mut self.v {
            *x /= nv;
        }
        Ok(())
    }

    /// Flows for signed time `s`.
    fn advance(&mut self, group: &FuchsianGroup, domain: &FundamentalDomain, s: f64) -> Result<()> {
        if !s.is_finite() {
            return self::domain(format!("flow time must be finite, got {s}"));
        }
        let n = (s.abs() / FLOW_SEGMENT).ceil().max(1.0) as usize;
        let h = s / n as f64;
        let (sh, ch) = (h.sinh(), h.cosh());
        for _ in 0..n {
            let (p, v) = (self.p, self.v);
            self.p = std::array::from_fn(|i| ch * p[i] + sh * v[i]);
            self.v = std::array::from_fn(|i| sh * p[i] + ch * v[i]);
            self.pull_back(group, domain)?;
        }
        Ok(())
    }
}

/// Draws the geodesic process from a fixed centre: start uniform on the ball
/// of radius δ about the lift of `x`, direction uniform, flow, reduce.
#[derive(Debug, Clone)]
pub struct GeodesicSampler<'a> {
    group: &'a FuchsianGroup,
    domain: &'a FundamentalDomain,
    center: SurfacePoint,
    center_lift: HPoint,
    delta: f64,
    ball: Option<BallSampler>,
}

impl<'a> GeodesicSampler<'a> {
    /// `delta = 0` starts exactly at `x`. Otherwise δ must stay below the
    /// injectivity radius estimate at `x` so that the ball embeds.
    pub fn new(group: &'a FuchsianGroup, domain: &'a FundamentalDomain, x: SurfacePoint, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return self::domain(format!("δ must be finite and non-negative, got {delta}"));
        }
        let inj = injectivity_radius_lower(group, &x, INJECTIVITY_WORD_BOUND)?;
        if delta >= inj {
            return Err(Error::Precondition(format!("δ = {delta} is not below the injectivity radius {inj} at {}", x.rep())));
        }
        let ball = if delta > 0.0 { Some(BallSampler::new(Dim::TWO, delta)?) } else { None };
        Ok(Self { group, domain, center: x, center_lift: disk_to_hyperboloid(x.rep())?, delta, ball })
    }

    pub fn center(&self) -> SurfacePoint {
        self.center
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn center_lift(&self) -> &HPoint {
        &self.center_lift
    }

    /// Initial state in ℍ²: ball point (when δ > 0), then direction.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitTangent {
        let start = match &self.ball {
            Some(b) => b.sample(rng, &self.center_lift),
            None => self.center_lift.clone(),
        };
        sample_tangent_uniform(rng, &start)
    }

    /// Lifted position after flowing `z` for time `t`.
    pub fn lifted_position(&self, z: &UnitTangent, t: f64) -> Result<HPoint> {
        if !(t >= 0.0) || !t.is_finite() {
            return domain(format!("t must be finite and non-negative, got {t}"));
        }
        Ok(flow_position(z, t))
    }

    /// Surface point reached from `z` after time `t`.
    pub fn position_at(&self, z: &UnitTangent, t: f64) -> Result<SurfacePoint> {
        if !(t >= 0.0) || !t.is_finite() {
            return domain(format!("t must be finite and non-negative, got {t}"));
        }
        let mut c = Carried::new(self.group, self.domain, z)?;
        c.advance(self.group, self.domain, t)?;
        Ok(c.rep)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, t: f64) -> Result<SurfacePoint> {
        let z = self.initial_state(rng);
        self.position_at(&z, t)
    }
}

/// One draw of the geodesic process at time `t`.
pub fn geodesic_sample(
    group: &FuchsianGroup,
    domain: &FundamentalDomain,
    x: SurfacePoint,
    delta: f64,
    t: f64,
    rng: &mut SeededStream,
) -> Result<SurfacePoint> {
    GeodesicSampler::new(group, domain, x, delta)?.sample(rng, t)
}

/// `x coth x`, continuous at 0.
#[inline]
fn x_coth_x(x: f64) -> f64 {
    if x < 1e-4 {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    }
}

/// One Euler–Maruyama step of `Y = D²`.
///
/// For `dD = dB + ((d−1)/2) coth D dt`, Itô gives
/// `dY = 2√Y dB + ((d−1)√Y coth√Y + 1) dt`, whose drift stays bounded as
/// `Y → 0`; stepping `D` directly from 10⁻⁶ overshoots by `coth(10⁻⁶)·dt`.
#[inline]
fn radial_step<R: Rng + ?Sized>(rng: &mut R, y: f64, h: f64, k: f64) -> f64 {
    let d = y.sqrt();
    let z: f64 = rng.sample(StandardNormal);
    (y + (k * x_coth_x(d) + 1.0) * h + 2.0 * d * h.sqrt() * z).abs()
}

fn check_brownian_step(t: f64, dt: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return domain(format!("t must be positive, got {t}"));
    }
    if !(dt > 0.0) || dt > 1e-3 * t.max(1.0) * (1.0 + 1e-12) {
        return domain(format!("dt must lie in (0, 1e-3·max(1, t)], got {dt}"));
    }
    Ok(())
}

/// Radial part `D_t` of Brownian motion on ℍ^d (generator Δ/2), started at
/// [`BROWNIAN_START`] and reflected at 0, by Euler–Maruyama with steps ≤ `dt`.
pub fn brownian_radius<R: Rng + ?Sized>(t: f64, dim: Dim, dt: f64, rng: &mut R) -> Result<f64> {
    check_brownian_step(t, dt)?;
    let n = (t / dt).ceil() as usize;
    let h = t / n as f64;
    let k = dim.as_f64() - 1.0;
    let mut y = BROWNIAN_START * BROWNIAN_START;
    for _ in 0..n {
        y = radial_step(rng, y, h, k);
    }
    Ok(y.sqrt())
}

/// One radial path observed at every time of `times` (sorted ascending).
/// The step at time τ is at most `dt_rel·max(1, τ)`.
pub fn brownian_radius_path<R: Rng + ?Sized>(times: &[f64], dim: Dim, dt_rel: f64, rng: &mut R) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|t| !(*t > 0.0)) {
        return domain("observation times must be positive and strictly increasing");
    }
    if !(dt_rel > 0.0 && dt_rel <= 1e-3) {
        return domain(format!("relative step must lie in (0, 1e-3], got {dt_rel}"));
    }
    let k = dim.as_f64() - 1.0;
    let mut y = BROWNIAN_START * BROWNIAN_START;
    let mut tau = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while tau < target {
            let remaining = target - tau;
            let cap = dt_rel * tau.max(1.0);
            // split the remaining interval evenly rather than leave a sliver
            let n = (remaining / cap).ceil().max(1.0);
            let h = remaining / n;
            y = radial_step(rng, y, h, k);
            tau = if n == 1.0 { target } else { tau + h };
        }
        out.push(y.sqrt());
    }
    Ok(out)
}

/// Brownian motion on the surface at time `t` via `W_t = X_{D_t}`: uniform
/// direction at `x`, then the radius, then the geodesic of that length.
pub fn brownian_sample<R: Rng + ?Sized>(sampler: &GeodesicSampler<'_>, t: f64, dt: f64, rng: &mut R) -> Result<SurfacePoint> {
    if sampler.delta() != 0.0 {
        return Err(Error::Precondition("Brownian samples start exactly at the centre (δ = 0)".into()));
    }
    let z = sampler.initial_state(rng);
    let d = brownian_radius(t, Dim::TWO, dt, rng)?;
    sampler.position_at(&z, d)
}

/// Half-open boxes `[x_i, x_{i+1}) × [y_j, y_{j+1})` of an `m × m` grid on
/// `[−1, 1]²`, kept where they meet the polygon, with hyperbolic areas of
/// their intersection with it.
#[derive(Debug, Clone, Serialize)]
pub struct CellGrid {
    pub m: usize,
    /// Cell index of each box (row-major in x), `u32::MAX` when outside.
    box_to_cell: Vec<u32>,
    /// `(ix, iy)` of each cell.
    pub boxes: Vec<(u32, u32)>,
    pub areas: Vec<f64>,
    pub total_area: f64,
}

/// `∫ 4/(a² − s²)² ds` with `a² = 1 − x²`.
#[inline]
fn area_antiderivative(a2: f64, a: f64, s: f64) -> f64 {
    4.0 * (s / (2.0 * a2 * (a2 - s * s)) + ((a + s) / (a - s)).ln() / (4.0 * a2 * a))
}

/// The slice `{y : (x, y) in the polygon}` as disjoint intervals.
fn polygon_slice(sides: &[Side], x: f64) -> Vec<(f64, f64)> {
    let a2 = 1.0 - x * x;
    if a2 <= 0.0 {
        return Vec::new();
    }
    let a = a2.sqrt();
    let mut pieces = vec![(-a, a)];
    for s in sides {
        let dx = x - s.center.re;
        let h2 = s.radius * s.radius - dx * dx;
        if h2 <= 0.0 {
            continue;
        }
        let h = h2.sqrt();
        let (lo, hi) = (s.center.im - h, s.center.im + h);
        let mut next = Vec::with_capacity(pieces.len() + 1);
        for (p, q) in pieces {
            if hi <= p || lo >= q {
                next.push((p, q));
                continue;
            }
            if lo > p {
                next.push((p, lo));
            }
            if hi < q {
                next.push((hi, q));
            }
        }
        pieces = next;
    }
    pieces
}

fn box_area(sides: &[Side], vertices: &[Complex64], x0: f64, x1: f64, y0: f64, y1: f64) -> Result<f64> {
    let mut cuts = vec![x0, x1];
    let mut add = |x: f64| {
        if x > x0 && x < x1 {
            cuts.push(x);
        }
    };
    for v in vertices {
        add(v.re);
    }
    for s in sides {
        add(s.center.re - s.radius);
        add(s.center.re + s.radius);
        for y in [y0, y1] {
            let h2 = s.radius * s.radius - (y - s.center.im).powi(2);
            if h2 >= 0.0 {
                add(s.center.re - h2.sqrt());
                add(s.center.re + h2.sqrt());
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let slice_mass = |x: f64| {
        let a2 = 1.0 - x * x;
        let a = a2.sqrt();
        polygon_slice(sides, x)
            .into_iter()
            .map(|(p, q)| (p.max(y0), q.min(y1)))
            .filter(|(p, q)| q > p)
            .map(|(p, q)| area_antiderivative(a2, a, q) - area_antiderivative(a2, a, p))
            .sum::<f64>()
    };
    let settings = AdaptiveSettings { tol: 1e-13, initial_panels: 2, max_levels: 20 };
    let mut total = CompensatedSum::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        // x = lo + (hi − lo)(3τ² − 2τ³) flattens square-root behaviour at both
        // ends of the piece (vertical tangencies of the side circles).
        let width = hi - lo;
        let (v, _) = integrate_real(
            |tau| {
                let s = tau * tau * (3.0 - 2.0 * tau);
                slice_mass(lo + width * s) * width * 6.0 * tau * (1.0 - tau)
            },
            0.0,
            1.0,
            settings,
        )?;
        total.add(v);
    }
    Ok(total.value())
}

impl CellGrid {
    /// Builds the grid and checks that the cell areas add up to the polygon area.
    pub fn new(domain: &FundamentalDomain, m: usize) -> Result<Self> {
        if m < 4 {
            return self::domain(format!("grid resolution must be at least 4, got {m}"));
        }
        let h = 2.0 / m as f64;
        let edge = |i: usize| -1.0 + h * i as f64;
        let rmax = domain.vertex_radius();
        let jobs: Vec<(usize, usize)> = (0..m)
            .flat_map(|ix| (0..m).map(move |iy| (ix, iy)))
            .filter(|&(ix, iy)| {
                // skip boxes entirely outside the polygon's circumscribed disk
                let cx = (-edge(ix + 1)).max(0.0).max(edge(ix));
                let cy = (-edge(iy + 1)).max(0.0).max(edge(iy));
                cx * cx + cy * cy < rmax * rmax
            })
            .collect();
        let areas: Vec<f64> = jobs
            .par_iter()
            .map(|&(ix, iy)| box_area(&domain.sides, &domain.vertices, edge(ix), edge(ix + 1), edge(iy), edge(iy + 1)))
            .collect::<Result<_>>()?;
        let mut grid = Self { m, box_to_cell: vec![u32::MAX; m * m], boxes: Vec::new(), areas: Vec::new(), total_area: 0.0 };
        let mut total = CompensatedSum::new();
        for (&(ix, iy), &a) in jobs.iter().zip(&areas) {
            if a > 0.0 {
                grid.box_to_cell[ix * m + iy] = grid.boxes.len() as u32;
                grid.boxes.push((ix as u32, iy as u32));
                grid.areas.push(a);
                total.add(a);
            }
        }
        grid.total_area = total.value();
        if (grid.total_area - domain.area).abs() > 1e-6 {
            return Err(Error::Invariant(format!("cell areas sum to {}, polygon area is {}", grid.total_area, domain.area)));
        }
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.areas.len()
    }

    fn box_of(&self, z: Complex64) -> Option<usize> {
        let m = self.m as f64;
        let ix = ((z.re + 1.0) * 0.5 * m).floor();
        let iy = ((z.im + 1.0) * 0.5 * m).floor();
        if ix < 0.0 || iy < 0.0 || ix >= m || iy >= m {
            return None;
        }
        Some(ix as usize * self.m + iy as usize)
    }

    /// Cell holding `z`, if its box meets the polygon in positive area.
    pub fn cell_of(&self, z: Complex64) -> Option<usize> {
        self.box_of(z).map(|b| self.box_to_cell[b]).filter(|&c| c != u32::MAX).map(|c| c as usize)
    }

    /// Cell whose box centre is nearest to `z`; used for points of the closed
    /// polygon whose own box meets it only in a null set.
    fn nearest_cell(&self, z: Complex64) -> usize {
        let h = 2.0 / self.m as f64;
        let centre = |(ix, iy): (u32, u32)| Complex64::new(-1.0 + h * (ix as f64 + 0.5), -1.0 + h * (iy as f64 + 0.5));
        (0..self.boxes.len())
            .min_by(|&a, &b| (centre(self.boxes[a]) - z).norm().total_cmp(&(centre(self.boxes[b]) - z).norm()))
            .expect("grid has cells")
    }

    /// Stationary probability of each cell.
    pub fn pi_weights(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a / self.total_area).collect()
    }
}

/// Per-cell sample counts over a [`CellGrid`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    #[serde(skip)]
    grid: Arc<CellGrid>,
    pub weights: Vec<u64>,
    pub n_samples: u64,
}

impl EmpiricalMeasure {
    pub fn new(grid: Arc<CellGrid>) -> Self {
        let n = grid.n_cells();
        Self { grid, weights: vec![0; n], n_samples: 0 }
    }

    pub fn grid(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    /// Bins one representative; points off the closed polygon are an error.
    pub fn add(&mut self, domain: &FundamentalDomain, p: &SurfacePoint) -> Result<()> {
        let z = p.rep();
        let cell = match self.grid.cell_of(z) {
            Some(c) => c,
            None if domain.contains(z, MEMBERSHIP_TOL) => self.grid.nearest_cell(z),
            None => return Err(Error::Invariant(format!("sample {z} lies outside the fundamental polygon"))),
        };
        self.weights[cell] += 1;
        self.n_samples += 1;
        Ok(())
    }

    /// Adds the counts of `other`, which must share the grid.
    pub fn merge(&mut self, other: &EmpiricalMeasure) -> Result<()> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && *self.grid != *other.grid {
            return domain("cannot merge measures over different grids");
        }
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += o;
        }
        self.n_samples += other.n_samples;
        Ok(())
    }

    /// `cell_index,weight,area` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_index,ix,iy,weight,area\n");
        for (i, ((w, a), (ix, iy))) in self.weights.iter().zip(&self.grid.areas).zip(&self.grid.boxes).enumerate() {
            out.push_str(&format!("{i},{ix},{iy},{w},{a:?}\n"));
        }
        out
    }
}

impl PartialEq for CellGrid {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.boxes == other.boxes && self.areas == other.areas
    }
}

/// Bins samples into a fresh measure.
pub fn empirical_measure(domain: &FundamentalDomain, grid: Arc<CellGrid>, samples: &[SurfacePoint]) -> Result<EmpiricalMeasure> {
    if samples.is_empty() {
        return self::domain("no samples to bin");
    }
    let mut em = EmpiricalMeasure::new(grid);
    for p in samples {
        em.add(domain, p)?;
    }
    Ok(em)
}

/// Binned total-variation distance to the uniform law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TVEstimate {
    /// `½ Σ |w_i/n − area_i/area|`. This is a lower bound for the TV of the
    /// underlying laws (binning merges detail) and is biased upwards by
    /// sampling noise on the scale of `bias_note`.
    pub value: f64,
    pub n_samples: u64,
    pub n_cells: usize,
    /// `√(n_cells / (2π n_samples))`.
    pub bias_note: f64,
}

pub fn tv_against_uniform(em: &EmpiricalMeasure) -> Result<TVEstimate> {
    if em.n_samples == 0 {
        return domain("empty measure");
    }
    let n = em.n_samples as f64;
    let mut sum = CompensatedSum::new();
    for (w, a) in em.weights.iter().zip(&em.grid.areas) {
        sum.add((*w as f64 / n - a / em.grid.total_area).abs());
    }
    let n_cells = em.grid.n_cells();
    Ok(TVEstimate {
        value: (0.5 * sum.value()).clamp(0.0, 1.0),
        n_samples: em.n_samples,
        n_cells,
        bias_note: (n_cells as f64 / (2.0 * PI * n)).sqrt(),
    })
}

/// Deterministic lower bounds on the TV distance from uniform of a law
/// supported in a shell (or ball) of outer radius `t + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportBound {
    /// `max(0, 1 − Vol_supp/V)`, `Vol_supp = min(V, (2Γ_d/(d−1)) e^{(d−1)t} sinh((d−1)δ))`.
    pub shell: f64,
    /// `max(0, 1 − Vol B(t + δ)/V)`.
    pub ball: f64,
}

pub fn tv_lower_bound_support(t: f64, delta: f64, dim: Dim, volume: f64) -> Result<SupportBound> {
    if !(t > 0.0) || !(delta > 0.0) || !(volume > 0.0) {
        return domain(format!("t, δ and V must be positive, got {t}, {delta}, {volume}"));
    }
    let k = dim.as_f64() - 1.0;
    let shell_volume = (2.0 * dim.unit_sphere_area() / k * (k * t).exp() * (k * delta).sinh()).min(volume);
    let ball = ball_volume(dim, t + delta)?.min(volume);
    Ok(SupportBound { shell: (1.0 - shell_volume / volume).max(0.0), ball: (1.0 - ball / volume).max(0.0) })
}

/// Exact sampler of the normalized area measure on the polygon: uniform
/// points of the hyperbolic disk of the circumradius, rejected off the polygon.
#[derive(Debug, Clone)]
pub struct UniformSampler<'a> {
    domain: &'a FundamentalDomain,
    ball: BallSampler,
    origin: HPoint,
}

impl<'a> UniformSampler<'a> {
    pub fn new(domain: &'a FundamentalDomain) -> Result<Self> {
        Ok(Self { domain, ball: BallSampler::new(Dim::TWO, domain.circumradius)?, origin: HPoint::origin(Dim::TWO) })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SurfacePoint> {
        loop {
            let z = hyperboloid_to_disk(&self.ball.sample(rng, &self.origin))?;
            if self.domain.contains(z, 0.0) {
                return Ok(SurfacePoint::from_rep_unchecked(z));
            }
        }
    }
}

/// Pearson goodness of fit against the area law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Groups after pooling cells with expected count below 5.
    pub groups: usize,
}

/// Cells are pooled in index order until each group expects at least 5 samples.
pub fn chi_square_vs_uniform(em: &EmpiricalMeasure) -> Result<ChiSquareTest> {
    if em.n_samples == 0 {
        return domain("empty measure");
    }
    let n = em.n_samples as f64;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (w, a) in em.weights.iter().zip(&em.grid.areas) {
        obs += *w as f64;
        exp += n * a / em.grid.total_area;
        if exp >= 5.0 {
            groups.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => groups.push((obs, exp)),
        }
    }
    if groups.len() < 2 {
        return Err(Error::Precondition("too few samples for a chi-square test".into()));
    }
    let statistic: f64 = groups.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = groups.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(ChiSquareTest { statistic, dof, p_value: dist.sf(statistic), groups: groups.len() })
}

/// How a sweep splits its samples into reproducible chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPlan {
    pub n_samples: u64,
    pub chunk_size: u64,
    pub master_seed: u64,
    /// Distinguishes sweeps sharing a master seed (e.g. the δ index).
    pub tag: u64,
}

impl SweepPlan {
    pub fn new(n_samples: u64, master_seed: u64, tag: u64) -> Self {
        Self { n_samples, chunk_size: 1 << 14, master_seed, tag }
    }

    fn chunks(&self) -> Vec<(u64, u64)> {
        let n_chunks = self.n_samples.div_ceil(self.chunk_size);
        (0..n_chunks).map(|c| (c, self.chunk_size.min(self.n_samples - c * self.chunk_size))).collect()
    }
}

/// Runs `per_sample` for every sample in parallel chunks and merges the
/// per-time histograms in chunk order. `per_sample` gets the chunk's stream
/// and pushes into one histogram per observation time.
fn chunked_sweep<F>(domain: &FundamentalDomain, grid: &Arc<CellGrid>, n_times: usize, plan: SweepPlan, per_sample: F) -> Result<Vec<EmpiricalMeasure>>
where
    F: Fn(&mut SeededStream, &mut dyn FnMut(usize, SurfacePoint) -> Result<()>) -> Result<()> + Sync,
{
    if plan.n_samples == 0 {
        return self::domain("a sweep needs at least one sample");
    }
    let partial: Vec<Vec<EmpiricalMeasure>> = plan
        .chunks()
        .into_par_iter()
        .map(|(chunk, count)| {
            let mut rng = SeededStream::for_chunk(plan.master_seed, plan.tag, chunk);
            let mut hists: Vec<EmpiricalMeasure> = (0..n_times).map(|_| EmpiricalMeasure::new(grid.clone())).collect();
            for _ in 0..count {
                per_sample(&mut rng, &mut |k, p| hists[k].add(domain, &p))?;
            }
            Ok(hists)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<EmpiricalMeasure> = (0..n_times).map(|_| EmpiricalMeasure::new(grid.clone())).collect();
    for hists in &partial {
        for (o, h) in out.iter_mut().zip(hists) {
            o.merge(h)?;
        }
    }
    Ok(out)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.first().is_some_and(|t| !(*t >= 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return domain("observation times must be finite, non-negative and strictly increasing");
    }
    Ok(())
}

/// Histograms of the geodesic process at each of `times`. Every sample's
/// initial state is flowed to all times (common random numbers across t).
pub fn geodesic_sweep(sampler: &GeodesicSampler<'_>, times: &[f64], grid: &Arc<CellGrid>, plan: SweepPlan) -> Result<Vec<EmpiricalMeasure>> {
    check_times(times)?;
    let (g, d) = (sampler.group, sampler.domain);
    chunked_sweep(d, grid, times.len(), plan, |rng, push| {
        let mut c = Carried::new(g, d, &sampler.initial_state(rng))?;
        let mut now = 0.0;
        for (k, &t) in times.iter().enumerate() {
            c.advance(g, d, t - now)?;
            now = t;
            push(k, c.rep)?;
        }
        Ok(())
    })
}

/// Histograms of Brownian motion at each of `times` (ascending); one radial
/// path per sample is observed at every time.
pub fn brownian_sweep(
    sampler: &GeodesicSampler<'_>,
    times: &[f64],
    dt_rel: f64,
    grid: &Arc<CellGrid>,
    plan: SweepPlan,
) -> Result<Vec<EmpiricalMeasure>> {
    if sampler.delta() != 0.0 {
        return Err(Error::Precondition("Brownian samples start exactly at the centre (δ = 0)".into()));
    }
    let (g, d) = (sampler.group, sampler.domain);
    chunked_sweep(d, grid, times.len(), plan, |rng, push| {
        let mut c = Carried::new(g, d, &sampler.initial_state(rng))?;
        let radii = brownian_radius_path(times, Dim::TWO, dt_rel, rng)?;
        let mut now = 0.0;
        // the radius is not monotone, so the carried state may flow backwards
        for (k, &r) in radii.iter().enumerate() {
            c.advance(g, d, r - now)?;
            now = r;
            push(k, c.rep)?;
        }
        Ok(())
    })
}

/// Histograms at each of `times` of the geodesic flow started from the
/// uniform law with uniform directions.
pub fn stationary_sweep(
    group: &FuchsianGroup,
    domain: &FundamentalDomain,
    times: &[f64],
    grid: &Arc<CellGrid>,
    plan: SweepPlan,
) -> Result<Vec<EmpiricalMeasure>> {
    check_times(times)?;
    let uniform = UniformSampler::new(domain)?;
    chunked_sweep(domain, grid, times.len(), plan, |rng, push| {
        let start = disk_to_hyperboloid(uniform.sample(rng)?.rep())?;
        let mut c = Carried::new(group, domain, &sample_tangent_uniform(rng, &start))?;
        let mut now = 0.0;
        for (k, &t) in times.iter().enumerate() {
            c.advance(group, domain, t - now)?;
            now = t;
            push(k, c.rep)?;
        }
        Ok(())
    })
}

/// `re,im` rows for a sample dump.
pub fn samples_to_csv(samples: &[SurfacePoint]) -> String {
    let mut out = String::from("re,im\n");
    for p in samples {
        out.push_str(&format!("{:?},{:?}\n", p.rep().re, p.rep().im));
    }
    out
}
