//! Gauss–Legendre panel quadrature with adaptive refinement.
//!
//! Each panel is integrated with a 10-point and a 20-point Gauss–Legendre
//! rule; their difference is the panel error estimate. Panels whose error
//! exceeds their share of the tolerance are bisected, level by level, up to a
//! fixed depth. Accumulation uses Neumaier compensated summation.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Nodes and weights of an `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on P_n from the Chebyshev-like initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl10() -> &'static GaussLegendre {
    static R: OnceLock<GaussLegendre> = OnceLock::new();
    R.get_or_init(|| GaussLegendre::new(10))
}

fn gl20() -> &'static GaussLegendre {
    static R: OnceLock<GaussLegendre> = OnceLock::new();
    R.get_or_init(|| GaussLegendre::new(20))
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl ComplexSum {
    fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: Complex64,
    pub error_estimate: f64,
    pub levels_used: usize,
}

/// Settings for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveSettings {
    /// Absolute tolerance on the integral.
    pub tol: f64,
    /// Number of equal panels before refinement.
    pub initial_panels: usize,
    /// Maximum number of bisection levels.
    pub max_levels: usize,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self { tol: 1e-12, initial_panels: 8, max_levels: 20 }
    }
}

fn panel(f: &impl Fn(f64) -> Complex64, a: f64, b: f64) -> (Complex64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s10 = ComplexSum::default();
    let r10 = gl10();
    for (x, w) in r10.nodes.iter().zip(&r10.weights) {
        s10.add(f(mid + half * x) * *w);
    }
    let mut s20 = ComplexSum::default();
    let r20 = gl20();
    for (x, w) in r20.nodes.iter().zip(&r20.weights) {
        s20.add(f(mid + half * x) * *w);
    }
    let v10 = s10.value() * half;
    let v20 = s20.value() * half;
    (v20, (v20 - v10).norm())
}

/// Integrates a complex-valued `f` over `[a, b]`.
///
/// Returns [`Error::Accuracy`] when some panel still misses its share of the
/// tolerance after `max_levels` bisections; the error carries the best
/// estimate (real part).
pub fn integrate(f: impl Fn(f64) -> Complex64, a: f64, b: f64, settings: AdaptiveSettings) -> Result<Quadrature> {
    let width = b - a;
    if width == 0.0 {
        return Ok(Quadrature { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, levels_used: 0 });
    }
    let n0 = settings.initial_panels.max(1);
    let h = width / n0 as f64;
    let mut pending: Vec<(f64, f64)> = (0..n0)
        .map(|i| (a + h * i as f64, if i + 1 == n0 { b } else { a + h * (i + 1) as f64 }))
        .collect();
    let mut total = ComplexSum::default();
    let mut err_total = CompensatedSum::new();
    let mut level = 0;
    loop {
        let mut next = Vec::new();
        let mut level_value = ComplexSum::default();
        let mut level_err = 0.0;
        for &(lo, hi) in &pending {
            let (v, e) = panel(&f, lo, hi);
            let share = settings.tol * ((hi - lo) / width).abs();
            if e <= share || level == settings.max_levels {
                total.add(v);
                err_total.add(e);
                if e > share {
                    level_err += e;
                    level_value.add(v);
                }
            } else {
                let m = 0.5 * (lo + hi);
                next.push((lo, m));
                next.push((m, hi));
            }
        }
        if level == settings.max_levels && level_err > 0.0 {
            return Err(Error::Accuracy { best: total.value().re, estimate: err_total.value(), tol: settings.tol });
        }
        if next.is_empty() {
            return Ok(Quadrature { value: total.value(), error_estimate: err_total.value(), levels_used: level });
        }
        pending = next;
        level += 1;
    }
}

/// Real-valued convenience wrapper around [`integrate`].
pub fn integrate_real(f: impl Fn(f64) -> f64, a: f64, b: f64, settings: AdaptiveSettings) -> Result<(f64, f64)> {
    let q = integrate(|x| Complex64::new(f(x), 0.0), a, b, settings)?;
    Ok((q.value.re, q.error_estimate))
}
