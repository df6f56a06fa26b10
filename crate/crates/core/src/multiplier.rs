//! The spherical-mean multiplier ν_t(λ).
//!
//! The spherical mean `A_t` acts on a Laplace eigenfunction with eigenvalue
//! `λ = (d−1)²/4 + u²` by the scalar
//!
//! ```text
//! ν_t(λ) = c_d ∫_{−1}^{1} (cosh t + x sinh t)^{iu − (d−1)/2} (1 − x²)^{(d−3)/2} dx,
//! c_d    = Γ(d/2) / (√π Γ((d−1)/2)),
//! ```
//!
//! normalized so that `ν_t(0) = 1` (A_t fixes constants). For d = 3 this is
//! `sin(ut)/(u sinh t)`.
//!
//! The quadrature runs in the variable `s = ln(cosh t + x sinh t)`, where the
//! oscillating factor becomes `e^{ius}`, followed by `s = −t cos φ`:
//!
//! ```text
//! ν_t(λ) = K ∫_0^π e^{−iut cos φ − (d−1)t/2} sin^{d−2}φ [h(t−t cos φ) h(t+t cos φ)]^{(d−3)/2} dφ
//! K      = c_d 2^{d−2} t^{d−2} / (1 − e^{−2t})^{d−2},   h(x) = (1 − e^{−x})/x.
//! ```
//!
//! The integrand is smooth on the closed interval for every d (the endpoint
//! singularities of `(1−x²)^{−1/2}` and the e^{−t}-wide spike at x = −1 are
//! both absorbed), so Gauss–Legendre panels converge geometrically.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::hypgeom::Dim;
use crate::quadrature::{integrate, AdaptiveSettings};

/// Smallest accepted quadrature tolerance.
pub const MIN_TOL: f64 = 1e-13;

/// Threshold on `|Im ν|` for an accepted evaluation.
pub const REALITY_TOL: f64 = 1e-9;

/// Frozen envelope constants `C(d, t₀ = 1)` for [`nu_bound`].
///
/// Fitted once with [`fit_envelope_constant`] on t ∈ [1, 20] × λ ∈ [0, 400],
/// with a 0.01 × 0.005 refinement of [1, 3] × [0, 3]. The maximal ratio sits
/// at t = t₀, λ = σ_d in both dimensions (1.5512 for d = 2; for d = 3 it is
/// 2/(1 − e⁻²) = 2.3130), and the constants round it up in the second digit.
pub const FROZEN_ENVELOPE_C_D2: f64 = 1.56;
pub const FROZEN_ENVELOPE_C_D3: f64 = 2.32;

/// Position of an eigenvalue relative to the continuous spectrum of ℍ^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Series {
    /// λ = 0.
    Trivial,
    /// 0 < λ < σ_d.
    Complementary,
    /// λ ≥ σ_d.
    Principal,
}

/// The spectral parameter `u` with `λ = σ_d + u²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SpectralParam {
    /// `u ≥ 0` real.
    Real(f64),
    /// `u = i·v` with `v ∈ (0, (d−1)/2]`.
    Imaginary(f64),
}

impl SpectralParam {
    pub fn u_squared(self) -> f64 {
        match self {
            SpectralParam::Real(u) => u * u,
            SpectralParam::Imaginary(v) => -v * v,
        }
    }

    /// `Im u` (zero on the principal series).
    pub fn im(self) -> f64 {
        match self {
            SpectralParam::Real(_) => 0.0,
            SpectralParam::Imaginary(v) => v,
        }
    }

    /// `Re u` (zero off the principal series).
    pub fn re(self) -> f64 {
        match self {
            SpectralParam::Real(u) => u,
            SpectralParam::Imaginary(_) => 0.0,
        }
    }
}

/// An eigenvalue with its spectral parameter and series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub dim: Dim,
    pub lambda: f64,
    pub u: SpectralParam,
    pub series: Series,
}

impl SpectralPoint {
    /// `s ∈ (0, 1]` with `λ = σ_d(1 − s²)`, for trivial and complementary points.
    pub fn s(&self) -> Option<f64> {
        match self.u {
            SpectralParam::Imaginary(v) => Some(v / self.dim.half_gap()),
            SpectralParam::Real(_) => None,
        }
    }
}

/// Classifies `lambda` and computes `u`.
pub fn spectral_point(dim: Dim, lambda: f64) -> Result<SpectralPoint> {
    if !lambda.is_finite() || lambda < 0.0 {
        return domain(format!("eigenvalue must be finite and non-negative, got {lambda}"));
    }
    let sigma = dim.sigma();
    let (u, series) = if lambda >= sigma {
        (SpectralParam::Real((lambda - sigma).sqrt()), Series::Principal)
    } else if lambda == 0.0 {
        (SpectralParam::Imaginary(dim.half_gap()), Series::Trivial)
    } else {
        (SpectralParam::Imaginary((sigma - lambda).sqrt()), Series::Complementary)
    };
    Ok(SpectralPoint { dim, lambda, u, series })
}

/// Closed form of ν_t for d = 3: `sin(ut)/(u sinh t)`, `sinh(vt)/(v sinh t)`
/// for `u = iv`, and `t/sinh t` at `u = 0`.
pub fn nu_closed_d3(u: SpectralParam, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return domain(format!("t must be positive, got {t}"));
    }
    // 1/sinh t written as 2e^{−t}/(1 − e^{−2t}) so large t does not overflow.
    let inv_sinh = 2.0 * (-t).exp() / -(-2.0 * t).exp_m1();
    Ok(match u {
        SpectralParam::Real(u) if u == 0.0 => t * inv_sinh,
        SpectralParam::Real(u) => (u * t).sin() / u * inv_sinh,
        SpectralParam::Imaginary(v) if v == 0.0 => t * inv_sinh,
        SpectralParam::Imaginary(v) => {
            // sinh(vt)/(v sinh t) = e^{(v−1)t} (1 − e^{−2vt}) / (v (1 − e^{−2t}))
            ((v - 1.0) * t).exp() * -(-2.0 * v * t).exp_m1() / (v * -(-2.0 * t).exp_m1())
        }
    })
}

/// A quadrature evaluation of ν_t(λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuResult {
    pub value: f64,
    /// `|Im ν|`; should vanish since ν_t is real.
    pub imag_residual: f64,
    pub quadrature_error_estimate: f64,
}

/// `c_d = Γ(d/2) / (√π Γ((d−1)/2))`, the normalization giving ν_t(0) = 1.
pub fn normalization_constant(dim: Dim) -> f64 {
    let d = dim.as_f64();
    (ln_gamma(d / 2.0) - ln_gamma((d - 1.0) / 2.0)).exp() / PI.sqrt()
}

/// `(1 − e^{−x})/x`, equal to 1 at 0.
#[inline]
fn h(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Evaluates ν_t(λ) by adaptive Gauss–Legendre quadrature with absolute
/// tolerance `tol` on the result.
pub fn nu_quadrature(sp: &SpectralPoint, t: f64, tol: f64) -> Result<NuResult> {
    if !(t > 0.0) || !t.is_finite() {
        return domain(format!("t must be positive, got {t}"));
    }
    if !(tol >= MIN_TOL) {
        return domain(format!("tolerance must be at least {MIN_TOL:e}, got {tol:e}"));
    }
    let d = sp.dim.as_f64();
    let k = sp.dim.get() as i32 - 2;
    let scale = normalization_constant(sp.dim) * (2.0 * t).powi(k) / (-(-2.0 * t).exp_m1()).powi(k);
    let decay = sp.dim.half_gap() * t;
    let weight_exp = (d - 3.0) / 2.0;
    let u = sp.u;
    let integrand = move |phi: f64| {
        let (sin_phi, cos_phi) = phi.sin_cos();
        let half = 0.5 * phi;
        // t ∓ t cos φ computed without cancellation
        let p = 2.0 * t * half.sin().powi(2);
        let q = 2.0 * t * half.cos().powi(2);
        let w = sin_phi.powi(k) * (h(p) * h(q)).powf(weight_exp);
        let s = -t * cos_phi;
        match u {
            SpectralParam::Real(u) => Complex64::from_polar(w * (-decay).exp(), u * s),
            SpectralParam::Imaginary(v) => Complex64::new(w * (-v * s - decay).exp(), 0.0),
        }
    };
    let periods = u.re() * t / PI;
    let settings = AdaptiveSettings {
        tol: tol / scale,
        initial_panels: ((4.0 * periods).ceil() as usize).max(8),
        max_levels: 20,
    };
    let q = integrate(integrand, 0.0, PI, settings).map_err(|e| match e {
        Error::Accuracy { best, estimate, tol: _ } => Error::Accuracy { best: best * scale, estimate: estimate * scale, tol },
        other => other,
    })?;
    Ok(NuResult {
        value: q.value.re * scale,
        imag_residual: (q.value.im * scale).abs(),
        quadrature_error_estimate: q.error_estimate * scale,
    })
}

/// Decay envelope for |ν_t(λ)|, valid for `t ≥ t0` with the (implicit)
/// constant `c`:
///
/// * `u = iv`: `c · min(t, 1/v) · e^{(v − (d−1)/2) t}`
/// * `u ≥ 0` : `c · min(t, u^{−(d−1)/2}) · e^{−(d−1)t/2}`
///
/// `1/0` is read as +∞, so both branches give `c·t·e^{−(d−1)t/2}` at u = 0.
pub fn nu_bound(sp: &SpectralPoint, t: f64, t0: f64, c: f64) -> Result<f64> {
    if !(t0 > 0.0) || !(c > 0.0) {
        return domain(format!("need t0 > 0 and C > 0, got t0 = {t0}, C = {c}"));
    }
    if !(t >= t0) || !t.is_finite() {
        return domain(format!("bound only holds for t ≥ t0 = {t0}, got {t}"));
    }
    let half_gap = sp.dim.half_gap();
    Ok(match sp.u {
        SpectralParam::Imaginary(v) => {
            let m = if v > 0.0 { t.min(1.0 / v) } else { t };
            c * m * ((v - half_gap) * t).exp()
        }
        SpectralParam::Real(u) => {
            let m = if u > 0.0 { t.min(u.powf(-half_gap)) } else { t };
            c * m * (-half_gap * t).exp()
        }
    })
}

/// Coarser envelope: `t e^{−(d−1)t/2}` on the principal series and
/// `t e^{−(d−1)(1−s)t/2}` off it, where `λ = σ_d(1 − s²)`.
pub fn nu_decay_class(sp: &SpectralPoint, t: f64) -> f64 {
    let rate = match sp.s() {
        Some(s) => sp.dim.half_gap() * (1.0 - s),
        None => sp.dim.half_gap(),
    };
    t * (-rate * t).exp()
}

/// Which envelope a fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Envelope {
    /// [`nu_bound`] with C = 1.
    Bound,
    /// [`nu_decay_class`].
    DecayClass,
}

/// Outcome of [`fit_envelope_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    /// Largest observed `|ν_t(λ)| / envelope`.
    pub max_ratio: f64,
    pub argmax_t: f64,
    pub argmax_lambda: f64,
    /// Largest `|Im ν|` met on the grid.
    pub max_imag_residual: f64,
    pub evaluations: usize,
}

/// Evaluates `|ν_t(λ)| / envelope` on the product grid and reports the maximum.
pub fn fit_envelope_constant(
    dim: Dim,
    t0: f64,
    ts: &[f64],
    lambdas: &[f64],
    envelope: Envelope,
    tol: f64,
) -> Result<EnvelopeFit> {
    let points: Vec<SpectralPoint> = lambdas.iter().map(|&l| spectral_point(dim, l)).collect::<Result<_>>()?;
    let cells: Vec<(f64, SpectralPoint)> = ts.iter().flat_map(|&t| points.iter().map(move |p| (t, *p))).collect();
    let ratios: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|(t, sp)| {
            let nu = nu_quadrature(sp, *t, tol)?;
            let env = match envelope {
                Envelope::Bound => nu_bound(sp, *t, t0, 1.0)?,
                Envelope::DecayClass => nu_decay_class(sp, *t),
            };
            Ok((nu.value.abs() / env, nu.imag_residual, sp.lambda))
        })
        .collect::<Result<_>>()?;
    let mut fit = EnvelopeFit { max_ratio: 0.0, argmax_t: f64::NAN, argmax_lambda: f64::NAN, max_imag_residual: 0.0, evaluations: cells.len() };
    for ((t, _), (r, im, l)) in cells.iter().zip(ratios) {
        fit.max_imag_residual = fit.max_imag_residual.max(im);
        if r > fit.max_ratio {
            fit.max_ratio = r;
            fit.argmax_t = *t;
            fit.argmax_lambda = l;
        }
    }
    Ok(fit)
}

/// Frozen `C(d, t₀ = 1)` for [`nu_bound`], where one has been fitted.
pub fn frozen_envelope_constant(dim: Dim) -> Option<f64> {
    match dim.get() {
        2 => Some(FROZEN_ENVELOPE_C_D2),
        3 => Some(FROZEN_ENVELOPE_C_D3),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn classification() {
        let p = spectral_point(Dim::TWO, 0.0).unwrap();
        assert_eq!(p.series, Series::Trivial);
        assert_eq!(p.u, SpectralParam::Imaginary(0.5));
        assert_eq!(Dim::TWO.sigma(), 0.25);

        let p = spectral_point(Dim::THREE, 1.0).unwrap();
        assert_eq!(p.series, Series::Principal);
        assert_eq!(p.u, SpectralParam::Real(0.0));

        let p = spectral_point(Dim::TWO, 3.0 / 16.0).unwrap();
        assert_eq!(p.series, Series::Complementary);
        assert_relative_eq!(p.u.im(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(p.s().unwrap(), 0.5, epsilon = 1e-15);

        assert!(spectral_point(Dim::TWO, -1e-3).is_err());
    }

    #[test]
    fn lambda_identity_holds() {
        for d in 2..=5 {
            let dim = Dim::new(d).unwrap();
            for l in [0.0, 0.01, 0.3, 1.0, 4.0, 17.5, 400.0] {
                let p = spectral_point(dim, l).unwrap();
                assert!((dim.sigma() + p.u.u_squared() - l).abs() <= 1e-12 * l.max(1.0));
            }
        }
    }

    #[test]
    fn closed_form_limits() {
        let trivial = SpectralParam::Imaginary(1.0);
        for t in [0.1, 1.0, 5.0, 20.0, 800.0] {
            assert_relative_eq!(nu_closed_d3(trivial, t).unwrap(), 1.0, epsilon = 1e-14);
        }
        let v = nu_closed_d3(SpectralParam::Real(1.0), 1.0).unwrap();
        assert_relative_eq!(v, 1.0f64.sin() / 1.0f64.sinh(), epsilon = 1e-15);
        for u in [0.0, 0.5, 3.0, 20.0] {
            let v = nu_closed_d3(SpectralParam::Real(u), 1e-7).unwrap();
            assert!((v - 1.0).abs() < 1e-10);
        }
        assert!(nu_closed_d3(SpectralParam::Real(1.0), 0.0).is_err());
    }

    #[test]
    fn normalization_constant_matches_gamma_ratio() {
        assert_relative_eq!(normalization_constant(Dim::TWO), 1.0 / PI, epsilon = 1e-13);
        assert_relative_eq!(normalization_constant(Dim::THREE), 0.5, epsilon = 1e-13);
        assert_relative_eq!(normalization_constant(Dim::new(4).unwrap()), 2.0 / PI, epsilon = 1e-13);
    }

    #[test]
    fn quadrature_normalized_at_zero() {
        for d in 2..=5 {
            let p = spectral_point(Dim::new(d).unwrap(), 0.0).unwrap();
            for t in [0.1, 1.0, 10.0, 20.0] {
                let r = nu_quadrature(&p, t, 1e-12).unwrap();
                assert!((r.value - 1.0).abs() < 1e-10, "d={d} t={t}: {}", r.value);
                assert!(r.imag_residual <= REALITY_TOL);
            }
        }
    }

    #[test]
    fn quadrature_matches_d3_closed_form() {
        for u in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let p = spectral_point(Dim::THREE, 1.0 + u * u).unwrap();
            for t in [0.1, 1.0, 5.0, 10.0, 20.0] {
                let q = nu_quadrature(&p, t, 1e-13).unwrap();
                let c = nu_closed_d3(p.u, t).unwrap();
                assert!((q.value - c).abs() <= 1e-10, "u={u} t={t}: {} vs {c}", q.value);
            }
        }
    }

    #[test]
    fn quadrature_matches_d3_closed_form_complementary() {
        for l in [0.05, 0.5, 0.99] {
            let p = spectral_point(Dim::THREE, l).unwrap();
            for t in [0.3, 2.0, 15.0] {
                let q = nu_quadrature(&p, t, 1e-13).unwrap();
                let c = nu_closed_d3(p.u, t).unwrap();
                assert!((q.value - c).abs() <= 1e-10 * c.abs().max(1.0));
            }
        }
    }

    /// Conical function P_{−1/2+iu}(cosh t) from the hypergeometric series
    /// cosh(t/2)^{2ν} ₂F₁(−ν, −ν; 1; tanh²(t/2)), ν = −1/2 + iu.
    fn conical_oracle(u: f64, t: f64) -> f64 {
        let nu = Complex64::new(-0.5, u);
        let a = -nu;
        let x = (0.5 * t).tanh().powi(2);
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for n in 0..2000 {
            let nf = n as f64;
            term = term * (a + nf) * (a + nf) / ((nf + 1.0) * (nf + 1.0)) * x;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        let pre = Complex64::new((0.5 * t).cosh().ln(), 0.0) * (nu * 2.0);
        (pre.exp() * sum).re
    }

    #[test]
    fn d2_matches_conical_function() {
        let p = spectral_point(Dim::TWO, 0.25 + 1.0).unwrap();
        let q = nu_quadrature(&p, 2.0, 1e-13).unwrap();
        let oracle = conical_oracle(1.0, 2.0);
        assert!((q.value - oracle).abs() < 1e-11, "{} vs {oracle}", q.value);
        for (u, t) in [(0.3, 0.5), (4.0, 1.5), (7.5, 3.0)] {
            let p = spectral_point(Dim::TWO, 0.25 + u * u).unwrap();
            let q = nu_quadrature(&p, t, 1e-13).unwrap();
            assert!((q.value - conical_oracle(u, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn contraction_and_reality_on_grid() {
        for d in 2..=5 {
            let dim = Dim::new(d).unwrap();
            for l in [0.0, 0.1, dim.sigma(), 2.0, 30.0, 400.0] {
                let p = spectral_point(dim, l).unwrap();
                for t in [0.1, 0.7, 3.0, 12.0, 20.0] {
                    let r = nu_quadrature(&p, t, 1e-12).unwrap();
                    assert!(r.value.abs() <= 1.0 + 1e-12, "d={d} λ={l} t={t}: {}", r.value);
                    assert!(r.imag_residual <= REALITY_TOL);
                }
            }
        }
    }

    #[test]
    fn tolerance_and_time_are_validated() {
        let p = spectral_point(Dim::TWO, 1.0).unwrap();
        assert!(nu_quadrature(&p, 1.0, 1e-15).is_err());
        assert!(nu_quadrature(&p, 0.0, 1e-10).is_err());
    }

    #[test]
    fn bound_shapes() {
        let dim = Dim::TWO;
        let a = nu_bound(&spectral_point(dim, 10.0).unwrap(), 3.0, 1.0, 1.0).unwrap();
        let b = nu_bound(&spectral_point(dim, 100.0).unwrap(), 3.0, 1.0, 1.0).unwrap();
        assert!(b < a);
        // λ → 0: min(t, 2/(d−1)) e^0
        let z = nu_bound(&spectral_point(dim, 0.0).unwrap(), 5.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(z, 2.0, epsilon = 1e-15);
        let at_edge = nu_bound(&spectral_point(dim, 0.25).unwrap(), 5.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(at_edge, 5.0 * (-2.5f64).exp(), epsilon = 1e-15);
        assert!(nu_bound(&spectral_point(dim, 1.0).unwrap(), 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn decay_class_values() {
        let a = nu_decay_class(&spectral_point(Dim::TWO, 1.0).unwrap(), 4.0);
        let b = nu_decay_class(&spectral_point(Dim::TWO, 50.0).unwrap(), 4.0);
        assert_eq!(a, b);
        assert_eq!(nu_decay_class(&spectral_point(Dim::THREE, 0.0).unwrap(), 7.0), 7.0);
        let c = nu_decay_class(&spectral_point(Dim::TWO, 3.0 / 16.0).unwrap(), 10.0);
        assert_relative_eq!(c, 10.0 * (-2.5f64).exp(), epsilon = 1e-14);
    }
}
