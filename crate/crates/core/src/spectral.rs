//! Laplace spectra of compact manifolds: eigenvalue tables, the Sarnak–Xue
//! density profile, and spectral upper bounds on the total-variation distance
//! of the geodesic process to equilibrium.
//!
//! A table file is UTF-8 text:
//!
//! ```text
//! # d=2 V=12.566370614359172
//! # any further line starting with '#' is a comment
//! 0
//! 0.3
//! 1.1,2
//! ```
//!
//! Each data line is `lambda` or `lambda,multiplicity`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::hypgeom::{ball_volume, Dim};
use crate::multiplier::{spectral_point, Series};
use crate::quadrature::CompensatedSum;

/// Slack on the Sarnak–Xue comparison `I(s) ≤ 1 − s`.
pub const PROFILE_SLACK: f64 = 1e-12;

/// Bisection width for [`mixing_time_from_bound`].
pub const CROSSING_TOL: f64 = 1e-6;

/// One row of a spectrum table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub lambda: f64,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumTable {
    dim: Dim,
    volume: f64,
    eigenvalues: Vec<Eigenvalue>,
    source: String,
}

impl SpectrumTable {
    /// Validates: `λ_0 = 0` with multiplicity 1, rows sorted ascending, all
    /// finite and non-negative, multiplicities ≥ 1, volume positive.
    pub fn new(dim: Dim, volume: f64, eigenvalues: Vec<Eigenvalue>, source: impl Into<String>) -> Result<Self> {
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(Error::Invariant(format!("volume must be positive, got {volume}")));
        }
        match eigenvalues.first() {
            Some(e) if e.lambda == 0.0 && e.multiplicity == 1 => {}
            Some(e) => {
                return Err(Error::Invariant(format!(
                    "row 0: the first eigenvalue must be 0 with multiplicity 1, got {},{}",
                    e.lambda, e.multiplicity
                )))
            }
            None => return Err(Error::Invariant("empty spectrum table".into())),
        }
        for (i, e) in eigenvalues.iter().enumerate() {
            if !e.lambda.is_finite() || e.lambda < 0.0 {
                return Err(Error::Invariant(format!("row {i}: eigenvalue {} is not a finite non-negative number", e.lambda)));
            }
            if e.multiplicity == 0 {
                return Err(Error::Invariant(format!("row {i}: multiplicity must be at least 1")));
            }
            if i > 0 {
                let prev = eigenvalues[i - 1].lambda;
                if e.lambda < prev {
                    return Err(Error::Invariant(format!("row {i}: eigenvalue {} is smaller than the previous {prev}", e.lambda)));
                }
                if e.lambda == 0.0 {
                    return Err(Error::Invariant(format!("row {i}: eigenvalue 0 repeated (disconnected manifold)")));
                }
            }
        }
        Ok(Self { dim, volume, eigenvalues, source: source.into() })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn eigenvalues(&self) -> &[Eigenvalue] {
        &self.eigenvalues
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Series of each row.
    pub fn series(&self) -> Vec<Series> {
        self.eigenvalues
            .iter()
            .map(|e| spectral_point(self.dim, e.lambda).expect("validated eigenvalue").series)
            .collect()
    }

    /// Smallest non-zero eigenvalue.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.eigenvalues.get(1).map(|e| e.lambda)
    }

    /// Parses the text format described in the module documentation.
    pub fn parse(text: &str, source: impl Into<String>) -> Result<Self> {
        let mut header: Option<(Dim, f64)> = None;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header.is_none() {
                    header = Some(parse_header(rest, line_no)?);
                }
                continue;
            }
            if header.is_none() {
                return Err(Error::Parse { line: line_no, msg: "data before the `# d=<int> V=<float>` header".into() });
            }
            let mut parts = line.split(',').map(str::trim);
            let lambda: f64 = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| Error::Parse { line: line_no, msg: format!("bad eigenvalue: {e}") })?;
            let multiplicity: u32 = match parts.next() {
                Some(m) => m.parse().map_err(|e| Error::Parse { line: line_no, msg: format!("bad multiplicity: {e}") })?,
                None => 1,
            };
            if parts.next().is_some() {
                return Err(Error::Parse { line: line_no, msg: "expected `lambda` or `lambda,multiplicity`".into() });
            }
            rows.push(Eigenvalue { lambda, multiplicity });
        }
        let (dim, volume) = header.ok_or(Error::Parse { line: 0, msg: "missing `# d=<int> V=<float>` header".into() })?;
        Self::new(dim, volume, rows, source)
    }

    /// Serializes to the text format; floats use shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = format!("# d={} V={:?}\n", self.dim, self.volume);
        if !self.source.is_empty() {
            for line in self.source.lines() {
                let _ = writeln!(out, "# source: {line}");
            }
        }
        for e in &self.eigenvalues {
            if e.multiplicity == 1 {
                let _ = writeln!(out, "{:?}", e.lambda);
            } else {
                let _ = writeln!(out, "{:?},{}", e.lambda, e.multiplicity);
            }
        }
        out
    }
}

fn parse_header(rest: &str, line: usize) -> Result<(Dim, f64)> {
    let mut dim = None;
    let mut volume = None;
    for token in rest.split_whitespace() {
        if let Some(v) = token.strip_prefix("d=") {
            let d: u32 = v.parse().map_err(|e| Error::Parse { line, msg: format!("bad dimension: {e}") })?;
            dim = Some(Dim::new(d).map_err(|e| Error::Parse { line, msg: e.to_string() })?);
        } else if let Some(v) = token.strip_prefix("V=") {
            volume = Some(v.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("bad volume: {e}") })?);
        }
    }
    match (dim, volume) {
        (Some(d), Some(v)) => Ok((d, v)),
        _ => Err(Error::Parse { line, msg: "header must read `# d=<int> V=<float>`".into() }),
    }
}

pub fn load_spectrum(path: &Path) -> Result<SpectrumTable> {
    let text = std::fs::read_to_string(path)?;
    SpectrumTable::parse(&text, path.display().to_string())
}

pub fn save_spectrum(table: &SpectrumTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_text())?;
    Ok(())
}

/// `s = √(1 − λ/σ_d)`, the exponent parameter of a complementary eigenvalue.
pub fn s_parameter(dim: Dim, lambda: f64) -> Result<f64> {
    let sigma = dim.sigma();
    if !(lambda > 0.0 && lambda < sigma) {
        return domain(format!("s is defined for 0 < λ < σ_d = {sigma}, got {lambda}"));
    }
    Ok((1.0 - lambda / sigma).sqrt())
}

/// One point of the Sarnak–Xue profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub s: f64,
    /// `#{k : λ_k ≤ σ_d(1 − s²)}` with multiplicity.
    pub count: u64,
    /// `ln(count)/ln V`.
    pub ratio: f64,
    /// `ratio > 1 − s`.
    pub violation: bool,
}

pub fn density_profile(table: &SpectrumTable, s_grid: &[f64]) -> Vec<ProfileRow> {
    let sigma = table.dim.sigma();
    let log_v = table.volume.ln();
    s_grid
        .iter()
        .map(|&s| {
            let threshold = sigma * (1.0 - s * s);
            let count: u64 =
                table.eigenvalues.iter().take_while(|e| e.lambda <= threshold).map(|e| e.multiplicity as u64).sum();
            let ratio = (count as f64).ln() / log_v;
            ProfileRow { s, count, ratio, violation: ratio > 1.0 - s + PROFILE_SLACK }
        })
        .collect()
}

/// `C t² (Σ_comp e^{−(1−s_k)(d−1)t} c_k + Σ_princ e^{−(d−1)t} c_k)`, a bound on
/// `d_TV²`. `coeffs[k]` is the squared coefficient of the starting density on
/// row k; the row of λ = 0 is skipped.
pub fn tv_bound_majl2(table: &SpectrumTable, coeffs: &[f64], t: f64, c: f64) -> Result<f64> {
    if coeffs.len() != table.eigenvalues.len() {
        return domain(format!("{} coefficients for {} eigenvalue rows", coeffs.len(), table.eigenvalues.len()));
    }
    if !(t > 0.0) {
        return domain(format!("t must be positive, got {t}"));
    }
    let gap = table.dim.as_f64() - 1.0;
    let mut sum = CompensatedSum::new();
    for (e, &coeff) in table.eigenvalues.iter().zip(coeffs).skip(1) {
        let rate = if e.lambda < table.dim.sigma() { 1.0 - s_parameter(table.dim, e.lambda)? } else { 1.0 };
        sum.add((-rate * gap * t).exp() * coeff);
    }
    Ok(c * t * t * sum.value())
}

/// Exponential rate `(1 − s_1)(d − 1)` of the slowest non-trivial mode.
fn slowest_rate(table: &SpectrumTable) -> Result<f64> {
    let lambda1 = table
        .spectral_gap()
        .ok_or_else(|| Error::Precondition("the table has no non-zero eigenvalue".into()))?;
    if lambda1 == 0.0 {
        return Err(Error::Precondition("λ_1 = 0: the manifold is disconnected".into()));
    }
    let gap = table.dim.as_f64() - 1.0;
    Ok(if lambda1 < table.dim.sigma() { (1.0 - s_parameter(table.dim, lambda1)?) * gap } else { gap })
}

/// `√(C t² (V / Vol B(δ)) e^{−(1−s_1)(d−1)t})`, a bound on `d_TV` for the
/// process started uniformly on a δ-ball, with `s_1 = 0` when λ_1 ≥ σ_d.
pub fn tv_bound_coarse(table: &SpectrumTable, delta: f64, t: f64, c: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return domain(format!("δ must be positive, got {delta}"));
    }
    let rate = slowest_rate(table)?;
    let mass = table.volume / ball_volume(table.dim, delta)?;
    Ok((c * t * t * mass * (-rate * t).exp()).sqrt())
}

/// Parameters behind a [`TVBoundCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub delta: f64,
    pub volume: f64,
    pub s1: f64,
    pub c: f64,
}

/// Upper bounds on `d_TV` along a time grid, with the underlying function kept
/// for refinement between grid points.
#[derive(Clone)]
pub struct TVBoundCurve {
    pub times: Vec<f64>,
    pub bounds: Vec<f64>,
    pub params: Option<BoundParams>,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TVBoundCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TVBoundCurve").field("times", &self.times).field("bounds", &self.bounds).field("params", &self.params).finish()
    }
}

impl TVBoundCurve {
    /// Tabulates an arbitrary bound function on `times`.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        check_grid(&times)?;
        let bounds = times.iter().map(|&t| f(t)).collect();
        Ok(Self { times, bounds, params: None, eval: Arc::new(f) })
    }

    /// The coarse bound [`tv_bound_coarse`] on `times`.
    pub fn coarse(table: &SpectrumTable, delta: f64, times: Vec<f64>, c: f64) -> Result<Self> {
        check_grid(&times)?;
        let rate = slowest_rate(table)?;
        if !(delta > 0.0) {
            return domain(format!("δ must be positive, got {delta}"));
        }
        let mass = table.volume / ball_volume(table.dim, delta)?;
        let f = move |t: f64| (c * t * t * mass * (-rate * t).exp()).sqrt();
        let s1 = 1.0 - rate / (table.dim.as_f64() - 1.0);
        let mut curve = Self::from_fn(times, f)?;
        curve.params = Some(BoundParams { delta, volume: table.volume, s1, c });
        Ok(curve)
    }

    /// `√(tv_bound_majl2)` on `times`.
    pub fn fine(table: &SpectrumTable, coeffs: &[f64], times: Vec<f64>, c: f64) -> Result<Self> {
        check_grid(&times)?;
        tv_bound_majl2(table, coeffs, 1.0, c)?;
        let table = table.clone();
        let coeffs = coeffs.to_vec();
        let f = move |t: f64| tv_bound_majl2(&table, &coeffs, t, c).map(f64::sqrt).unwrap_or(f64::NAN);
        Self::from_fn(times, f)
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.eval)(t)
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return domain("empty time grid");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return domain("time grid must be positive and strictly increasing");
    }
    Ok(())
}

/// First time after which the bound stays at or below `epsilon`.
///
/// Locates the last grid point above `epsilon` and bisects between it and its
/// successor to [`CROSSING_TOL`]. The search runs from the right because the
/// `t²` prefactor makes the bounds small again as t → 0, where they carry no
/// information about mixing.
pub fn mixing_time_from_bound(curve: &TVBoundCurve, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("ε must lie in (0, 1), got {epsilon}"));
    }
    let above = |b: f64| !(b <= epsilon);
    let n = curve.times.len();
    let Some(last) = (0..n).rev().find(|&i| above(curve.bounds[i])) else {
        return Ok(curve.times[0]);
    };
    if last + 1 == n {
        return Err(Error::NoCrossing(format!(
            "bound is {} > ε = {epsilon} at the last grid time {}; extend the t range",
            curve.bounds[last], curve.times[last]
        )));
    }
    let (mut lo, mut hi) = (curve.times[last], curve.times[last + 1]);
    while hi - lo > CROSSING_TOL {
        let mid = 0.5 * (lo + hi);
        if above(curve.eval(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
