//! Experiment orchestration behind the `hypercut` command line.
//!
//! Experiments are described by a small key-value file, one `key = value`
//! per line, `#` starting a comment:
//!
//! ```text
//! kind = geodesic-cutoff        # geodesic-cutoff | brownian-mixing | nu-table | spectrum-bound
//! surface = bolza               # or a path to a surface JSON file
//! center = 0.1, 0.05            # disk coordinates of the start point
//! delta = e^-3, e^-4, e^-5      # numbers, e^x or exp(x)
//! t_grid = 0.25:1.5:26          # list, or start:stop:count (inclusive)
//! t_scale = cutoff              # absolute | cutoff (multiply t_grid by t* per δ)
//! n_samples = 4000000
//! m = 32                        # cells per axis of the binning grid on [-1, 1]²
//! seed = 1
//! eps = 0.25, 0.5, 0.75
//! dt = 1e-3                     # relative Euler–Maruyama step (Brownian)
//! compare_t_grid = 0.25:1.5:26  # geodesic grid for the Brownian comparison (scaled like t_grid)
//! output = out/cutoff           # writes out/cutoff.csv and out/cutoff.json
//! d = 3                         # nu-table: dimension
//! lambda_grid = 0:400:81        # nu-table
//! tol = 1e-11                   # nu-table quadrature tolerance
//! table = spectrum.txt          # spectrum-bound
//! coeffs = coeffs.txt           # spectrum-bound, optional
//! c = 1                         # spectrum-bound constant
//! s_grid = 0.05:0.95:19         # spectrum-bound profile grid
//! ```
//!
//! The worker count comes from `HYPERCUT_WORKERS` and never changes results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::hypgeom::Dim;
use crate::multiplier::{nu_decay_class, nu_quadrature, spectral_point, Series, MIN_TOL, REALITY_TOL};
use crate::simulate::{
    brownian_sweep, geodesic_sweep, tv_against_uniform, tv_lower_bound_support, CellGrid, EmpiricalMeasure,
    GeodesicSampler, SweepPlan,
};
use crate::spectral::{
    density_profile, load_spectrum, mixing_time_from_bound, ProfileRow, SpectrumTable, TVBoundCurve,
};
use crate::surface::{bolza_group, load_surface, FuchsianGroup, FundamentalDomain, SurfacePoint};

pub const WORKERS_ENV: &str = "HYPERCUT_WORKERS";

/// Smallest sample count accepted for Monte Carlo experiments.
pub const MIN_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GeodesicCutoff,
    BrownianMixing,
    NuTable,
    SpectrumBound,
}

impl ExperimentKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "geodesic-cutoff" => Self::GeodesicCutoff,
            "brownian-mixing" | "brownian" => Self::BrownianMixing,
            "nu-table" | "nu" => Self::NuTable,
            "spectrum-bound" | "spectrum" => Self::SpectrumBound,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SurfaceSource {
    Bolza,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScale {
    Absolute,
    /// Grid values are multiples of `t* = −ln δ/(d − 1)`.
    Cutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub surface: SurfaceSource,
    pub center: [f64; 2],
    pub delta_list: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub t_scale: TimeScale,
    pub compare_t_grid: Option<Vec<f64>>,
    pub n_samples: u64,
    pub m_resolution: usize,
    pub master_seed: u64,
    pub output_path: Option<PathBuf>,
    pub eps_levels: Vec<f64>,
    pub dt: f64,
    pub dim: u32,
    pub lambda_grid: Vec<f64>,
    pub tol: f64,
    pub table: Option<PathBuf>,
    pub coeffs: Option<PathBuf>,
    pub bound_c: f64,
    pub s_grid: Vec<f64>,
}

impl ExperimentConfig {
    /// Defaults for `kind`; grids are left empty.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            surface: SurfaceSource::Bolza,
            center: [0.1, 0.05],
            delta_list: Vec::new(),
            t_grid: Vec::new(),
            t_scale: TimeScale::Absolute,
            compare_t_grid: None,
            n_samples: 4_000_000,
            m_resolution: 32,
            master_seed: 1,
            output_path: None,
            eps_levels: vec![0.25, 0.5, 0.75],
            dt: 1e-3,
            dim: 2,
            lambda_grid: Vec::new(),
            tol: 1e-11,
            table: None,
            coeffs: None,
            bound_c: 1.0,
            s_grid: linspace(0.05, 0.95, 19),
        }
    }

    /// Parses the key-value format; relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") });
            };
            let key = k.trim().to_ascii_lowercase();
            if entries.iter().any(|(_, seen, _)| *seen == key) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {key}") });
            }
            entries.push((i + 1, key, v.trim().to_string()));
        }
        let Some((_, _, kind)) = entries.iter().find(|(_, k, _)| k == "kind") else {
            return Err(Error::Parse { line: 0, msg: "missing key: kind".into() });
        };
        let kind = ExperimentKind::parse(kind).ok_or_else(|| Error::Parse { line: 0, msg: format!("unknown kind {kind:?}") })?;
        let mut cfg = Self::new(kind);
        let path = |v: &str| match base {
            Some(b) if Path::new(v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        };
        for (line, key, value) in &entries {
            let err = |msg: String| Error::Parse { line: *line, msg: format!("{key}: {msg}") };
            let v = value.as_str();
            match key.as_str() {
                "kind" => {}
                "surface" => cfg.surface = if v == "bolza" { SurfaceSource::Bolza } else { SurfaceSource::File(path(v)) },
                "center" => {
                    let xs = parse_list(v).map_err(err)?;
                    cfg.center = <[f64; 2]>::try_from(xs.as_slice()).map_err(|_| err("expected two numbers".into()))?;
                }
                "delta" | "delta_list" => cfg.delta_list = parse_list(v).map_err(err)?,
                "t_grid" => cfg.t_grid = parse_grid(v).map_err(err)?,
                "compare_t_grid" => cfg.compare_t_grid = Some(parse_grid(v).map_err(err)?),
                "t_scale" => {
                    cfg.t_scale = match v {
                        "absolute" => TimeScale::Absolute,
                        "cutoff" => TimeScale::Cutoff,
                        _ => return Err(err(format!("expected absolute or cutoff, got {v:?}"))),
                    }
                }
                "n_samples" => cfg.n_samples = parse_count(v).map_err(err)?,
                "m" | "m_resolution" => cfg.m_resolution = parse_count(v).map_err(err)? as usize,
                "seed" | "master_seed" => cfg.master_seed = v.parse().map_err(|e| err(format!("{e}")))?,
                "output" | "output_path" => cfg.output_path = Some(path(v)),
                "eps" | "eps_levels" => cfg.eps_levels = parse_list(v).map_err(err)?,
                "dt" => cfg.dt = parse_number(v).map_err(err)?,
                "d" | "dim" => cfg.dim = v.parse().map_err(|e| err(format!("{e}")))?,
                "lambda_grid" => cfg.lambda_grid = parse_grid(v).map_err(err)?,
                "tol" => cfg.tol = parse_number(v).map_err(err)?,
                "table" => cfg.table = Some(path(v)),
                "coeffs" => cfg.coeffs = Some(path(v)),
                "c" => cfg.bound_c = parse_number(v).map_err(err)?,
                "s_grid" => cfg.s_grid = parse_grid(v).map_err(err)?,
                _ => return Err(err("unknown key".into())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |g: &[f64]| g.windows(2).all(|w| w[1] > w[0]) && g.iter().all(|x| x.is_finite());
        match self.kind {
            ExperimentKind::GeodesicCutoff | ExperimentKind::BrownianMixing => {
                if self.delta_list.is_empty() || self.delta_list.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
                    return domain("delta must list positive values");
                }
                if self.t_grid.is_empty() || !increasing(&self.t_grid) || self.t_grid[0] < 0.0 {
                    return domain("t_grid must be non-empty, non-negative and strictly increasing");
                }
                if self.kind == ExperimentKind::BrownianMixing && self.t_grid[0] <= 0.0 {
                    return domain("Brownian t_grid must start above 0");
                }
                if let Some(g) = &self.compare_t_grid {
                    if g.is_empty() || !increasing(g) || g[0] < 0.0 {
                        return domain("compare_t_grid must be non-empty, non-negative and strictly increasing");
                    }
                }
                if self.n_samples < MIN_SAMPLES {
                    return domain(format!("n_samples must be at least {MIN_SAMPLES}, got {}", self.n_samples));
                }
                if self.m_resolution < 4 {
                    return domain(format!("m must be at least 4, got {}", self.m_resolution));
                }
                if self.eps_levels.is_empty() || self.eps_levels.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                    return domain("eps levels must lie in (0, 1)");
                }
                if !(self.dt > 0.0 && self.dt <= 1e-3) {
                    return domain(format!("dt must lie in (0, 1e-3], got {}", self.dt));
                }
                if self.center[0].hypot(self.center[1]) >= 1.0 {
                    return domain("center must lie in the unit disk");
                }
            }
            ExperimentKind::NuTable => {
                Dim::new(self.dim)?;
                if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                    return domain("lambda_grid must list finite values ≥ 0");
                }
                if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                    return domain("t_grid must list positive times");
                }
                if !(self.tol >= MIN_TOL) {
                    return domain(format!("tol must be at least {MIN_TOL:e}"));
                }
            }
            ExperimentKind::SpectrumBound => {
                if self.delta_list.len() != 1 || !(self.delta_list[0] > 0.0) {
                    return domain("spectrum-bound needs exactly one positive delta");
                }
                if self.t_grid.is_empty() || !increasing(&self.t_grid) || self.t_grid[0] <= 0.0 {
                    return domain("t_grid must be positive and strictly increasing");
                }
                if !(self.bound_c > 0.0) {
                    return domain("c must be positive");
                }
                if self.eps_levels.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                    return domain("eps levels must lie in (0, 1)");
                }
            }
        }
        Ok(())
    }
}

/// `1e6`, `4000000` or `4e6`.
fn parse_count(v: &str) -> std::result::Result<u64, String> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let x = parse_number(v)?;
    if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63) {
        Ok(x as u64)
    } else {
        Err(format!("expected a non-negative integer, got {v:?}"))
    }
}

/// A number, `e^x` or `exp(x)`.
pub fn parse_number(v: &str) -> std::result::Result<f64, String> {
    let v = v.trim();
    let exp_arg = v.strip_prefix("e^").or_else(|| v.strip_prefix("exp(").and_then(|r| r.strip_suffix(')')));
    let x = match exp_arg {
        Some(arg) => arg.trim().parse::<f64>().map(f64::exp),
        None => v.parse::<f64>(),
    };
    x.map_err(|_| format!("not a number: {v:?}")).and_then(|x| if x.is_finite() { Ok(x) } else { Err(format!("not finite: {v:?}")) })
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(parse_number).collect()
}

/// Comma-separated numbers from a command-line argument.
pub fn parse_list_arg(v: &str) -> Result<Vec<f64>> {
    parse_list(v).map_err(Error::Domain)
}

/// Comma-separated values, or `start:stop:count` for `count` equally spaced
/// points including both ends.
pub fn parse_grid(v: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => {
            let (a, b) = (parse_number(a)?, parse_number(b)?);
            let n: usize = n.trim().parse().map_err(|_| format!("bad point count in {v:?}"))?;
            if n == 0 || (n == 1 && a != b) || b < a {
                return Err(format!("bad range {v:?}"));
            }
            Ok(linspace(a, b, n))
        }
        [_] => parse_list(v),
        _ => Err(format!("expected a list or start:stop:count, got {v:?}")),
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

/// Process exit status for an error: 3 for bad input, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Precondition(_) => 3,
        _ => 2,
    }
}

/// Runs `f` on a pool sized by `HYPERCUT_WORKERS` (all cores when unset).
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Domain(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(pool.install(f))
}

/// Running minimum, the regularization applied before crossings are read off.
pub fn running_min(values: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values.iter().map(|&v| {
        best = best.min(v);
        best
    }).collect()
}

/// First time the non-increasing curve reaches `eps`, interpolating linearly
/// between the bracketing grid points. `None` when it never does; the first
/// grid time when the curve starts at or below `eps`.
pub fn crossing_time(times: &[f64], curve: &[f64], eps: f64) -> Option<f64> {
    let k = curve.iter().position(|&v| v <= eps)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (t0, t1, v0, v1) = (times[k - 1], times[k], curve[k - 1], curve[k]);
    Some(if v0 == v1 { t1 } else { t0 + (t1 - t0) * (v0 - eps) / (v0 - v1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingTime {
    pub eps: f64,
    pub t_mix: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvCurve {
    /// `geodesic` or `brownian`.
    pub label: String,
    pub delta: Option<f64>,
    pub times: Vec<f64>,
    pub tv_raw: Vec<f64>,
    pub tv_regularized: Vec<f64>,
    pub bias_note: f64,
    /// Deterministic support lower bound at each time (geodesic curves, t > 0).
    pub support_bound: Vec<Option<f64>>,
    pub t_mix: Vec<MixingTime>,
}

impl TvCurve {
    pub fn t_mix_at(&self, eps: f64) -> Option<f64> {
        self.t_mix.iter().find(|m| m.eps == eps).and_then(|m| m.t_mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub delta: f64,
    /// `−ln δ/(d − 1)`.
    pub t_star: f64,
    /// Time at which the experiment's process is predicted to mix.
    pub predicted_time: f64,
    pub t_mix_half: Option<f64>,
    /// `t_mix(0.5)/predicted_time`.
    pub ratio: Option<f64>,
    /// `t_mix(0.25) − t_mix(0.75)`.
    pub window: Option<f64>,
    pub window_ratio: Option<f64>,
    /// Whether the support bound stays below the estimate plus its bias scale.
    pub support_bound_consistent: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorComparison {
    pub delta: f64,
    pub brownian_t_mix_half: Option<f64>,
    pub geodesic_t_mix_half: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub kind: ExperimentKind,
    pub dim: u32,
    pub center: [f64; 2],
    pub n_samples: u64,
    pub m_resolution: usize,
    pub n_cells: usize,
    pub master_seed: u64,
    pub curves: Vec<TvCurve>,
    pub per_delta: Vec<DeltaSummary>,
    /// Window/t* strictly decreasing in −ln δ; `None` with fewer than two
    /// δ values or a missing window.
    pub window_ratio_decreasing: Option<bool>,
    pub brownian_vs_geodesic: Vec<FactorComparison>,
    pub advisories: Vec<String>,
}

impl CutoffReport {
    /// One row per (curve, t).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,delta,t,tv_raw,tv_regularized,bias_note,support_lower_bound\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.curves {
            for (i, t) in c.times.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.label,
                    opt(c.delta),
                    t,
                    c.tv_raw[i],
                    c.tv_regularized[i],
                    c.bias_note,
                    opt(c.support_bound.get(i).copied().flatten())
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short human-readable digest.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:?}: n = {}, m = {} ({} cells), seed = {}", self.kind, self.n_samples, self.m_resolution, self.n_cells, self.master_seed);
        for s in &self.per_delta {
            let _ = writeln!(
                out,
                "δ = {:.6}  t* = {:.4}  predicted = {:.4}  t_mix(0.5) = {}  ratio = {}  window/t* = {}",
                s.delta, s.t_star, s.predicted_time, f(s.t_mix_half), f(s.ratio), f(s.window_ratio)
            );
        }
        for c in &self.brownian_vs_geodesic {
            let _ = writeln!(
                out,
                "δ = {:.6}  Brownian t_mix(0.5) = {}  geodesic t_mix(0.5) = {}  ratio = {}",
                c.delta, f(c.brownian_t_mix_half), f(c.geodesic_t_mix_half), f(c.ratio)
            );
        }
        if let Some(d) = self.window_ratio_decreasing {
            let _ = writeln!(out, "window/t* strictly decreasing in -ln δ: {d}");
        }
        for a in &self.advisories {
            let _ = writeln!(out, "advisory: {a}");
        }
        out
    }

    /// Writes `<output>.csv` and `<output>.json`.
    pub fn write(&self, output: &Path) -> Result<()> {
        write_pair(output, &self.to_csv(), &self.to_json()?)
    }
}

fn write_pair(output: &Path, csv: &str, json: &str) -> Result<()> {
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(output.with_extension("csv"), csv)?;
    std::fs::write(output.with_extension("json"), json)?;
    Ok(())
}

/// Group, polygon and start point of a Monte Carlo experiment.
pub struct Setting {
    pub group: FuchsianGroup,
    pub domain: FundamentalDomain,
    pub center: SurfacePoint,
}

impl Setting {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let (group, domain) = match &config.surface {
            SurfaceSource::Bolza => bolza_group()?,
            SurfaceSource::File(p) => load_surface(p)?,
        };
        let center = SurfacePoint::from_disk(&group, &domain, Complex64::new(config.center[0], config.center[1]))?;
        Ok(Self { group, domain, center })
    }
}

fn t_star(delta: f64, dim: Dim) -> f64 {
    -delta.ln() / (dim.as_f64() - 1.0)
}

fn scaled(grid: &[f64], scale: TimeScale, t_star: f64) -> Vec<f64> {
    match scale {
        TimeScale::Absolute => grid.to_vec(),
        TimeScale::Cutoff => grid.iter().map(|g| g * t_star).collect(),
    }
}

fn build_curve(label: &str, delta: Option<f64>, times: Vec<f64>, hists: &[EmpiricalMeasure], eps: &[f64], volume: f64) -> Result<TvCurve> {
    let estimates = hists.iter().map(tv_against_uniform).collect::<Result<Vec<_>>>()?;
    let tv_raw: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let tv_regularized = running_min(&tv_raw);
    let support_bound = times
        .iter()
        .map(|&t| match delta {
            Some(d) if t > 0.0 => tv_lower_bound_support(t, d, Dim::TWO, volume).map(|b| Some(b.shell)),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    let t_mix = eps
        .iter()
        .map(|&e| MixingTime { eps: e, t_mix: if times.len() < 2 { None } else { crossing_time(&times, &tv_regularized, e) } })
        .collect();
    Ok(TvCurve { label: label.into(), delta, times, tv_raw, tv_regularized, bias_note: estimates[0].bias_note, support_bound, t_mix })
}

fn curve_advisories(curve: &TvCurve, advisories: &mut Vec<String>) {
    let name = match curve.delta {
        Some(d) => format!("{} δ = {d}", curve.label),
        None => curve.label.clone(),
    };
    if curve.times.len() < 2 {
        advisories.push(format!("{name}: single-time grid, no mixing times extracted"));
        return;
    }
    for m in &curve.t_mix {
        match m.t_mix {
            None => advisories.push(format!("{name}: TV stays above ε = {} on the grid (min {:.4})", m.eps, curve.tv_regularized.last().unwrap())),
            Some(t) if t == curve.times[0] && curve.tv_regularized[0] <= m.eps => {
                advisories.push(format!("{name}: TV already at or below ε = {} at the first grid time", m.eps))
            }
            Some(_) => {}
        }
    }
}

fn support_consistent(curve: &TvCurve) -> bool {
    curve.support_bound.iter().zip(&curve.tv_raw).all(|(b, tv)| b.is_none_or(|b| b <= tv + curve.bias_note))
}

fn geodesic_curve(setting: &Setting, grid: &Arc<CellGrid>, config: &ExperimentConfig, index: usize, delta: f64, times: Vec<f64>) -> Result<TvCurve> {
    let sampler = GeodesicSampler::new(&setting.group, &setting.domain, setting.center, delta)?;
    let plan = SweepPlan::new(config.n_samples, config.master_seed, 1 + index as u64);
    let hists = geodesic_sweep(&sampler, &times, grid, plan)?;
    build_curve("geodesic", Some(delta), times, &hists, &config.eps_levels, setting.domain.area)
}

fn delta_summary(delta: f64, predicted: f64, curve: &TvCurve) -> DeltaSummary {
    let t_star = t_star(delta, Dim::TWO);
    let half = curve.t_mix_at(0.5);
    let window = match (curve.t_mix_at(0.25), curve.t_mix_at(0.75)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    DeltaSummary {
        delta,
        t_star,
        predicted_time: predicted,
        t_mix_half: half,
        ratio: half.map(|t| t / predicted),
        window,
        window_ratio: window.map(|w| w / t_star),
        support_bound_consistent: curve.delta.map(|_| support_consistent(curve)),
    }
}

fn window_trend(per_delta: &[DeltaSummary]) -> Option<bool> {
    if per_delta.len() < 2 {
        return None;
    }
    let mut rows: Vec<(f64, f64)> = per_delta.iter().map(|s| s.window_ratio.map(|w| (-s.delta.ln(), w))).collect::<Option<_>>()?;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(rows.windows(2).all(|w| w[1].1 < w[0].1))
}

fn empty_report(config: &ExperimentConfig, n_cells: usize) -> CutoffReport {
    CutoffReport {
        kind: config.kind,
        dim: 2,
        center: config.center,
        n_samples: config.n_samples,
        m_resolution: config.m_resolution,
        n_cells,
        master_seed: config.master_seed,
        curves: Vec::new(),
        per_delta: Vec::new(),
        window_ratio_decreasing: None,
        brownian_vs_geodesic: Vec::new(),
        advisories: Vec::new(),
    }
}

/// TV-to-uniform curves of the geodesic process for every δ, with mixing
/// times and window widths.
pub fn run_geodesic_cutoff(config: &ExperimentConfig) -> Result<CutoffReport> {
    if config.kind != ExperimentKind::GeodesicCutoff {
        return domain("configuration is not a geodesic-cutoff experiment");
    }
    config.validate()?;
    let setting = Setting::new(config)?;
    with_workers(|| {
        let grid = Arc::new(CellGrid::new(&setting.domain, config.m_resolution)?);
        let mut report = empty_report(config, grid.n_cells());
        for (i, &delta) in config.delta_list.iter().enumerate() {
            let ts = t_star(delta, Dim::TWO);
            let curve = geodesic_curve(&setting, &grid, config, i, delta, scaled(&config.t_grid, config.t_scale, ts))?;
            curve_advisories(&curve, &mut report.advisories);
            let summary = delta_summary(delta, ts, &curve);
            if summary.support_bound_consistent == Some(false) {
                report.advisories.push(format!(
                    "geodesic δ = {delta}: the support lower bound exceeds the binned TV by more than its bias scale; the m = {} grid is too coarse to resolve the support",
                    config.m_resolution
                ));
            }
            report.per_delta.push(summary);
            report.curves.push(curve);
        }
        report.window_ratio_decreasing = window_trend(&report.per_delta);
        Ok(report)
    })?
}

/// TV curve of Brownian motion from the centre, and for each δ the geodesic
/// curve at the same centre, seed and binning for comparison.
pub fn run_brownian_mixing(config: &ExperimentConfig) -> Result<CutoffReport> {
    if config.kind != ExperimentKind::BrownianMixing {
        return domain("configuration is not a brownian-mixing experiment");
    }
    config.validate()?;
    let setting = Setting::new(config)?;
    let dim = Dim::TWO;
    with_workers(|| {
        let grid = Arc::new(CellGrid::new(&setting.domain, config.m_resolution)?);
        let mut report = empty_report(config, grid.n_cells());
        let sampler = GeodesicSampler::new(&setting.group, &setting.domain, setting.center, 0.0)?;
        // one Brownian grid for all δ; with t_scale = cutoff it follows the first δ
        let ts0 = t_star(config.delta_list[0], dim);
        let b_times = scaled(&config.t_grid, config.t_scale, ts0);
        let hists = brownian_sweep(&sampler, &b_times, config.dt, &grid, SweepPlan::new(config.n_samples, config.master_seed, 0))?;
        let brownian = build_curve("brownian", None, b_times, &hists, &config.eps_levels, setting.domain.area)?;
        curve_advisories(&brownian, &mut report.advisories);
        let b_half = brownian.t_mix_at(0.5);
        let default_compare = linspace(0.25, 1.5, 26);
        for (i, &delta) in config.delta_list.iter().enumerate() {
            let ts = t_star(delta, dim);
            let predicted = 2.0 * ts / (dim.as_f64() - 1.0);
            if brownian.times.last().is_some_and(|&t| t < predicted) {
                report.advisories.push(format!("brownian: t grid ends before the predicted time {predicted:.4} for δ = {delta}"));
            }
            let (g_grid, g_scale) = match &config.compare_t_grid {
                Some(g) => (g.as_slice(), config.t_scale),
                None => (default_compare.as_slice(), TimeScale::Cutoff),
            };
            let geo = geodesic_curve(&setting, &grid, config, i, delta, scaled(g_grid, g_scale, ts))?;
            curve_advisories(&geo, &mut report.advisories);
            let g_half = geo.t_mix_at(0.5);
            report.brownian_vs_geodesic.push(FactorComparison {
                delta,
                brownian_t_mix_half: b_half,
                geodesic_t_mix_half: g_half,
                ratio: b_half.zip(g_half).map(|(b, g)| b / g),
            });
            let mut summary = delta_summary(delta, predicted, &brownian);
            summary.support_bound_consistent = None;
            report.per_delta.push(summary);
            report.curves.push(geo);
        }
        report.curves.insert(0, brownian);
        Ok(report)
    })?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuStatus {
    Ok,
    /// `|Im ν|` above the reality tolerance.
    NotReal,
    /// `|ν| > 1`.
    NotContracting,
    /// Quadrature missed its tolerance; the value is the best estimate.
    QuadratureFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuRow {
    pub lambda: f64,
    pub t: f64,
    pub value: f64,
    pub imag_residual: f64,
    pub error_estimate: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub status: NuStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuTable {
    pub dim: u32,
    pub rows: Vec<NuRow>,
}

impl NuTable {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.status == NuStatus::Ok)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,lambda,t,value,imag_residual,error_estimate,envelope,ratio,status\n");
        for r in &self.rows {
            let status = match r.status {
                NuStatus::Ok => "ok",
                NuStatus::NotReal => "not-real",
                NuStatus::NotContracting => "not-contracting",
                NuStatus::QuadratureFailed => "quadrature-failed",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{status}",
                self.dim, r.lambda, r.t, r.value, r.imag_residual, r.error_estimate, r.envelope, r.ratio
            );
        }
        out
    }
}

/// ν_t(λ) on the product grid, with the decay-class envelope and the
/// reality/contraction checks per row.
pub fn run_nu_table(config: &ExperimentConfig) -> Result<NuTable> {
    if config.kind != ExperimentKind::NuTable {
        return domain("configuration is not a nu-table experiment");
    }
    config.validate()?;
    let dim = Dim::new(config.dim)?;
    let cells: Vec<(f64, f64)> = config.lambda_grid.iter().flat_map(|&l| config.t_grid.iter().map(move |&t| (l, t))).collect();
    let rows = with_workers(|| {
        cells
            .par_iter()
            .map(|&(lambda, t)| {
                let sp = spectral_point(dim, lambda)?;
                let envelope = nu_decay_class(&sp, t);
                let (nu, failed) = match nu_quadrature(&sp, t, config.tol) {
                    Ok(nu) => ((nu.value, nu.imag_residual, nu.quadrature_error_estimate), false),
                    Err(Error::Accuracy { best, estimate, .. }) => ((best, f64::NAN, estimate), true),
                    Err(e) => return Err(e),
                };
                let status = if failed {
                    NuStatus::QuadratureFailed
                } else if nu.1 > REALITY_TOL {
                    NuStatus::NotReal
                } else if nu.0.abs() > 1.0 + 10.0 * config.tol {
                    NuStatus::NotContracting
                } else {
                    NuStatus::Ok
                };
                Ok(NuRow { lambda, t, value: nu.0, imag_residual: nu.1, error_estimate: nu.2, envelope, ratio: nu.0.abs() / envelope, status })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(NuTable { dim: config.dim, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub t: f64,
    pub coarse: f64,
    pub fine: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub eps: f64,
    pub coarse: Option<f64>,
    pub fine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub dim: u32,
    pub volume: f64,
    pub source: String,
    pub spectral_gap: Option<f64>,
    pub trivial: u64,
    pub complementary: u64,
    pub principal: u64,
    pub delta: f64,
    pub c: f64,
    pub bounds: Vec<BoundRow>,
    pub crossings: Vec<Crossing>,
    pub profile: Vec<ProfileRow>,
    /// `s` values where the profile exceeds `1 − s`.
    pub violations: Vec<f64>,
    pub advisories: Vec<String>,
}

impl SpectrumReport {
    pub fn bounds_csv(&self) -> String {
        let mut out = String::from("t,coarse,fine\n");
        for r in &self.bounds {
            let _ = writeln!(out, "{},{},{}", r.t, r.coarse, r.fine.map(|f| f.to_string()).unwrap_or_default());
        }
        out
    }

    pub fn profile_csv(&self) -> String {
        profile_csv(&self.profile)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary(&self) -> String {
        let mut out = table_summary_line(self.dim, self.volume, &self.source, self.spectral_gap, [self.trivial, self.complementary, self.principal]);
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        for c in &self.crossings {
            let _ = writeln!(out, "ε = {}: coarse crossing {}  fine crossing {}", c.eps, f(c.coarse), f(c.fine));
        }
        let _ = writeln!(out, "density-profile violations at s = {:?}", self.violations);
        for a in &self.advisories {
            let _ = writeln!(out, "advisory: {a}");
        }
        out
    }
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("s,count,ratio,violation\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.s, r.count, r.ratio, r.violation);
    }
    out
}

fn series_counts(table: &SpectrumTable) -> [u64; 3] {
    let mut n = [0u64; 3];
    for (e, s) in table.eigenvalues().iter().zip(table.series()) {
        let i = match s {
            Series::Trivial => 0,
            Series::Complementary => 1,
            Series::Principal => 2,
        };
        n[i] += e.multiplicity as u64;
    }
    n
}

fn table_summary_line(dim: u32, volume: f64, source: &str, gap: Option<f64>, n: [u64; 3]) -> String {
    format!(
        "{source}: d = {dim}, V = {volume}, λ_1 = {}, eigenvalues (with multiplicity): trivial {}, complementary {}, principal {}\n",
        gap.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
        n[0],
        n[1],
        n[2]
    )
}

/// One-line description of a table, used by `spectrum check`.
pub fn describe_table(table: &SpectrumTable) -> String {
    table_summary_line(table.dim().get(), table.volume(), table.source(), table.spectral_gap(), series_counts(table))
}

/// Squared coefficients, one per line (blank lines and `#` comments skipped).
pub fn load_coeffs(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = parse_number(line).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        if v < 0.0 {
            return Err(Error::Parse { line: i + 1, msg: format!("squared coefficient {v} is negative") });
        }
        out.push(v);
    }
    Ok(out)
}

/// Bound curves, crossing times and the density profile for a spectrum table.
pub fn run_spectrum_bound(config: &ExperimentConfig, table: &SpectrumTable) -> Result<SpectrumReport> {
    if config.kind != ExperimentKind::SpectrumBound {
        return domain("configuration is not a spectrum-bound experiment");
    }
    config.validate()?;
    let delta = config.delta_list[0];
    let coeffs = config.coeffs.as_deref().map(load_coeffs).transpose()?;
    let coarse = TVBoundCurve::coarse(table, delta, config.t_grid.clone(), config.bound_c)?;
    let fine = coeffs.as_deref().map(|c| TVBoundCurve::fine(table, c, config.t_grid.clone(), config.bound_c)).transpose()?;
    let mut advisories = Vec::new();
    let mut crossing = |curve: &TVBoundCurve, name: &str, eps: f64| match mixing_time_from_bound(curve, eps) {
        Ok(t) => Ok(Some(t)),
        Err(Error::NoCrossing(msg)) => {
            advisories.push(format!("{name} bound, ε = {eps}: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let mut crossings = Vec::new();
    for &eps in &config.eps_levels {
        let c = crossing(&coarse, "coarse", eps)?;
        let f = fine.as_ref().map(|f| crossing(f, "fine", eps)).transpose()?.flatten();
        crossings.push(Crossing { eps, coarse: c, fine: f });
    }
    let bounds = config
        .t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| BoundRow { t, coarse: coarse.bounds[i], fine: fine.as_ref().map(|f| f.bounds[i]) })
        .collect();
    let profile = density_profile(table, &config.s_grid);
    let violations = profile.iter().filter(|r| r.violation).map(|r| r.s).collect();
    let n = series_counts(table);
    Ok(SpectrumReport {
        dim: table.dim().get(),
        volume: table.volume(),
        source: table.source().to_string(),
        spectral_gap: table.spectral_gap(),
        trivial: n[0],
        complementary: n[1],
        principal: n[2],
        delta,
        c: config.bound_c,
        bounds,
        crossings,
        profile,
        violations,
        advisories,
    })
}

/// Loads the table named by `config.table` and runs [`run_spectrum_bound`].
pub fn run_spectrum_bound_from_config(config: &ExperimentConfig) -> Result<SpectrumReport> {
    let path = config.table.as_deref().ok_or_else(|| Error::Domain("spectrum-bound needs a table".into()))?;
    run_spectrum_bound(config, &load_spectrum(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Eigenvalue;

    #[test]
    fn grids_and_numbers() {
        assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_number("e^-4").unwrap(), (-4.0f64).exp());
        assert_eq!(parse_number("exp(2)").unwrap(), 2f64.exp());
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("a:b").is_err());
        assert!(parse_number("inf").is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let text = "# cutoff run\nkind = geodesic-cutoff\ndelta = e^-3, e^-4\nt_grid = 0.25:1.5:6 # relative\nt_scale = cutoff\nn_samples = 1e5\nm = 16\nseed = 7\noutput = out/run\n";
        let cfg = ExperimentConfig::parse(text, Some(Path::new("/tmp/base"))).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::GeodesicCutoff);
        assert_eq!(cfg.delta_list, vec![(-3.0f64).exp(), (-4.0f64).exp()]);
        assert_eq!(cfg.t_grid.len(), 6);
        assert_eq!(cfg.n_samples, 100_000);
        assert_eq!(cfg.output_path, Some(PathBuf::from("/tmp/base/out/run")));
        assert_eq!(cfg.eps_levels, vec![0.25, 0.5, 0.75]);
        for bad in [
            "kind = geodesic-cutoff\ndelta = 0.1\nt_grid = 1, 1\n",
            "kind = geodesic-cutoff\ndelta = 0.1\nt_grid = 1\nn_samples = 100\n",
            "kind = geodesic-cutoff\ndelta = -0.1\nt_grid = 1\n",
            "kind = geodesic-cutoff\ndelta = 0.1\nt_grid = 1\nwhat = 3\n",
            "kind = nope\n",
            "delta = 0.1\n",
            "kind = geodesic-cutoff\nkind = nu-table\n",
            "kind = geodesic-cutoff\ndelta 0.1\n",
        ] {
            let e = ExperimentConfig::parse(bad, None).unwrap_err();
            assert_eq!(exit_code(&e), 3, "{bad:?}: {e}");
        }
    }

    #[test]
    fn running_min_and_crossings() {
        let raw = [0.9, 0.8, 0.85, 0.4, 0.45, 0.1];
        let reg = running_min(&raw);
        assert_eq!(reg, vec![0.9, 0.8, 0.8, 0.4, 0.4, 0.1]);
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!((crossing_time(&t, &reg, 0.5).unwrap() - (3.0 + 0.3 / 0.4)).abs() < 1e-12);
        assert_eq!(crossing_time(&t, &reg, 0.95), Some(1.0));
        assert_eq!(crossing_time(&t, &reg, 0.05), None);
        // levels ordered the other way give ordered times
        let a = crossing_time(&t, &reg, 0.25).unwrap();
        let b = crossing_time(&t, &reg, 0.5).unwrap();
        let c = crossing_time(&t, &reg, 0.75).unwrap();
        assert!(a >= b && b >= c);
    }

    #[test]
    fn window_trend_needs_two_windows() {
        let s = |delta: f64, w: Option<f64>| DeltaSummary {
            delta,
            t_star: -delta.ln(),
            predicted_time: -delta.ln(),
            t_mix_half: None,
            ratio: None,
            window: w,
            window_ratio: w,
            support_bound_consistent: None,
        };
        assert_eq!(window_trend(&[s(0.1, Some(0.5))]), None);
        assert_eq!(window_trend(&[s(0.01, Some(0.3)), s(0.1, Some(0.5))]), Some(true));
        assert_eq!(window_trend(&[s(0.01, Some(0.5)), s(0.1, Some(0.5))]), Some(false));
        assert_eq!(window_trend(&[s(0.01, None), s(0.1, Some(0.5))]), None);
    }

    #[test]
    fn single_time_grid_reports_curves_only() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::GeodesicCutoff);
        cfg.delta_list = vec![(-4.0f64).exp()];
        cfg.t_grid = vec![1.0];
        cfg.t_scale = TimeScale::Cutoff;
        cfg.n_samples = 10_000;
        cfg.m_resolution = 16;
        let r = run_geodesic_cutoff(&cfg).unwrap();
        assert_eq!(r.curves[0].times, vec![4.0]);
        assert!(r.curves[0].t_mix.iter().all(|m| m.t_mix.is_none()));
        assert!(r.advisories.iter().any(|a| a.contains("single-time")));
        assert_eq!(r.per_delta[0].t_star, 4.0);
    }

    #[test]
    fn nu_table_rows_and_flags() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::NuTable);
        cfg.dim = 3;
        cfg.lambda_grid = vec![0.0, 0.5, 2.0];
        cfg.t_grid = vec![0.5, 3.0];
        let t = run_nu_table(&cfg).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert!(t.all_ok());
        assert!((t.rows[0].value - 1.0).abs() < 1e-10);
        assert_eq!(t.to_csv().lines().count(), 7);
    }

    #[test]
    fn spectrum_report_flags_and_crossings() {
        let mut rows = vec![Eigenvalue { lambda: 0.0, multiplicity: 1 }];
        rows.push(Eigenvalue { lambda: 0.1875, multiplicity: 100 });
        rows.push(Eigenvalue { lambda: 2.0, multiplicity: 3 });
        let table = SpectrumTable::new(Dim::TWO, 1e4, rows, "fixture").unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::SpectrumBound);
        cfg.delta_list = vec![(-4.0f64).exp()];
        cfg.t_grid = linspace(0.5, 60.0, 120);
        cfg.s_grid = vec![0.25, 0.5, 0.75];
        let r = run_spectrum_bound(&cfg, &table).unwrap();
        assert_eq!(r.violations, vec![0.5]);
        assert_eq!(r.complementary, 100);
        let c = &r.crossings;
        assert!(c[0].coarse.unwrap() >= c[1].coarse.unwrap() && c[1].coarse.unwrap() >= c[2].coarse.unwrap());
        cfg.t_grid = vec![0.5, 1.0];
        let r = run_spectrum_bound(&cfg, &table).unwrap();
        assert!(r.crossings.iter().all(|c| c.coarse.is_none()));
        assert_eq!(r.advisories.len(), 3);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Invariant("x".into())), 2);
        assert_eq!(exit_code(&Error::NonTermination { steps: 1 }), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, msg: "x".into() }), 3);
        assert_eq!(exit_code(&Error::Precondition("x".into())), 3);
    }
}
