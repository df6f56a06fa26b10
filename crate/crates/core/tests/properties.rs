use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use proptest::prelude::*;

use hypercut_core::harness::{crossing_time, running_min};
use hypercut_core::hypgeom::{ball_volume, distance, geodesic_flow, sample_tangent_uniform, Dim, HPoint, UnitTangent};
use hypercut_core::multiplier::{nu_quadrature, spectral_point, REALITY_TOL};
use hypercut_core::rng::SeededStream;
use hypercut_core::simulate::{tv_against_uniform, CellGrid, EmpiricalMeasure};
use hypercut_core::spectral::{density_profile, tv_bound_coarse, tv_bound_majl2, Eigenvalue, SpectrumTable};
use hypercut_core::surface::{bolza_group, disk_distance, reduce, FuchsianGroup, FundamentalDomain, MobiusElement};

fn bolza() -> &'static (FuchsianGroup, FundamentalDomain) {
    static B: OnceLock<(FuchsianGroup, FundamentalDomain)> = OnceLock::new();
    B.get_or_init(|| bolza_group().unwrap())
}

fn words() -> &'static [MobiusElement] {
    static W: OnceLock<Vec<MobiusElement>> = OnceLock::new();
    W.get_or_init(|| bolza().0.word_ball(4).unwrap().elements.iter().map(|e| e.element).collect())
}

/// Words of length ≤ 4 moving the origin by at most 7. Together with |z| ≤ 0.9
/// this keeps images within distance 10 of the origin, where a `Complex64`
/// still resolves hyperbolic distances to well below 1e-10.
fn short_words() -> &'static [MobiusElement] {
    static W: OnceLock<Vec<MobiusElement>> = OnceLock::new();
    W.get_or_init(|| {
        let ball = bolza().0.word_ball(4).unwrap();
        ball.elements.iter().filter(|e| e.displacement <= 7.0).map(|e| e.element).collect()
    })
}

fn tangent(seed: u64, r: f64, angle: f64) -> UnitTangent {
    let base = HPoint::from_polar(r, &[angle.cos(), angle.sin()]);
    sample_tangent_uniform(&mut SeededStream::new(seed, 0), &base)
}

fn disk_point(r: f64, angle: f64) -> Complex64 {
    Complex64::from_polar(r, angle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flow_has_unit_speed(seed in any::<u64>(), r in 0.0..3.0f64, a in 0.0..6.3f64, t in -20.0..20.0f64) {
        let z = tangent(seed, r, a);
        let w = geodesic_flow(&z, t).unwrap();
        prop_assert!((distance(z.base(), w.base()).unwrap() - t.abs()).abs() < 1e-9);
    }

    #[test]
    fn flow_is_additive(seed in any::<u64>(), r in 0.0..1.0f64, a in 0.0..6.3f64, s in -12.0..12.0f64, frac in -1.0..1.0f64) {
        // rounding in the first leg is stretched by e^{|t|} along the second
        let t = (12.0 - s.abs()) * frac;
        let z = tangent(seed, r, a);
        let two_steps = geodesic_flow(&geodesic_flow(&z, s).unwrap(), t).unwrap();
        let one_step = geodesic_flow(&z, s + t).unwrap();
        prop_assert!(distance(two_steps.base(), one_step.base()).unwrap() < 1e-9);
    }

    #[test]
    fn ball_volume_increases(r in 1e-3..30.0f64, dr in 1e-6..1.0f64, d in 2u32..6) {
        let dim = Dim::new(d).unwrap();
        prop_assert!(ball_volume(dim, r + dr).unwrap() > ball_volume(dim, r).unwrap());
    }

    #[test]
    fn group_elements_are_isometries(i in 0usize..3201, r1 in 0.0..0.9f64, a1 in 0.0..6.3f64, r2 in 0.0..0.9f64, a2 in 0.0..6.3f64) {
        let g = &short_words()[i % short_words().len()];
        let (z, w) = (disk_point(r1, a1), disk_point(r2, a2));
        let before = disk_distance(z, w);
        let after = disk_distance(g.apply(z), g.apply(w));
        prop_assert!((before - after).abs() < 1e-10 * before.max(1.0), "{before} vs {after}");
    }

    #[test]
    fn reduction_is_idempotent_and_short(r in 0.0..0.95f64, a in 0.0..6.3f64) {
        let (g, d) = bolza();
        let (p, steps) = reduce(g, d, disk_point(r, a)).unwrap();
        prop_assert!(steps <= 200);
        let (q, again) = reduce(g, d, p.rep()).unwrap();
        prop_assert_eq!(p, q);
        prop_assert_eq!(again, 0);
    }

    #[test]
    fn reduction_is_constant_on_orbits(i in 0usize..200, r in 0.0..0.9f64, a in 0.0..6.3f64) {
        let (g, d) = bolza();
        let z = disk_point(r, a);
        let moved = words()[i].apply(z);
        let p = reduce(g, d, z).unwrap().0.rep();
        let q = reduce(g, d, moved).unwrap().0.rep();
        prop_assert!((p - q).norm() < 1e-8, "{p} vs {q}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multiplier_is_real_and_contracting(d in 2u32..6, lambda in 0.0..400.0f64, t in 0.1..20.0f64) {
        let sp = spectral_point(Dim::new(d).unwrap(), lambda).unwrap();
        let nu = nu_quadrature(&sp, t, 1e-11).unwrap();
        prop_assert!(nu.imag_residual <= REALITY_TOL);
        prop_assert!(nu.value.abs() <= 1.0 + 1e-11);
    }
}

fn table_from(dim: Dim, volume: f64, lambdas: &[f64]) -> SpectrumTable {
    let mut rows = vec![Eigenvalue { lambda: 0.0, multiplicity: 1 }];
    let mut sorted: Vec<f64> = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    rows.extend(sorted.into_iter().map(|lambda| Eigenvalue { lambda, multiplicity: 1 }));
    SpectrumTable::new(dim, volume, rows, "generated").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fine_bound_decreases_past_its_peak(lambdas in prop::collection::vec(0.01..5.0f64, 1..20), weights in prop::collection::vec(0.0..2.0f64, 20)) {
        let table = table_from(Dim::TWO, 30.0, &lambdas);
        let coeffs: Vec<f64> = (0..table.eigenvalues().len()).map(|k| weights[k % weights.len()]).collect();
        let sigma = Dim::TWO.sigma();
        let s_max = table.eigenvalues()[1..].iter().filter(|e| e.lambda < sigma).map(|e| (1.0 - e.lambda / sigma).sqrt()).fold(0.0, f64::max);
        let start = 2.0 / (1.0 - s_max);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let b = tv_bound_majl2(&table, &coeffs, start + 0.5 * k as f64, 1.0).unwrap();
            prop_assert!(b <= prev * (1.0 + 1e-12));
            prev = b;
        }
    }

    #[test]
    fn coarse_bound_dominates_fine(lambdas in prop::collection::vec(0.01..5.0f64, 1..20), weights in prop::collection::vec(0.01..1.0f64, 20), t in 0.5..30.0f64) {
        let delta = 0.05;
        let table = table_from(Dim::TWO, 40.0, &lambdas);
        let mass = table.volume() / ball_volume(Dim::TWO, delta).unwrap();
        let n = table.eigenvalues().len();
        let raw: Vec<f64> = (0..n).map(|k| if k == 0 { 0.0 } else { weights[k % weights.len()] }).collect();
        let total: f64 = raw.iter().sum();
        let coeffs: Vec<f64> = raw.iter().map(|w| w * mass / total).collect();
        let coarse = tv_bound_coarse(&table, delta, t, 1.0).unwrap();
        let fine = tv_bound_majl2(&table, &coeffs, t, 1.0).unwrap().sqrt();
        prop_assert!(fine <= coarse * (1.0 + 1e-12), "{fine} > {coarse}");
        // doubling V scales the coarse bound by √2 and leaves the fine one alone
        let doubled = SpectrumTable::new(Dim::TWO, 2.0 * table.volume(), table.eigenvalues().to_vec(), "doubled").unwrap();
        let ratio = tv_bound_coarse(&doubled, delta, t, 1.0).unwrap() / coarse;
        prop_assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
        prop_assert_eq!(tv_bound_majl2(&doubled, &coeffs, t, 1.0).unwrap(), tv_bound_majl2(&table, &coeffs, t, 1.0).unwrap());
    }

    #[test]
    fn profile_counts_fall_with_s(lambdas in prop::collection::vec(0.001..0.3f64, 1..40), v in 2.0..1e6f64) {
        let table = table_from(Dim::TWO, v, &lambdas);
        let s: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        let rows = density_profile(&table, &s);
        prop_assert!(rows.windows(2).all(|w| w[1].count <= w[0].count));
    }

    #[test]
    fn regularized_curves_and_crossings_are_monotone(raw in prop::collection::vec(0.0..1.0f64, 2..40)) {
        let reg = running_min(&raw);
        prop_assert!(reg.windows(2).all(|w| w[1] <= w[0]));
        let times: Vec<f64> = (0..raw.len()).map(|k| 0.1 * k as f64).collect();
        let c = |e: f64| crossing_time(&times, &reg, e).unwrap_or(f64::INFINITY);
        prop_assert!(c(0.25) >= c(0.5) && c(0.5) >= c(0.75));
    }
}

fn grid() -> Arc<CellGrid> {
    static G: OnceLock<Arc<CellGrid>> = OnceLock::new();
    G.get_or_init(|| Arc::new(CellGrid::new(&bolza().1, 8).unwrap())).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn binned_tv_is_a_probability_gap(points in prop::collection::vec((0.0..0.8f64, 0.0..6.3f64), 1..200), split in 0usize..200) {
        let (g, d) = bolza();
        let pts: Vec<_> = points.iter().map(|&(r, a)| reduce(g, d, disk_point(r, a)).unwrap().0).collect();
        let mut full = EmpiricalMeasure::new(grid());
        for p in &pts {
            full.add(d, p).unwrap();
        }
        let tv = tv_against_uniform(&full).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv.value));
        prop_assert_eq!(full.weights.iter().sum::<u64>(), full.n_samples);
        let k = split % (pts.len() + 1);
        let mut a = EmpiricalMeasure::new(grid());
        let mut b = EmpiricalMeasure::new(grid());
        for p in &pts[..k] {
            a.add(d, p).unwrap();
        }
        for p in &pts[k..] {
            b.add(d, p).unwrap();
        }
        a.merge(&b).unwrap();
        prop_assert_eq!(a, full);
    }
}

#[test]
fn short_words_cover_every_word_length() {
    let ball = bolza().0.word_ball(4).unwrap();
    let kept: Vec<_> = ball.elements.iter().filter(|e| e.displacement <= 7.0).collect();
    assert_eq!(kept.len(), short_words().len());
    for len in 1..=4 {
        assert!(kept.iter().any(|e| e.word_length == len), "no kept word of length {len}");
    }
}
