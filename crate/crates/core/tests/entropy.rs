mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rectfree::entropy::*;
use rectfree::measures::*;

fn chi(mu: &GridMeasure, rk: f64, rl: f64) -> f64 {
    chi_single(&EntropyInput::new(mu.clone(), rk, rl).unwrap()).unwrap().to_f64()
}

#[test]
fn square_case_reduction_on_random_grids() {
    let mut r = common::rng(1);
    for _ in 0..5 {
        let mu = common::random_grid_measure(500, &mut r);
        for rho in [0.1f64, 0.3, 0.5] {
            let reduced = rho * rho * (mu.log_energy().to_f64() + PI.ln() + 1.5 - rho.ln());
            assert!((chi(&mu, rho, rho) - reduced).abs() < 1e-9);
        }
    }
}

#[test]
fn identity_with_rate_and_constant() {
    let mut r = common::rng(2);
    for (rk, rl) in [(0.25, 0.75), (0.1, 0.5), (0.3, 0.3)] {
        for _ in 0..5 {
            let mu = common::random_grid_measure(400, &mut r);
            let lhs = chi(&mu, rk, rl);
            let rhs = -rate_j(&mu, rk, rl).unwrap() + constant_c(rk, rl).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{lhs} {rhs}");
        }
    }
    // the weight order does not matter for chi_single
    let mu = GridMeasure::uniform(0.5, 1.0).unwrap();
    assert_eq!(chi(&mu, 0.25, 0.75), chi(&mu, 0.75, 0.25));
}

#[test]
fn rate_in_square_case() {
    let mu = GridMeasure::uniform(1.0, 3.0).unwrap();
    let j = rate_j(&mu, 0.4, 0.4).unwrap();
    assert!((j + 0.16 * mu.log_energy().to_f64()).abs() < 1e-15);
    // Sigma(U[0, e^{3/2}]) = 0; its log-moment is 1/2, so weight only Sigma.
    let e = (1.5f64).exp();
    let u = GridMeasure::uniform(0.0, e).unwrap();
    assert!(u.log_energy().to_f64().abs() < 1e-12);
    assert!(rate_j(&u, 0.2, 0.2).unwrap().abs() < 1e-12);
}

#[test]
fn constant_in_square_case() {
    for rho in [0.2f64, 0.5] {
        let c = constant_c(rho, rho).unwrap();
        assert!((c - rho * rho * (PI.ln() + 1.5 - rho.ln())).abs() < 1e-14);
    }
}

#[test]
fn mp_entropy_resolution_and_exact_value() {
    let exact = chi(&GridMeasure::mp(3.0, 1.0).unwrap(), 0.25, 0.75);
    let coarse = chi(&GridMeasure::mp(3.0, 1.0).unwrap().to_grid(2000).unwrap(), 0.25, 0.75);
    let fine = chi(&GridMeasure::mp(3.0, 1.0).unwrap().to_grid(4000).unwrap(), 0.25, 0.75);
    assert!((coarse - fine).abs() < 1e-5, "{coarse} {fine}");
    assert!((fine - exact).abs() < 1e-5, "{fine} {exact}");
}

#[test]
fn smooth_density_resolution() {
    let smooth = |n: usize| {
        let w: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (3.0 * (i as f64 + 0.5) / n as f64).cos()).collect();
        GridMeasure::grid_normalized(0.3, 2.3, &w).unwrap()
    };
    let a = chi(&smooth(2000), 0.2, 0.6);
    let b = chi(&smooth(4000), 0.2, 0.6);
    assert!((a - b).abs() < 1e-5);
}

#[test]
fn cube_map_matches_direct_formula() {
    // X uniform on [0,1] is the law of aa*, so f(t) = t^3 sends it to Y = X^3.
    // E log Y = -3, and Sigma(Y) = Sigma(X) + E log(X^2 + XX' + X'^2)
    // = -3/2 - 1 + int_0^1 log(1 + s + s^2) ds.
    let (x, w) = gauss_legendre(40);
    let i: f64 = x.iter().zip(&w).map(|(x, w)| 0.5 * w * (1.0 + (0.5 + 0.5 * x) + (0.5 + 0.5 * x).powi(2)).ln()).sum();
    let sigma_y = -2.5 + i;
    let (a, b) = (0.25, 0.75);
    let direct = a * a * sigma_y + (b - a) * a * (-3.0) + a * b * ((PI / a).ln() + 1.0) + a * a / 4.0
        - a * a * {
            let p = |x: f64| 0.5 * x * x * x.ln() - 0.25 * x * x;
            p(b / a) - p((b - a) / a)
        };
    let n = 3000;
    let edges: Vec<f64> = (0..=n).map(|i| (i as f64 / n as f64).powi(6)).collect();
    let dens: Vec<f64> = vec![1.0; n];
    let u = GridMeasure::with_edges(edges, dens).unwrap();
    let inp = EntropyInput::new(u, a, b).unwrap();
    let got = chi_functional_calculus(&inp, |t| t * t * t, 1).unwrap().to_f64();
    assert!((got - direct).abs() < 1e-6, "{got} {direct}");
}

#[test]
fn functional_calculus_rejects_bad_maps() {
    let inp = EntropyInput::new(GridMeasure::uniform(0.0, 1.0).unwrap(), 0.5, 0.5).unwrap();
    assert!(matches!(chi_functional_calculus(&inp, |t| t + 1.0, 1), Err(rectfree::Error::Precondition(_))));
    assert!(matches!(chi_functional_calculus(&inp, |t| (t - 0.5).powi(2) - 0.25, 1), Err(rectfree::Error::Precondition(_))));
    let id = chi_functional_calculus(&inp, |t| t, 1).unwrap();
    assert!((id.to_f64() - chi_single(&inp).unwrap().to_f64()).abs() < 1e-12);
}

#[test]
fn free_family_additivity() {
    let inp = EntropyInput::new(GridMeasure::mp(3.0, 1.0).unwrap(), 0.25, 0.75).unwrap();
    let one = chi_single(&inp).unwrap().to_f64();
    assert_eq!(chi_free_family(std::slice::from_ref(&inp)).unwrap().to_f64(), one);
    assert!((chi_free_family(&[inp.clone(), inp.clone()]).unwrap().to_f64() - 2.0 * one).abs() < 1e-12);
    let atoms = EntropyInput::new(GridMeasure::atoms(vec![(1.0, 1.0)]).unwrap(), 0.25, 0.75).unwrap();
    assert!(chi_free_family(&[inp, atoms]).unwrap().is_neg_infinite());
    assert_eq!(chi_free_family(&[]).unwrap(), Extended::Finite(0.0));
}

#[test]
fn mass_at_zero_gives_neg_infinity_only_when_rectangular() {
    let mu = GridMeasure::atoms(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
    assert!(mu.log_moment().is_neg_infinite());
    assert!(rate_j(&mu, 0.25, 0.75).unwrap().is_infinite());
}

#[test]
fn maximizer_gap_examples() {
    let c = 2.0;
    // square case: uniform on [0, 2c] against MP(1) scaled to mean c.
    let u = GridMeasure::uniform(0.0, 2.0 * c).unwrap();
    let gap = maximizer_gap(&u, 0.5, 0.5, c).unwrap();
    let expected = (-0.5 + c.ln()) - ((2.0 * c).ln() - 1.5);
    assert!((gap - expected).abs() < 1e-8, "{gap} {expected}");
    assert!(gap > 0.0);
    // rectangular case: a mass-preserving, mean-decreasing bump on the maximizer.
    let base = constrained_maximizer(0.25, 0.75, c).unwrap().to_grid(2000).unwrap();
    let GridMeasure::Grid { edges, density } = &base else { unreachable!() };
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let w: Vec<f64> = density
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let t = ((edges[i] + edges[i + 1]) / 2.0 - lo) / (hi - lo);
            d * (edges[i + 1] - edges[i]) * (1.0 + 0.3 * (2.0 * PI * t).cos())
        })
        .collect();
    let total: f64 = w.iter().sum();
    let dens: Vec<f64> = w.iter().zip(edges.windows(2)).map(|(m, e)| m / total / (e[1] - e[0])).collect();
    let bumped = GridMeasure::with_edges(edges.clone(), dens).unwrap();
    assert!(bumped.mean() < c);
    assert!(maximizer_gap(&bumped, 0.25, 0.75, c).unwrap() > 1e-4);
    let over = common::dilate(&u, 1.5);
    assert!(matches!(maximizer_gap(&over, 0.5, 0.5, c), Err(rectfree::Error::Precondition(_))));
}

#[test]
fn maximizer_gap_on_family() {
    for (rk, rl, c) in [(0.25, 0.75, 2.0), (0.5, 0.5, 1.0)] {
        let fam = common::maximizer_family(rk, rl, c, 17);
        assert_eq!(fam.len(), 50);
        for (i, (name, mu)) in fam.iter().enumerate() {
            let g = maximizer_gap(mu, rk, rl, c).unwrap();
            assert!(g >= -1e-6, "{name}: {g}");
            assert_eq!(g < 1e-6, i == 0, "{name}: {g}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dilation_scaling_law(seed in any::<u64>(), lambda in 0.2f64..5.0, rk in 0.05f64..0.5) {
        let mut r = common::rng(seed);
        let rl = rk + (1.0 - 2.0 * rk) * 0.7;
        let mu = common::random_grid_measure(300, &mut r);
        let inp = EntropyInput::new(mu, rk, rl).unwrap();
        let base = chi_single(&inp).unwrap().to_f64();
        let scaled = chi_functional_calculus(&inp, move |t| lambda * t, 1).unwrap().to_f64();
        prop_assert!((scaled - base - 2.0 * rk * rl * lambda.ln()).abs() < 1e-6);
    }

    #[test]
    fn gap_nonnegative_under_cap(seed in any::<u64>(), c in 0.5f64..4.0) {
        let mut r = common::rng(seed);
        let mu = common::random_grid_measure(300, &mut r);
        let mu = common::fit_mean(&mu, c);
        prop_assert!(maximizer_gap(&mu, 0.2, 0.8, c).unwrap() > 0.0);
    }
}
