#![allow(dead_code)]

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rectfree::dblock::*;
use rectfree::measures::GridMeasure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rotate(w: &[Letter]) -> Word {
    let mut r = w[1..].to_vec();
    r.push(w[0]);
    r
}

/// A random table satisfying weighted cyclicity and star symmetry: one free
/// complex parameter per rotation orbit, conjugated on the adjoint orbit and
/// real on self-adjoint orbits.
pub fn random_valid_cumulants(alphabet: &Alphabet, degree: usize, rng: &mut impl Rng) -> ScalarCumulantTable {
    let rho = alphabet.structure().rho().to_vec();
    let mut vals: BTreeMap<Word, Complex64> = BTreeMap::new();
    for w in alphabet.square_words(degree) {
        if vals.contains_key(&w) {
            continue;
        }
        let mut orbit = vec![w.clone()];
        loop {
            let r = rotate(orbit.last().unwrap());
            if r == w {
                break;
            }
            orbit.push(r);
        }
        let star_orbit: Vec<Word> = orbit.iter().map(|x| alphabet.adjoint(x)).collect();
        let self_star = orbit.contains(&star_orbit[0]);
        let mut t = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if self_star {
            t.im = 0.0;
        }
        for x in &orbit {
            let i0 = alphabet.chain(x).unwrap()[0];
            vals.insert(x.clone(), t / rho[i0]);
        }
        if !self_star {
            for x in &star_orbit {
                let i0 = alphabet.chain(x).unwrap()[0];
                vals.insert(x.clone(), t.conj() / rho[i0]);
            }
        }
    }
    let mut table = ScalarCumulantTable::new(alphabet.clone(), degree);
    for (w, v) in vals {
        table.insert(&w, v).unwrap();
    }
    table
}

pub fn random_structure(d: usize, rng: &mut impl Rng) -> BlockStructure {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut rho: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let head: f64 = rho[..d - 1].iter().sum();
    rho[d - 1] = 1.0 - head;
    BlockStructure::new(rho).unwrap()
}

pub fn max_abs_diff<K: TableKind, L: TableKind>(a: &Table<K>, b: &Table<L>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().map(|(w, v)| (v - b.get(w).expect("same words")).norm()).fold(0.0, f64::max)
}

/// Dilation of a grid measure by `s > 0`.
pub fn dilate(mu: &GridMeasure, s: f64) -> GridMeasure {
    let GridMeasure::Grid { edges, density } = mu else { panic!("grid expected") };
    GridMeasure::with_edges(edges.iter().map(|x| x * s).collect(), density.iter().map(|d| d / s).collect()).unwrap()
}

/// A smooth random density on a random interval of `[0, 5]`.
pub fn random_grid_measure(cells: usize, rng: &mut impl Rng) -> GridMeasure {
    let x0 = rng.random_range(0.0..0.5);
    let x1 = x0 + rng.random_range(0.5..4.0);
    let amp: Vec<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
    let phase: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..6.3)).collect();
    let w: Vec<f64> = (0..cells)
        .map(|i| {
            let t = (i as f64 + 0.5) / cells as f64;
            1.0 + (0..3).map(|j| amp[j] * ((j + 1) as f64 * std::f64::consts::PI * t + phase[j]).sin()).sum::<f64>()
        })
        .collect();
    GridMeasure::grid_normalized(x0, x1, &w).unwrap()
}

/// Fixed 50-member family with means at most `c`. Member 0 is the mean-`c`
/// MP maximizer itself; every other member differs from it.
pub fn maximizer_family(rho_k: f64, rho_l: f64, c: f64, seed: u64) -> Vec<(String, GridMeasure)> {
    let lambda = rho_l / rho_k;
    let mut r = rng(seed);
    let mut out = vec![("maximizer".to_string(), GridMeasure::mp(lambda, c / lambda).unwrap())];
    for other in [1.0, 1.5, 2.0, 5.0, 8.0, 12.0] {
        if (other - lambda).abs() > 1e-9 {
            out.push((format!("mp({other})"), GridMeasure::mp(other, c / other).unwrap()));
        }
    }
    for t in [0.9, 0.7, 0.5] {
        out.push((format!("maximizer x{t}"), GridMeasure::mp(lambda, t * c / lambda).unwrap()));
    }
    let base = GridMeasure::mp(lambda, c / lambda).unwrap().to_grid(1500).unwrap();
    for j in 0..5 {
        let GridMeasure::Grid { edges, density } = &base else { unreachable!() };
        let (lo, hi) = (edges[0], edges[edges.len() - 1]);
        let amp = r.random_range(0.15..0.4);
        let freq = (j + 1) as f64;
        let w: Vec<f64> = density
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let t = (edges[i] + edges[i + 1]) / 2.0;
                d * (edges[i + 1] - edges[i]) * (1.0 + amp * (freq * std::f64::consts::PI * (t - lo) / (hi - lo)).sin())
            })
            .collect();
        let total: f64 = w.iter().sum();
        let dens: Vec<f64> = w.iter().zip(edges.windows(2)).map(|(m, e)| m / total / (e[1] - e[0])).collect();
        let mu = GridMeasure::with_edges(edges.clone(), dens).unwrap();
        out.push((format!("perturbed maximizer {j}"), fit_mean(&mu, c)));
    }
    while out.len() < 50 {
        let mu = random_grid_measure(600, &mut r);
        let target = c * r.random_range(0.5..1.0);
        let k = out.len();
        out.push((format!("random grid {k}"), dilate(&mu, target / mu.mean())));
    }
    out
}

/// Dilate down to mean `c` if the mean exceeds it.
pub fn fit_mean(mu: &GridMeasure, c: f64) -> GridMeasure {
    let m = mu.mean();
    if m > c {
        dilate(mu, c / m * (1.0 - 1e-12))
    } else {
        mu.clone()
    }
}

/// `rows x cols` matrix of iid complex Gaussians with `E|z|^2 = var`.
pub fn gaussian_block(rows: usize, cols: usize, var: f64, rng: &mut impl Rng) -> nalgebra::DMatrix<Complex64> {
    let s = (var / 2.0).sqrt();
    nalgebra::DMatrix::from_fn(rows, cols, |_, _| {
        let (a, b): (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
        Complex64::new(s * a, s * b)
    })
}
