//! Compactly supported probability measures on `[0, inf)`: piecewise-constant
//! grid densities, atomic measures and the Marchenko-Pastur family.
//!
//! | quantity            | grid                         | atoms | MP                          |
//! |---------------------|------------------------------|-------|-----------------------------|
//! | moments             | exact per cell               | exact | angular midpoint rule       |
//! | `int log x`         | exact per cell               | exact | closed form                 |
//! | log-energy `Sigma`  | closed-form kernel per pair  | -inf  | Euler-Lagrange + quadrature |
//!
//! The MP law with parameter `lambda >= 1` has all free cumulants equal to
//! `lambda`; `scale` dilates it, so its mean is `scale * lambda`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Default number of cells when a measure has to be discretized.
pub const DEFAULT_CELLS: usize = 2000;

const MASS_TOL: f64 = 1e-9;
const MP_NODES: usize = 4096;

/// A real number or negative infinity, kept apart from float overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Extended {
    Finite(f64),
    #[serde(serialize_with = "ser_neg_inf")]
    NegInfinity,
}

fn ser_neg_inf<S: serde::Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str("-inf")
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            Extended::NegInfinity => None,
        }
    }

    pub fn is_neg_infinite(self) -> bool {
        matches!(self, Extended::NegInfinity)
    }

    /// Finite value, or `f64::NEG_INFINITY` for display and comparisons.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }

    /// `a * self + b`, with `a > 0`; `a == 0` keeps `-inf` out of the sum.
    pub fn affine(self, a: f64, b: f64) -> Extended {
        match self {
            Extended::Finite(x) => Extended::Finite(a * x + b),
            Extended::NegInfinity if a == 0.0 => Extended::Finite(b),
            Extended::NegInfinity => Extended::NegInfinity,
        }
    }

    pub fn add(self, other: Extended) -> Extended {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::NegInfinity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridMeasure {
    /// Piecewise-constant density on increasing cell edges.
    Grid { edges: Vec<f64>, density: Vec<f64> },
    Atoms(Vec<(f64, f64)>),
    Mp { lambda: f64, scale: f64 },
}

impl GridMeasure {
    /// Uniform cells on `[xmin, xmax]`.
    pub fn grid(xmin: f64, xmax: f64, density: Vec<f64>) -> Result<Self> {
        if !(xmin.is_finite() && xmax.is_finite() && xmax > xmin) {
            return Err(Error::Validation(format!("invalid grid interval [{xmin}, {xmax}]")));
        }
        let m = density.len();
        if m == 0 {
            return Err(Error::Validation("grid without cells".into()));
        }
        let h = (xmax - xmin) / m as f64;
        let mut edges: Vec<f64> = (0..=m).map(|i| xmin + h * i as f64).collect();
        edges[m] = xmax;
        Self::with_edges(edges, density)
    }

    pub fn with_edges(edges: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if edges.len() != density.len() + 1 || density.is_empty() {
            return Err(Error::Validation("grid needs one more edge than cells".into()));
        }
        if edges[0] < 0.0 || !edges.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation("grid support must lie in [0, inf)".into()));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("grid edges must increase strictly".into()));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Validation("density must be finite and nonnegative".into()));
        }
        let mass: f64 = density.iter().zip(edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Validation(format!("total mass {mass} differs from 1")));
        }
        Ok(GridMeasure::Grid { edges, density })
    }

    /// Grid from unnormalized cell weights on uniform cells.
    pub fn grid_normalized(xmin: f64, xmax: f64, weights: &[f64]) -> Result<Self> {
        let h = (xmax - xmin) / weights.len() as f64;
        let total: f64 = weights.iter().sum::<f64>() * h;
        if !(total > 0.0) {
            return Err(Error::Validation("weights have no mass".into()));
        }
        Self::grid(xmin, xmax, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(xmin: f64, xmax: f64) -> Result<Self> {
        Self::grid(xmin, xmax, vec![1.0 / (xmax - xmin)])
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Validation("no atoms".into()));
        }
        if atoms.iter().any(|(x, w)| !(x.is_finite() && *x >= 0.0 && w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("atoms need positions in [0, inf) and nonnegative weights".into()));
        }
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Validation(format!("total mass {mass} differs from 1")));
        }
        Ok(GridMeasure::Atoms(atoms))
    }

    pub fn mp(lambda: f64, scale: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 1.0) {
            return Err(Error::Validation(format!("MP parameter {lambda} must be >= 1")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Validation(format!("MP scale {scale} must be positive")));
        }
        Ok(GridMeasure::Mp { lambda, scale })
    }

    /// Support interval.
    pub fn support(&self) -> (f64, f64) {
        match self {
            GridMeasure::Grid { edges, .. } => (edges[0], edges[edges.len() - 1]),
            GridMeasure::Atoms(a) => {
                let lo = a.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
                let hi = a.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            GridMeasure::Mp { lambda, scale } => {
                let r = lambda.sqrt();
                (scale * (r - 1.0).powi(2), scale * (r + 1.0).powi(2))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// `int x^n dmu`.
    pub fn moment(&self, n: u32) -> f64 {
        if n == 0 {
            return 1.0;
        }
        match self {
            GridMeasure::Grid { edges, density } => {
                let k = n as i32 + 1;
                density.iter().zip(edges.windows(2)).map(|(d, w)| d * (w[1].powi(k) - w[0].powi(k)) / k as f64).sum()
            }
            GridMeasure::Atoms(a) => a.iter().map(|(x, w)| w * x.powi(n as i32)).sum(),
            GridMeasure::Mp { lambda, scale } => mp_integral(*lambda, *scale, MP_NODES, |x| x.powi(n as i32)),
        }
    }

    /// `int log x dmu`; `-inf` when an atom sits at 0.
    pub fn log_moment(&self) -> Extended {
        match self {
            GridMeasure::Grid { edges, density } => {
                let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() - x };
                Extended::Finite(density.iter().zip(edges.windows(2)).map(|(d, w)| d * (xlogx(w[1]) - xlogx(w[0]))).sum())
            }
            GridMeasure::Atoms(a) => {
                if a.iter().any(|(x, w)| *x == 0.0 && *w > 0.0) {
                    Extended::NegInfinity
                } else {
                    Extended::Finite(a.iter().filter(|(_, w)| *w > 0.0).map(|(x, w)| w * x.ln()).sum())
                }
            }
            GridMeasure::Mp { lambda, scale } => Extended::Finite(mp_log_moment(*lambda) + scale.ln()),
        }
    }

    /// Logarithmic energy `Sigma(mu) = int int log|x - y| dmu dmu`.
    pub fn log_energy(&self) -> Extended {
        match self {
            GridMeasure::Grid { edges, density } => Extended::Finite(grid_log_energy(edges, density)),
            GridMeasure::Atoms(_) => Extended::NegInfinity,
            GridMeasure::Mp { lambda, scale } => Extended::Finite(mp_log_energy(*lambda) + scale.ln()),
        }
    }

    /// Piecewise-constant version with `cells` cells (grids are returned as is).
    pub fn to_grid(&self, cells: usize) -> Result<GridMeasure> {
        match self {
            GridMeasure::Grid { .. } => Ok(self.clone()),
            _ => {
                let (a, b) = self.support();
                let h = (b - a) / cells as f64;
                let mut edges: Vec<f64> = (0..=cells).map(|i| a + h * i as f64).collect();
                edges[cells] = b;
                self.discretize(edges)
            }
        }
    }

    /// Piecewise-constant version on the given edges, which must cover the
    /// support; cell masses are exact up to quadrature error.
    pub fn discretize(&self, edges: Vec<f64>) -> Result<GridMeasure> {
        match self {
            GridMeasure::Atoms(_) => Err(Error::Precondition("atomic measures have no density".into())),
            GridMeasure::Grid { .. } => Err(Error::Precondition("grid measures are already discrete".into())),
            GridMeasure::Mp { lambda, scale } => {
                let (lambda, scale) = (*lambda, *scale);
                let theta = |x: f64| {
                    let c = ((x / scale - lambda - 1.0) / (2.0 * lambda.sqrt())).clamp(-1.0, 1.0);
                    c.acos()
                };
                let (gx, gw) = gauss_legendre(12);
                let mut masses = Vec::with_capacity(edges.len() - 1);
                for w in edges.windows(2) {
                    let (t1, t0) = (theta(w[0]), theta(w[1]));
                    let half = 0.5 * (t1 - t0);
                    let mid = 0.5 * (t1 + t0);
                    let m: f64 = gx.iter().zip(&gw).map(|(x, w)| w * mp_theta_weight(lambda, mid + half * x)).sum::<f64>() * half;
                    masses.push(m.max(0.0));
                }
                let total: f64 = masses.iter().sum();
                let density = masses.iter().zip(edges.windows(2)).map(|(m, w)| m / total / (w[1] - w[0])).collect();
                GridMeasure::with_edges(edges, density)
            }
        }
    }

    pub fn to_json_value(&self) -> Value {
        match self {
            GridMeasure::Grid { edges, density } => {
                let m = density.len();
                let h = (edges[m] - edges[0]) / m as f64;
                let uniform = edges.iter().enumerate().all(|(i, e)| (e - (edges[0] + h * i as f64)).abs() <= 1e-12 * (1.0 + e.abs()));
                if uniform {
                    serde_json::json!({"kind": "grid", "xmin": edges[0], "xmax": edges[m], "density": density})
                } else {
                    serde_json::json!({"kind": "grid", "edges": edges, "density": density})
                }
            }
            GridMeasure::Atoms(a) => {
                let atoms: Vec<[f64; 2]> = a.iter().map(|(x, w)| [*x, *w]).collect();
                serde_json::json!({"kind": "atoms", "atoms": atoms})
            }
            GridMeasure::Mp { lambda, scale } => serde_json::json!({"kind": "mp", "lambda": lambda, "scale": scale}),
        }
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let doc: MeasureDoc = serde_json::from_value(v.clone()).map_err(|e| Error::Validation(format!("malformed measure: {e}")))?;
        match doc {
            MeasureDoc::Mp { lambda, scale } => Self::mp(lambda, scale.unwrap_or(1.0)),
            MeasureDoc::Atoms { atoms } => Self::atoms(atoms.into_iter().map(|[x, w]| (x, w)).collect()),
            MeasureDoc::Grid { xmin, xmax, edges, density } => match (edges, xmin, xmax) {
                (Some(e), _, _) => Self::with_edges(e, density),
                (None, Some(a), Some(b)) => Self::grid(a, b, density),
                _ => Err(Error::Validation("grid needs either edges or xmin and xmax".into())),
            },
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::Validation(format!("invalid JSON: {e}")))?;
        Self::from_json_value(&v)
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum MeasureDoc {
    Mp {
        lambda: f64,
        scale: Option<f64>,
    },
    Atoms {
        atoms: Vec<[f64; 2]>,
    },
    Grid {
        xmin: Option<f64>,
        xmax: Option<f64>,
        edges: Option<Vec<f64>>,
        density: Vec<f64>,
    },
}

/// Density of MP(lambda) in the angle `x = lambda + 1 + 2 sqrt(lambda) cos t`,
/// `t in [0, pi]`, for unit scale.
fn mp_theta_weight(lambda: f64, t: f64) -> f64 {
    let r = lambda.sqrt();
    let c = (0.5 * t).cos();
    // lambda + 1 + 2 r cos t, written without cancellation near t = pi
    let x = (r - 1.0).powi(2) + 4.0 * r * c * c;
    if x == 0.0 {
        return 0.0;
    }
    2.0 * lambda * t.sin().powi(2) / (PI * x)
}

/// `int g dMP(lambda, scale)` by the midpoint rule in the angle.
fn mp_integral<G: Fn(f64) -> f64>(lambda: f64, scale: f64, nodes: usize, g: G) -> f64 {
    let r = lambda.sqrt();
    let h = PI / nodes as f64;
    let mut acc = 0.0;
    for j in 0..nodes {
        let t = (j as f64 + 0.5) * h;
        let c = (0.5 * t).cos();
        let x = (r - 1.0).powi(2) + 4.0 * r * c * c;
        acc += g(scale * x) * mp_theta_weight(lambda, t);
    }
    acc * h
}

/// `int log x dMP(lambda)` at unit scale.
pub fn mp_log_moment(lambda: f64) -> f64 {
    if lambda == 1.0 {
        -1.0
    } else {
        lambda.ln() - 1.0 + (lambda - 1.0) * (lambda / (lambda - 1.0)).ln()
    }
}

/// `Sigma(MP(lambda))` at unit scale, from the equilibrium relation
/// `2 U(x) = x - (lambda - 1) log x + C` on the support.
pub fn mp_log_energy(lambda: f64) -> f64 {
    let r = lambda.sqrt();
    let b = (r + 1.0).powi(2);
    // U(b) with b - x = 4 r sin^2(t/2)
    let nodes = 1 << 16;
    let h = PI / nodes as f64;
    let mut ub = 0.0;
    for j in 0..nodes {
        let t = (j as f64 + 0.5) * h;
        let s = (0.5 * t).sin();
        ub += ((4.0 * r).ln() + 2.0 * s.ln()) * mp_theta_weight(lambda, t);
    }
    ub *= h;
    let c_el = 2.0 * ub - b + (lambda - 1.0) * b.ln();
    0.5 * (c_el + lambda - (lambda - 1.0) * mp_log_moment(lambda))
}

/// `K` with `K'' = log|t|`, `K(0) = 0`.
fn log_kernel_primitive(t: f64) -> f64 {
    let t = t.abs();
    if t == 0.0 {
        0.0
    } else {
        0.5 * t * t * t.ln() - 0.75 * t * t
    }
}

/// `int_a^b int_c^d log|x - y| dy dx`.
fn cell_pair_log(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let k = log_kernel_primitive;
    k(b - c) - k(a - c) - k(b - d) + k(a - d)
}

fn grid_log_energy(edges: &[f64], density: &[f64]) -> f64 {
    let m = density.len();
    let h = (edges[m] - edges[0]) / m as f64;
    let uniform = edges.iter().enumerate().all(|(i, e)| (e - (edges[0] + h * i as f64)).abs() <= 1e-12 * (1.0 + e.abs()));
    if uniform {
        // Toeplitz structure: the pair integral depends on |i - j| only.
        let lh = h.ln();
        let mut v = vec![0.0; m];
        v[0] = h * h * (lh - 1.5);
        for (k, vk) in v.iter_mut().enumerate().skip(1) {
            let kf = k as f64;
            let lower = if k == 1 { 0.0 } else { (kf - 1.0).powi(2) * (-1.0 / kf).ln_1p() };
            *vk = h * h * (0.5 * ((kf + 1.0).powi(2) * (1.0 / kf).ln_1p() + lower) + kf.ln() + lh - 1.5);
        }
        let mut total = 0.0;
        for i in 0..m {
            let di = density[i];
            if di == 0.0 {
                continue;
            }
            let mut row = v[0] * di;
            for j in (i + 1)..m {
                row += 2.0 * v[j - i] * density[j];
            }
            total += di * row;
        }
        total
    } else {
        let mut total = 0.0;
        for i in 0..m {
            let di = density[i];
            if di == 0.0 {
                continue;
            }
            let (a, b) = (edges[i], edges[i + 1]);
            let mut row = di * cell_pair_log(a, b, a, b);
            for j in (i + 1)..m {
                if density[j] != 0.0 {
                    row += 2.0 * density[j] * cell_pair_log(a, b, edges[j], edges[j + 1]);
                }
            }
            total += di * row;
        }
        total
    }
}

/// A strictly increasing map, given by a closure or by increasing samples
/// interpolated linearly.
pub struct IncreasingMap {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl IncreasingMap {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        IncreasingMap { f: Box::new(f) }
    }

    pub fn identity() -> Self {
        Self::new(|x| x)
    }

    /// Linear interpolation through `(xs[i], ys[i])`; both must increase.
    pub fn from_samples(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Precondition("need at least two matching samples".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("samples are not strictly increasing".into()));
        }
        Ok(Self::new(move |x| {
            let i = match xs.partition_point(|v| *v <= x) {
                0 => 0,
                p if p >= xs.len() => xs.len() - 2,
                p => p - 1,
            };
            let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
            ys[i] + t * (ys[i + 1] - ys[i])
        }))
    }

    pub fn apply(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// Law of `f(X)` for `X ~ mu`. Each grid cell is split into `refine` equal
/// parts whose masses move to the image intervals.
pub fn pushforward_increasing(mu: &GridMeasure, f: &IncreasingMap, refine: usize) -> Result<GridMeasure> {
    let refine = refine.max(1);
    match mu {
        GridMeasure::Atoms(a) => {
            let mut sorted = a.clone();
            sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
            let img: Vec<(f64, f64)> = sorted.iter().map(|(x, w)| (f.apply(*x), *w)).collect();
            if img.windows(2).any(|w| w[1].0 <= w[0].0) && sorted.windows(2).any(|w| w[1].0 > w[0].0) {
                return Err(Error::Precondition("map is not increasing on the atoms".into()));
            }
            GridMeasure::atoms(img)
        }
        GridMeasure::Mp { .. } => pushforward_increasing(&mu.to_grid(DEFAULT_CELLS)?, f, refine),
        GridMeasure::Grid { edges, density } => {
            let mut new_edges = Vec::with_capacity(density.len() * refine + 1);
            let mut masses = Vec::with_capacity(density.len() * refine);
            new_edges.push(f.apply(edges[0]));
            for (i, d) in density.iter().enumerate() {
                let (a, b) = (edges[i], edges[i + 1]);
                let h = (b - a) / refine as f64;
                for s in 0..refine {
                    let x1 = if s + 1 == refine { b } else { a + h * (s + 1) as f64 };
                    new_edges.push(f.apply(x1));
                    masses.push(d * (x1 - (a + h * s as f64)));
                }
            }
            if new_edges.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Precondition("map is not strictly increasing on the support".into()));
            }
            if new_edges[0] < 0.0 {
                return Err(Error::Precondition("map sends the support below 0".into()));
            }
            let density: Vec<f64> = masses.iter().zip(new_edges.windows(2)).map(|(m, w)| m / (w[1] - w[0])).collect();
            GridMeasure::with_edges(new_edges, density)
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    golub_welsch(j, 2.0)
}

/// Gauss-Laguerre nodes and weights for `int_0^inf g(x) x^alpha e^{-x} dx`.
pub fn gauss_laguerre(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        j[(k, k)] = 2.0 * kf + 1.0 + alpha;
        if k + 1 < n {
            let b = ((kf + 1.0) * (kf + 1.0 + alpha)).sqrt();
            j[(k, k + 1)] = b;
            j[(k + 1, k)] = b;
        }
    }
    golub_welsch(j, gamma(alpha + 1.0))
}

fn golub_welsch(j: DMatrix<f64>, mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = j.nrows();
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gamma function (Lanczos, g = 7), accurate to about 1e-15 relative.
pub fn gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_unit_interval() {
        let u = GridMeasure::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.moment(0), 1.0);
        assert!((u.log_moment().to_f64() + 1.0).abs() < 1e-15);
        assert!((u.log_energy().to_f64() + 1.5).abs() < 1e-14);
        let fine = GridMeasure::grid(0.0, 1.0, vec![1.0; 500]).unwrap();
        assert!((fine.log_energy().to_f64() + 1.5).abs() < 1e-10);
    }

    #[test]
    fn nonuniform_path_agrees_with_toeplitz_path() {
        let d: Vec<f64> = (0..40).map(|i| 1.0 + (i as f64 * 0.3).sin() * 0.5).collect();
        let g = GridMeasure::grid_normalized(0.5, 2.5, &d).unwrap();
        let GridMeasure::Grid { edges, density } = &g else { unreachable!() };
        let mut perturbed = edges.clone();
        perturbed[0] -= 1e-11;
        let fast = grid_log_energy(edges, density);
        let mut slow = 0.0;
        for i in 0..density.len() {
            for j in 0..density.len() {
                slow += density[i] * density[j] * cell_pair_log(edges[i], edges[i + 1], edges[j], edges[j + 1]);
            }
        }
        assert!((fast - slow).abs() < 1e-12);
        assert!((grid_log_energy(&perturbed, density) - fast).abs() < 1e-10);
    }

    #[test]
    fn mp_basics() {
        let m = GridMeasure::mp(2.0, 1.0).unwrap();
        assert!((m.moment(1) - 2.0).abs() < 1e-12);
        assert!((GridMeasure::mp(1.0, 1.0).unwrap().moment(3) - 5.0).abs() < 1e-12);
        assert!((m.moment(0) - 1.0).abs() < 1e-15);
        assert!((mp_integral(2.0, 1.0, MP_NODES, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!(GridMeasure::mp(0.5, 1.0).is_err());
    }

    #[test]
    fn mp_log_moment_matches_quadrature() {
        for lambda in [1.5, 2.0, 4.0] {
            let q = mp_integral(lambda, 1.0, 1 << 14, f64::ln);
            assert!((q - mp_log_moment(lambda)).abs() < 1e-10, "{lambda}");
        }
    }

    #[test]
    fn atoms_signal_negative_infinity() {
        let a = GridMeasure::atoms(vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!(a.log_energy().is_neg_infinite());
        assert!((a.moment(2) - 2.5).abs() < 1e-15);
        let z = GridMeasure::atoms(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!(z.log_moment().is_neg_infinite());
    }

    #[test]
    fn mass_checked() {
        assert!(GridMeasure::grid(0.0, 1.0, vec![0.5]).is_err());
        assert!(GridMeasure::atoms(vec![(1.0, 0.7)]).is_err());
        assert!(GridMeasure::grid(-1.0, 0.0, vec![1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        for m in [
            GridMeasure::mp(2.0, 0.5).unwrap(),
            GridMeasure::grid(0.0, 2.0, vec![0.25, 0.75]).unwrap(),
            GridMeasure::atoms(vec![(1.0, 0.25), (3.0, 0.75)]).unwrap(),
        ] {
            let back = GridMeasure::from_json_value(&m.to_json_value()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn quadrature_rules() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        let (x, w) = gauss_laguerre(6, 2.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        // int x^5 e^{-x} = 120
        assert!((s - 120.0).abs() < 1e-9);
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_map_rejects_non_monotone() {
        assert!(IncreasingMap::from_samples(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]).is_err());
        let f = IncreasingMap::from_samples(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.apply(0.5), 1.0);
        assert_eq!(f.apply(1.5), 2.5);
    }
}
