//! Monte Carlo harness: Gaussian, GUE and Haar blocks, empirical conditional
//! expectations of words, and comparisons against free predictions.
//!
//! Every trial draws from its own generator, seeded from `(seed, n, trial)`,
//! and statistics are reduced in trial order, so reports do not depend on
//! the number of worker threads.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cumulant::{haar_unitary_cumulants, moments_to_cumulants, semicircular_cumulants, FreeProduct};
use crate::dblock::{
    Alphabet, BlockStructure, GeneratorDecl, Letter, ScalarCumulantTable, ScalarMomentTable, Table, Word,
};
use crate::error::{Error, Result};
use crate::measures::{gamma, gauss_laguerre, gauss_legendre, GridMeasure};
use crate::ncderiv::MatrixPoint;
use crate::ncpart::{self, MAX_NC};

pub const THREADS_ENV: &str = "RECTFREE_THREADS";
pub const MAX_N: usize = 4096;
pub const MAX_TRIALS: usize = 1_000_000;
/// Width of the acceptance band, in standard errors.
pub const SE_BAND: f64 = 3.0;
/// Absolute slack added to the band, for words that are deterministic.
pub const BAND_FLOOR: f64 = 1e-10;
/// Fraction of words that must fall in the band at the largest size.
pub const PASS_FRACTION: f64 = 0.95;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Complex matrix stored as separate real and imaginary parts, so that
/// products run on real gemm.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl CMat {
    pub fn zeros(r: usize, c: usize) -> Self {
        CMat { re: DMatrix::zeros(r, c), im: DMatrix::zeros(r, c) }
    }

    pub fn from_complex(m: &DMatrix<Complex64>) -> Self {
        CMat { re: m.map(|z| z.re), im: m.map(|z| z.im) }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        self.re.zip_map(&self.im, Complex64::new)
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.re.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[(i, j)], self.im[(i, j)])
    }

    pub fn mul(&self, o: &CMat) -> CMat {
        let re = &self.re * &o.re - &self.im * &o.im;
        let im = &self.re * &o.im + &self.im * &o.re;
        CMat { re, im }
    }

    pub fn adjoint(&self) -> CMat {
        CMat { re: self.re.transpose(), im: -self.im.transpose() }
    }

    pub fn trace(&self) -> Complex64 {
        Complex64::new(self.re.trace(), self.im.trace())
    }

    /// `Tr(self * o)` without forming the product.
    pub fn trace_mul(&self, o: &CMat) -> Complex64 {
        let (mut re, mut im) = (0.0, 0.0);
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                let (ar, ai) = (self.re[(i, j)], self.im[(i, j)]);
                let (br, bi) = (o.re[(j, i)], o.im[(j, i)]);
                re += ar * br - ai * bi;
                im += ar * bi + ai * br;
            }
        }
        Complex64::new(re, im)
    }

    /// Diagonal of `self * o`.
    pub fn diag_mul(&self, o: &CMat) -> Vec<Complex64> {
        (0..self.nrows())
            .map(|i| {
                let (mut re, mut im) = (0.0, 0.0);
                for j in 0..self.ncols() {
                    let (ar, ai) = (self.re[(i, j)], self.im[(i, j)]);
                    let (br, bi) = (o.re[(j, i)], o.im[(j, i)]);
                    re += ar * br - ai * bi;
                    im += ar * bi + ai * br;
                }
                Complex64::new(re, im)
            })
            .collect()
    }

    /// `self * diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> CMat {
        let mut out = self.clone();
        for (j, s) in d.iter().enumerate() {
            out.re.column_mut(j).scale_mut(*s);
            out.im.column_mut(j).scale_mut(*s);
        }
        out
    }
}

fn splitmix64(z: u64) -> u64 {
    let z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seed of one trial.
pub fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ n as u64) ^ trial as u64)
}

pub fn trial_rng(seed: u64, n: usize, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(seed, n, trial))
}

/// Worker count: `RECTFREE_THREADS` if set, capped by the available cores.
pub fn worker_count() -> Result<usize> {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k.min(avail)),
            _ => Err(Error::Configuration(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(avail),
    }
}

pub fn worker_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))
}

fn normal(rng: &mut impl Rng, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

/// `r x c` iid complex entries with real and imaginary parts `N(0, var/2)`.
pub fn ginibre(r: usize, c: usize, var: f64, rng: &mut impl Rng) -> CMat {
    let sd = (var / 2.0).sqrt();
    let mut m = CMat::zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            m.re[(i, j)] = normal(rng, sd);
            m.im[(i, j)] = normal(rng, sd);
        }
    }
    m
}

/// GUE block: off-diagonal parts `N(0, var/2)`, real diagonal `N(0, var)`.
pub fn gue(q: usize, var: f64, rng: &mut impl Rng) -> CMat {
    let sd = (var / 2.0).sqrt();
    let mut m = CMat::zeros(q, q);
    for j in 0..q {
        m.re[(j, j)] = normal(rng, var.sqrt());
        for i in 0..j {
            let (a, b) = (normal(rng, sd), normal(rng, sd));
            m.re[(i, j)] = a;
            m.im[(i, j)] = b;
            m.re[(j, i)] = a;
            m.im[(j, i)] = -b;
        }
    }
    m
}

/// Haar unitary: QR of a Ginibre matrix, columns rescaled by the phases of
/// the diagonal of `R`.
pub fn haar_unitary(q: usize, rng: &mut impl Rng) -> CMat {
    let z = ginibre(q, q, 1.0, rng).to_complex();
    let qr = z.qr();
    let r = qr.r();
    let mut u = qr.q();
    for j in 0..q {
        let d = r[(j, j)];
        let ph = if d.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { d / d.norm() };
        for i in 0..q {
            u[(i, j)] *= ph;
        }
    }
    CMat::from_complex(&u)
}

/// Draws from a measure on the line: cells by mass then uniform inside,
/// atoms by weight; MP laws through a fine grid.
pub fn sample_measure(mu: &GridMeasure, rng: &mut impl Rng) -> Result<f64> {
    match mu {
        GridMeasure::Grid { edges, density } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let total: f64 = density.iter().zip(edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
            for (i, d) in density.iter().enumerate() {
                acc += d * (edges[i + 1] - edges[i]) / total;
                if u < acc || i + 1 == density.len() {
                    let v: f64 = rng.random();
                    return Ok(edges[i] + v * (edges[i + 1] - edges[i]));
                }
            }
            unreachable!("grid has cells")
        }
        GridMeasure::Atoms(atoms) => {
            let u: f64 = rng.random();
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let mut acc = 0.0;
            for (x, w) in atoms {
                acc += w / total;
                if u < acc {
                    return Ok(*x);
                }
            }
            Ok(atoms[atoms.len() - 1].0)
        }
        GridMeasure::Mp { .. } => sample_measure(&mu.to_grid(4096)?, rng),
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// One named matrix family. Block indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixKind {
    /// Entries of variance `scale / n` on block `(row, col)`.
    GinibreBlock {
        row: usize,
        col: usize,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    /// GUE on block `block`, entries of variance `scale / n`.
    HermitianGaussian {
        block: usize,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    HaarUnitaryBlock { block: usize },
    /// Real diagonal on `block`, repeating `diagonal` periodically.
    Constant { block: usize, diagonal: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: MatrixKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsemblePlan {
    pub rho: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub matrices: Vec<MatrixSpec>,
    pub words: Vec<String>,
}

impl EnsemblePlan {
    pub fn from_json(s: &str) -> Result<Self> {
        let p: EnsemblePlan = serde_json::from_str(s).map_err(|e| Error::Validation(format!("malformed plan: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn structure(&self) -> Result<BlockStructure> {
        BlockStructure::new(self.rho.clone())
    }

    /// The generators, 0-based. Hermitian and constant families are
    /// declared selfadjoint.
    pub fn alphabet(&self, structure: &BlockStructure) -> Result<Alphabet> {
        let d = structure.d();
        let idx = |name: &str, k: usize| {
            if k == 0 || k > d {
                Err(Error::Validation(format!("matrix {name} uses block {k} outside 1..={d}")))
            } else {
                Ok(k - 1)
            }
        };
        let gens = self
            .matrices
            .iter()
            .map(|m| {
                Ok(match &m.kind {
                    MatrixKind::GinibreBlock { row, col, .. } => GeneratorDecl::new(&m.name, idx(&m.name, *row)?, idx(&m.name, *col)?),
                    MatrixKind::HermitianGaussian { block, .. } | MatrixKind::Constant { block, .. } => {
                        GeneratorDecl::hermitian(&m.name, idx(&m.name, *block)?)
                    }
                    MatrixKind::HaarUnitaryBlock { block } => {
                        let k = idx(&m.name, *block)?;
                        GeneratorDecl::new(&m.name, k, k)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Alphabet::new(structure.clone(), gens)
    }

    pub fn parsed_words(&self, alphabet: &Alphabet) -> Result<Vec<Word>> {
        self.words
            .iter()
            .map(|s| {
                let w = alphabet.word(s)?;
                if w.len() > MAX_NC {
                    return Err(Error::Capacity(format!("word {s:?} is longer than {MAX_NC}")));
                }
                if !alphabet.is_square(&w) {
                    return Err(Error::Validation(format!("word {s:?} is not square")));
                }
                Ok(w)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.structure()?;
        let a = self.alphabet(&s)?;
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("n_grid must be non-empty and strictly increasing".into()));
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n > MAX_N) {
            return Err(Error::Capacity(format!("matrix size {n} exceeds {MAX_N}")));
        }
        for &n in &self.n_grid {
            s.at_size(n)?;
        }
        if self.trials < 2 {
            return Err(Error::Validation("at least two trials are needed for standard errors".into()));
        }
        if self.trials > MAX_TRIALS {
            return Err(Error::Capacity(format!("{} trials exceed {MAX_TRIALS}", self.trials)));
        }
        for m in &self.matrices {
            match &m.kind {
                MatrixKind::GinibreBlock { scale, .. } | MatrixKind::HermitianGaussian { scale, .. } => {
                    if !(scale.is_finite() && *scale > 0.0) {
                        return Err(Error::Validation(format!("matrix {} has invalid scale {scale}", m.name)));
                    }
                }
                MatrixKind::Constant { diagonal, .. } => {
                    if diagonal.is_empty() || diagonal.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Validation(format!("constant {} needs a finite non-empty diagonal", m.name)));
                    }
                }
                MatrixKind::HaarUnitaryBlock { .. } => {}
            }
        }
        if self.words.is_empty() {
            return Err(Error::Validation("plan has no words".into()));
        }
        self.parsed_words(&a)?;
        Ok(())
    }

    /// Ginibre blocks, Haar blocks and one constant family over two blocks,
    /// with words up to length 6.
    pub fn standard_battery() -> Self {
        let m = |name: &str, kind: MatrixKind| MatrixSpec { name: name.into(), kind };
        let words = [
            "X X*",
            "X* X",
            "Y Y*",
            "X X* X X*",
            "X* X X* X",
            "X Y Y* X*",
            "X Y X* X Y* X*",
            "X B X*",
            "X B X* X B X*",
            "Y B Y* B",
            "Y Y",
            "Y B Y B",
            "Y* B Y B",
            "X Y B Y* X*",
            "B",
            "B B",
            "V",
            "V V",
            "V X X*",
            "V X X* V*",
            "V X X* V* X X*",
            "X* V X",
            "X* V X B",
            "X* V X X* V* X",
            "W",
            "W B W* B",
            "W Y W* Y*",
            "W Y* W* Y X* X",
        ];
        EnsemblePlan {
            rho: vec![0.4, 0.6],
            n_grid: vec![100, 200, 400],
            trials: 200,
            seed: 20240611,
            matrices: vec![
                m("X", MatrixKind::GinibreBlock { row: 1, col: 2, scale: 1.0 }),
                m("Y", MatrixKind::GinibreBlock { row: 2, col: 2, scale: 1.0 }),
                m("V", MatrixKind::HaarUnitaryBlock { block: 1 }),
                m("W", MatrixKind::HaarUnitaryBlock { block: 2 }),
                m("B", MatrixKind::Constant { block: 2, diagonal: vec![2.0, -1.0] }),
            ],
            words: words.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One draw of every matrix family, stored block by block.
#[derive(Debug, Clone)]
pub struct BlockSample {
    pub alphabet: Alphabet,
    pub n: usize,
    pub sizes: Vec<usize>,
    pub blocks: Vec<CMat>,
}

impl BlockSample {
    /// The draw as full matrices; selfadjoint declarations are dropped.
    pub fn to_matrix_point(&self) -> Result<MatrixPoint> {
        let gens = self.alphabet.gens().iter().map(|g| GeneratorDecl::new(&g.name, g.row, g.col)).collect();
        let a = Alphabet::new(self.alphabet.structure().clone(), gens)?;
        MatrixPoint::from_blocks(a, self.n, self.blocks.iter().map(CMat::to_complex).collect())
    }
}

/// Samples every family of the plan at size `n` from a trial seed.
pub fn sample(plan: &EnsemblePlan, n: usize, trial_seed: u64) -> Result<BlockSample> {
    let s = plan.structure()?;
    if n < s.d() {
        return Err(Error::Configuration(format!("n = {n} is below the number of blocks")));
    }
    s.at_size(n)?;
    let alphabet = plan.alphabet(&s)?;
    let sizes = s.block_sizes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let nf = n as f64;
    let blocks = plan
        .matrices
        .iter()
        .map(|m| match &m.kind {
            MatrixKind::GinibreBlock { row, col, scale } => ginibre(sizes[row - 1], sizes[col - 1], scale / nf, &mut rng),
            MatrixKind::HermitianGaussian { block, scale } => gue(sizes[block - 1], scale / nf, &mut rng),
            MatrixKind::HaarUnitaryBlock { block } => haar_unitary(sizes[block - 1], &mut rng),
            MatrixKind::Constant { block, diagonal } => {
                let q = sizes[block - 1];
                let mut c = CMat::zeros(q, q);
                for i in 0..q {
                    c.re[(i, i)] = diagonal[i % diagonal.len()];
                }
                c
            }
        })
        .collect();
    Ok(BlockSample { alphabet, n, sizes, blocks })
}

/// Word products with shared prefixes.
struct WordEvaluator<'a> {
    s: &'a BlockSample,
    adj: Vec<Option<CMat>>,
    prefixes: HashMap<Word, CMat>,
}

impl<'a> WordEvaluator<'a> {
    fn new(s: &'a BlockSample) -> Self {
        WordEvaluator { s, adj: vec![None; s.blocks.len()], prefixes: HashMap::new() }
    }

    fn letter(&mut self, l: Letter) -> &CMat {
        if !l.star {
            return &self.s.blocks[l.gen];
        }
        let b = &self.s.blocks[l.gen];
        self.adj[l.gen].get_or_insert_with(|| b.adjoint())
    }

    fn prefix(&mut self, w: &[Letter]) -> CMat {
        if w.len() == 1 {
            return self.letter(w[0]).clone();
        }
        if let Some(p) = self.prefixes.get(w) {
            return p.clone();
        }
        let head = self.prefix(&w[..w.len() - 1]);
        let p = head.mul(self.letter(w[w.len() - 1]));
        self.prefixes.insert(w.to_vec(), p.clone());
        p
    }

    /// `(1/q_k) Tr(p_k W p_k)` for every block `k`.
    fn e(&mut self, w: &[Letter]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.s.sizes.len()];
        let chain = match self.s.alphabet.chain(w) {
            Some(c) if c[0] == c[c.len() - 1] => c,
            _ => return out,
        };
        let k = chain[0];
        let tr = if w.len() == 1 {
            self.letter(w[0]).trace()
        } else {
            let head = self.prefix(&w[..w.len() - 1]);
            head.trace_mul(self.letter(w[w.len() - 1]))
        };
        out[k] = tr / self.s.sizes[k] as f64;
        out
    }
}

/// Block-normalized traces of a word at one draw; zero for chain-broken words.
pub fn empirical_e(w: &[Letter], s: &BlockSample) -> Vec<Complex64> {
    WordEvaluator::new(s).e(w)
}

fn circular_table(structure: &BlockStructure, name: &str, k: usize, l: usize, scale: f64, degree: usize) -> Result<ScalarCumulantTable> {
    let a = Alphabet::new(structure.clone(), vec![GeneratorDecl::new(name, k, l)])?;
    let mut t = Table::new(a, degree.max(2));
    let x = Letter::new(0, false);
    t.insert(&[x, x.adjoint()], Complex64::new(scale * structure.rho_k(l), 0.0))?;
    t.insert(&[x.adjoint(), x], Complex64::new(scale * structure.rho_k(k), 0.0))?;
    Ok(t)
}

fn hermitian_moment_cumulants(structure: &BlockStructure, name: &str, k: usize, moments: &[f64], degree: usize) -> Result<ScalarCumulantTable> {
    let a = Alphabet::new(structure.clone(), vec![GeneratorDecl::hermitian(name, k)])?;
    let m: ScalarMomentTable = crate::cumulant::moment_table_from_fn(a, degree, |w| Complex64::new(moments[w.len()], 0.0))?;
    moments_to_cumulants(&m)
}

/// Marginal cumulant tables of the plan's families at size `n`, using the
/// realized weights `q_k / n`.
pub fn marginals_at(plan: &EnsemblePlan, n: usize, degree: usize) -> Result<Vec<ScalarCumulantTable>> {
    let s = plan.structure()?;
    let sn = s.at_size(n)?;
    let sizes = s.block_sizes(n);
    let degree = degree.max(2);
    plan.matrices
        .iter()
        .map(|m| match &m.kind {
            MatrixKind::GinibreBlock { row, col, scale } => circular_table(&sn, &m.name, row - 1, col - 1, *scale, degree),
            MatrixKind::HermitianGaussian { block, scale } => {
                semicircular_cumulants(&sn, &m.name, block - 1, scale * sn.rho_k(block - 1), degree)
            }
            MatrixKind::HaarUnitaryBlock { block } => haar_unitary_cumulants(&sn, &m.name, block - 1, degree),
            MatrixKind::Constant { block, diagonal } => {
                let q = sizes[block - 1];
                let moments: Vec<f64> =
                    (0..=degree).map(|p| (0..q).map(|i| diagonal[i % diagonal.len()].powi(p as i32)).sum::<f64>() / q as f64).collect();
                hermitian_moment_cumulants(&sn, &m.name, block - 1, &moments, degree)
            }
        })
        .collect()
}

/// Free predictions of the words' values at size `n`.
pub fn predict(plan: &EnsemblePlan, n: usize, words: &[Word]) -> Result<Vec<Complex64>> {
    let degree = words.iter().map(Vec::len).max().unwrap_or(2);
    let marg = marginals_at(plan, n, degree)?;
    let fp = FreeProduct::new(&marg)?;
    words.iter().map(|w| fp.moment(w)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeEstimate {
    pub n: usize,
    pub mean: [f64; 2],
    pub se: f64,
    pub prediction: [f64; 2],
    pub abs_error: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordEstimate {
    pub word: String,
    /// 1-based block of the reported coordinate.
    pub block: usize,
    pub per_n: Vec<SizeEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub mae: f64,
    pub fraction_within: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thresholds {
    pub se_band: f64,
    pub band_floor: f64,
    pub pass_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { se_band: SE_BAND, band_floor: BAND_FLOOR, pass_fraction: PASS_FRACTION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub config: EnsemblePlan,
    pub thresholds: Thresholds,
    pub estimates: Vec<WordEstimate>,
    pub summary: Vec<SizeSummary>,
    pub mae_decreasing: bool,
    pub pass: bool,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,block,n,mean_re,mean_im,se,prediction_re,prediction_im,abs_error,within_band\n");
        for w in &self.estimates {
            for e in &w.per_n {
                out.push_str(&format!(
                    "\"{}\",{},{},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                    w.word, w.block, e.n, e.mean[0], e.mean[1], e.se, e.prediction[0], e.prediction[1], e.abs_error, e.within_band
                ));
            }
        }
        out
    }
}

/// Mean and standard error of complex samples, reduced in order.
fn mean_se(xs: &[Complex64]) -> (Complex64, f64) {
    let t = xs.len() as f64;
    let mean = xs.iter().fold(ZERO, |a, x| a + x) / t;
    let var: f64 = xs.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

fn in_band(err: f64, se: f64) -> bool {
    err <= SE_BAND * se + BAND_FLOOR
}

/// Empirical values of the plan's words at every size against the free
/// prediction.
pub fn convergence_experiment(plan: &EnsemblePlan) -> Result<ConvergenceReport> {
    plan.validate()?;
    let s = plan.structure()?;
    let alphabet = plan.alphabet(&s)?;
    let words = plan.parsed_words(&alphabet)?;
    let pool = worker_pool()?;
    let mut estimates: Vec<WordEstimate> = words
        .iter()
        .zip(&plan.words)
        .map(|(w, name)| WordEstimate {
            word: name.trim().to_string(),
            block: alphabet.chain(w).map_or(0, |c| c[0]) + 1,
            per_n: Vec::new(),
        })
        .collect();
    let mut summary = Vec::new();
    for &n in &plan.n_grid {
        let pred = predict(plan, n, &words)?;
        let per_trial: Vec<Result<Vec<Complex64>>> = pool.install(|| {
            (0..plan.trials)
                .into_par_iter()
                .map(|t| {
                    let smp = sample(plan, n, trial_seed(plan.seed, n, t))?;
                    let mut ev = WordEvaluator::new(&smp);
                    Ok(words
                        .iter()
                        .map(|w| {
                            let k = smp.alphabet.chain(w).map_or(0, |c| c[0]);
                            ev.e(w)[k]
                        })
                        .collect())
                })
                .collect()
        });
        let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
        let (mut abs_sum, mut within) = (0.0, 0usize);
        for (i, est) in estimates.iter_mut().enumerate() {
            let xs: Vec<Complex64> = per_trial.iter().map(|v| v[i]).collect();
            let (mean, se) = mean_se(&xs);
            let err = (mean - pred[i]).norm();
            let ok = in_band(err, se);
            abs_sum += err;
            within += ok as usize;
            est.per_n.push(SizeEstimate {
                n,
                mean: [mean.re, mean.im],
                se,
                prediction: [pred[i].re, pred[i].im],
                abs_error: err,
                within_band: ok,
            });
        }
        summary.push(SizeSummary { n, mae: abs_sum / words.len() as f64, fraction_within: within as f64 / words.len() as f64 });
    }
    let mae_decreasing = summary.windows(2).all(|w| w[1].mae < w[0].mae);
    let pass = mae_decreasing && summary.last().is_some_and(|s| s.fraction_within >= PASS_FRACTION);
    Ok(ConvergenceReport { config: plan.clone(), thresholds: Thresholds::default(), estimates, summary, mae_decreasing, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub order: u32,
    pub empirical: f64,
    pub se: f64,
    pub quadrature: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationCheck {
    /// `prod_{j=1}^q j! prod_{j=q'-q}^{q'-1} j!`.
    pub formula: f64,
    /// Gauss-Laguerre value of the same integral.
    pub quadrature: f64,
    /// Level `t` of the event `max x_i <= t`.
    pub level: f64,
    pub empirical_probability: f64,
    /// Integral of the density over `[0, t]^q`, normalized by `formula`.
    pub density_probability: f64,
    /// Ratio of the two probabilities; `1` when the normalization is right.
    pub constant: f64,
    pub within_one_percent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularLawReport {
    pub q: usize,
    pub q_prime: usize,
    pub samples: usize,
    pub seed: u64,
    pub moments: Vec<MomentCheck>,
    pub normalization: Option<NormalizationCheck>,
    pub pass: bool,
}

fn vandermonde_sq(x: &[f64]) -> f64 {
    let mut v = 1.0;
    for i in 0..x.len() {
        for j in 0..i {
            v *= (x[i] - x[j]).powi(2);
        }
    }
    v
}

/// Sum of `f(x) w(x)` over the tensor grid of a 1-d rule.
fn tensor_sum(nodes: &[f64], weights: &[f64], q: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let m = nodes.len();
    let mut idx = vec![0usize; q];
    let mut x = vec![0.0; q];
    let mut acc = 0.0;
    loop {
        let mut w = 1.0;
        for (i, &k) in idx.iter().enumerate() {
            x[i] = nodes[k];
            w *= weights[k];
        }
        acc += w * f(&x);
        let mut p = 0;
        loop {
            if p == q {
                return acc;
            }
            idx[p] += 1;
            if idx[p] < m {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// `prod_{j=1}^q j! prod_{j=a}^{a+q-1} j!` with `a = q' - q`.
pub fn laguerre_normalization(q: usize, q_prime: usize) -> f64 {
    let a = q_prime - q;
    (1..=q).map(|j| gamma(j as f64 + 1.0)).product::<f64>() * (a..a + q).map(|j| gamma(j as f64 + 1.0)).product::<f64>()
}

/// `E[(1/q) sum x_i^p]` under the density `Delta(x)^2 prod x^{q'-q} e^{-x}`,
/// together with its total mass, by tensor Gauss-Laguerre quadrature.
pub fn laguerre_moment(q: usize, q_prime: usize, p: u32) -> (f64, f64) {
    let (x, w) = gauss_laguerre(q + p as usize + 2, (q_prime - q) as f64);
    let z = tensor_sum(&x, &w, q, &mut |x| vandermonde_sq(x));
    let m = tensor_sum(&x, &w, q, &mut |x| vandermonde_sq(x) * x.iter().map(|v| v.powi(p as i32)).sum::<f64>() / q as f64);
    (m / z, z)
}

fn squared_singular_values(x: &CMat) -> Vec<f64> {
    let g = x.mul(&x.adjoint()).to_complex();
    let mut e: Vec<f64> = g.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Squared singular values of `q x q'` standard complex Gaussian matrices
/// against the Laguerre-type density and its normalization constant.
pub fn singular_law_check(q: usize, q_prime: usize, samples: usize, seed: u64) -> Result<SingularLawReport> {
    if q == 0 || q > q_prime {
        return Err(Error::Usage(format!("need 1 <= q <= q', got q = {q}, q' = {q_prime}")));
    }
    if q_prime > 6 {
        return Err(Error::Capacity(format!("q' = {q_prime} exceeds 6")));
    }
    if samples < 10_000 {
        return Err(Error::Usage(format!("need at least 10^4 samples, got {samples}")));
    }
    let pool = worker_pool()?;
    let eig: Vec<Vec<f64>> = pool.install(|| {
        (0..samples)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, q * 16 + q_prime, t);
                squared_singular_values(&ginibre(q, q_prime, 1.0, &mut rng))
            })
            .collect()
    });
    let mut moments = Vec::new();
    for p in 1..=4u32 {
        let xs: Vec<Complex64> =
            eig.iter().map(|e| Complex64::new(e.iter().map(|v| v.powi(p as i32)).sum::<f64>() / q as f64, 0.0)).collect();
        let (mean, se) = mean_se(&xs);
        let (quad, _) = laguerre_moment(q, q_prime, p);
        moments.push(MomentCheck { order: p, empirical: mean.re, se, quadrature: quad, within_band: in_band((mean.re - quad).abs(), se) });
    }
    let normalization = if q <= 3 {
        let formula = laguerre_normalization(q, q_prime);
        let (_, quadrature) = laguerre_moment(q, q_prime, 0);
        let mut maxes: Vec<f64> = eig.iter().map(|e| e[e.len() - 1]).collect();
        maxes.sort_by(f64::total_cmp);
        let level = maxes[maxes.len() / 2];
        let empirical_probability = maxes.iter().filter(|&&m| m <= level).count() as f64 / samples as f64;
        let (gx, gw) = gauss_legendre(32);
        let nodes: Vec<f64> = gx.iter().map(|x| 0.5 * level * (x + 1.0)).collect();
        let weights: Vec<f64> = gw.iter().map(|w| 0.5 * level * w).collect();
        let a = (q_prime - q) as i32;
        let mass = tensor_sum(&nodes, &weights, q, &mut |x| {
            vandermonde_sq(x) * x.iter().map(|v| v.powi(a) * (-v).exp()).product::<f64>()
        });
        let density_probability = mass / formula;
        let constant = empirical_probability / density_probability;
        Some(NormalizationCheck {
            formula,
            quadrature,
            level,
            empirical_probability,
            density_probability,
            constant,
            within_one_percent: (constant - 1.0).abs() <= 0.01,
        })
    } else {
        None
    };
    let pass = moments.iter().all(|m| m.within_band) && normalization.as_ref().is_none_or(|c| c.within_one_percent);
    Ok(SingularLawReport { q, q_prime, samples, seed, moments, normalization, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolarLetter {
    V,
    VStar,
    H,
}

impl PolarLetter {
    fn name(self) -> &'static str {
        match self {
            PolarLetter::V => "v",
            PolarLetter::VStar => "v*",
            PolarLetter::H => "h",
        }
    }

    fn group(self) -> u8 {
        match self {
            PolarLetter::H => 1,
            _ => 0,
        }
    }
}

/// Words of length at most 4 alternating between `{v, v*}` and `h`,
/// plus `v v*` and `v* v`.
pub fn polar_words() -> Vec<Vec<PolarLetter>> {
    use PolarLetter::*;
    let mut out: Vec<Vec<PolarLetter>> = Vec::new();
    let mut frontier: Vec<Vec<PolarLetter>> = vec![vec![]];
    for _ in 0..4 {
        let mut next = Vec::new();
        for w in &frontier {
            for l in [V, VStar, H] {
                if w.last().is_some_and(|p: &PolarLetter| p.group() == l.group()) {
                    continue;
                }
                let mut x = w.clone();
                x.push(l);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.push(vec![V, VStar]);
    out.push(vec![VStar, V]);
    out
}

fn polar_word_string(w: &[PolarLetter]) -> String {
    w.iter().map(|l| l.name()).collect::<Vec<_>>().join(" ")
}

/// Cumulants of the pieces `p_a u p_b` of a unitary `u` that is free from
/// the diagonal algebra and Haar distributed:
/// `kappa_m(u^{e_1}, ..., u^{e_m}) prod rho_{b_t}` over the inner junctions.
pub fn compressed_haar_cumulants(structure: &BlockStructure, pieces: &[(String, usize, usize)], degree: usize) -> Result<ScalarCumulantTable> {
    let gens = pieces.iter().map(|(name, a, b)| GeneratorDecl::new(name, *a, *b)).collect();
    let a = Alphabet::new(structure.clone(), gens)?;
    let mut t = Table::new(a.clone(), degree.max(2));
    for w in a.square_words(degree) {
        let m = w.len();
        if m % 2 == 1 || w.windows(2).any(|p| p[0].star == p[1].star) {
            continue;
        }
        let j = m / 2;
        let kappa = if j % 2 == 1 { 1.0 } else { -1.0 } * ncpart::catalan(j - 1) as f64;
        let chain = a.chain(&w).expect("square words chain");
        let weight: f64 = chain[1..m].iter().map(|&b| structure.rho_k(b)).product();
        t.insert(&w, Complex64::new(kappa * weight, 0.0))?;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarConfig {
    pub n: usize,
    pub kernel_fraction: f64,
    pub h_law: Value,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarEstimate {
    pub word: String,
    pub block: usize,
    pub mean: [f64; 2],
    pub se: f64,
    pub prediction: [f64; 2],
    pub abs_error: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarReport {
    pub config: PolarConfig,
    pub estimates: Vec<PolarEstimate>,
    pub fraction_within: f64,
    pub pass: bool,
}

enum Factor {
    Dense(CMat),
    Diag(Vec<f64>),
}

/// Predicted block values of each polar word: `v` splits into the pieces
/// `p_1 u p_2` and `p_2 u p_2`, free from `h` over the diagonal.
fn polar_predictions(structure: &BlockStructure, h_law: &GridMeasure, words: &[Vec<PolarLetter>]) -> Result<Vec<[Complex64; 2]>> {
    let degree = words.iter().map(Vec::len).max().unwrap_or(2).max(2);
    let pieces = compressed_haar_cumulants(structure, &[("v1".into(), 0, 1), ("v2".into(), 1, 1)], degree)?;
    let moments: Vec<f64> = (0..=degree).map(|p| h_law.moment(p as u32)).collect();
    let h = hermitian_moment_cumulants(structure, "h", 1, &moments, degree)?;
    let marg = [pieces, h];
    let fp = FreeProduct::new(&marg)?;
    let choices = |l: PolarLetter| -> Vec<Letter> {
        match l {
            PolarLetter::V => vec![Letter::new(0, false), Letter::new(1, false)],
            PolarLetter::VStar => vec![Letter::new(0, true), Letter::new(1, true)],
            PolarLetter::H => vec![Letter::new(2, false)],
        }
    };
    words
        .iter()
        .map(|w| {
            let mut out = [ZERO; 2];
            let mut expansions: Vec<Word> = vec![vec![]];
            for &l in w {
                expansions = expansions.into_iter().flat_map(|e| choices(l).into_iter().map(move |c| [e.clone(), vec![c]].concat())).collect();
            }
            for e in expansions {
                if let Some(c) = fp.alphabet().chain(&e) {
                    if c[0] == c[c.len() - 1] {
                        out[c[0]] += fp.moment(&e)?;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// `x = U H` with `U` Haar and `H >= 0` diagonal with `floor(kernel_fraction n)`
/// zeros followed by iid draws from `h_law`. Its polar decomposition is
/// `v = U p_2`, `h = H`, where `p_2` projects onto the range of `H`.
pub fn polar_scenario(n: usize, kernel_fraction: f64, h_law: &GridMeasure, trials: usize, seed: u64) -> Result<PolarReport> {
    if !(kernel_fraction > 0.0 && kernel_fraction < 1.0) {
        return Err(Error::Usage(format!("kernel fraction must lie in (0,1), got {kernel_fraction}")));
    }
    if h_law.support().0 <= 0.0 {
        return Err(Error::Precondition("h_law must live on (0, inf)".into()));
    }
    if n > MAX_N || trials > MAX_TRIALS {
        return Err(Error::Capacity(format!("n = {n}, trials = {trials} exceed the limits")));
    }
    if trials < 2 {
        return Err(Error::Usage("at least two trials are needed".into()));
    }
    let structure = BlockStructure::new(vec![kernel_fraction, 1.0 - kernel_fraction])?.at_size(n)?;
    let q1 = BlockStructure::new(vec![kernel_fraction, 1.0 - kernel_fraction])?.block_sizes(n)[0];
    if q1 < 1 {
        return Err(Error::Configuration(format!("kernel_fraction * n = {} is below 1", kernel_fraction * n as f64)));
    }
    let q2 = n - q1;
    let words = polar_words();
    let pred = polar_predictions(&structure, h_law, &words)?;
    let pool = worker_pool()?;
    let per_trial: Vec<Result<Vec<[Complex64; 2]>>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, n, t);
                let u = haar_unitary(n, &mut rng);
                let mut hd = vec![0.0; n];
                for x in hd.iter_mut().skip(q1) {
                    *x = sample_measure(h_law, &mut rng)?;
                }
                let mut p2 = vec![0.0; n];
                p2[q1..].iter_mut().for_each(|x| *x = 1.0);
                let v = u.scale_cols(&p2);
                let factors = [Factor::Dense(v.clone()), Factor::Dense(v.adjoint()), Factor::Diag(hd)];
                let fidx = |l: PolarLetter| match l {
                    PolarLetter::V => 0,
                    PolarLetter::VStar => 1,
                    PolarLetter::H => 2,
                };
                let mut cache: HashMap<Vec<PolarLetter>, CMat> = HashMap::new();
                let prefix = |w: &[PolarLetter], cache: &mut HashMap<Vec<PolarLetter>, CMat>| -> CMat {
                    let mut cur: Option<CMat> = None;
                    for m in 1..=w.len() {
                        if let Some(c) = cache.get(&w[..m]) {
                            cur = Some(c.clone());
                            continue;
                        }
                        let next = match (&cur, &factors[fidx(w[m - 1])]) {
                            (None, Factor::Dense(f)) => f.clone(),
                            (None, Factor::Diag(d)) => {
                                let mut c = CMat::zeros(n, n);
                                for (i, x) in d.iter().enumerate() {
                                    c.re[(i, i)] = *x;
                                }
                                c
                            }
                            (Some(c), Factor::Dense(f)) => c.mul(f),
                            (Some(c), Factor::Diag(d)) => c.scale_cols(d),
                        };
                        cache.insert(w[..m].to_vec(), next.clone());
                        cur = Some(next);
                    }
                    cur.expect("non-empty word")
                };
                let vals = words
                    .iter()
                    .map(|w| {
                        let diag: Vec<Complex64> = if w.len() == 1 {
                            let p = prefix(w, &mut cache);
                            (0..n).map(|i| p.get(i, i)).collect()
                        } else {
                            let head = prefix(&w[..w.len() - 1], &mut cache);
                            match &factors[fidx(w[w.len() - 1])] {
                                Factor::Dense(f) => head.diag_mul(f),
                                Factor::Diag(d) => (0..n).map(|i| head.get(i, i) * d[i]).collect(),
                            }
                        };
                        let b1: Complex64 = diag[..q1].iter().sum::<Complex64>() / q1 as f64;
                        let b2: Complex64 = diag[q1..].iter().sum::<Complex64>() / q2 as f64;
                        [b1, b2]
                    })
                    .collect();
                Ok(vals)
            })
            .collect()
    });
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    let mut estimates = Vec::new();
    for (i, w) in words.iter().enumerate() {
        for k in 0..2 {
            let xs: Vec<Complex64> = per_trial.iter().map(|v| v[i][k]).collect();
            let (mean, se) = mean_se(&xs);
            let p = pred[i][k];
            let err = (mean - p).norm();
            estimates.push(PolarEstimate {
                word: polar_word_string(w),
                block: k + 1,
                mean: [mean.re, mean.im],
                se,
                prediction: [p.re, p.im],
                abs_error: err,
                within_band: in_band(err, se),
            });
        }
    }
    let within = estimates.iter().filter(|e| e.within_band).count();
    let fraction_within = within as f64 / estimates.len() as f64;
    Ok(PolarReport {
        config: PolarConfig { n, kernel_fraction, h_law: h_law.to_json_value(), trials, seed },
        estimates,
        fraction_within,
        pass: within == 2 * words.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_block_is_unitary() {
        let mut rng = trial_rng(1, 7, 0);
        let u = haar_unitary(7, &mut rng);
        let p = u.mul(&u.adjoint());
        let id = CMat { re: DMatrix::identity(7, 7), im: DMatrix::zeros(7, 7) };
        assert!((p.re - id.re).abs().max() < 1e-12 && p.im.abs().max() < 1e-12);
    }

    #[test]
    fn gue_is_hermitian() {
        let mut rng = trial_rng(2, 5, 0);
        let h = gue(5, 0.2, &mut rng);
        assert_eq!(h, h.adjoint());
    }

    #[test]
    fn trace_helpers_agree_with_products() {
        let mut rng = trial_rng(3, 4, 0);
        let (a, b) = (ginibre(4, 3, 1.0, &mut rng), ginibre(3, 4, 1.0, &mut rng));
        let ab = a.mul(&b);
        assert!((a.trace_mul(&b) - ab.trace()).norm() < 1e-13);
        let d = a.diag_mul(&b);
        assert!((0..4).all(|i| (d[i] - ab.get(i, i)).norm() < 1e-13));
    }

    #[test]
    fn seeds_differ_by_key() {
        assert_ne!(trial_seed(1, 100, 0), trial_seed(1, 100, 1));
        assert_ne!(trial_seed(1, 100, 0), trial_seed(1, 200, 0));
        assert_eq!(trial_seed(9, 3, 4), trial_seed(9, 3, 4));
    }

    #[test]
    fn polar_battery_shape() {
        let w = polar_words();
        assert_eq!(w.len(), 23);
        assert!(w.iter().all(|x| x.len() <= 4));
    }
}
