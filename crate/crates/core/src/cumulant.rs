//! Moment/cumulant transforms with amalgamation over the diagonal algebra.
//!
//! For a square word `a_1 ... a_n` with type chain `(i_0, ..., i_n)` every
//! noncrossing partition contributes the product of its block values, where a
//! block `{k_1 < ... < k_m}` is admissible only when `i_{k_1 - 1} = i_{k_m}`
//! and then contributes the value of its sub-word with superscript `i_{k_m}`.
//! A single inadmissible block kills the term.
//!
//! Moment tables must be closed under taking sub-words. Cumulant tables are
//! sparse: a square word absent from a cumulant table has cumulant zero.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dblock::{Alphabet, BlockStructure, Cumulants, GeneratorDecl, Letter, ScalarCumulantTable, ScalarMomentTable, Table, TableKind, Word};
use crate::error::{Error, Result};
use crate::ncpart::{self, MAX_NC};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Sum over `NC(n)` of weighted block products for the word `w`.
///
/// `block_value` receives a chain-consistent square sub-word and returns its
/// value (or an error for missing data). With `mobius` set, each partition is
/// weighted by `mu(pi, 1_n)`; with `skip_top` the one-block partition is left out.
fn nc_sum<F>(alphabet: &Alphabet, w: &[Letter], mobius: bool, skip_top: bool, block_value: &F) -> Result<Complex64>
where
    F: Fn(&[Letter]) -> Result<Complex64>,
{
    let n = w.len();
    let chain = match alphabet.chain(w) {
        Some(c) if c[0] == c[n] => c,
        _ => return Ok(ZERO),
    };
    let lat = ncpart::lattice(n)?;
    let mut sub: Word = Vec::with_capacity(n);
    let mut total = ZERO;
    'partitions: for (p, &mu) in lat.partitions.iter().zip(&lat.mobius_to_top) {
        if (mobius && mu == 0) || (skip_top && p.len() == 1) {
            continue;
        }
        // Admissibility first: it is cheap and prunes most partitions.
        for b in p.blocks() {
            if chain[b[0]] != chain[b[b.len() - 1] + 1] {
                continue 'partitions;
            }
        }
        let mut prod = if mobius { Complex64::new(mu as f64, 0.0) } else { ONE };
        for b in p.blocks() {
            sub.clear();
            sub.extend(b.iter().map(|&i| w[i]));
            if !alphabet.composable(&sub) {
                continue 'partitions;
            }
            let v = block_value(&sub)?;
            if v == ZERO {
                continue 'partitions;
            }
            prod *= v;
        }
        total += prod;
    }
    Ok(total)
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_NC {
        return Err(Error::Capacity(format!("degree {degree} exceeds the enumeration cap {MAX_NC}")));
    }
    Ok(())
}

fn require_valid<K: TableKind>(t: &Table<K>) -> Result<()> {
    let v = t.validate();
    if let Some(first) = v.first() {
        return Err(Error::Validation(format!(
            "{} violation(s); first: {} between {:?} and {:?} (gap {:.3e})",
            v.len(),
            first.check,
            first.word,
            first.partner,
            first.discrepancy
        )));
    }
    Ok(())
}

fn moment_lookup<'a>(m: &'a ScalarMomentTable) -> impl Fn(&[Letter]) -> Result<Complex64> + 'a {
    move |sub: &[Letter]| {
        m.value(sub)
            .ok_or_else(|| Error::Validation(format!("moment of sub-word {:?} missing", m.alphabet().word_string(sub))))
    }
}

fn cumulant_lookup<'a>(c: &'a ScalarCumulantTable) -> impl Fn(&[Letter]) -> Result<Complex64> + 'a {
    move |sub: &[Letter]| {
        if sub.len() > c.degree() {
            return Err(Error::Usage(format!("cumulant table of degree {} queried at length {}", c.degree(), sub.len())));
        }
        Ok(c.value(sub).unwrap_or(ZERO))
    }
}

/// Cumulant of one word computed from a moment table.
pub fn cumulant_of_word(m: &ScalarMomentTable, w: &[Letter]) -> Result<Complex64> {
    check_degree(w.len())?;
    nc_sum(m.alphabet(), w, true, false, &moment_lookup(m))
}

/// Moment of one word computed from a (sparse) cumulant table.
pub fn moment_of_word(c: &ScalarCumulantTable, w: &[Letter]) -> Result<Complex64> {
    check_degree(w.len())?;
    nc_sum(c.alphabet(), w, false, false, &cumulant_lookup(c))
}

/// Cumulants of every word stored in `m`, shortest words first:
/// `c(w) = m(w) - sum over non-top pi of c_pi(w)`. This avoids the
/// cancellation of signed Möbius sums over large moments.
pub fn moments_to_cumulants(m: &ScalarMomentTable) -> Result<ScalarCumulantTable> {
    require_valid(m)?;
    check_degree(m.degree())?;
    let a = m.alphabet();
    let mut levels: BTreeMap<usize, Vec<(&Word, Complex64)>> = BTreeMap::new();
    for (w, v) in m.iter() {
        levels.entry(w.len()).or_default().push((w, *v));
    }
    let mut out: BTreeMap<Word, Complex64> = BTreeMap::new();
    for words in levels.into_values() {
        let done: Table<Cumulants> = Table::from_parts(a.clone(), m.degree(), out.clone());
        let look = |sub: &[Letter]| {
            done.value(sub)
                .ok_or_else(|| Error::Validation(format!("moment of sub-word {:?} missing", a.word_string(sub))))
        };
        let vals: Vec<Result<Complex64>> =
            words.par_iter().map(|(w, v)| Ok(v - nc_sum(a, w, false, true, &look)?)).collect();
        for ((w, _), v) in words.into_iter().zip(vals) {
            out.insert(w.clone(), v?);
        }
    }
    Ok(Table::from_parts(a.clone(), m.degree(), out))
}

/// Moments of the given words from a cumulant table.
pub fn cumulants_to_moments_for(c: &ScalarCumulantTable, words: &[Word]) -> Result<ScalarMomentTable> {
    require_valid(c)?;
    check_degree(c.degree())?;
    let look = cumulant_lookup(c);
    let vals: Vec<Result<Complex64>> = words.par_iter().map(|w| nc_sum(c.alphabet(), w, false, false, &look)).collect();
    let mut out = BTreeMap::new();
    for (w, v) in words.iter().zip(vals) {
        if !c.alphabet().is_square(w) {
            return Err(Error::Validation(format!("word {:?} is not square", c.alphabet().word_string(w))));
        }
        out.insert(c.alphabet().canonical(w), v?);
    }
    let degree = words.iter().map(Vec::len).max().unwrap_or(0).max(c.degree());
    Ok(Table::from_parts(c.alphabet().clone(), degree, out))
}

/// Moments of every square word up to the table degree.
pub fn cumulants_to_moments(c: &ScalarCumulantTable) -> Result<ScalarMomentTable> {
    let words = c.alphabet().square_words(c.degree());
    cumulants_to_moments_for(c, &words)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreenessReport {
    pub max_mixed_cumulant: f64,
    pub witness: Option<Vec<String>>,
    pub mixed_words: usize,
}

/// Largest mixed cumulant over stored words of length `2..=degree`.
///
/// `grouping[g]` is the group of generator `g`. Ties go to the smallest word.
pub fn is_free_with_amalgamation(m: &ScalarMomentTable, grouping: &[usize], degree: usize) -> Result<FreenessReport> {
    if grouping.len() != m.alphabet().gens().len() {
        return Err(Error::Usage(format!(
            "grouping covers {} generators, table declares {}",
            grouping.len(),
            m.alphabet().gens().len()
        )));
    }
    require_valid(m)?;
    check_degree(degree)?;
    let mixed: Vec<&Word> = m
        .iter()
        .map(|(w, _)| w)
        .filter(|w| w.len() <= degree && w.iter().any(|l| grouping[l.gen] != grouping[w[0].gen]))
        .collect();
    let look = moment_lookup(m);
    let vals: Vec<Result<Complex64>> = mixed.par_iter().map(|w| nc_sum(m.alphabet(), w, true, false, &look)).collect();
    let mut best = 0.0;
    let mut witness = None;
    for (w, v) in mixed.iter().zip(vals) {
        let a = v?.norm();
        if a > best {
            best = a;
            witness = Some(m.alphabet().word_names(w));
        }
    }
    Ok(FreenessReport { max_mixed_cumulant: best, witness, mixed_words: mixed.len() })
}

/// Joint alphabet of several marginals plus, per joint generator, its
/// marginal index and local generator index.
fn joint_alphabet(marginals: &[ScalarCumulantTable]) -> Result<(Alphabet, Vec<(usize, usize)>)> {
    let first = marginals.first().ok_or_else(|| Error::Usage("no marginals given".into()))?;
    let structure = first.structure().clone();
    let mut gens = Vec::new();
    let mut origin = Vec::new();
    for (mi, m) in marginals.iter().enumerate() {
        if m.structure() != &structure {
            return Err(Error::Usage("marginals use different block structures".into()));
        }
        for (gi, g) in m.alphabet().gens().iter().enumerate() {
            if gens.iter().any(|h: &GeneratorDecl| h.name == g.name) {
                return Err(Error::Usage(format!("generator name {} shared between marginals", g.name)));
            }
            gens.push(g.clone());
            origin.push((mi, gi));
        }
    }
    Ok((Alphabet::new(structure, gens)?, origin))
}

/// Predicts joint moments of a family free with amalgamation: joint
/// cumulants equal the marginal ones on pure words and vanish on mixed words.
pub struct FreeProduct<'a> {
    marginals: &'a [ScalarCumulantTable],
    alphabet: Alphabet,
    origin: Vec<(usize, usize)>,
}

impl<'a> FreeProduct<'a> {
    pub fn new(marginals: &'a [ScalarCumulantTable]) -> Result<Self> {
        for m in marginals {
            require_valid(m)?;
        }
        let (alphabet, origin) = joint_alphabet(marginals)?;
        Ok(FreeProduct { marginals, alphabet, origin })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn joint_cumulant(&self, sub: &[Letter]) -> Result<Complex64> {
        let (mi, _) = self.origin[sub[0].gen];
        if sub.iter().any(|l| self.origin[l.gen].0 != mi) {
            return Ok(ZERO);
        }
        let m = &self.marginals[mi];
        if sub.len() > m.degree() {
            return Err(Error::Usage(format!("marginal {mi} has degree {} below word length {}", m.degree(), sub.len())));
        }
        let local: Word = sub.iter().map(|l| Letter::new(self.origin[l.gen].1, l.star)).collect();
        Ok(m.value(&local).unwrap_or(ZERO))
    }

    pub fn moment(&self, w: &[Letter]) -> Result<Complex64> {
        check_degree(w.len())?;
        let w = self.alphabet.canonical(w);
        nc_sum(&self.alphabet, &w, false, false, &|s: &[Letter]| self.joint_cumulant(s))
    }

    /// Moments of the requested words as a table over the joint alphabet.
    pub fn moments_for(&self, words: &[Word]) -> Result<ScalarMomentTable> {
        let vals: Vec<Result<Complex64>> = words.par_iter().map(|w| self.moment(w)).collect();
        let mut out = BTreeMap::new();
        for (w, v) in words.iter().zip(vals) {
            if !self.alphabet.is_square(w) {
                return Err(Error::Validation(format!("word {:?} is not square", self.alphabet.word_string(w))));
            }
            out.insert(self.alphabet.canonical(w), v?);
        }
        let degree = words.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Table::from_parts(self.alphabet.clone(), degree, out))
    }
}

/// Joint moments up to `degree` of a family free with amalgamation whose
/// members have the given marginal cumulant tables.
pub fn free_joint_moments(marginals: &[ScalarCumulantTable], degree: usize) -> Result<ScalarMomentTable> {
    check_degree(degree)?;
    let fp = FreeProduct::new(marginals)?;
    let words = fp.alphabet().square_words(degree);
    fp.moments_for(&words)
}

/// Cumulants of `n^{-1/2}` times a sum of `n` free copies of a centered element.
pub fn clt_scaled_cumulants(c: &ScalarCumulantTable, n: u64) -> Result<ScalarCumulantTable> {
    if n == 0 {
        return Err(Error::Usage("n must be positive".into()));
    }
    if let Some((w, v)) = c.iter().find(|(w, v)| w.len() == 1 && **v != ZERO) {
        return Err(Error::Precondition(format!(
            "summand is not centered: first cumulant of {:?} is {v}",
            c.alphabet().word_string(w)
        )));
    }
    let mut out = BTreeMap::new();
    for (w, v) in c.iter() {
        let m = w.len() as i32;
        let factor = if m == 2 { 1.0 } else { (n as f64).powf(1.0 - m as f64 / 2.0) };
        out.insert(w.clone(), v * factor);
    }
    Ok(Table::from_parts(c.alphabet().clone(), c.degree(), out))
}

fn single(structure: &BlockStructure, g: GeneratorDecl) -> Result<Alphabet> {
    Alphabet::new(structure.clone(), vec![g])
}

/// Cumulants of a circular block of type `(k,l)` with covariance given by the
/// block weights: `c(x x*) = rho_l` at `k`, `c(x* x) = rho_k` at `l`.
pub fn circular_cumulants(structure: &BlockStructure, name: &str, k: usize, l: usize, degree: usize) -> Result<ScalarCumulantTable> {
    let a = single(structure, GeneratorDecl::new(name, k, l))?;
    let mut t = Table::new(a, degree.max(2));
    let x = Letter::new(0, false);
    t.insert(&[x, x.adjoint()], Complex64::new(structure.rho_k(l), 0.0))?;
    t.insert(&[x.adjoint(), x], Complex64::new(structure.rho_k(k), 0.0))?;
    Ok(t)
}

/// Semicircular self-adjoint element on block `k` with the given variance.
pub fn semicircular_cumulants(structure: &BlockStructure, name: &str, k: usize, variance: f64, degree: usize) -> Result<ScalarCumulantTable> {
    let a = single(structure, GeneratorDecl::hermitian(name, k))?;
    let mut t = Table::new(a, degree.max(2));
    let h = Letter::new(0, false);
    t.insert(&[h, h], Complex64::new(variance, 0.0))?;
    Ok(t)
}

/// Element `b` of type `(k,l)`, `rho_k <= rho_l`, such that `b b*` has the
/// law of `scale * MP(rho_l / rho_k)` in the compressed space at `k`.
pub fn mp_cumulants(structure: &BlockStructure, name: &str, k: usize, l: usize, scale: f64, degree: usize) -> Result<ScalarCumulantTable> {
    if k == l {
        return Err(Error::Usage("the rectangular Marchenko-Pastur table needs k != l".into()));
    }
    let lambda = structure.rho_k(l) / structure.rho_k(k);
    if lambda < 1.0 {
        return Err(Error::Usage(format!("need rho_k <= rho_l, got lambda = {lambda}")));
    }
    let a = single(structure, GeneratorDecl::new(name, k, l))?;
    let mut t = Table::new(a, degree.max(2));
    let b = Letter::new(0, false);
    t.insert(&[b, b.adjoint()], Complex64::new(scale * lambda, 0.0))?;
    t.insert(&[b.adjoint(), b], Complex64::new(scale, 0.0))?;
    Ok(t)
}

/// Haar unitary of block `k`: alternating cumulants `(-1)^{m-1} C_{m-1}` of
/// length `2m`, all others zero.
pub fn haar_unitary_cumulants(structure: &BlockStructure, name: &str, k: usize, degree: usize) -> Result<ScalarCumulantTable> {
    let a = single(structure, GeneratorDecl::new(name, k, k))?;
    let mut t = Table::new(a, degree.max(2));
    let u = Letter::new(0, false);
    for m in 1..=degree / 2 {
        let v = if m % 2 == 1 { 1.0 } else { -1.0 } * ncpart::catalan(m - 1) as f64;
        for first in [u, u.adjoint()] {
            let w: Word = (0..2 * m).map(|i| if i % 2 == 0 { first } else { first.adjoint() }).collect();
            t.insert(&w, Complex64::new(v, 0.0))?;
        }
    }
    Ok(t)
}

/// Moment table of a single generator from a word-to-value function, over
/// all square words up to `degree`.
pub fn moment_table_from_fn<F>(alphabet: Alphabet, degree: usize, f: F) -> Result<ScalarMomentTable>
where
    F: Fn(&[Letter]) -> Complex64,
{
    let mut t = Table::new(alphabet, degree);
    for w in t.alphabet().square_words(degree) {
        let v = f(&w);
        t.insert(&w, v)?;
    }
    Ok(t)
}

/// Moment table of one generator `a` of type `(k,l)`, `k != l`, whose
/// `a a*` has the given moments `mu[n] = phi_k((a a*)^n)` (`mu[0] = 1`).
///
/// Only alternating words are square, so these moments fix the table.
pub fn single_generator_moments(structure: &BlockStructure, decl: GeneratorDecl, mu: &[f64]) -> Result<ScalarMomentTable> {
    let (k, l) = (decl.row, decl.col);
    if k == l {
        return Err(Error::Usage("single_generator_moments needs a rectangular generator".into()));
    }
    let ratio = structure.rho_k(k) / structure.rho_k(l);
    let degree = 2 * (mu.len() - 1);
    let a = single(structure, decl)?;
    moment_table_from_fn(a, degree, |w| {
        let half = w.len() / 2;
        let v = if w[0].star { ratio * mu[half] } else { mu[half] };
        Complex64::new(v, 0.0)
    })
}
