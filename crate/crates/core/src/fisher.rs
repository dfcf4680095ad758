//! Conjugate relations at moment level, the rectangular Fisher information,
//! the Cramér-Rao bound and additivity under freeness.
//!
//! A candidate is a joint moment table over the generators `a_i` and extra
//! generators standing for the conjugate variables. Only words that are
//! `xi`-free, start with a single `xi` letter, or are `X X*` for a conjugate
//! letter `X` may appear: the relations are of degree one in `xi`.
//!
//! Everything is finite-degree: "has a conjugate system" becomes "the
//! relations hold on words of length at most `degree`".

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::cumulant::{cumulant_of_word, moments_to_cumulants, FreeProduct};
use crate::dblock::{Alphabet, GeneratorDecl, Letter, ScalarMomentTable, Word};
use crate::error::{Error, Result};
use crate::measures::GridMeasure;

/// Tolerance under which relations count as fulfilled.
pub const RELATION_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Which of the three equivalent formulations of the relations to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// Scalar moment identities.
    I,
    /// `D`-valued conditional expectations.
    Ii,
    /// Cumulants with one conjugate letter.
    Iii,
}

impl Form {
    pub const ALL: [Form; 3] = [Form::I, Form::Ii, Form::Iii];
}

/// `xi_i = coef * letter` for the index letter `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiEntry {
    pub index: Letter,
    pub xi: Letter,
    pub coef: f64,
}

#[derive(Debug, Clone)]
pub struct ConjugateCandidate {
    joint: ScalarMomentTable,
    a_gens: Vec<usize>,
    entries: Vec<XiEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub form: Form,
    pub degree: usize,
    pub max_violation: f64,
    pub witness: Option<Vec<String>>,
    pub checked: usize,
}

impl RelationReport {
    pub fn passes(&self) -> bool {
        self.max_violation <= RELATION_TOL
    }
}

/// Fisher information, or the `+inf` sentinel when the relations fail.
#[derive(Debug, Clone, PartialEq)]
pub enum FisherValue {
    Finite(f64),
    Infinite,
}

impl FisherValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            FisherValue::Finite(x) => *x,
            FisherValue::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for FisherValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FisherValue::Finite(x) => s.serialize_f64(*x),
            FisherValue::Infinite => s.serialize_str("inf"),
        }
    }
}

fn ser_ext<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherReport {
    pub phi_r: FisherValue,
    pub relations: RelationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CramerRaoReport {
    #[serde(serialize_with = "ser_ext")]
    pub lhs: f64,
    pub rhs: f64,
    #[serde(serialize_with = "ser_ext")]
    pub slack: f64,
    pub phi_r: FisherValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditivityReport {
    pub phi_joint: FisherValue,
    pub phi_parts: Vec<FisherValue>,
    #[serde(serialize_with = "ser_ext")]
    pub slack: f64,
    pub joint_relations: RelationReport,
}

impl ConjugateCandidate {
    /// Pairs the `j`-th name of `xi_names` with the `j`-th remaining
    /// generator; conjugates of starred letters follow from star pairing,
    /// `xi_{a*} = (rho_{r(a)} / rho_{c(a)}) xi_a*`.
    pub fn new(joint: ScalarMomentTable, xi_names: &[&str]) -> Result<Self> {
        let a = joint.alphabet();
        let xi_idx: Vec<usize> = xi_names
            .iter()
            .map(|n| a.index_of(n).ok_or_else(|| Error::Usage(format!("unknown conjugate generator {n:?}"))))
            .collect::<Result<_>>()?;
        let a_gens: Vec<usize> = (0..a.gens().len()).filter(|g| !xi_idx.contains(g)).collect();
        if a_gens.len() != xi_idx.len() {
            return Err(Error::Usage(format!(
                "{} conjugate names for {} generators",
                xi_idx.len(),
                a_gens.len()
            )));
        }
        let rho = a.structure().rho();
        let mut entries = Vec::new();
        for (&g, &x) in a_gens.iter().zip(&xi_idx) {
            entries.push(XiEntry { index: Letter::new(g, false), xi: Letter::new(x, false), coef: 1.0 });
            let decl = &a.gens()[g];
            if !decl.selfadjoint {
                let coef = rho[decl.row] / rho[decl.col];
                entries.push(XiEntry { index: Letter::new(g, true), xi: a.letter(x, true), coef });
            }
        }
        Self::from_entries(joint, entries)
    }

    /// Candidate with explicit `(index letter, conjugate letter, coefficient)`
    /// triples such as `("a*", "eta", 1.0)`.
    pub fn with_pairs(joint: ScalarMomentTable, pairs: &[(&str, &str, f64)]) -> Result<Self> {
        let a = joint.alphabet();
        let entries = pairs
            .iter()
            .map(|(i, x, c)| Ok(XiEntry { index: a.parse_letter(i)?, xi: a.parse_letter(x)?, coef: *c }))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(joint, entries)
    }

    /// Candidate with the given entries; index letters must cover every
    /// letter of their generators.
    pub fn from_entries(joint: ScalarMomentTable, entries: Vec<XiEntry>) -> Result<Self> {
        let a = joint.alphabet();
        let mut a_gens: Vec<usize> = entries.iter().map(|e| e.index.gen).collect();
        a_gens.sort_unstable();
        a_gens.dedup();
        if entries.iter().any(|e| a_gens.contains(&e.xi.gen)) {
            return Err(Error::Usage("a conjugate letter is also an index letter".into()));
        }
        for &g in &a_gens {
            for l in [a.letter(g, false), a.letter(g, true)] {
                match entries.iter().filter(|e| a.letter(e.index.gen, e.index.star) == l).count() {
                    1 => {}
                    0 => return Err(Error::Usage(format!("no conjugate letter for {}", a.letter_name(l)))),
                    _ => return Err(Error::Usage(format!("several conjugate letters for {}", a.letter_name(l)))),
                }
            }
        }
        for e in &entries {
            let (r, c) = a.letter_type(e.index);
            if a.letter_type(e.xi) != (c, r) {
                return Err(Error::Validation(format!(
                    "conjugate {} of {} must have type ({}, {})",
                    a.letter_name(e.xi),
                    a.letter_name(e.index),
                    c + 1,
                    r + 1
                )));
            }
        }
        let is_a = |l: &Letter| a_gens.contains(&l.gen);
        for (w, _) in joint.iter() {
            let k = w.iter().filter(|l| !is_a(l)).count();
            let ok = k == 0 || (k == 1 && !is_a(&w[0])) || (k == 2 && w.len() == 2);
            if !ok {
                return Err(Error::Usage(format!(
                    "word {:?} uses conjugate letters beyond degree one",
                    a.word_string(w)
                )));
            }
        }
        let entries = entries
            .into_iter()
            .map(|e| XiEntry { index: a.letter(e.index.gen, e.index.star), xi: a.letter(e.xi.gen, e.xi.star), ..e })
            .collect();
        Ok(ConjugateCandidate { joint, a_gens, entries })
    }

    pub fn joint(&self) -> &ScalarMomentTable {
        &self.joint
    }

    pub fn entries(&self) -> &[XiEntry] {
        &self.entries
    }

    fn alphabet(&self) -> &Alphabet {
        self.joint.alphabet()
    }

    fn a_letters(&self) -> Vec<Letter> {
        let a = self.alphabet();
        let mut out = Vec::new();
        for &g in &self.a_gens {
            out.push(a.letter(g, false));
            if !a.gens()[g].selfadjoint {
                out.push(a.letter(g, true));
            }
        }
        out
    }

    fn moment(&self, w: &[Letter]) -> Result<Complex64> {
        if w.is_empty() {
            return Ok(ONE);
        }
        let a = self.alphabet();
        self.joint
            .value(&a.canonical(w))
            .ok_or_else(|| Error::Validation(format!("joint moment of {:?} missing", a.word_string(w))))
    }

    /// `phi(X X*)` with the global trace, for a conjugate letter `X`.
    fn sq_norm(&self, x: Letter) -> Result<f64> {
        let a = self.alphabet();
        let r = a.letter_type(x).0;
        Ok(a.structure().rho()[r] * self.moment(&[x, x.adjoint()])?.re)
    }
}

/// Words `w` over `letters` of length `<= max_len` whose type chain runs from
/// block `from` to block `to` (the empty word when `from == to`).
fn paths(a: &Alphabet, letters: &[Letter], from: usize, to: usize, max_len: usize) -> Vec<Word> {
    let mut out = Vec::new();
    let mut stack: Vec<(Word, usize)> = vec![(Vec::new(), from)];
    while let Some((w, at)) = stack.pop() {
        if at == to {
            out.push(w.clone());
        }
        if w.len() == max_len {
            continue;
        }
        for &l in letters.iter().rev() {
            let (r, c) = a.letter_type(l);
            if r == at {
                let mut next = w.clone();
                next.push(l);
                stack.push((next, c));
            }
        }
    }
    out.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    out
}

/// Checks the conjugate relations on all words of length `<= degree`.
pub fn check_conjugate_relations(c: &ConjugateCandidate, degree: usize, form: Form) -> Result<RelationReport> {
    if degree == 0 {
        return Err(Error::Usage("degree must be positive".into()));
    }
    let a = c.alphabet();
    let d = a.structure().d();
    let letters = c.a_letters();
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut checked = 0;
    for e in &c.entries {
        let (rx, cx) = a.letter_type(e.xi);
        for w in paths(a, &letters, cx, rx, degree - 1) {
            let mut full = vec![e.xi];
            full.extend_from_slice(&w);
            let n = w.len();
            let gap = match form {
                Form::I => {
                    let lhs = e.coef * c.moment(&full)?;
                    let mut rhs = ZERO;
                    for m in 0..n {
                        if w[m] == e.index {
                            rhs += c.moment(&w[..m])? * c.moment(&w[m + 1..])?;
                        }
                    }
                    (lhs - rhs).norm()
                }
                Form::Ii => {
                    let mut lhs = vec![ZERO; d];
                    lhs[rx] = e.coef * c.moment(&full)?;
                    let mut rhs = vec![ZERO; d];
                    if n == 1 {
                        if w[0] == e.index {
                            rhs[rx] = ONE;
                        }
                    } else {
                        for m in 0..n {
                            if w[m] != e.index {
                                continue;
                            }
                            let left = expectation(c, &w[..m], d)?;
                            let right = expectation(c, &w[m + 1..], d)?;
                            let left = swap(left, rx, cx);
                            for k in 0..d {
                                rhs[k] += left[k] * right[k];
                            }
                        }
                    }
                    lhs.iter().zip(&rhs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
                }
                Form::Iii => {
                    let cum = if n == 0 { c.moment(&full)? } else { cumulant_of_word(&c.joint, &a.canonical(&full))? };
                    let target = if n == 1 && w[0] == e.index { ONE } else { ZERO };
                    (e.coef * cum - target).norm()
                }
            };
            checked += 1;
            if gap > worst {
                worst = gap;
                let mut names = vec![format!("xi[{}]", a.letter_name(e.index))];
                names.extend(a.word_names(&w));
                witness = Some(names);
            }
        }
    }
    Ok(RelationReport { form, degree, max_violation: worst, witness, checked })
}

/// `E(w)` as a diagonal vector; the empty word is the unit.
fn expectation(c: &ConjugateCandidate, w: &[Letter], d: usize) -> Result<Vec<Complex64>> {
    if w.is_empty() {
        return Ok(vec![ONE; d]);
    }
    let mut out = vec![ZERO; d];
    let r = c.alphabet().letter_type(w[0]).0;
    out[r] = c.moment(w)?;
    Ok(out)
}

/// The involution of `D` exchanging the `k`-th and `l`-th coordinates.
fn swap(mut v: Vec<Complex64>, k: usize, l: usize) -> Vec<Complex64> {
    v.swap(k, l);
    v
}

/// `Phi_r = sum_i ||xi_i||^2` if the relations hold at `degree`, else `+inf`.
pub fn fisher_info(c: &ConjugateCandidate, degree: usize) -> Result<FisherReport> {
    let relations = check_conjugate_relations(c, degree, Form::I)?;
    if !relations.passes() {
        return Ok(FisherReport { phi_r: FisherValue::Infinite, relations });
    }
    let mut total = 0.0;
    for e in &c.entries {
        total += e.coef * e.coef * c.sq_norm(e.xi)?;
    }
    Ok(FisherReport { phi_r: FisherValue::Finite(total), relations })
}

/// The single rectangular generator of a candidate, with its type.
fn rectangular_generator(c: &ConjugateCandidate) -> Result<(usize, usize, usize)> {
    let a = c.alphabet();
    match c.a_gens.as_slice() {
        [g] if a.gens()[*g].row != a.gens()[*g].col => Ok((*g, a.gens()[*g].row, a.gens()[*g].col)),
        _ => Err(Error::Usage("Cramér-Rao needs exactly one rectangular generator".into())),
    }
}

/// `phi(aa*) Phi_r(a, a*) >= rho_k^2 + rho_l^2` for `a` of type `(k, l)`.
pub fn cramer_rao(c: &ConjugateCandidate, degree: usize) -> Result<CramerRaoReport> {
    let (g, k, l) = rectangular_generator(c)?;
    let rho = c.alphabet().structure().rho();
    let aa = rho[k] * c.moment(&[Letter::new(g, false), Letter::new(g, true)])?.re;
    if !(aa > 0.0) {
        return Err(Error::Precondition("the element must be non-null".into()));
    }
    let phi = fisher_info(c, degree)?.phi_r;
    let rhs = rho[k] * rho[k] + rho[l] * rho[l];
    let lhs = aa * phi.to_f64();
    Ok(CramerRaoReport { lhs, rhs, slack: lhs - rhs, phi_r: phi })
}

/// A conjugate variable as a real combination of words in the generators.
#[derive(Debug, Clone)]
pub struct XiPolynomial {
    pub name: String,
    pub terms: Vec<(f64, Word)>,
}

/// Joint table of `a`'s generators and the given polynomials, filled by
/// substitution. `a_table` must reach length `degree - 1 + max term length`
/// and twice the longest term.
pub fn substitute_joint(a_table: &ScalarMomentTable, xis: &[XiPolynomial], degree: usize) -> Result<ScalarMomentTable> {
    let a = a_table.alphabet();
    let n_a = a.gens().len();
    let mut gens = a.gens().to_vec();
    for p in xis {
        let first = p.terms.first().ok_or_else(|| Error::Usage(format!("polynomial {} is empty", p.name)))?;
        let ch = a
            .chain(&first.1)
            .ok_or_else(|| Error::Usage(format!("term of {} is the zero product", p.name)))?;
        let (r, c) = (ch[0], ch[ch.len() - 1]);
        for (_, t) in &p.terms {
            match a.chain(t) {
                Some(tc) if tc[0] == r && tc[tc.len() - 1] == c => {}
                _ => return Err(Error::Usage(format!("terms of {} have different types", p.name))),
            }
        }
        gens.push(GeneratorDecl::new(p.name.clone(), r, c));
    }
    let joint_alpha = Alphabet::new(a.structure().clone(), gens)?;
    let a_letters = a.letters();
    let look = |w: &[Letter]| -> Result<Complex64> {
        if w.is_empty() {
            return Ok(ONE);
        }
        a_table
            .value(&a.canonical(w))
            .ok_or_else(|| Error::Validation(format!("moment of {:?} missing from the input table", a.word_string(w))))
    };
    // expansion of a conjugate letter into (coefficient, a-word) terms
    let expand = |l: Letter| -> Vec<(f64, Word)> {
        let p = &xis[l.gen - n_a];
        if l.star {
            p.terms.iter().map(|(c, t)| (*c, a.adjoint(t))).collect()
        } else {
            p.terms.clone()
        }
    };
    let mut out = ScalarMomentTable::new(joint_alpha.clone(), degree.max(2));
    for w in a.square_words(degree) {
        out.insert(&w, look(&w)?)?;
    }
    for gi in 0..xis.len() {
        for star in [false, true] {
            let x = Letter::new(n_a + gi, star);
            let (rx, cx) = joint_alpha.letter_type(x);
            let ex = expand(x);
            for w in paths(a, &a_letters, cx, rx, degree - 1) {
                let mut v = ZERO;
                for (coef, t) in &ex {
                    let mut full = t.clone();
                    full.extend_from_slice(&w);
                    v += *coef * look(&full)?;
                }
                let mut key = vec![x];
                key.extend_from_slice(&w);
                out.insert(&key, v)?;
            }
            let mut v = ZERO;
            for (c1, t1) in &ex {
                for (c2, t2) in expand(x.adjoint()) {
                    let mut full = t1.clone();
                    full.extend_from_slice(&t2);
                    v += c1 * c2 * look(&full)?;
                }
            }
            out.insert(&[x, x.adjoint()], v)?;
        }
    }
    Ok(out)
}

/// `mu[n] = phi_k((aa*)^n)` and `nu[n] = phi_l((a*a)^n)` for `n <= n_max`.
fn alternating_moments(t: &ScalarMomentTable, g: usize, n_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = t.alphabet();
    let mut mu = vec![1.0];
    let mut nu = vec![1.0];
    for n in 1..=n_max {
        let w: Word = (0..2 * n).map(|i| Letter::new(g, i % 2 == 1)).collect();
        let ws: Word = (0..2 * n).map(|i| Letter::new(g, i % 2 == 0)).collect();
        let get = |w: &Word| {
            t.value(w)
                .map(|v| v.re)
                .ok_or_else(|| Error::Validation(format!("moment of {:?} missing", a.word_string(w))))
        };
        mu.push(get(&w)?);
        nu.push(get(&ws)?);
    }
    Ok((mu, nu))
}

fn single_rect(a_table: &ScalarMomentTable) -> Result<(usize, usize, usize)> {
    let a = a_table.alphabet();
    match a.gens() {
        [g] if g.row != g.col => Ok((0, g.row, g.col)),
        _ => Err(Error::Usage("expected a table of one rectangular generator".into())),
    }
}

/// `xi = c a*` with `c = 1 / phi_l(a*a)`: the conjugate variable when `aa*`
/// is a scaled MP law with parameter `rho_l / rho_k`.
pub fn build_mp_conjugate(a_table: &ScalarMomentTable, degree: usize) -> Result<ConjugateCandidate> {
    let (g, _, _) = single_rect(a_table)?;
    let (_, nu) = alternating_moments(a_table, g, 1)?;
    if !(nu[1] > 0.0) {
        return Err(Error::Precondition("the element must be non-null".into()));
    }
    let name = format!("xi_{}", a_table.alphabet().gens()[g].name);
    let poly = XiPolynomial { name: name.clone(), terms: vec![(1.0 / nu[1], vec![Letter::new(g, true)])] };
    let joint = substitute_joint(a_table, &[poly], degree)?;
    ConjugateCandidate::new(joint, &[&name])
}

/// Coefficients `x_j` of the projection `xi = sum_j x_j (a*a)^j a*` fixed by
/// the relations on words of length `<= degree`.
pub fn projected_coefficients(a_table: &ScalarMomentTable, degree: usize) -> Result<Vec<f64>> {
    let (g, _, _) = single_rect(a_table)?;
    if degree < 2 {
        return Err(Error::Usage("degree must be at least 2".into()));
    }
    let m = (degree - 2) / 2;
    let (mu, nu) = alternating_moments(a_table, g, 2 * m + 1)?;
    let h = DMatrix::from_fn(m + 1, m + 1, |i, j| nu[i + j + 1]);
    let b = DVector::from_fn(m + 1, |i, _| (0..=i).map(|t| mu[t] * nu[i - t]).sum::<f64>());
    let x = h
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Precondition("moment matrix is singular (element too degenerate)".into()))?;
    Ok(x.iter().copied().collect())
}

/// The projected candidate `sum_j x_j (a*a)^j a*`. Needs `a_table` up to
/// length `2 degree - 2`.
pub fn projected_conjugate(a_table: &ScalarMomentTable, degree: usize) -> Result<ConjugateCandidate> {
    let (g, _, _) = single_rect(a_table)?;
    let x = projected_coefficients(a_table, degree)?;
    let terms = x
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut w: Word = Vec::with_capacity(2 * j + 1);
            for _ in 0..j {
                w.push(Letter::new(g, true));
                w.push(Letter::new(g, false));
            }
            w.push(Letter::new(g, true));
            (*c, w)
        })
        .collect();
    let name = format!("xi_{}", a_table.alphabet().gens()[g].name);
    let joint = substitute_joint(a_table, &[XiPolynomial { name: name.clone(), terms }], degree)?;
    ConjugateCandidate::new(joint, &[&name])
}

/// Fisher information of the joint family against the sum over its parts.
pub fn additivity_from_joint(joint: &ConjugateCandidate, parts: &[&ConjugateCandidate], degree: usize) -> Result<AdditivityReport> {
    let mut phi_parts = Vec::new();
    for p in parts {
        let f = fisher_info(p, degree)?;
        if !f.relations.passes() {
            return Err(Error::Precondition(format!(
                "marginal fails its conjugate relations (violation {:.3e})",
                f.relations.max_violation
            )));
        }
        phi_parts.push(f.phi_r);
    }
    let fj = fisher_info(joint, degree)?;
    let sum: f64 = phi_parts.iter().map(FisherValue::to_f64).sum();
    Ok(AdditivityReport {
        slack: fj.phi_r.to_f64() - sum,
        phi_joint: fj.phi_r,
        phi_parts,
        joint_relations: fj.relations,
    })
}

/// Candidate for the union of two families assumed free with amalgamation,
/// keeping each family's conjugate variables.
pub fn free_joint_candidate(x: &ConjugateCandidate, y: &ConjugateCandidate, degree: usize) -> Result<ConjugateCandidate> {
    for c in [x, y] {
        for &g in &c.a_gens {
            let l = Letter::new(g, false);
            let v = c.moment(&[l, c.alphabet().letter(g, true)])?;
            if !(v.re > 0.0) {
                return Err(Error::Precondition("marginal generators must be non-null".into()));
            }
        }
    }
    let cx = moments_to_cumulants(&x.joint)?;
    let cy = moments_to_cumulants(&y.joint)?;
    let marg = [cx, cy];
    let fp = FreeProduct::new(&marg)?;
    let alpha = fp.alphabet().clone();
    let offset = x.alphabet().gens().len();
    let shift = |l: Letter, off: usize| Letter::new(l.gen + off, l.star);
    let mut entries: Vec<XiEntry> = x.entries.clone();
    entries.extend(y.entries.iter().map(|e| XiEntry { index: shift(e.index, offset), xi: shift(e.xi, offset), coef: e.coef }));
    let a_gens: Vec<usize> = x.a_gens.iter().copied().chain(y.a_gens.iter().map(|g| g + offset)).collect();
    let a_letters: Vec<Letter> = a_gens
        .iter()
        .flat_map(|&g| {
            let mut v = vec![alpha.letter(g, false)];
            if !alpha.gens()[g].selfadjoint {
                v.push(alpha.letter(g, true));
            }
            v
        })
        .collect();
    let mut words: BTreeMap<Word, ()> = BTreeMap::new();
    for w in alpha.square_words_over(&a_letters, degree) {
        words.insert(w, ());
    }
    for e in &entries {
        let (rx, cx) = alpha.letter_type(e.xi);
        for w in paths(&alpha, &a_letters, cx, rx, degree - 1) {
            let mut full = vec![e.xi];
            full.extend(w);
            words.insert(alpha.canonical(&full), ());
        }
        words.insert(alpha.canonical(&[e.xi, e.xi.adjoint()]), ());
    }
    let words: Vec<Word> = words.into_keys().collect();
    let table = fp.moments_for(&words)?;
    ConjugateCandidate::from_entries(table, entries)
}

/// Builds the free joint of two marginal candidates and compares Fisher
/// informations: with freeness the marginal conjugates stay conjugate.
pub fn fisher_additivity_check(x: &ConjugateCandidate, y: &ConjugateCandidate, degree: usize) -> Result<AdditivityReport> {
    let joint = free_joint_candidate(x, y, degree)?;
    additivity_from_joint(&joint, &[x, y], degree)
}

/// MP law (parameter `lambda`, dilation `scale`) reweighted by
/// `1 + eps cos(freq pi t)` across its support and renormalized.
pub fn tilted_mp(lambda: f64, scale: f64, eps: f64, freq: f64, cells: usize) -> Result<GridMeasure> {
    if !(eps.abs() < 1.0) {
        return Err(Error::Usage("tilt amplitude must be below 1".into()));
    }
    let base = GridMeasure::mp(lambda, scale)?.to_grid(cells)?;
    let GridMeasure::Grid { edges, density } = &base else { unreachable!() };
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let mass: Vec<f64> = density
        .iter()
        .zip(edges.windows(2))
        .map(|(d, e)| {
            let t = (0.5 * (e[0] + e[1]) - lo) / (hi - lo);
            d * (e[1] - e[0]) * (1.0 + eps * (freq * std::f64::consts::PI * t).cos())
        })
        .collect();
    let total: f64 = mass.iter().sum();
    let dens = mass.iter().zip(edges.windows(2)).map(|(m, e)| m / total / (e[1] - e[0])).collect();
    GridMeasure::with_edges(edges.clone(), dens)
}
