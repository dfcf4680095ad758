//! Noncommutative polynomials in typed generators, the derivations `D_j` into
//! `A (x) A^op (x) C[S_2]`, matrix-level evaluation and the change-of-variable
//! Jacobian.
//!
//! A tensor `u (x) v (x) e` acts on block matrices as `M -> u M v` and
//! `u (x) v (x) tau` as `M -> u M* v`. Products are composition of these maps,
//! so the right slot multiplies in reverse order.
//!
//! Realified coordinates list the entries of a block in row-major order, each
//! entry as `(re, im)`; the blocks of several generators are concatenated in
//! generator order.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dblock::{word_adjoint, Alphabet, BlockStructure, GeneratorDecl, Letter, ScalarMomentTable, Word};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Default step of the finite-difference validator.
pub const FD_STEP: f64 = 1e-5;
/// Step used by the Richardson fallback.
pub const FD_RICHARDSON_STEP: f64 = 1e-4;
/// Scale of the first-order term `scale * Re (phi (x) phi (x) delta_e)(D P)`.
pub const SLOPE_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perm {
    E,
    Tau,
}

impl Perm {
    pub fn compose(self, other: Perm) -> Perm {
        if self == other {
            Perm::E
        } else {
            Perm::Tau
        }
    }
}

fn concat(a: &[Letter], b: &[Letter]) -> Word {
    let mut w = a.to_vec();
    w.extend_from_slice(b);
    w
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NCPoly {
    terms: BTreeMap<Word, Complex64>,
}

impl NCPoly {
    pub fn zero() -> Self {
        NCPoly::default()
    }

    pub fn one() -> Self {
        NCPoly::monomial(Vec::new(), ONE)
    }

    pub fn monomial(w: Word, c: Complex64) -> Self {
        let mut p = NCPoly::zero();
        p.add_term(w, c);
        p
    }

    /// The generator `X_gen` (or its adjoint).
    pub fn var(gen: usize, star: bool) -> Self {
        NCPoly::monomial(vec![Letter::new(gen, star)], ONE)
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Word, Complex64)>) -> Self {
        let mut p = NCPoly::zero();
        for (w, c) in terms {
            p.add_term(w, c);
        }
        p
    }

    pub fn add_term(&mut self, w: Word, c: Complex64) {
        let e = self.terms.entry(w.clone()).or_insert(ZERO);
        *e += c;
        if *e == ZERO {
            self.terms.remove(&w);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn add(&self, o: &NCPoly) -> NCPoly {
        let mut p = self.clone();
        for (w, c) in &o.terms {
            p.add_term(w.clone(), *c);
        }
        p
    }

    pub fn scale(&self, s: Complex64) -> NCPoly {
        NCPoly::from_terms(self.terms.iter().map(|(w, c)| (w.clone(), c * s)))
    }

    pub fn mul(&self, o: &NCPoly) -> NCPoly {
        let mut p = NCPoly::zero();
        for (u, a) in &self.terms {
            for (v, b) in &o.terms {
                p.add_term(concat(u, v), a * b);
            }
        }
        p
    }

    pub fn adjoint(&self) -> NCPoly {
        NCPoly::from_terms(self.terms.iter().map(|(w, c)| (word_adjoint(w), c.conj())))
    }

    /// Substitutes `subs[g]` for `X_g` (and its adjoint for `X_g*`).
    pub fn compose(&self, subs: &[NCPoly]) -> Result<NCPoly> {
        let adj: Vec<NCPoly> = subs.iter().map(NCPoly::adjoint).collect();
        let mut out = NCPoly::zero();
        for (w, c) in &self.terms {
            let mut p = NCPoly::monomial(Vec::new(), *c);
            for l in w {
                let s = if l.star { adj.get(l.gen) } else { subs.get(l.gen) };
                let s = s.ok_or_else(|| Error::Usage(format!("no substitution for generator {}", l.gen)))?;
                p = p.mul(s);
            }
            out = out.add(&p);
        }
        Ok(out)
    }

    /// Checks membership in the class of generator `i`: every monomial runs
    /// from block `row(i)` to block `col(i)`. Constants need `row == col`.
    pub fn check_class(&self, alphabet: &Alphabet, i: usize) -> Result<()> {
        let g = alphabet.gens().get(i).ok_or_else(|| Error::Usage(format!("no generator {i}")))?;
        for w in self.terms.keys() {
            if let Some(l) = w.iter().find(|l| l.gen >= alphabet.gens().len()) {
                return Err(Error::Usage(format!("letter references undeclared generator {}", l.gen)));
            }
            let ok = if w.is_empty() {
                g.row == g.col
            } else {
                matches!(alphabet.chain(w), Some(c) if c[0] == g.row && c[c.len() - 1] == g.col)
            };
            if !ok {
                return Err(Error::Usage(format!(
                    "monomial {:?} does not have the type ({},{}) of {}",
                    alphabet.word_string(w),
                    g.row + 1,
                    g.col + 1,
                    g.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorPoly {
    terms: BTreeMap<(Word, Word, Perm), Complex64>,
}

impl TensorPoly {
    pub fn zero() -> Self {
        TensorPoly::default()
    }

    pub fn unit() -> Self {
        TensorPoly::simple(Vec::new(), Vec::new(), Perm::E, ONE)
    }

    pub fn simple(u: Word, v: Word, g: Perm, c: Complex64) -> Self {
        let mut t = TensorPoly::zero();
        t.add_term(u, v, g, c);
        t
    }

    pub fn add_term(&mut self, u: Word, v: Word, g: Perm, c: Complex64) {
        let key = (u, v, g);
        let e = self.terms.entry(key.clone()).or_insert(ZERO);
        *e += c;
        if *e == ZERO {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(Word, Word, Perm), &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &TensorPoly) -> TensorPoly {
        let mut t = self.clone();
        for ((u, v, g), c) in &o.terms {
            t.add_term(u.clone(), v.clone(), *g, *c);
        }
        t
    }

    pub fn scale(&self, s: Complex64) -> TensorPoly {
        let mut t = TensorPoly::zero();
        for ((u, v, g), c) in &self.terms {
            t.add_term(u.clone(), v.clone(), *g, c * s);
        }
        t
    }

    pub fn mul(&self, o: &TensorPoly) -> TensorPoly {
        tensor_mul(self, o)
    }

    pub fn adjoint(&self) -> TensorPoly {
        tensor_adjoint(self)
    }
}

/// `(X,Y,e)(Z,T,g) = (XZ, TY, g)` and `(X,Y,tau)(Z,T,g) = (XT*, Z*Y, tau g)`.
/// Coefficients ride in the left slot, so a `tau` factor conjugates the
/// coefficient on its right: the product is only real-bilinear.
pub fn tensor_mul(a: &TensorPoly, b: &TensorPoly) -> TensorPoly {
    let mut out = TensorPoly::zero();
    for ((x, y, g), c) in &a.terms {
        for ((z, t, h), d) in &b.terms {
            let (u, v, d) = match g {
                Perm::E => (concat(x, z), concat(t, y), *d),
                Perm::Tau => (concat(x, &word_adjoint(t)), concat(&word_adjoint(z), y), d.conj()),
            };
            out.add_term(u, v, g.compose(*h), c * d);
        }
    }
    out
}

/// `(X,Y,e)* = (X*,Y*,e)` and `(X,Y,tau)* = (Y,X,tau)`; only `e` coefficients
/// are conjugated.
pub fn tensor_adjoint(a: &TensorPoly) -> TensorPoly {
    let mut out = TensorPoly::zero();
    for ((x, y, g), c) in &a.terms {
        match g {
            Perm::E => out.add_term(word_adjoint(x), word_adjoint(y), Perm::E, c.conj()),
            Perm::Tau => out.add_term(y.clone(), x.clone(), Perm::Tau, *c),
        }
    }
    out
}

/// `D_j P`: each occurrence of `X_j` splits its monomial into prefix and
/// suffix, tagged `e`; each occurrence of `X_j*` likewise, tagged `tau`.
pub fn derive(p: &NCPoly, j: usize) -> TensorPoly {
    let mut out = TensorPoly::zero();
    for (w, c) in &p.terms {
        for (m, l) in w.iter().enumerate() {
            if l.gen == j {
                let g = if l.star { Perm::Tau } else { Perm::E };
                out.add_term(w[..m].to_vec(), w[m + 1..].to_vec(), g, *c);
            }
        }
    }
    out
}

/// One complex matrix per generator at size `n`, each supported on the
/// block of its type.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPoint {
    alphabet: Alphabet,
    n: usize,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    mats: Vec<DMatrix<Complex64>>,
}

impl MatrixPoint {
    pub fn new(alphabet: Alphabet, n: usize, mats: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if let Some(g) = alphabet.gens().iter().find(|g| g.selfadjoint) {
            return Err(Error::Usage(format!(
                "generator {} is declared selfadjoint; matrix points treat every generator as a free complex block",
                g.name
            )));
        }
        if mats.len() != alphabet.gens().len() {
            return Err(Error::Usage(format!("{} matrices for {} generators", mats.len(), alphabet.gens().len())));
        }
        let sizes = alphabet.structure().block_sizes(n);
        let offsets: Vec<usize> = sizes.iter().scan(0, |s, q| {
            let o = *s;
            *s += q;
            Some(o)
        }).collect();
        let p = MatrixPoint { alphabet, n, offsets, sizes, mats: Vec::new() };
        for (g, m) in p.alphabet.gens().iter().zip(&mats) {
            if m.shape() != (n, n) {
                return Err(Error::Usage(format!("matrix of {} has shape {:?}, expected ({n},{n})", g.name, m.shape())));
            }
            let (r, c) = (p.range(g.row), p.range(g.col));
            for i in 0..n {
                for j in 0..n {
                    if m[(i, j)] != ZERO && !(r.contains(&i) && c.contains(&j)) {
                        return Err(Error::Usage(format!(
                            "matrix of {} has entry ({},{}) outside its ({},{}) block",
                            g.name,
                            i + 1,
                            j + 1,
                            g.row + 1,
                            g.col + 1
                        )));
                    }
                }
            }
        }
        Ok(MatrixPoint { mats, ..p })
    }

    /// Builds the point from the `q_row x q_col` blocks.
    pub fn from_blocks(alphabet: Alphabet, n: usize, blocks: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let sizes = alphabet.structure().block_sizes(n);
        let mut mats = Vec::with_capacity(blocks.len());
        for (g, b) in alphabet.gens().iter().zip(&blocks) {
            if b.shape() != (sizes[g.row], sizes[g.col]) {
                return Err(Error::Usage(format!(
                    "block of {} has shape {:?}, expected ({},{})",
                    g.name,
                    b.shape(),
                    sizes[g.row],
                    sizes[g.col]
                )));
            }
            let (r0, c0) = (sizes[..g.row].iter().sum::<usize>(), sizes[..g.col].iter().sum::<usize>());
            let mut m = DMatrix::zeros(n, n);
            m.view_mut((r0, c0), b.shape()).copy_from(b);
            mats.push(m);
        }
        if blocks.len() != alphabet.gens().len() {
            return Err(Error::Usage(format!("{} blocks for {} generators", blocks.len(), alphabet.gens().len())));
        }
        MatrixPoint::new(alphabet, n, mats)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mats(&self) -> &[DMatrix<Complex64>] {
        &self.mats
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Row/column indices of block `k`.
    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.sizes[k]
    }

    /// Block of generator `g`, as a `q_row x q_col` matrix.
    pub fn block(&self, g: usize) -> DMatrix<Complex64> {
        let d = &self.alphabet.gens()[g];
        let (r, c) = (self.range(d.row), self.range(d.col));
        self.mats[g].view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    pub fn eval_word(&self, w: &[Letter]) -> DMatrix<Complex64> {
        let mut m = DMatrix::identity(self.n, self.n);
        for l in w {
            let x = &self.mats[l.gen];
            m = if l.star { m * x.adjoint() } else { m * x };
        }
        m
    }

    pub fn eval_poly(&self, p: &NCPoly) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (w, c) in p.terms() {
            m += self.eval_word(w) * *c;
        }
        m
    }

    /// Real dimension of the `(k, l)` block space.
    pub fn real_dim(&self, (k, l): (usize, usize)) -> usize {
        2 * self.sizes[k] * self.sizes[l]
    }

    /// Total real dimension of the generators' block spaces.
    pub fn total_dim(&self) -> usize {
        self.alphabet.gens().iter().map(|g| self.real_dim((g.row, g.col))).sum()
    }

    /// Realified coordinates of the `(k, l)` block of `m`.
    pub fn realify(&self, m: &DMatrix<Complex64>, (k, l): (usize, usize)) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.real_dim((k, l)));
        for i in self.range(k) {
            for j in self.range(l) {
                out.push(m[(i, j)].re);
                out.push(m[(i, j)].im);
            }
        }
        out
    }

    /// All generator blocks, realified and concatenated.
    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (g, d) in self.alphabet.gens().iter().enumerate() {
            out.extend(self.realify(&self.mats[g], (d.row, d.col)));
        }
        out
    }

    /// The point with realified coordinates `x`.
    pub fn with_coords(&self, x: &[f64]) -> Result<MatrixPoint> {
        if x.len() != self.total_dim() {
            return Err(Error::Usage(format!("{} coordinates, expected {}", x.len(), self.total_dim())));
        }
        let mut mats = Vec::with_capacity(self.mats.len());
        let mut it = x.chunks(2);
        for d in self.alphabet.gens() {
            let mut m = DMatrix::zeros(self.n, self.n);
            for i in self.range(d.row) {
                for j in self.range(d.col) {
                    let c = it.next().unwrap();
                    m[(i, j)] = Complex64::new(c[0], c[1]);
                }
            }
            mats.push(m);
        }
        Ok(MatrixPoint { mats, ..self.clone() })
    }

    /// Normalized trace `Tr(p_k W p_k) / n`, with the empty word read as `p_k`.
    pub fn tr_at(&self, w: &[Letter], k: usize) -> Complex64 {
        let r = self.range(k);
        if w.is_empty() {
            return Complex64::new(r.len() as f64 / self.n as f64, 0.0);
        }
        let m = self.eval_word(w);
        r.map(|i| m[(i, i)]).sum::<Complex64>() / self.n as f64
    }

    pub fn to_json_value(&self) -> Value {
        let mut blocks = serde_json::Map::new();
        for (g, d) in self.alphabet.gens().iter().enumerate() {
            let b = self.block(g);
            let rows: Vec<Value> = (0..b.nrows())
                .map(|i| Value::Array((0..b.ncols()).map(|j| serde_json::json!([b[(i, j)].re, b[(i, j)].im])).collect()))
                .collect();
            blocks.insert(d.name.clone(), Value::Array(rows));
        }
        serde_json::json!({"n": self.n, "blocks": blocks})
    }

    /// Parses `{"n": .., "blocks": {"name": [[[re, im], ..], ..]}}`.
    pub fn from_json_value(alphabet: Alphabet, v: &Value) -> Result<Self> {
        let doc: PointDoc = serde_json::from_value(v.clone()).map_err(|e| Error::Validation(format!("malformed point: {e}")))?;
        if let Some(k) = doc.blocks.keys().find(|k| alphabet.index_of(k).is_none()) {
            return Err(Error::Usage(format!("point names unknown generator {k:?}")));
        }
        let mut blocks = Vec::new();
        for g in alphabet.gens() {
            let rows = doc.blocks.get(&g.name).ok_or_else(|| Error::Usage(format!("point has no block for {}", g.name)))?;
            let nr = rows.len();
            let nc = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != nc) {
                return Err(Error::Validation(format!("ragged block for {}", g.name)));
            }
            let flat: Vec<Complex64> = rows.iter().flatten().map(|c| c.0).collect();
            if flat.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
                return Err(Error::Validation(format!("non-finite entry in block of {}", g.name)));
            }
            blocks.push(DMatrix::from_row_slice(nr, nc, &flat));
        }
        MatrixPoint::from_blocks(alphabet, doc.n, blocks)
    }
}

/// Accepts either a real number or `[re, im]`.
#[derive(Debug, Clone, Copy)]
struct Coeff(Complex64);

impl<'de> Deserialize<'de> for Coeff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Re(f64),
            Pair([f64; 2]),
        }
        Ok(Coeff(match Raw::deserialize(d)? {
            Raw::Re(x) => Complex64::new(x, 0.0),
            Raw::Pair([a, b]) => Complex64::new(a, b),
        }))
    }
}

#[derive(Deserialize)]
struct PointDoc {
    n: usize,
    blocks: BTreeMap<String, Vec<Vec<Coeff>>>,
}

#[derive(Deserialize)]
struct TermDoc {
    coeff: Coeff,
    word: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    rho: Vec<f64>,
    generators: Vec<GeneratorDecl>,
    polynomials: Vec<Vec<TermDoc>>,
}

/// A square polynomial system: `polys[i]` is the image of generator `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub alphabet: Alphabet,
    pub polys: Vec<NCPoly>,
}

impl PolySystem {
    pub fn new(alphabet: Alphabet, polys: Vec<NCPoly>) -> Result<Self> {
        if polys.len() != alphabet.gens().len() {
            return Err(Error::Usage(format!("{} polynomials for {} generators", polys.len(), alphabet.gens().len())));
        }
        for (i, p) in polys.iter().enumerate() {
            p.check_class(&alphabet, i)?;
        }
        Ok(PolySystem { alphabet, polys })
    }

    pub fn identity(alphabet: Alphabet) -> Self {
        let polys = (0..alphabet.gens().len()).map(|g| NCPoly::var(g, false)).collect();
        PolySystem { alphabet, polys }
    }

    /// `X_j + alpha [j == i0] P`.
    pub fn perturbed(alphabet: Alphabet, i0: usize, p: &NCPoly, alpha: f64) -> Result<Self> {
        let polys = (0..alphabet.gens().len())
            .map(|g| {
                let x = NCPoly::var(g, false);
                if g == i0 {
                    x.add(&p.scale(Complex64::new(alpha, 0.0)))
                } else {
                    x
                }
            })
            .collect();
        PolySystem::new(alphabet, polys)
    }

    /// `self o inner`: substitutes the polynomials of `inner` into `self`.
    pub fn compose(&self, inner: &PolySystem) -> Result<Self> {
        let polys = self.polys.iter().map(|p| p.compose(&inner.polys)).collect::<Result<Vec<_>>>()?;
        PolySystem::new(self.alphabet.clone(), polys)
    }

    /// Image of the point under the system.
    pub fn apply(&self, point: &MatrixPoint) -> Result<MatrixPoint> {
        let mats: Vec<DMatrix<Complex64>> = self
            .polys
            .iter()
            .zip(self.alphabet.gens())
            .map(|(p, g)| {
                let m = point.eval_poly(p);
                let (r, c) = (point.range(g.row), point.range(g.col));
                let mut out = DMatrix::zeros(point.n, point.n);
                out.view_mut((r.start, c.start), (r.len(), c.len())).copy_from(&m.view((r.start, c.start), (r.len(), c.len())));
                out
            })
            .collect();
        MatrixPoint::new(point.alphabet.clone(), point.n, mats)
    }

    fn realified_map(&self, point: &MatrixPoint, x: &[f64]) -> Result<Vec<f64>> {
        let q = point.with_coords(x)?;
        let mut out = Vec::with_capacity(x.len());
        for (p, g) in self.polys.iter().zip(self.alphabet.gens()) {
            out.extend(q.realify(&q.eval_poly(p), (g.row, g.col)));
        }
        Ok(out)
    }

    /// Parses `{"rho", "generators", "polynomials": [[{"coeff", "word"}, ..], ..]}`.
    pub fn from_json_value(v: &Value) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_value(v.clone()).map_err(|e| Error::Validation(format!("malformed system: {e}")))?;
        let mut gens = Vec::with_capacity(doc.generators.len());
        for g in doc.generators {
            if g.row == 0 || g.col == 0 {
                return Err(Error::Validation(format!("generator {} uses 0 as a block index", g.name)));
            }
            gens.push(GeneratorDecl { row: g.row - 1, col: g.col - 1, ..g });
        }
        let alphabet = Alphabet::new(BlockStructure::new(doc.rho)?, gens)?;
        let mut polys = Vec::new();
        for terms in doc.polynomials {
            let mut p = NCPoly::zero();
            for t in terms {
                if !(t.coeff.0.re.is_finite() && t.coeff.0.im.is_finite()) {
                    return Err(Error::Validation("non-finite coefficient".into()));
                }
                p.add_term(alphabet.parse_word(&t.word)?, t.coeff.0);
            }
            polys.push(p);
        }
        PolySystem::new(alphabet, polys)
    }
}

/// The real-linear map of `t` from the `domain` block space to the `codomain`
/// block space, as a matrix in realified coordinates.
pub fn evaluate_operator(t: &TensorPoly, point: &MatrixPoint, domain: (usize, usize), codomain: (usize, usize)) -> Result<DMatrix<f64>> {
    let d = point.alphabet.structure().d();
    if [domain.0, domain.1, codomain.0, codomain.1].iter().any(|&k| k >= d) {
        return Err(Error::Usage(format!("block index outside 1..={d}")));
    }
    let (rk, rl) = (point.range(domain.0), point.range(domain.1));
    let (ck, cl) = (point.range(codomain.0), point.range(codomain.1));
    let mut out = DMatrix::<f64>::zeros(point.real_dim(codomain), point.real_dim(domain));
    let idx_in = |r: usize, s: usize| 2 * ((r - rk.start) * rl.len() + (s - rl.start));
    let idx_out = |a: usize, b: usize| 2 * ((a - ck.start) * cl.len() + (b - cl.start));
    for ((u, v, g), c) in t.terms() {
        let (u, v) = (point.eval_word(u), point.eval_word(v));
        for a in ck.clone() {
            for b in cl.clone() {
                let o = idx_out(a, b);
                for r in rk.clone() {
                    for s in rl.clone() {
                        let i = idx_in(r, s);
                        match g {
                            // out[a,b] += c u[a,r] M[r,s] v[s,b]
                            Perm::E => {
                                let z = c * u[(a, r)] * v[(s, b)];
                                out[(o, i)] += z.re;
                                out[(o, i + 1)] -= z.im;
                                out[(o + 1, i)] += z.im;
                                out[(o + 1, i + 1)] += z.re;
                            }
                            // out[a,b] += c u[a,s] conj(M[r,s]) v[r,b]
                            Perm::Tau => {
                                let z = c * u[(a, s)] * v[(r, b)];
                                out[(o, i)] += z.re;
                                out[(o, i + 1)] += z.im;
                                out[(o + 1, i)] += z.im;
                                out[(o + 1, i + 1)] -= z.re;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Realified differential of the system at the point, block `(i, j)` being
/// `D_j F^(i)` from the space of generator `j` to that of generator `i`.
pub fn differential(system: &PolySystem, point: &MatrixPoint) -> Result<DMatrix<f64>> {
    if system.alphabet != point.alphabet {
        return Err(Error::Usage("system and point use different generators".into()));
    }
    let gens = system.alphabet.gens();
    let dims: Vec<usize> = gens.iter().map(|g| point.real_dim((g.row, g.col))).collect();
    let offs: Vec<usize> = dims.iter().scan(0, |s, d| {
        let o = *s;
        *s += d;
        Some(o)
    }).collect();
    let total = dims.iter().sum();
    let mut m = DMatrix::zeros(total, total);
    for (i, (p, gi)) in system.polys.iter().zip(gens).enumerate() {
        for (j, gj) in gens.iter().enumerate() {
            let dp = derive(p, j);
            if dp.is_empty() {
                continue;
            }
            let b = evaluate_operator(&dp, point, (gj.row, gj.col), (gi.row, gi.col))?;
            m.view_mut((offs[i], offs[j]), (dims[i], dims[j])).copy_from(&b);
        }
    }
    Ok(m)
}

/// `log |det m|`, or `-inf` when `m` is singular.
pub fn log_abs_det(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let u = m.lu().u();
    u.diagonal().iter().map(|x| x.abs().ln()).sum()
}

fn pivot_ratio(m: &DMatrix<f64>) -> f64 {
    let u = m.clone().lu().u();
    let d: Vec<f64> = u.diagonal().iter().map(|x| x.abs()).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// `log |det DF(point)|` in realified coordinates, i.e. half the log
/// determinant of the Gram matrix `DF DF^T`.
pub fn jacobian_log(system: &PolySystem, point: &MatrixPoint) -> Result<f64> {
    Ok(log_abs_det(differential(system, point)?))
}

fn fd_matrix(system: &PolySystem, point: &MatrixPoint, h: f64) -> Result<DMatrix<f64>> {
    let x = point.coords();
    let dim = x.len();
    let mut m = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (system.realified_map(point, &xp)?, system.realified_map(point, &xm)?);
        for r in 0..dim {
            m[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Finite-difference log-Jacobian: central differences at [`FD_STEP`];
/// when the pivots spread over more than eight decades, Richardson
/// extrapolation from [`FD_RICHARDSON_STEP`] and half of it.
pub fn fd_jacobian_log(system: &PolySystem, point: &MatrixPoint) -> Result<f64> {
    if system.alphabet != point.alphabet {
        return Err(Error::Usage("system and point use different generators".into()));
    }
    let m = fd_matrix(system, point, FD_STEP)?;
    if pivot_ratio(&m) >= 1e-8 {
        return Ok(log_abs_det(m));
    }
    let coarse = fd_matrix(system, point, FD_RICHARDSON_STEP)?;
    let fine = fd_matrix(system, point, FD_RICHARDSON_STEP / 2.0)?;
    Ok(log_abs_det((fine * 4.0 - coarse) / 3.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianReport {
    #[serde(serialize_with = "ser_f64")]
    pub log_jacobian: f64,
    #[serde(serialize_with = "ser_f64")]
    pub fd_estimate: f64,
    #[serde(serialize_with = "ser_f64")]
    pub discrepancy: f64,
}

fn ser_f64<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn jacobian_report(system: &PolySystem, point: &MatrixPoint) -> Result<JacobianReport> {
    let log_jacobian = jacobian_log(system, point)?;
    let fd_estimate = fd_jacobian_log(system, point)?;
    let discrepancy = if log_jacobian == fd_estimate { 0.0 } else { (log_jacobian - fd_estimate).abs() };
    Ok(JacobianReport { log_jacobian, fd_estimate, discrepancy })
}

/// `scale * (f (x) f (x) delta_e)(t)` for a tensor acting on the `(k, l)`
/// block space, where `f(w, b)` evaluates a word against block `b`.
pub fn tensor_functional<F>(t: &TensorPoly, (k, l): (usize, usize), scale: f64, mut f: F) -> Result<Complex64>
where
    F: FnMut(&[Letter], usize) -> Result<Complex64>,
{
    let mut acc = ZERO;
    for ((u, v, g), c) in t.terms() {
        if *g == Perm::E {
            acc += c * f(u, k)? * f(v, l)?;
        }
    }
    Ok(acc * scale)
}

/// `phi(p_b w p_b)` from a moment table: `rho_b` for the empty word, the
/// `b`-coordinate times `rho_b` for words from `b` to `b`, zero otherwise.
pub fn table_state(state: &ScalarMomentTable) -> impl FnMut(&[Letter], usize) -> Result<Complex64> + '_ {
    move |w: &[Letter], b: usize| {
        let a = state.alphabet();
        let rho = a.structure().rho_k(b);
        if w.is_empty() {
            return Ok(Complex64::new(rho, 0.0));
        }
        if w.iter().any(|l| l.gen >= a.gens().len()) {
            return Err(Error::Usage("word references an undeclared generator".into()));
        }
        match a.chain(w) {
            Some(c) if c[0] == b && c[c.len() - 1] == b => {}
            _ => return Ok(ZERO),
        }
        let w = a.canonical(w);
        let v = state.value(&w).ok_or_else(|| Error::Usage(format!("state has no moment for {:?}", a.word_string(&w))))?;
        Ok(v * rho)
    }
}

/// First-order coefficient `scale * Re (phi (x) phi (x) delta_e)(D_{i0} P)`
/// from a moment table.
pub fn first_order_jacobian(p: &NCPoly, i0: usize, state: &ScalarMomentTable, scale: f64) -> Result<f64> {
    let a = state.alphabet();
    p.check_class(a, i0)?;
    let g = &a.gens()[i0];
    Ok(tensor_functional(&derive(p, i0), (g.row, g.col), scale, table_state(state))?.re)
}

/// The same coefficient with the normalized trace at a matrix point.
pub fn matrix_first_order(p: &NCPoly, i0: usize, point: &MatrixPoint, scale: f64) -> Result<f64> {
    p.check_class(&point.alphabet, i0)?;
    let g = &point.alphabet.gens()[i0];
    let f = |w: &[Letter], b: usize| Ok(point.tr_at(w, b));
    Ok(tensor_functional(&derive(p, i0), (g.row, g.col), scale, f)?.re)
}
