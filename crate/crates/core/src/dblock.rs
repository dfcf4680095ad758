//! Block structure of the diagonal algebra, typed generators and words, and
//! the scalar-component tables that describe distributions of simple families.
//!
//! Block indices are 0-based in Rust and 1-based in the JSON format.
//!
//! A word `a_1 ... a_n` with types `(i_0,i_1), (i_1,i_2), ...` is stored only
//! when it is square (`i_0 == i_n`); its table value is the `i_0` coordinate of
//! the conditional expectation. Words whose consecutive types disagree are the
//! zero product.

use std::collections::BTreeMap;
use std::fmt;
use std::marker::PhantomData;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Tolerance used by [`Table::validate`].
pub const VALIDATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    rho: Vec<f64>,
}

impl BlockStructure {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::Validation("block structure needs at least one block".into()));
        }
        if let Some(r) = rho.iter().find(|r| !(r.is_finite() && **r > 0.0 && **r <= 1.0)) {
            return Err(Error::Validation(format!("block weight {r} outside (0,1]")));
        }
        let s: f64 = rho.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("block weights sum to {s}, not 1")));
        }
        Ok(BlockStructure { rho })
    }

    pub fn d(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_k(&self, k: usize) -> f64 {
        self.rho[k]
    }

    /// Block sizes at matrix size `n`: `floor(rho_k n)` for `k < d`, remainder
    /// to the last block.
    pub fn block_sizes(&self, n: usize) -> Vec<usize> {
        let d = self.d();
        let mut q: Vec<usize> = self.rho[..d - 1].iter().map(|r| (r * n as f64 + 1e-9).floor() as usize).collect();
        let used: usize = q.iter().sum();
        q.push(n.saturating_sub(used));
        q
    }

    /// The structure realized exactly at size `n`, with weights `q_k / n`.
    pub fn at_size(&self, n: usize) -> Result<Self> {
        let q = self.block_sizes(n);
        if q.iter().any(|&x| x == 0) {
            return Err(Error::Configuration(format!("a block is empty at n = {n} (sizes {q:?})")));
        }
        let rho: Vec<f64> = q.iter().map(|&x| x as f64 / n as f64).collect();
        let s: f64 = rho.iter().sum();
        Ok(BlockStructure { rho: rho.iter().map(|r| r / s).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDecl {
    pub name: String,
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub selfadjoint: bool,
}

impl GeneratorDecl {
    /// Generator of type `(row, col)`, 0-based.
    pub fn new(name: impl Into<String>, row: usize, col: usize) -> Self {
        GeneratorDecl { name: name.into(), row, col, selfadjoint: false }
    }

    pub fn hermitian(name: impl Into<String>, block: usize) -> Self {
        GeneratorDecl { name: name.into(), row: block, col: block, selfadjoint: true }
    }
}

/// A generator letter: index into the generator list plus a star flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter {
    pub gen: usize,
    pub star: bool,
}

impl Letter {
    pub fn new(gen: usize, star: bool) -> Self {
        Letter { gen, star }
    }

    pub fn adjoint(self) -> Self {
        Letter { gen: self.gen, star: !self.star }
    }
}

pub type Word = Vec<Letter>;

/// Reverse the word and flip every star.
pub fn word_adjoint(w: &[Letter]) -> Word {
    w.iter().rev().map(|l| l.adjoint()).collect()
}

/// Declared generators over a block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    structure: BlockStructure,
    gens: Vec<GeneratorDecl>,
}

impl Alphabet {
    pub fn new(structure: BlockStructure, gens: Vec<GeneratorDecl>) -> Result<Self> {
        let d = structure.d();
        for (i, g) in gens.iter().enumerate() {
            if g.row >= d || g.col >= d {
                return Err(Error::Validation(format!(
                    "generator {} has type ({},{}) outside 1..={d}",
                    g.name,
                    g.row + 1,
                    g.col + 1
                )));
            }
            if g.selfadjoint && g.row != g.col {
                return Err(Error::Validation(format!("selfadjoint generator {} is not square", g.name)));
            }
            if g.name.is_empty() || g.name.ends_with('*') || g.name.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid generator name {:?}", g.name)));
            }
            if gens[..i].iter().any(|h| h.name == g.name) {
                return Err(Error::Usage(format!("duplicate generator name {}", g.name)));
            }
        }
        Ok(Alphabet { structure, gens })
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn gens(&self) -> &[GeneratorDecl] {
        &self.gens
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.gens.iter().position(|g| g.name == name)
    }

    /// Letter with the self-adjoint canonicalization applied.
    pub fn letter(&self, gen: usize, star: bool) -> Letter {
        Letter { gen, star: star && !self.gens[gen].selfadjoint }
    }

    pub fn canonical(&self, w: &[Letter]) -> Word {
        w.iter().map(|l| self.letter(l.gen, l.star)).collect()
    }

    pub fn adjoint(&self, w: &[Letter]) -> Word {
        self.canonical(&word_adjoint(w))
    }

    /// Type `(row, col)` of a letter.
    pub fn letter_type(&self, l: Letter) -> (usize, usize) {
        let g = &self.gens[l.gen];
        if l.star {
            (g.col, g.row)
        } else {
            (g.row, g.col)
        }
    }

    /// Parses `"a"` or `"a*"`.
    pub fn parse_letter(&self, s: &str) -> Result<Letter> {
        let (name, star) = match s.strip_suffix('*') {
            Some(n) => (n, true),
            None => (s, false),
        };
        let gen = self.index_of(name).ok_or_else(|| Error::Usage(format!("unknown generator {name:?}")))?;
        Ok(self.letter(gen, star))
    }

    pub fn parse_word<S: AsRef<str>>(&self, letters: &[S]) -> Result<Word> {
        letters.iter().map(|s| self.parse_letter(s.as_ref())).collect()
    }

    /// Parses a whitespace-separated word such as `"a b a*"`.
    pub fn word(&self, s: &str) -> Result<Word> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.is_empty() {
            return Err(Error::Usage("empty word".into()));
        }
        self.parse_word(&parts)
    }

    pub fn letter_name(&self, l: Letter) -> String {
        let g = &self.gens[l.gen].name;
        if l.star {
            format!("{g}*")
        } else {
            g.clone()
        }
    }

    pub fn word_names(&self, w: &[Letter]) -> Vec<String> {
        w.iter().map(|&l| self.letter_name(l)).collect()
    }

    pub fn word_string(&self, w: &[Letter]) -> String {
        self.word_names(w).join(" ")
    }

    /// Type chain `(i_0, ..., i_n)` or `None` for the zero product.
    pub fn chain(&self, w: &[Letter]) -> Option<Vec<usize>> {
        let first = w.first()?;
        let mut chain = vec![self.letter_type(*first).0];
        for &l in w {
            let (r, c) = self.letter_type(l);
            if r != *chain.last().unwrap() {
                return None;
            }
            chain.push(c);
        }
        Some(chain)
    }

    /// Whether consecutive letters compose (the empty word does).
    pub fn composable(&self, w: &[Letter]) -> bool {
        w.windows(2).all(|p| self.letter_type(p[0]).1 == self.letter_type(p[1]).0)
    }

    pub fn is_square(&self, w: &[Letter]) -> bool {
        match (w.first(), w.last()) {
            (Some(&f), Some(&l)) => self.composable(w) && self.letter_type(f).0 == self.letter_type(l).1,
            _ => false,
        }
    }

    /// All letters, with self-adjoint generators contributing one letter.
    pub fn letters(&self) -> Vec<Letter> {
        let mut out = Vec::new();
        for (i, g) in self.gens.iter().enumerate() {
            out.push(Letter::new(i, false));
            if !g.selfadjoint {
                out.push(Letter::new(i, true));
            }
        }
        out
    }

    /// Every square word of length `1..=max_len` over the given letters, in
    /// length-then-lexicographic order.
    pub fn square_words_over(&self, letters: &[Letter], max_len: usize) -> Vec<Word> {
        let mut by_len: Vec<Vec<Word>> = vec![Vec::new(); max_len + 1];
        let mut cur = Vec::new();
        fn rec(a: &Alphabet, letters: &[Letter], max_len: usize, start: usize, end: usize, cur: &mut Word, out: &mut [Vec<Word>]) {
            if !cur.is_empty() && end == start {
                out[cur.len()].push(cur.clone());
            }
            if cur.len() == max_len {
                return;
            }
            for &l in letters {
                let (r, c) = a.letter_type(l);
                if r == end {
                    cur.push(l);
                    rec(a, letters, max_len, start, c, cur, out);
                    cur.pop();
                }
            }
        }
        for k in 0..self.structure.d() {
            rec(self, letters, max_len, k, k, &mut cur, &mut by_len);
        }
        let mut out = Vec::new();
        for mut ws in by_len {
            ws.sort();
            out.extend(ws);
        }
        out
    }

    pub fn square_words(&self, max_len: usize) -> Vec<Word> {
        self.square_words_over(&self.letters(), max_len)
    }
}

/// Type chain of a word, or the zero-product marker (`None`).
pub fn word_type_chain(alphabet: &Alphabet, w: &[Letter]) -> Option<Vec<usize>> {
    alphabet.chain(w)
}

/// Effect on a scalar component of inserting `diag(dvec)` at a junction of
/// the given type.
pub fn apply_diagonal_insertion(value: Complex64, junction_type: usize, dvec: &[Complex64]) -> Complex64 {
    value * dvec[junction_type]
}

pub trait TableKind: fmt::Debug + Clone + PartialEq + Default {
    const JSON_KEY: &'static str;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cumulants;

impl TableKind for Moments {
    const JSON_KEY: &'static str = "moments";
}

impl TableKind for Cumulants {
    const JSON_KEY: &'static str = "cumulants";
}

/// Finite map from square words to scalar components.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<K: TableKind> {
    alphabet: Alphabet,
    degree: usize,
    values: BTreeMap<Word, Complex64>,
    kind: PhantomData<K>,
}

pub type ScalarMomentTable = Table<Moments>;
pub type ScalarCumulantTable = Table<Cumulants>;

/// One failed consistency check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub word: String,
    pub partner: String,
    pub discrepancy: f64,
}

impl<K: TableKind> Table<K> {
    pub fn new(alphabet: Alphabet, degree: usize) -> Self {
        Table { alphabet, degree, values: BTreeMap::new(), kind: PhantomData }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn structure(&self) -> &BlockStructure {
        self.alphabet.structure()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word, &Complex64)> {
        self.values.iter()
    }

    /// Stores a value; rejects non-square words and words over the degree.
    pub fn insert(&mut self, w: &[Letter], v: Complex64) -> Result<()> {
        if w.is_empty() || w.len() > self.degree {
            return Err(Error::Validation(format!("word length {} outside 1..={}", w.len(), self.degree)));
        }
        if w.iter().any(|l| l.gen >= self.alphabet.gens().len()) {
            return Err(Error::Usage("letter references an undeclared generator".into()));
        }
        let w = self.alphabet.canonical(w);
        if !self.alphabet.is_square(&w) {
            return Err(Error::Validation(format!("word {:?} is not square", self.alphabet.word_string(&w))));
        }
        self.values.insert(w, v);
        Ok(())
    }

    pub fn get(&self, w: &[Letter]) -> Option<Complex64> {
        self.values.get(w).copied()
    }

    /// Value of any word: zero for chain-broken or non-square words, `None`
    /// when a square word is missing.
    pub fn value(&self, w: &[Letter]) -> Option<Complex64> {
        if !self.alphabet.is_square(w) {
            return Some(Complex64::new(0.0, 0.0));
        }
        self.values.get(w).copied()
    }

    pub fn value_str(&self, w: &str) -> Result<Complex64> {
        let w = self.alphabet.word(w)?;
        self.value(&w).ok_or_else(|| Error::Usage(format!("word {:?} not in table", self.alphabet.word_string(&w))))
    }

    /// Checks weighted cyclicity and star symmetry on all stored words.
    pub fn validate(&self) -> Vec<Violation> {
        let a = &self.alphabet;
        let rho = a.structure().rho();
        let mut out = Vec::new();
        for (w, &v) in &self.values {
            let chain = a.chain(w).expect("stored words are square");
            if w.len() > 1 {
                let mut rot = w[1..].to_vec();
                rot.push(w[0]);
                if let Some(&vr) = self.values.get(&rot) {
                    let gap = (v * rho[chain[0]] - vr * rho[chain[1]]).norm();
                    if gap > VALIDATION_TOL * (1.0 + v.norm().max(vr.norm())) {
                        out.push(Violation {
                            check: "cyclicity",
                            word: a.word_string(w),
                            partner: a.word_string(&rot),
                            discrepancy: gap,
                        });
                    }
                }
            }
            let ws = a.adjoint(w);
            if ws > *w {
                if let Some(&vs) = self.values.get(&ws) {
                    let gap = (v.conj() - vs).norm();
                    if gap > VALIDATION_TOL * (1.0 + v.norm()) {
                        out.push(Violation { check: "star", word: a.word_string(w), partner: a.word_string(&ws), discrepancy: gap });
                    }
                }
            } else if ws == *w && v.im.abs() > VALIDATION_TOL * (1.0 + v.norm()) {
                out.push(Violation { check: "star", word: a.word_string(w), partner: a.word_string(&ws), discrepancy: v.im.abs() });
            }
        }
        out
    }

    pub(crate) fn from_parts(alphabet: Alphabet, degree: usize, values: BTreeMap<Word, Complex64>) -> Self {
        Table { alphabet, degree, values, kind: PhantomData }
    }

    /// Same words and values, relabelled as the other table kind.
    pub fn reinterpret<L: TableKind>(self) -> Table<L> {
        Table { alphabet: self.alphabet, degree: self.degree, values: self.values, kind: PhantomData }
    }

    pub fn to_json_value(&self) -> Value {
        let a = &self.alphabet;
        let gens: Vec<Value> = a
            .gens()
            .iter()
            .map(|g| {
                let mut m = serde_json::Map::new();
                m.insert("name".into(), Value::from(g.name.clone()));
                m.insert("row".into(), Value::from(g.row + 1));
                m.insert("col".into(), Value::from(g.col + 1));
                if g.selfadjoint {
                    m.insert("selfadjoint".into(), Value::from(true));
                }
                Value::Object(m)
            })
            .collect();
        let mut entries: Vec<(&Word, &Complex64)> = self.values.iter().collect();
        entries.sort_by(|x, y| x.0.len().cmp(&y.0.len()).then_with(|| x.0.cmp(y.0)));
        let entries: Vec<Value> = entries
            .into_iter()
            .map(|(w, v)| serde_json::json!({"word": a.word_names(w), "value": [v.re, v.im]}))
            .collect();
        let mut root = serde_json::Map::new();
        root.insert("rho".into(), Value::from(a.structure().rho().to_vec()));
        root.insert("generators".into(), Value::Array(gens));
        root.insert("degree".into(), Value::from(self.degree));
        root.insert(K::JSON_KEY.into(), Value::Array(entries));
        Value::Object(root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("tables serialize")
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let doc: TableDoc = serde_json::from_value(v.clone()).map_err(|e| Error::Validation(format!("malformed table: {e}")))?;
        let structure = BlockStructure::new(doc.rho)?;
        let mut gens = Vec::with_capacity(doc.generators.len());
        for g in doc.generators {
            if g.row == 0 || g.col == 0 {
                return Err(Error::Validation(format!("generator {} uses 0 as a block index", g.name)));
            }
            gens.push(GeneratorDecl { name: g.name, row: g.row - 1, col: g.col - 1, selfadjoint: g.selfadjoint });
        }
        let alphabet = Alphabet::new(structure, gens)?;
        let entries = v
            .get(K::JSON_KEY)
            .ok_or_else(|| Error::Validation(format!("table has no {:?} array", K::JSON_KEY)))?;
        let entries: Vec<EntryDoc> =
            serde_json::from_value(entries.clone()).map_err(|e| Error::Validation(format!("malformed entries: {e}")))?;
        let mut t = Table::new(alphabet, doc.degree);
        for e in entries {
            let w = t.alphabet.parse_word(&e.word)?;
            if !(e.value[0].is_finite() && e.value[1].is_finite()) {
                return Err(Error::Validation("non-finite table value".into()));
            }
            t.insert(&w, Complex64::new(e.value[0], e.value[1]))?;
        }
        Ok(t)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::Validation(format!("invalid JSON: {e}")))?;
        Self::from_json_value(&v)
    }
}

#[derive(Deserialize)]
struct TableDoc {
    rho: Vec<f64>,
    generators: Vec<GeneratorDecl>,
    degree: usize,
}

#[derive(Deserialize)]
struct EntryDoc {
    word: Vec<String>,
    value: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn alphabet(rho: Vec<f64>, gens: Vec<GeneratorDecl>) -> Alphabet {
        Alphabet::new(BlockStructure::new(rho).unwrap(), gens).unwrap()
    }

    #[test]
    fn chains() {
        let a = alphabet(vec![0.5, 0.5], vec![GeneratorDecl::new("a", 0, 1), GeneratorDecl::new("b", 1, 1)]);
        assert_eq!(a.chain(&a.word("a a*").unwrap()), Some(vec![0, 1, 0]));
        assert_eq!(a.chain(&a.word("a a").unwrap()), None);
        assert_eq!(a.chain(&a.word("a b a*").unwrap()), Some(vec![0, 1, 1, 0]));
        assert!(a.is_square(&a.word("a b a*").unwrap()));
        assert!(a.word("c").is_err());
    }

    #[test]
    fn weights_validated() {
        assert!(BlockStructure::new(vec![0.5, 0.6]).is_err());
        assert!(BlockStructure::new(vec![1.0, 0.0]).is_err());
        assert_eq!(BlockStructure::new(vec![0.3, 0.7]).unwrap().block_sizes(10), vec![3, 7]);
        assert_eq!(BlockStructure::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap().block_sizes(100), vec![33, 67]);
    }

    #[test]
    fn hermitian_table_is_valid() {
        let a = alphabet(vec![1.0], vec![GeneratorDecl::hermitian("h", 0)]);
        let mut t = ScalarMomentTable::new(a.clone(), 2);
        t.insert(&a.word("h").unwrap(), c(0.0)).unwrap();
        t.insert(&a.word("h h").unwrap(), c(1.0)).unwrap();
        assert!(t.validate().is_empty());
        assert_eq!(a.word("h*").unwrap(), a.word("h").unwrap());
    }

    #[test]
    fn cyclicity_violation_is_named() {
        let (r1, r2) = (0.25, 0.75);
        let a = alphabet(vec![r1, r2], vec![GeneratorDecl::new("a", 0, 1)]);
        let lam = 2.0;
        let mut t = ScalarMomentTable::new(a.clone(), 2);
        t.insert(&a.word("a a*").unwrap(), c(lam)).unwrap();
        t.insert(&a.word("a* a").unwrap(), c(lam * r1 / r2)).unwrap();
        assert!(t.validate().is_empty());
        t.insert(&a.word("a* a").unwrap(), c(lam)).unwrap();
        let v = t.validate();
        assert!(!v.is_empty());
        assert!(v.iter().any(|x| x.check == "cyclicity" && x.word == "a a*" && x.partner == "a* a"));
    }

    #[test]
    fn insertion() {
        let one = vec![c(1.0); 3];
        assert_eq!(apply_diagonal_insertion(c(2.5), 1, &one), c(2.5));
        let p1 = vec![c(0.0), c(1.0), c(0.0)];
        assert_eq!(apply_diagonal_insertion(c(2.5), 1, &p1), c(2.5));
        assert_eq!(apply_diagonal_insertion(c(2.5), 2, &p1), c(0.0));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let a = alphabet(vec![0.5, 0.5], vec![GeneratorDecl::new("a", 0, 1)]);
        let mut t = ScalarMomentTable::new(a.clone(), 4);
        t.insert(&a.word("a a*").unwrap(), Complex64::new(0.1 + 0.2, -1e-17)).unwrap();
        t.insert(&a.word("a* a").unwrap(), c(1.0 / 3.0)).unwrap();
        let s = t.to_json();
        let back = ScalarMomentTable::from_json(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json(), s);
        assert!(ScalarCumulantTable::from_json(&s).is_err());
    }

    #[test]
    fn square_word_enumeration() {
        let a = alphabet(vec![0.5, 0.5], vec![GeneratorDecl::new("a", 0, 1)]);
        let ws = a.square_words(4);
        let names: Vec<String> = ws.iter().map(|w| a.word_string(w)).collect();
        assert_eq!(names, vec!["a a*", "a* a", "a a* a a*", "a* a a* a"]);
    }
}
