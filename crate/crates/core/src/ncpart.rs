//! Noncrossing partitions of `[n]`: enumeration, refinement order and the
//! Möbius function of the lattice.
//!
//! Elements are 0-based internally; `Display` prints them 1-based.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest `n` accepted by [`enumerate_nc`].
pub const MAX_NC: usize = 14;

/// A set partition of `{0..n}` in canonical form: blocks sorted ascending,
/// ordered by their minima.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from arbitrary blocks, validating the cover and
    /// canonicalizing the order.
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("partition of an empty set".into()));
        }
        let mut seen = vec![false; n];
        let mut blocks = blocks;
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::Validation("empty block".into()));
            }
            b.sort_unstable();
            for &x in b.iter() {
                if x >= n {
                    return Err(Error::Validation(format!("element {} outside [1,{n}]", x + 1)));
                }
                if seen[x] {
                    return Err(Error::Validation(format!("element {} appears twice", x + 1)));
                }
                seen[x] = true;
            }
        }
        if let Some(x) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("element {} not covered", x + 1)));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Partition { n, blocks })
    }

    /// Same as [`Partition::new`] but with 1-based elements.
    pub fn from_one_based(n: usize, blocks: &[&[usize]]) -> Result<Self> {
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let mut v = Vec::with_capacity(b.len());
            for &x in b.iter() {
                if x == 0 {
                    return Err(Error::Validation("element 0 in a 1-based partition".into()));
                }
                v.push(x - 1);
            }
            out.push(v);
        }
        Self::new(n, out)
    }

    /// Decodes a restricted-growth string (block label of each element).
    pub fn from_rgs(rgs: &[u8]) -> Self {
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in rgs.iter().enumerate() {
            let l = l as usize;
            if l == blocks.len() {
                blocks.push(Vec::new());
            }
            blocks[l].push(i);
        }
        Partition { n: rgs.len(), blocks }
    }

    pub fn bottom(n: usize) -> Self {
        Partition { n, blocks: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn top(n: usize) -> Self {
        Partition { n, blocks: vec![(0..n).collect()] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Restricted-growth string: the canonical key of the partition.
    pub fn rgs(&self) -> Vec<u8> {
        let mut r = vec![0u8; self.n];
        for (bi, b) in self.blocks.iter().enumerate() {
            for &x in b {
                r[x] = bi as u8;
            }
        }
        r
    }

    /// True when some block is an interval `{k, k+1, ..., l}`.
    pub fn has_interval_block(&self) -> bool {
        self.blocks.iter().any(|b| b[b.len() - 1] - b[0] + 1 == b.len())
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (j, x) in b.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", x + 1)?;
            }
            write!(f, "}}")?;
        }
        write!(f, "}}")
    }
}

fn crosses(a: &[usize], b: &[usize]) -> bool {
    // a and b cross iff some element of b lies strictly between two
    // consecutive elements of a while another element of b lies outside.
    for w in a.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let inside = b.iter().any(|&x| lo < x && x < hi);
        let outside = b.iter().any(|&x| x < lo || x > hi);
        if inside && outside {
            return true;
        }
    }
    false
}

/// Decides whether no two blocks of `p` cross.
pub fn is_noncrossing(p: &Partition) -> bool {
    let bs = &p.blocks;
    for i in 0..bs.len() {
        for j in (i + 1)..bs.len() {
            if crosses(&bs[i], &bs[j]) {
                return false;
            }
        }
    }
    true
}

fn check_cap(n: usize) -> Result<()> {
    if n == 0 || n > MAX_NC {
        return Err(Error::Capacity(format!("n = {n} outside 1..={MAX_NC}")));
    }
    Ok(())
}

/// Visits every noncrossing partition of `[n]` as a restricted-growth string,
/// in a fixed order.
///
/// Open blocks are kept on a stack ordered by their last element; joining a
/// block closes every block above it.
pub fn for_each_nc_rgs<F: FnMut(&[u8])>(n: usize, mut visit: F) -> Result<()> {
    check_cap(n)?;
    fn rec<F: FnMut(&[u8])>(i: usize, n: usize, rgs: &mut Vec<u8>, stack: &mut Vec<u8>, nb: u8, visit: &mut F) {
        if i == n {
            visit(rgs);
            return;
        }
        for pos in 0..stack.len() {
            let b = stack[pos];
            let saved: Vec<u8> = stack[pos + 1..].to_vec();
            stack.truncate(pos + 1);
            rgs.push(b);
            rec(i + 1, n, rgs, stack, nb, visit);
            rgs.pop();
            stack.extend_from_slice(&saved);
        }
        stack.push(nb);
        rgs.push(nb);
        rec(i + 1, n, rgs, stack, nb + 1, visit);
        rgs.pop();
        stack.pop();
    }
    let mut rgs = Vec::with_capacity(n);
    let mut stack = Vec::with_capacity(n);
    rec(0, n, &mut rgs, &mut stack, 0, &mut visit);
    Ok(())
}

/// All noncrossing partitions of `[n]`, canonical and without duplicates.
pub fn enumerate_nc(n: usize) -> Result<Vec<Partition>> {
    let mut out = Vec::new();
    for_each_nc_rgs(n, |r| out.push(Partition::from_rgs(r)))?;
    Ok(out)
}

/// Number of noncrossing partitions, counted without materializing them.
pub fn count_nc(n: usize) -> Result<u64> {
    let mut c = 0u64;
    for_each_nc_rgs(n, |_| c += 1)?;
    Ok(c)
}

/// Catalan number `C_n`.
pub fn catalan(n: usize) -> u64 {
    let mut c: u64 = 1;
    for k in 0..n as u64 {
        c = c * 2 * (2 * k + 1) / (k + 2);
    }
    c
}

/// Refinement order: every block of `sigma` lies inside a block of `pi`.
pub fn leq(sigma: &Partition, pi: &Partition) -> Result<bool> {
    if sigma.n != pi.n {
        return Err(Error::Usage(format!("partitions of different sizes {} and {}", sigma.n, pi.n)));
    }
    Ok(leq_unchecked(&sigma.rgs(), &pi.rgs()))
}

fn leq_unchecked(s: &[u8], p: &[u8]) -> bool {
    // sigma <= pi iff the pi label is constant on every sigma block.
    let mut label = [u8::MAX; MAX_NC + 2];
    for (i, &b) in s.iter().enumerate() {
        let b = b as usize;
        if label[b] == u8::MAX {
            label[b] = p[i];
        } else if label[b] != p[i] {
            return false;
        }
    }
    true
}

/// Memoized Möbius function of `NC(n)` computed from its defining recursion
/// `mu(s, p) = -sum_{s < t <= p} mu(t, p)`.
#[derive(Debug, Default, Clone)]
pub struct MobiusCache {
    memo: HashMap<(Vec<u8>, Vec<u8>), i64>,
    lattices: HashMap<usize, Vec<Vec<u8>>>,
}

impl MobiusCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of memoized pairs.
    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }

    fn lattice(&mut self, n: usize) -> Result<&Vec<Vec<u8>>> {
        if !self.lattices.contains_key(&n) {
            let mut all = Vec::new();
            for_each_nc_rgs(n, |r| all.push(r.to_vec()))?;
            self.lattices.insert(n, all);
        }
        Ok(&self.lattices[&n])
    }

    pub fn mobius(&mut self, sigma: &Partition, pi: &Partition) -> Result<i64> {
        if !leq(sigma, pi)? {
            return Err(Error::Domain(format!("{sigma} is not below {pi}")));
        }
        if !is_noncrossing(sigma) || !is_noncrossing(pi) {
            return Err(Error::Domain("Möbius function requested outside NC(n)".into()));
        }
        let n = sigma.n;
        let s = sigma.rgs();
        let p = pi.rgs();
        let interval: Vec<Vec<u8>> = self
            .lattice(n)?
            .iter()
            .filter(|t| leq_unchecked(&s, t) && leq_unchecked(t, &p))
            .cloned()
            .collect();
        Ok(self.mobius_rgs(&s, &p, &interval))
    }

    fn mobius_rgs(&mut self, s: &[u8], p: &[u8], interval: &[Vec<u8>]) -> i64 {
        if s == p {
            return 1;
        }
        if let Some(&v) = self.memo.get(&(s.to_vec(), p.to_vec())) {
            return v;
        }
        let upper: Vec<Vec<u8>> = interval.iter().filter(|t| t.as_slice() != s && leq_unchecked(s, t)).cloned().collect();
        let mut acc = 0i64;
        for t in &upper {
            acc -= self.mobius_rgs(t, p, &upper);
        }
        self.memo.insert((s.to_vec(), p.to_vec()), acc);
        acc
    }
}

/// `NC(n)` together with `mu(sigma, 1_n)` for every member, in enumeration order.
#[derive(Debug)]
pub struct NcLattice {
    pub partitions: Vec<Partition>,
    pub mobius_to_top: Vec<i64>,
}

/// Shared, lazily built lattice for each `n <= MAX_NC`.
pub fn lattice(n: usize) -> Result<&'static NcLattice> {
    check_cap(n)?;
    static CELLS: [OnceLock<NcLattice>; MAX_NC + 1] = [const { OnceLock::new() }; MAX_NC + 1];
    Ok(CELLS[n].get_or_init(|| {
        let partitions = enumerate_nc(n).expect("within cap");
        let rgs: Vec<Vec<u8>> = partitions.iter().map(Partition::rgs).collect();
        // Coarse to fine: every strict upper bound has fewer blocks.
        let mut order: Vec<usize> = (0..partitions.len()).collect();
        order.sort_by_key(|&i| partitions[i].len());
        let mut mu = vec![0i64; partitions.len()];
        for (pos, &i) in order.iter().enumerate() {
            if partitions[i].len() == 1 {
                mu[i] = 1;
                continue;
            }
            let mut acc = 0i64;
            for &j in &order[..pos] {
                if partitions[j].len() < partitions[i].len() && leq_unchecked(&rgs[i], &rgs[j]) {
                    acc -= mu[j];
                }
            }
            mu[i] = acc;
        }
        NcLattice { partitions, mobius_to_top: mu }
    }))
}
