use std::collections::BTreeSet;

use proptest::prelude::*;
use rectfree::ncpart::*;

/// All set partitions of [n] as restricted-growth strings.
fn all_set_partitions(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, cur: &mut Vec<u8>, max: u8, out: &mut Vec<Vec<u8>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max {
            cur.push(l);
            rec(n, cur, if l == max { max + 1 } else { max }, out);
            cur.pop();
        }
    }
    rec(n, &mut cur, 0, &mut out);
    out
}

fn crossing_bruteforce(r: &[u8]) -> bool {
    let n = r.len();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    if r[a] == r[c] && r[b] == r[d] && r[a] != r[b] {
                        return true;
                    }
                }
            }
        }
    }
    false
}

#[test]
fn enumeration_matches_bruteforce_filter() {
    for n in 1..=8 {
        let oracle: BTreeSet<Vec<u8>> =
            all_set_partitions(n).into_iter().filter(|r| !crossing_bruteforce(r)).collect();
        let got: Vec<Vec<u8>> = enumerate_nc(n).unwrap().iter().map(Partition::rgs).collect();
        let got_set: BTreeSet<Vec<u8>> = got.iter().cloned().collect();
        assert_eq!(got.len(), got_set.len(), "duplicates at n={n}");
        assert_eq!(got_set, oracle, "n={n}");
    }
}

#[test]
fn is_noncrossing_matches_bruteforce() {
    for n in 1..=7 {
        for r in all_set_partitions(n) {
            assert_eq!(is_noncrossing(&Partition::from_rgs(&r)), !crossing_bruteforce(&r));
        }
    }
}

#[test]
fn counts_are_catalan() {
    let known = [1u64, 1, 2, 5, 14, 42, 132, 429, 1430, 4862, 16796, 58786, 208012];
    for n in 1..=12 {
        assert_eq!(count_nc(n).unwrap(), known[n]);
        assert_eq!(catalan(n), known[n]);
    }
}

#[test]
fn mobius_bottom_top_is_signed_catalan() {
    let mut cache = MobiusCache::new();
    for n in 1..=6 {
        let expected = if n % 2 == 1 { 1 } else { -1 } * catalan(n - 1) as i64;
        assert_eq!(cache.mobius(&Partition::bottom(n), &Partition::top(n)).unwrap(), expected);
    }
    for n in 1..=8 {
        let lat = lattice(n).unwrap();
        let i = lat.partitions.iter().position(|p| p.len() == n).unwrap();
        let expected = if n % 2 == 1 { 1 } else { -1 } * catalan(n - 1) as i64;
        assert_eq!(lat.mobius_to_top[i], expected);
    }
}

#[test]
fn mobius_defining_sum_vanishes() {
    let mut cache = MobiusCache::new();
    for n in 1..=5 {
        let all = enumerate_nc(n).unwrap();
        for s in &all {
            for p in &all {
                if !leq(s, p).unwrap() {
                    continue;
                }
                let mut sum = 0;
                for t in &all {
                    if leq(s, t).unwrap() && leq(t, p).unwrap() {
                        sum += cache.mobius(t, p).unwrap();
                    }
                }
                assert_eq!(sum, i64::from(s == p));
            }
        }
    }
}

#[test]
fn lattice_mobius_sums_to_delta() {
    for n in 1..=7 {
        let lat = lattice(n).unwrap();
        for s in &lat.partitions {
            let sum: i64 = lat
                .partitions
                .iter()
                .zip(&lat.mobius_to_top)
                .filter(|(t, _)| leq(s, t).unwrap())
                .map(|(_, m)| m)
                .sum();
            assert_eq!(sum, i64::from(s.len() == 1), "{s}");
        }
    }
}

#[test]
fn leq_is_partial_order() {
    for n in 1..=6 {
        let all = enumerate_nc(n).unwrap();
        for a in &all {
            assert!(leq(a, a).unwrap());
            for b in &all {
                let ab = leq(a, b).unwrap();
                if ab && leq(b, a).unwrap() {
                    assert_eq!(a, b);
                }
                if !ab {
                    continue;
                }
                for c in &all {
                    if leq(b, c).unwrap() {
                        assert!(leq(a, c).unwrap());
                    }
                }
            }
        }
    }
}

#[test]
fn every_partition_has_an_interval_block() {
    for n in 1..=7 {
        for p in enumerate_nc(n).unwrap() {
            assert!(p.has_interval_block(), "{p}");
        }
    }
}

proptest! {
    #[test]
    fn canonical_form_is_order_independent(n in 1usize..9, seed in any::<u64>()) {
        let all = enumerate_nc(n).unwrap();
        let p = &all[(seed as usize) % all.len()];
        let mut blocks: Vec<Vec<usize>> = p.blocks().iter().rev().map(|b| b.iter().rev().copied().collect()).collect();
        let k = (seed as usize / 7) % blocks.len();
        blocks.rotate_left(k);
        prop_assert_eq!(&Partition::new(n, blocks).unwrap(), p);
    }
}
