use num_complex::Complex64;
use rectfree::cumulant::single_generator_moments;
use rectfree::dblock::*;
use rectfree::fisher::*;
use rectfree::measures::GridMeasure;
use rectfree::ncpart;

fn structure(rk: f64, rl: f64) -> BlockStructure {
    BlockStructure::new(vec![rk, rl]).unwrap()
}

/// Moments of `s * MP(lambda)` by Narayana sums over NC(n).
fn mp_moments(lambda: f64, s: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|n| {
            if n == 0 {
                1.0
            } else {
                let lat = ncpart::lattice(n).unwrap();
                s.powi(n as i32) * lat.partitions.iter().map(|p| lambda.powi(p.len() as i32)).sum::<f64>()
            }
        })
        .collect()
}

fn table(rk: f64, rl: f64, name: &str, mu: &[f64]) -> ScalarMomentTable {
    single_generator_moments(&structure(rk, rl), GeneratorDecl::new(name, 0, 1), mu).unwrap()
}

fn measure_moments(mu: &GridMeasure, n_max: usize) -> Vec<f64> {
    (0..=n_max).map(|n| mu.moment(n as u32)).collect()
}

const WEIGHTS: [(f64, f64); 3] = [(0.5, 0.5), (1.0 / 3.0, 2.0 / 3.0), (0.25, 0.75)];

#[test]
fn mp_candidates_satisfy_all_forms_and_equality() {
    for (rk, rl) in WEIGHTS {
        for s in [1.0, 0.7] {
            let t = table(rk, rl, "a", &mp_moments(rl / rk, s, 7));
            let c = build_mp_conjugate(&t, 8).unwrap();
            for form in Form::ALL {
                let r = check_conjugate_relations(&c, 8, form).unwrap();
                assert!(r.max_violation < 1e-10, "{form:?} {r:?}");
            }
            let cr = cramer_rao(&c, 8).unwrap();
            assert!(cr.slack.abs() <= 1e-8, "{cr:?}");
            assert!((cr.rhs - (rk * rk + rl * rl)).abs() < 1e-15);
        }
    }
}

#[test]
fn mp_coefficient_examples() {
    let t = table(0.5, 0.5, "a", &mp_moments(1.0, 1.0, 4));
    let c = build_mp_conjugate(&t, 8).unwrap();
    assert_eq!(c.entries()[0].coef, 1.0);
    let xi = c.joint().value_str("xi_a a").unwrap();
    assert!((xi.re - 1.0).abs() < 1e-15);

    let s = 0.8;
    let t = table(1.0 / 3.0, 2.0 / 3.0, "a", &mp_moments(2.0, s, 4));
    let c = build_mp_conjugate(&t, 8).unwrap();
    let coef = c.joint().value_str("xi_a a").unwrap().re / t.value_str("a* a").unwrap().re;
    assert!((coef - 1.0 / s).abs() < 1e-12);

    let doubled = table(1.0 / 3.0, 2.0 / 3.0, "a", &mp_moments(2.0, 4.0 * s, 4));
    let c2 = build_mp_conjugate(&doubled, 8).unwrap();
    let coef2 = c2.joint().value_str("xi_a a").unwrap().re / doubled.value_str("a* a").unwrap().re;
    assert!((coef2 - coef / 4.0).abs() < 1e-12);
}

#[test]
fn low_order_relations() {
    let t = table(0.25, 0.75, "a", &mp_moments(3.0, 1.0, 4));
    let c = build_mp_conjugate(&t, 8).unwrap();
    // n = 1: phi(xi a) = 1
    assert!((c.joint().value_str("xi_a a").unwrap().re - 1.0).abs() < 1e-14);
    // a square conjugate letter must be centered
    let s = BlockStructure::new(vec![1.0]).unwrap();
    let alpha = Alphabet::new(s, vec![GeneratorDecl::hermitian("h", 0), GeneratorDecl::hermitian("xi", 0)]).unwrap();
    let mut joint = ScalarMomentTable::new(alpha.clone(), 2);
    joint.insert(&alpha.word("h").unwrap(), Complex64::new(0.0, 0.0)).unwrap();
    joint.insert(&alpha.word("h h").unwrap(), Complex64::new(1.0, 0.0)).unwrap();
    joint.insert(&alpha.word("xi").unwrap(), Complex64::new(0.3, 0.0)).unwrap();
    joint.insert(&alpha.word("xi h").unwrap(), Complex64::new(1.0, 0.0)).unwrap();
    joint.insert(&alpha.word("xi xi").unwrap(), Complex64::new(1.0, 0.0)).unwrap();
    let c = ConjugateCandidate::new(joint, &["xi"]).unwrap();
    for form in Form::ALL {
        let r = check_conjugate_relations(&c, 2, form).unwrap();
        assert!((r.max_violation - 0.3).abs() < 1e-15, "{form:?}");
        assert_eq!(r.witness.as_deref(), Some(&["xi[h]".to_string()][..]));
    }
}

#[test]
fn semicircle_conjugate_is_itself() {
    // A standard semicircular h has conjugate variable h.
    let s = BlockStructure::new(vec![1.0]).unwrap();
    let h = rectfree::cumulant::semicircular_cumulants(&s, "h", 0, 1.0, 8).unwrap();
    let m = rectfree::cumulant::cumulants_to_moments(&h).unwrap();
    let poly = XiPolynomial { name: "xi".into(), terms: vec![(1.0, m.alphabet().word("h").unwrap())] };
    let joint = substitute_joint(&m, &[poly], 7).unwrap();
    let c = ConjugateCandidate::new(joint, &["xi"]).unwrap();
    for form in Form::ALL {
        assert!(check_conjugate_relations(&c, 7, form).unwrap().max_violation < 1e-12);
    }
    assert!((fisher_info(&c, 7).unwrap().phi_r.to_f64() - 1.0).abs() < 1e-12);
}

fn tilted_family() -> Vec<GridMeasure> {
    let mut out = Vec::new();
    for (i, eps) in [0.2, 0.35, 0.5].iter().enumerate() {
        for freq in [1.0, 2.0, 3.0] {
            out.push(tilted_mp(3.0, 1.0, *eps * if i % 2 == 0 { 1.0 } else { -1.0 }, freq, 2000).unwrap());
        }
    }
    out.push(tilted_mp(3.0, 1.0, 0.4, 0.5, 2000).unwrap());
    out
}

#[test]
fn non_mp_inputs_have_strict_slack() {
    let (rk, rl) = (0.25, 0.75);
    for (i, mu) in tilted_family().iter().enumerate() {
        let t = table(rk, rl, "a", &measure_moments(mu, 7));
        let proj = projected_conjugate(&t, 8).unwrap();
        for form in Form::ALL {
            assert!(check_conjugate_relations(&proj, 8, form).unwrap().passes(), "{i} {form:?}");
        }
        let cr = cramer_rao(&proj, 8).unwrap();
        assert!(cr.slack > 1e-4, "{i}: {cr:?}");
        // the MP-shaped candidate no longer fulfills the relations
        let mp_like = build_mp_conjugate(&t, 8).unwrap();
        let f = fisher_info(&mp_like, 8).unwrap();
        assert_eq!(f.phi_r, FisherValue::Infinite);
        for form in Form::ALL {
            assert!(!check_conjugate_relations(&mp_like, 8, form).unwrap().passes(), "{i} {form:?}");
        }
    }
}

#[test]
fn uniform_law_has_positive_slack() {
    let mu = GridMeasure::uniform(0.0, 2.0).unwrap();
    let t = table(0.4, 0.6, "a", &measure_moments(&mu, 7));
    let cr = cramer_rao(&projected_conjugate(&t, 8).unwrap(), 8).unwrap();
    assert!(cr.slack > 0.0);
}

#[test]
fn projection_reproduces_mp_conjugate() {
    let t = table(0.25, 0.75, "a", &mp_moments(3.0, 1.0, 7));
    let x = projected_coefficients(&t, 8).unwrap();
    // phi_l(a*a) = (rho_k / rho_l) * 3 = 1
    assert!((x[0] - 1.0).abs() < 1e-10, "{x:?}");
    assert!(x[1..].iter().all(|v| v.abs() < 1e-10), "{x:?}");
}

#[test]
fn slack_is_scale_invariant() {
    for mu in tilted_family().iter().take(3) {
        let base = measure_moments(mu, 7);
        let t1 = table(0.25, 0.75, "a", &base);
        let lam: f64 = 1.7;
        let scaled: Vec<f64> = base.iter().enumerate().map(|(n, m)| m * lam.powi(2 * n as i32)).collect();
        let t2 = table(0.25, 0.75, "a", &scaled);
        let c1 = projected_conjugate(&t1, 8).unwrap();
        let c2 = projected_conjugate(&t2, 8).unwrap();
        let f1 = fisher_info(&c1, 8).unwrap().phi_r.to_f64();
        let f2 = fisher_info(&c2, 8).unwrap().phi_r.to_f64();
        assert!((f2 * lam * lam - f1).abs() < 1e-10 * f1);
        let s1 = cramer_rao(&c1, 8).unwrap().slack;
        let s2 = cramer_rao(&c2, 8).unwrap().slack;
        assert!((s1 - s2).abs() < 1e-10, "{s1} {s2}");
    }
}

#[test]
fn forms_agree_on_valid_candidates_and_on_failure() {
    let mut cands = Vec::new();
    for (rk, rl) in WEIGHTS {
        cands.push(build_mp_conjugate(&table(rk, rl, "a", &mp_moments(rl / rk, 1.3, 7)), 8).unwrap());
    }
    for mu in tilted_family().iter().take(4) {
        let t = table(0.25, 0.75, "a", &measure_moments(mu, 7));
        cands.push(projected_conjugate(&t, 8).unwrap());
        cands.push(build_mp_conjugate(&t, 8).unwrap());
    }
    for c in &cands {
        let v: Vec<RelationReport> = Form::ALL.iter().map(|f| check_conjugate_relations(c, 8, *f).unwrap()).collect();
        assert!(v.iter().all(|r| r.passes() == v[0].passes()), "{v:?}");
        if v[0].passes() {
            for r in &v {
                assert!((r.max_violation - v[0].max_violation).abs() < 1e-9);
            }
        }
        // form (ii) is (i) read coordinate-wise
        assert!((v[0].max_violation - v[1].max_violation).abs() < 1e-12);
        assert_eq!(v[0].checked, v[2].checked);
    }
}

#[test]
fn star_pairing_never_hurts() {
    let t = table(0.25, 0.75, "a", &measure_moments(&tilted_family()[1], 7));
    let x = projected_coefficients(&t, 8).unwrap();
    let alpha = t.alphabet();
    let term = |j: usize| -> Word {
        let mut w = Vec::new();
        for _ in 0..j {
            w.extend(alpha.word("a* a").unwrap());
        }
        w.extend(alpha.word("a*").unwrap());
        w
    };
    let xi = XiPolynomial { name: "xi".into(), terms: x.iter().enumerate().map(|(j, c)| (*c, term(j))).collect() };
    // eta plays xi_{a*} and is deliberately off: a multiple of a
    let eta = XiPolynomial { name: "eta".into(), terms: vec![(0.2, alpha.word("a").unwrap())] };
    let joint = substitute_joint(&t, &[xi, eta], 8).unwrap();
    let free_choice = ConjugateCandidate::with_pairs(joint.clone(), &[("a", "xi", 1.0), ("a*", "eta", 1.0)]).unwrap();
    let paired = ConjugateCandidate::with_pairs(joint, &[("a", "xi", 1.0), ("a*", "xi*", 0.25 / 0.75)]).unwrap();
    for form in Form::ALL {
        let before = check_conjugate_relations(&free_choice, 8, form).unwrap().max_violation;
        let after = check_conjugate_relations(&paired, 8, form).unwrap().max_violation;
        assert!(after <= before, "{form:?}: {after} > {before}");
        assert!(after < 1e-8);
    }
}

#[test]
fn additivity_for_free_mp_pair() {
    for (rk, rl) in WEIGHTS {
        let lambda = rl / rk;
        let x = build_mp_conjugate(&table(rk, rl, "x", &mp_moments(lambda, 1.0, 4)), 8).unwrap();
        let y = build_mp_conjugate(&table(rk, rl, "y", &mp_moments(lambda, 0.6, 4)), 8).unwrap();
        let rep = fisher_additivity_check(&x, &y, 8).unwrap();
        assert!(rep.joint_relations.passes(), "{rep:?}");
        assert!(rep.slack.abs() < 1e-8, "{rep:?}");
    }
}

#[test]
fn duplicated_marginal_breaks_joint_relations() {
    let (rk, rl) = (0.25, 0.75);
    let x = build_mp_conjugate(&table(rk, rl, "x", &mp_moments(3.0, 1.0, 4)), 8).unwrap();
    let y = build_mp_conjugate(&table(rk, rl, "y", &mp_moments(3.0, 1.0, 4)), 8).unwrap();
    let free = free_joint_candidate(&x, &y, 8).unwrap();
    // y := x, so the joint law is fully dependent
    let alpha = free.joint().alphabet().clone();
    let fold = |w: &[Letter]| -> Word { w.iter().map(|l| Letter::new(l.gen % 2, l.star)).collect() };
    let mut dup = ScalarMomentTable::new(alpha, 8);
    for (w, _) in free.joint().iter() {
        dup.insert(w, x.joint().value(&fold(w)).unwrap()).unwrap();
    }
    let joint = ConjugateCandidate::from_entries(dup, free.entries().to_vec()).unwrap();
    let rep = additivity_from_joint(&joint, &[&x, &y], 8).unwrap();
    assert_eq!(rep.phi_joint, FisherValue::Infinite);
    assert!(rep.slack.is_infinite() && rep.slack > 0.0);
    assert!(!rep.joint_relations.passes());
}

#[test]
fn null_elements_rejected() {
    let zero = table(0.25, 0.75, "a", &[1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(matches!(build_mp_conjugate(&zero, 8), Err(rectfree::Error::Precondition(_))));
    let x = build_mp_conjugate(&table(0.25, 0.75, "x", &mp_moments(3.0, 1.0, 4)), 8).unwrap();
    let zero_y = {
        let t = table(0.25, 0.75, "y", &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let poly = XiPolynomial { name: "xi_y".into(), terms: vec![(1.0, t.alphabet().word("y*").unwrap())] };
        ConjugateCandidate::new(substitute_joint(&t, &[poly], 8).unwrap(), &["xi_y"]).unwrap()
    };
    assert!(matches!(fisher_additivity_check(&x, &zero_y, 8), Err(rectfree::Error::Precondition(_))));
    assert!(matches!(cramer_rao(&zero_y, 8), Err(rectfree::Error::Precondition(_))));
}

#[test]
fn report_serializes_sentinel() {
    let t = table(0.25, 0.75, "a", &measure_moments(&tilted_family()[0], 7));
    let c = build_mp_conjugate(&t, 8).unwrap();
    let cr = cramer_rao(&c, 8).unwrap();
    let v = serde_json::to_value(&cr).unwrap();
    assert_eq!(v["phi_r"], "inf");
    assert_eq!(v["slack"], "inf");
}
