use policy_fusion::fusion::{
    fuse, normalized_entropy, ActionDistribution, FusionMethod, Members, SUM_TOLERANCE,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (
        prop::collection::vec(prop_oneof![3 => 1e-3..10.0f64, 1 => Just(0.0)], n),
        0..n,
    )
        .prop_map(|(mut w, k)| {
            w[k] += 0.5;
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
}

#[derive(Debug, Clone)]
struct Ensemble {
    main: Vec<f64>,
    subs: Vec<Vec<f64>>,
    active: Vec<bool>,
    eps: f64,
}

fn ensemble() -> impl Strategy<Value = Ensemble> {
    (2..=19usize, 1..=4usize).prop_flat_map(|(n, k)| {
        (
            weights(n),
            prop::collection::vec(weights(n), k),
            prop::collection::vec(any::<bool>(), k),
            0..k,
            -1.5..1.5f64,
        )
            .prop_map(|(main, subs, mut active, on, eps)| {
                active[on] = true;
                Ensemble { main, subs, active, eps }
            })
    })
}

fn d(p: &[f64]) -> ActionDistribution {
    ActionDistribution::new(p.to_vec()).unwrap()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>() / (p.len() as f64).ln()
}

fn run(e: &Ensemble, m: FusionMethod) -> Vec<f64> {
    let main = d(&e.main);
    let subs: Vec<ActionDistribution> = e.subs.iter().map(|s| d(s)).collect();
    fuse(m, e.eps, &Members::new(&main, &subs, &e.active).unwrap())
        .unwrap()
        .distribution
        .into_inner()
}

/// Minimum-entropy active sub-policy, first index on ties.
fn k_star(e: &Ensemble) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, s) in e.subs.iter().enumerate() {
        let h = entropy(s);
        if e.active[i] && h < best.1 {
            best = (i, h);
        }
    }
    best
}

fn active_subs(e: &Ensemble) -> impl Iterator<Item = &Vec<f64>> {
    e.subs.iter().zip(&e.active).filter(|x| *x.1).map(|x| x.0)
}

fn product_oracle(e: &Ensemble) -> Option<Vec<f64>> {
    let prod: Vec<f64> = (0..e.main.len())
        .map(|a| active_subs(e).fold(e.main[a], |acc, s| acc * s[a]))
        .collect();
    let z: f64 = prod.iter().sum();
    (z > 0.0).then(|| prod.iter().map(|x| x / z).collect())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn distinct_entropies(e: &Ensemble) -> bool {
    let hs: Vec<f64> = active_subs(e).map(|s| entropy(s)).collect();
    hs.iter()
        .enumerate()
        .all(|(i, a)| hs[i + 1..].iter().all(|b| (a - b).abs() > 1e-9))
}

fn permuted(e: &Ensemble, order: &[usize]) -> Ensemble {
    Ensemble {
        main: e.main.clone(),
        subs: order.iter().map(|&i| e.subs[i].clone()).collect(),
        active: order.iter().map(|&i| e.active[i]).collect(),
        eps: e.eps,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn outputs_are_distributions(e in ensemble()) {
        for m in FusionMethod::ALL {
            let out = run(&e, m);
            prop_assert!(out.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        }
    }

    #[test]
    fn ew_is_a_convex_combination(e in ensemble()) {
        let out = run(&e, FusionMethod::EntropyWeighted);
        let (k, hk) = k_star(&e);
        let sub = &e.subs[k];
        for a in 0..out.len() {
            prop_assert!(out[a] >= e.main[a].min(sub[a]) - 1e-15);
            prop_assert!(out[a] <= e.main[a].max(sub[a]) + 1e-15);
        }
        let direct: Vec<f64> = e.main.iter().zip(sub).map(|(p0, pk)| hk * p0 + (1.0 - hk) * pk).collect();
        prop_assert!(close(&out, &direct, 1e-12));
    }

    #[test]
    fn pp_matches_product_oracle(e in ensemble()) {
        let out = run(&e, FusionMethod::Product);
        match product_oracle(&e) {
            Some(want) => prop_assert!(close(&out, &want, 1e-12)),
            None => prop_assert_eq!(out, e.main.clone()),
        }
    }

    #[test]
    fn mp_matches_average(e in ensemble()) {
        let out = run(&e, FusionMethod::Mixture);
        let k = active_subs(&e).count() as f64;
        let want: Vec<f64> = (0..e.main.len())
            .map(|a| (e.main[a] + active_subs(&e).map(|s| s[a]).sum::<f64>()) / (k + 1.0))
            .collect();
        prop_assert!(close(&out, &want, 1e-12));
    }

    #[test]
    fn et_matches_rule(e in ensemble()) {
        let (k, hk) = k_star(&e);
        let h0 = entropy(&e.main);
        prop_assume!((hk - (h0 + e.eps)).abs() > 1e-12);
        let out = run(&e, FusionMethod::EntropyThreshold);
        let want = if hk < h0 + e.eps { &e.subs[k] } else { &e.main };
        prop_assert_eq!(&out, want);
    }

    #[test]
    fn et_extremes(e in ensemble(), big in 1.0001..10.0f64, small in -10.0..-1.0001f64) {
        let (k, _) = k_star(&e);
        let hi = Ensemble { eps: big, ..e.clone() };
        prop_assert_eq!(&run(&hi, FusionMethod::EntropyThreshold), &e.subs[k]);
        let lo = Ensemble { eps: small, ..e.clone() };
        prop_assert_eq!(&run(&lo, FusionMethod::EntropyThreshold), &e.main);
    }

    #[test]
    fn permutation_invariance(e in ensemble(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..e.subs.len()).collect();
        // Fisher-Yates driven by the generated seed.
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = permuted(&e, &order);
        for m in [FusionMethod::Mixture, FusionMethod::Product] {
            prop_assert!(close(&run(&e, m), &run(&p, m), 1e-12));
        }
        if distinct_entropies(&e) {
            for m in [FusionMethod::EntropyThreshold, FusionMethod::EntropyWeighted] {
                prop_assert!(close(&run(&e, m), &run(&p, m), 1e-12));
            }
        }
    }

    #[test]
    fn pp_self_sharpening(p in (2..=19usize).prop_flat_map(weights), m in 1..=4usize) {
        let mut last = f64::INFINITY;
        for copies in 1..=m {
            // `copies` identical factors: the main policy plus copies - 1 subs.
            let e = Ensemble { main: p.clone(), subs: vec![p.clone(); copies.max(2) - 1], active: vec![true; copies.max(2) - 1], eps: 0.0 };
            let out = if copies == 1 { p.clone() } else { run(&e, FusionMethod::Product) };
            let pow: Vec<f64> = p.iter().map(|x| x.powi(copies as i32)).collect();
            let z: f64 = pow.iter().sum();
            prop_assert!(close(&out, &pow.iter().map(|x| x / z).collect::<Vec<_>>(), 1e-12));
            let h = normalized_entropy(&d(&out)).value();
            prop_assert!(h <= last + 1e-12);
            last = h;
        }
    }

    #[test]
    fn entropy_properties(p in (2..=19usize).prop_flat_map(weights), rot in 0..19usize) {
        let n = p.len();
        let mut q = p.clone();
        q.rotate_left(rot % n);
        q.reverse();
        let (hp, hq) = (normalized_entropy(&d(&p)).value(), normalized_entropy(&d(&q)).value());
        prop_assert!((hp - hq).abs() <= 1e-12);
        prop_assert!((hp - entropy(&p)).abs() <= 1e-12);
        let uniform = p.iter().all(|&x| (x - 1.0 / n as f64).abs() < 1e-9);
        let one_hot = p.iter().filter(|&&x| x > 0.0).count() == 1;
        if !uniform {
            prop_assert!(hp < 1.0);
        }
        if !one_hot {
            prop_assert!(hp > 0.0);
        }
    }
}

#[test]
fn boundary_identities() {
    for n in 2..=19 {
        let u = ActionDistribution::uniform(n).unwrap();
        assert!((normalized_entropy(&u).value() - 1.0).abs() <= 1e-12);
        for i in 0..n {
            let hot = ActionDistribution::one_hot(n, i).unwrap();
            assert_eq!(normalized_entropy(&hot).value(), 0.0);
        }
    }
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..1000 {
        let p = (2..=19usize).prop_flat_map(weights).new_tree(&mut runner).unwrap().current();
        let q = weights(p.len()).new_tree(&mut runner).unwrap().current();
        let n = p.len();
        let uniform = vec![1.0 / n as f64; n];
        let hot: Vec<f64> = (0..n).map(|i| (i == n / 2) as u8 as f64).collect();
        let one = |main: &[f64], sub: &[f64], m| {
            run(&Ensemble { main: main.to_vec(), subs: vec![sub.to_vec()], active: vec![true], eps: 0.0 }, m)
        };
        assert!(close(&one(&p, &uniform, FusionMethod::EntropyWeighted), &p, 1e-12));
        assert!(close(&one(&p, &hot, FusionMethod::EntropyWeighted), &hot, 1e-12));
        assert!(close(&one(&p, &p, FusionMethod::Mixture), &p, 1e-12));
        assert!(close(&one(&q, &uniform, FusionMethod::Product), &q, 1e-12));
    }
}

#[test]
fn et_boundary_is_strict() {
    let hot = |n, i| ActionDistribution::one_hot(n, i).unwrap();
    let cases = [
        // H_k* = 0 = H_0 + 0.
        (hot(5, 0), hot(5, 3), 0.0, 1e-300),
        // H_k* = 0 = H_0 - 1 with a uniform main policy over two actions.
        (ActionDistribution::uniform(2).unwrap(), hot(2, 1), -1.0, -1.0 + f64::EPSILON),
    ];
    for (main, sub, at, past) in cases {
        let subs = [sub.clone()];
        let m = Members::new(&main, &subs, &[true]).unwrap();
        assert_eq!(fuse(FusionMethod::EntropyThreshold, at, &m).unwrap().distribution, main);
        assert_eq!(fuse(FusionMethod::EntropyThreshold, past, &m).unwrap().distribution, sub);
    }
}
