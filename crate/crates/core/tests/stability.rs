use dtfn_core::birth_death::{bd_kstar, bd_metrics, BDParams};
use dtfn_core::{check_a4, lambda_sequence, policy_metrics, q_row_zero, DistortionSpec, MarkovSource};

#[test]
fn large_threshold_near_one() {
    let s = MarkovSource::birth_death(0.3).unwrap();
    let d = DistortionSpec::Absolute;
    let g = policy_metrics(&s, &d, 500, 0.999).unwrap();
    let (cd, cn) = bd_metrics(&BDParams::new(0.3, 0.999).unwrap(), 500);
    assert!((g.d - cd).abs() < 1e-9 * cd, "{} vs {cd}", g.d);
    assert!((g.n - cn).abs() < 1e-9 * cn, "{} vs {cn}", g.n);
    let y = q_row_zero(&s, 500, 0.999).unwrap();
    assert!(y.iter().all(|&v| v > 0.0 && v.is_finite()));
}

#[test]
fn continuity_as_beta_rises() {
    let s = MarkovSource::birth_death(0.3).unwrap();
    let d = DistortionSpec::Absolute;
    for k in [1, 3, 10] {
        let avg = policy_metrics(&s, &d, k, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for beta in [0.99, 0.999, 0.9999, 0.99999] {
            let g = policy_metrics(&s, &d, k, beta).unwrap();
            let gap = (g.d - avg.d).abs() + (g.n - avg.n).abs();
            assert!(gap < prev, "k={k} beta={beta}");
            prev = gap;
        }
        assert!(prev < 1e-3, "k={k} gap {prev}");
    }
    let l1 = lambda_sequence(&s, &d, 1.0, 6).unwrap();
    let l2 = lambda_sequence(&s, &d, 0.99999, 6).unwrap();
    for (a, b) in l1.iter().zip(&l2) {
        assert!((a - b).abs() < 1e-3 * a.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn kstar_matches_scan() {
    for p in [0.1, 0.3, 0.45] {
        for beta in [0.9, 0.99, 1.0] {
            let bp = BDParams::new(p, beta).unwrap();
            for alpha in [0.3, 0.05, 0.01, 1e-3, 1e-4] {
                let scan = (0..).take_while(|&k| bd_metrics(&bp, k).1 >= alpha).last().unwrap();
                assert_eq!(bd_kstar(&bp, alpha).unwrap(), scan, "p={p} beta={beta} alpha={alpha}");
            }
        }
    }
}

#[test]
fn a4_holds_on_grid() {
    let d = DistortionSpec::Absolute;
    for p in [0.1, 0.3, 0.45] {
        let s = MarkovSource::birth_death(p).unwrap();
        for beta in [0.9, 0.95, 1.0] {
            let rep = check_a4(&lambda_sequence(&s, &d, beta, 50).unwrap());
            assert!(rep.ok, "p={p} beta={beta}: {:?}", rep.first_violation);
        }
    }
}

#[test]
fn banded_source_end_to_end() {
    let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
    let d = DistortionSpec::power(2.0).unwrap();
    let lambdas = lambda_sequence(&s, &d, 0.95, 20).unwrap();
    assert!(check_a4(&lambdas).ok);
    let g = MarkovSource::geometric(0.4, 0.5).unwrap();
    let m = policy_metrics(&g, &DistortionSpec::Absolute, 5, 0.9).unwrap();
    assert!(m.d > 0.0 && m.n > 0.0 && m.n < 1.0);
}
