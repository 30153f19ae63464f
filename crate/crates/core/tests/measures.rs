use lpsphere::analytic::{AnalyticDensity, PExponent};
use lpsphere::measures::{moment, wasserstein_q, wasserstein_q_analytic};
use lpsphere::EmpiricalMeasure;
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for slot in 0..n {
            let mut p = perm.clone();
            p.insert(slot, n - 1);
            out.push(p);
        }
    }
    out
}

fn brute_force_wq(a: &[f64], b: &[f64], q: f64) -> f64 {
    let n = a.len() as f64;
    permutations(a.len())
        .into_iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs().powf(q)).sum::<f64>() / n)
        .fold(f64::INFINITY, f64::min)
        .powf(1.0 / q)
}

fn atoms(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matching_equals_permutation_optimum(
        (a, b) in (1usize..7).prop_flat_map(|n| (atoms(n), atoms(n))),
        q in 1.0f64..4.0,
    ) {
        let exact = wasserstein_q(
            &EmpiricalMeasure::uniform(a.clone()).unwrap(),
            &EmpiricalMeasure::uniform(b.clone()).unwrap(),
            q,
        ).unwrap();
        let brute = brute_force_wq(&a, &b, q);
        prop_assert!((exact - brute).abs() < 1e-10 * brute.max(1.0), "{} vs {}", exact, brute);
    }

    #[test]
    fn wasserstein_is_a_metric(a in atoms(5), b in atoms(7), c in atoms(3), q in 1.0f64..3.0) {
        let (a, b, c) = (
            EmpiricalMeasure::uniform(a).unwrap(),
            EmpiricalMeasure::uniform(b).unwrap(),
            EmpiricalMeasure::uniform(c).unwrap(),
        );
        let ab = wasserstein_q(&a, &b, q).unwrap();
        let ba = wasserstein_q(&b, &a, q).unwrap();
        let ac = wasserstein_q(&a, &c, q).unwrap();
        let cb = wasserstein_q(&c, &b, q).unwrap();
        prop_assert!(wasserstein_q(&a, &a, q).unwrap() < 1e-12);
        prop_assert!((ab - ba).abs() < 1e-12 * ab.max(1.0));
        prop_assert!(ab <= ac + cb + 1e-10);
    }

    #[test]
    fn mixture_moment_is_linear(a in atoms(4), b in atoms(6), alpha in 0.0f64..1.0, r in 0.5f64..4.0) {
        let (a, b) = (EmpiricalMeasure::uniform(a).unwrap(), EmpiricalMeasure::uniform(b).unwrap());
        let mix = a.mixture(&b, alpha).unwrap();
        let r = PExponent::Finite(r);
        let expected = alpha * moment(&a, r) + (1.0 - alpha) * moment(&b, r);
        prop_assert!((moment(&mix, r) - expected).abs() < 1e-10 * expected.max(1.0));
    }
}

#[test]
fn moment_continuity_counterexample() {
    // (1 - 1/n) δ_0 + (1/n) δ_{n^{1/p}}: W_q → 0 for q < p, yet m_p stays 1
    let p = 2.0;
    let mut previous = f64::INFINITY;
    for n in [4usize, 25, 100, 400, 2500] {
        let nf = n as f64;
        let nu = EmpiricalMeasure::weighted(vec![0.0, nf.powf(1.0 / p)], vec![1.0 - 1.0 / nf, 1.0 / nf]).unwrap();
        let w1 = wasserstein_q(&nu, &EmpiricalMeasure::dirac(0.0), 1.0).unwrap();
        assert!((w1 - nf.powf(1.0 / p - 1.0)).abs() < 1e-12);
        assert!(w1 < previous);
        previous = w1;
        assert!((moment(&nu, PExponent::Finite(p)) - 1.0).abs() < 1e-12);
        if n == 400 {
            assert!(w1 < 0.1);
        }
    }
}

#[test]
fn analytic_wasserstein_against_closed_form() {
    // W_1(δ_0, μ_2) = E|Y| = sqrt(2/π); W_2(δ_0, μ_2) = 1
    let gauss = AnalyticDensity::generalized_gaussian(PExponent::Finite(2.0)).unwrap();
    let dirac = EmpiricalMeasure::dirac(0.0);
    let w1 = wasserstein_q_analytic(&dirac, &gauss, 1.0).unwrap();
    assert!((w1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-4);
    let w2 = wasserstein_q_analytic(&dirac, &gauss, 2.0).unwrap();
    assert!((w2 - 1.0).abs() < 1e-3);
}
