use proptest::prelude::*;
use ssdrl::measures::{compare, ssd_dominates, DominanceVerdict, ParticleSet};
use ssdrl::transport::{exact_w2_1d, sinkhorn_log, AnnealingSchedule};
use ssdrl::wgf::{potential_energy, proximal_step, BellmanTarget, ProximalConfig};

fn particles(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn ps(v: Vec<f64>) -> ParticleSet {
    ParticleSet::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_satisfy_both_marginals(x in particles(1..20), y in particles(1..20)) {
        let (x, y) = (ps(x), ps(y));
        let r = sinkhorn_log(&x, &y, &AnnealingSchedule::to_epsilon(0.05).unwrap()).unwrap();
        for s in r.plan.row_sums() {
            prop_assert!((s - 1.0 / x.len() as f64).abs() <= 1e-6);
        }
        for s in r.plan.col_sums() {
            prop_assert!((s - 1.0 / y.len() as f64).abs() <= 1e-6);
        }
        prop_assert!(r.plan.to_nested().iter().flatten().all(|&p| p >= 0.0));
    }

    #[test]
    fn entropic_value_sits_near_the_exact_distance(v in particles(2..17), shift in -3.0f64..3.0) {
        let x = ps(v.clone());
        let y = ps(v.iter().rev().map(|a| a * 0.5 + shift).collect());
        let exact = exact_w2_1d(&x, &y).unwrap();
        let r = sinkhorn_log(&x, &y, &AnnealingSchedule::to_epsilon(0.005).unwrap()).unwrap();
        // entropic blur adds at most eps * ln N on top of the exact value
        prop_assert!(r.distance >= exact - 1e-6);
        prop_assert!(r.distance <= exact + 0.005 * (x.len() as f64).ln() + 1e-6);
    }

    #[test]
    fn ordering_implies_moment_ordering(a in particles(1..30), noise in particles(30..31)) {
        let a = ps(a);
        // particles moved down by non-negative amounts are dominated by a
        let b: Vec<f64> = a.values().iter().zip(&noise).map(|(v, e)| v - e.abs() * 0.1).collect();
        let b = ps(b);
        if ssd_dominates(&a, &b).unwrap() {
            prop_assert!(a.mean() >= b.mean() - 1e-12);
            if (a.mean() - b.mean()).abs() < 1e-12 {
                prop_assert!(a.variance() <= b.variance() + 1e-12);
            }
        }
    }

    #[test]
    fn shifting_up_dominates(a in particles(1..30), c in 0.0f64..3.0) {
        let a = ps(a);
        let up = a.shifted(c).unwrap();
        prop_assert!(ssd_dominates(&up, &a).unwrap());
        let verdict = compare(&a, &a, 0.0).unwrap();
        prop_assert_eq!(verdict, DominanceVerdict::Mutual);
    }

    #[test]
    fn cumulative_quantile_is_tau_times_tail_mean(a in particles(1..40)) {
        let a = ps(a);
        let n = a.len();
        for j in 1..=n {
            let tau = j as f64 / n as f64;
            let tail = a.values()[..j].iter().sum::<f64>() / j as f64;
            let lhs = a.cumulative_quantile(tau).unwrap();
            prop_assert!((lhs - tau * tail).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn proximal_steps_contract_toward_targets(z in particles(2..10), t in particles(10..11)) {
        let z = ps(z);
        let targets = BellmanTarget::new(t[..z.len()].to_vec()).unwrap();
        let cfg = ProximalConfig::policy_evaluation();
        let next = proximal_step(&z, &targets, &cfg).unwrap().particles;
        let before = potential_energy(&targets, &z).unwrap();
        let after = potential_energy(&targets, &next).unwrap();
        prop_assert!(after <= before + 1e-9, "{before} -> {after}");
        prop_assert!(potential_energy(&targets, &z).unwrap() >= 0.0);
    }
}
