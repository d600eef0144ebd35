//! Property tests over randomized inputs: the metric axioms, plan
//! invariants, partition bounds, and envelope ordering.

use proptest::prelude::*;

use stab::lyapunov::{ControlLyapunov, QuadraticClp};
use stab::measures::{
    disintegrate_plan, optimal_plan, push_forward, w2_distance, EmpiricalMeasure, PlanMargin,
};
use stab::proximal::{inf_convolution, InfConvOptions};
use stab::rng::sub_rng;
use stab::stabilize::{make_partition, PartitionRule};

fn measure_strategy(max_n: usize, d: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(-5.0..5.0f64, n * d)
            .prop_map(move |coords| EmpiricalMeasure::new(d, coords).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_metric_axioms(
        a in measure_strategy(8, 2),
        b in measure_strategy(8, 2),
        c in measure_strategy(8, 2),
    ) {
        let ab = w2_distance(&a, &b).unwrap();
        let ba = w2_distance(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        let ac = w2_distance(&a, &c).unwrap();
        let cb = w2_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert_eq!(w2_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn plans_conserve_marginals_and_disintegrate(
        m in measure_strategy(7, 2),
        nu in measure_strategy(7, 2),
    ) {
        let plan = optimal_plan(&m, &nu).unwrap();
        plan.validate_marginals(1e-9).unwrap();
        let dis = disintegrate_plan(&plan, PlanMargin::Target).unwrap();
        for cond in &dis.conditionals {
            let total: f64 = cond.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(cond.iter().all(|(_, p)| *p >= 0.0));
        }
        let back = dis.recombine(plan.source_n, plan.target_n);
        for p in &plan.pairs {
            let q = back.pairs.iter()
                .find(|q| q.source == p.source && q.target == p.target)
                .map(|q| q.mass)
                .unwrap_or(0.0);
            prop_assert!((q - p.mass).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_respects_composition(
        m in measure_strategy(6, 3),
        scale in 0.1..3.0f64,
        shift in -2.0..2.0f64,
    ) {
        let g = move |p: &[f64]| -> Vec<f64> { p.iter().map(|x| scale * x).collect() };
        let h = move |p: &[f64]| -> Vec<f64> { p.iter().map(|x| x + shift).collect() };
        let joint = push_forward(&m, |p| g(&h(p))).unwrap();
        let staged = push_forward(&push_forward(&m, h).unwrap(), g).unwrap();
        prop_assert_eq!(joint, staged);
    }

    #[test]
    fn partitions_stay_within_bounds(
        seed in 0u64..1000,
        lo in 0.01..0.2f64,
        stretch in 1.0..4.0f64,
        horizon in 0.5..8.0f64,
    ) {
        let hi = lo * stretch;
        let p = make_partition(lo, hi, horizon, PartitionRule::Jittered { seed }).unwrap();
        p.validate().unwrap();
        prop_assert!(p.horizon() >= horizon);
        prop_assert_eq!(p.times[0], 0.0);
    }

    #[test]
    fn envelope_never_exceeds_phi(
        m in measure_strategy(10, 2),
        kappa in 0.2..1.0f64,
    ) {
        let clp = QuadraticClp::new(EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
        let mut rng = sub_rng(1, "prop-envelope");
        let res = inf_convolution(&clp, kappa, 1e-3, &m, &InfConvOptions::default(), &mut rng);
        if let Ok(res) = res {
            prop_assert!(res.value <= clp.phi(&m) + 1e-12);
            let cost = res.squared_cost();
            prop_assert!(
                res.value <= clp.phi(&res.minimizer) + cost / (2.0 * kappa * kappa) + 1e-9
            );
        }
    }
}
