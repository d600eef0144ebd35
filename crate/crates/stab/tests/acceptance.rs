//! Acceptance gate: every criterion below must pass at its stated tolerance.
//! One line prints per criterion; run with `--nocapture` to see them all.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use stab::dynamics::{ControlSet, LinearSteer};
use stab::harness::commands::cmd_simulate;
use stab::harness::report::read_trajectory_csv;
use stab::harness::scenario::{build_scenario, load_scenario};
use stab::lyapunov::{
    derived_constants, moduli_table, ControlLyapunov, DeltaOptions, ModulusOptions, QuadraticClp,
};
use stab::measures::{
    optimal_plan, second_moment_sqrt, w2_distance, EmpiricalMeasure,
};
use stab::proximal::{
    ekeland_probes, ekeland_verify, gamma_subgradient, inf_convolution, proximal_subgradient_verify,
    taylor_bound_verify, InfConvOptions, SubgradientAtom, SubgradientMeasure,
};
use stab::rng::sub_rng;
use stab::sampling::{displace, gaussian_cloud, normalize_to_w2_from_point, unit_displacement};
use stab::stabilize::VerdictStatus;

const SEED: u64 = 0xacce97;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn random_cloud(name: &str, k: usize, n: usize, d: usize) -> EmpiricalMeasure {
    let mut rng = sub_rng(SEED, &format!("{name}{k}"));
    let coords: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    EmpiricalMeasure::new(d, coords).unwrap()
}

fn exhaustive_min_cost(m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    fn go(perm: &mut Vec<usize>, k: usize, m: &EmpiricalMeasure, nu: &EmpiricalMeasure, best: &mut f64) {
        if k == perm.len() {
            let mass = m.particle_mass();
            let total: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    mass * m
                        .point(i)
                        .iter()
                        .zip(nu.point(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            go(perm, k + 1, m, nu, best);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..m.n()).collect();
    let mut best = f64::INFINITY;
    go(&mut perm, 0, m, nu, &mut best);
    best
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, idx: usize, name: &str, pass: bool, detail: String) {
        println!(
            "criterion {idx:02} {name:<24} {} ({detail})",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(format!("{idx:02} {name}: {detail}"));
        }
    }
}

#[test]
fn acceptance() {
    let suite_start = Instant::now();
    let mut gate = Gate { failures: Vec::new() };
    let quadratic =
        |d: usize| QuadraticClp::new(EmpiricalMeasure::dirac(&vec![0.0; d]).unwrap(), 1.0).unwrap();

    // 1. Exact transport against the exhaustive permutation oracle.
    {
        let t0 = Instant::now();
        let mut rng = sub_rng(SEED, "c1");
        let mut worst = 0.0_f64;
        for k in 0..50 {
            let n = rng.gen_range(1..=6);
            let d = rng.gen_range(1..=3);
            let m = random_cloud("c1-m", k * 10 + n, n, d);
            let nu = random_cloud("c1-nu", k * 10 + n, n, d);
            let got = w2_distance(&m, &nu).unwrap().powi(2);
            let want = exhaustive_min_cost(&m, &nu);
            worst = worst.max((got - want).abs());
        }
        let elapsed = t0.elapsed().as_secs_f64();
        gate.record(
            1,
            "ot_exactness",
            worst <= 1e-9 && elapsed < 5.0,
            format!("worst dev {worst:.2e}, {elapsed:.2}s"),
        );
    }

    // 2. Metric properties: exact symmetry, triangle within 1e-9.
    {
        let mut sym = true;
        let mut worst = f64::INFINITY;
        for k in 0..200 {
            let a = random_cloud("c2-a", k, 20, 2);
            let b = random_cloud("c2-b", k, 20, 2);
            let c = random_cloud("c2-c", k, 20, 2);
            let ab = w2_distance(&a, &b).unwrap();
            sym &= ab.to_bits() == w2_distance(&b, &a).unwrap().to_bits();
            worst = worst.min(w2_distance(&a, &c).unwrap() + w2_distance(&c, &b).unwrap() + 1e-9 - ab);
        }
        gate.record(
            2,
            "metric_properties",
            sym && worst >= 0.0,
            format!("symmetry exact: {sym}, triangle slack {worst:.2e}"),
        );
    }

    // 3. Envelope matches the closed form: value 1e-4 relative, minimizer
    //    1e-3 per particle, for kappa in {0.25, 0.5, 1}.
    let clp2 = quadratic(2);
    let opts = InfConvOptions::default();
    let mut c3_runs = Vec::new();
    {
        let mut rng = sub_rng(SEED, "c3");
        let mut worst_rel = 0.0_f64;
        let mut worst_pt = 0.0_f64;
        for kappa in [0.25, 0.5, 1.0] {
            for _ in 0..20 {
                let cloud = gaussian_cloud(&mut rng, 50, 2, &[0.3, -0.2], 1.0);
                let w = rng.gen_range(0.5..2.85);
                let m = normalize_to_w2_from_point(&cloud, &[0.0, 0.0], w).unwrap();
                let res = inf_convolution(&clp2, kappa, 1e-4, &m, &opts, &mut rng).unwrap();
                let s2 = second_moment_sqrt(&m, None).unwrap();
                let expect = s2 * s2 / (2.0 * (1.0 + kappa * kappa));
                worst_rel = worst_rel.max((res.value - expect).abs() / expect);
                let shrink = 1.0 / (1.0 + kappa * kappa);
                for (i, p) in m.points().enumerate() {
                    let y = res.minimizer.point(i);
                    for c in 0..2 {
                        worst_pt = worst_pt.max((y[c] - shrink * p[c]).abs());
                    }
                }
                c3_runs.push((kappa, m, res));
            }
        }
        gate.record(
            3,
            "moreau_closed_form",
            worst_rel <= 1e-4 && worst_pt <= 1e-3,
            format!("worst rel {worst_rel:.2e}, worst particle {worst_pt:.2e}"),
        );
    }

    // 4. Every accepted run passes a fresh 64-probe Ekeland check; the
    //    travel, ball, slack, and gap bounds hold with margin >= -1e-9.
    {
        let mut rng = sub_rng(SEED, "c4");
        let big_r = 3.0;
        let mopts = ModulusOptions::default();
        let dopts = DeltaOptions::default();
        let mut all_ok = true;
        let mut worst = f64::INFINITY;
        for (kappa, m, res) in &c3_runs {
            let probes = ekeland_probes(m, &res.minimizer, *kappa, 64, &mut rng).unwrap();
            let rep = ekeland_verify(&clp2, *kappa, res.eps_used, m, &res.minimizer, &probes).unwrap();
            all_ok &= rep.ok;
            let moduli = moduli_table(&clp2, big_r, res.eps_used, None, &mopts).unwrap();
            let consts =
                derived_constants(&clp2, &moduli, *kappa, res.eps_used, 0.3, big_r, &dopts).unwrap();
            let w_m_mu = w2_distance(m, &res.minimizer).unwrap();
            worst = worst.min(consts.m_ke + 1e-9 - w_m_mu);
            worst = worst.min(consts.k_ke + 1e-9 - w_m_mu);
            worst = worst.min(consts.m_e + 1e-9 - w2_distance(clp2.target(), &res.minimizer).unwrap());
            let s2 = second_moment_sqrt(m, None).unwrap();
            let envelope = s2 * s2 / (2.0 * (1.0 + kappa * kappa));
            worst = worst.min(envelope + consts.n_ke + 1e-9 - res.value);
            worst = worst.min(
                moduli.omega(consts.m_ke) + consts.n_ke + 1e-9 - (clp2.phi(m) - res.value),
            );
        }
        gate.record(
            4,
            "ekeland_acceptance",
            all_ok && worst >= 0.0,
            format!("{} runs, 64 probes each, worst bound margin {worst:.2e}", c3_runs.len()),
        );
    }

    // 5. Subgradient certificate on 100 probes x 20 instances; doubled
    //    covectors must fail somewhere.
    {
        let kappa = 0.5;
        let eps = 1e-3;
        let sigma = 0.5 / (kappa * kappa);
        let mut rng = sub_rng(SEED, "c5");
        let mut worst = f64::INFINITY;
        let mut neg_ok = true;
        for _ in 0..20 {
            let cloud = gaussian_cloud(&mut rng, 30, 2, &[0.2, 0.2], 1.0);
            let w = rng.gen_range(0.5..2.5);
            let m = normalize_to_w2_from_point(&cloud, &[0.0, 0.0], w).unwrap();
            let res = inf_convolution(&clp2, kappa, eps, &m, &opts, &mut rng).unwrap();
            let gamma = gamma_subgradient(&res, kappa).unwrap();
            let m0 = res.minimizer.clone();
            let mut probes = Vec::with_capacity(100);
            for _ in 0..99 {
                let field = unit_displacement(&mut rng, m0.n(), 2);
                probes.push(displace(&m0, &field, rng.gen_range(0.01..0.5)));
            }
            probes.push(m0.clone());
            let rep =
                proximal_subgradient_verify(&clp2, &m0, &gamma, eps, sigma, 1.0, &probes).unwrap();
            worst = worst.min(rep.worst_margin + 1e-9);

            let doubled = SubgradientMeasure::new(
                gamma
                    .atoms()
                    .iter()
                    .map(|a| SubgradientAtom {
                        position: a.position.clone(),
                        covector: a.covector.iter().map(|v| 2.0 * v).collect(),
                        mass: a.mass,
                    })
                    .collect(),
                2,
            )
            .unwrap();
            let ascent: Vec<f64> = (0..m0.n() * 2)
                .map(|idx| doubled.atoms()[idx / 2].covector[idx % 2])
                .collect();
            let mut neg_probes = probes.clone();
            for scale in [0.05, 0.1, 0.15] {
                neg_probes.push(displace(&m0, &ascent, scale));
            }
            let neg = proximal_subgradient_verify(&clp2, &m0, &doubled, eps, sigma, 1.0, &neg_probes)
                .unwrap();
            neg_ok &= !neg.ok;
        }
        gate.record(
            5,
            "subgradient_certificate",
            worst >= 0.0 && neg_ok,
            format!("worst margin {worst:.2e}, negative control rejected: {neg_ok}"),
        );
    }

    // 6. Expansion bound on 100 random (m, b, tau) triples.
    {
        let mut rng = sub_rng(SEED, "c6");
        let mut worst = f64::INFINITY;
        let mut count = 0;
        'outer: for tau in [1e-3, 1e-2, 1e-1] {
            for _ in 0..34 {
                let cloud = gaussian_cloud(&mut rng, 40, 2, &[0.1, -0.1], 1.0);
                let w = rng.gen_range(0.3..2.7);
                let m = normalize_to_w2_from_point(&cloud, &[0.0, 0.0], w).unwrap();
                let b = unit_displacement(&mut rng, m.n(), 2);
                let rep =
                    taylor_bound_verify(&clp2, 0.5, 1e-3, &m, &b, tau, 3.0, &opts, &mut rng).unwrap();
                worst = worst.min(rep.slack + 1e-9);
                count += 1;
                if count == 100 {
                    break 'outer;
                }
            }
        }
        gate.record(
            6,
            "taylor_bound",
            worst >= 0.0 && count == 100,
            format!("{count} trials, worst slack {worst:.2e}"),
        );
    }

    // 7-9. Reference local run: knot decrease and pairing bounds, local
    //      stabilization within the analytic time, per-segment drift bound.
    let local_dir = tempfile::tempdir().unwrap();
    {
        let t0 = Instant::now();
        let scenario = load_scenario(&scenario_path("linear_steer_local.toml")).unwrap();
        let built = build_scenario(scenario, &scenario_path(""), None).unwrap();
        let outcome = cmd_simulate(&built, local_dir.path()).unwrap();
        let sim_elapsed = t0.elapsed().as_secs_f64();
        let rows = read_trajectory_csv(&local_dir.path().join("trajectory.csv")).unwrap();

        let pair_ok = rows
            .iter()
            .filter_map(|r| r.pairing_margin)
            .all(|m| m >= 0.0);
        let dec_ok = rows
            .iter()
            .filter_map(|r| r.decrease_margin)
            .all(|m| m > 0.0);
        let n_checked = rows.iter().filter(|r| r.pairing_margin.is_some()).count();
        gate.record(
            7,
            "knot_conditions",
            pair_ok && dec_ok && n_checked > 10 && outcome.exit_code == 0,
            format!("{n_checked} knots outside the capture ball"),
        );

        let mut reach: Option<f64> = None;
        for r in &rows {
            if r.w2_to_target <= 0.2 + 1e-9 {
                reach = reach.or(Some(r.t));
            } else {
                reach = None;
            }
        }
        let bound = (10.0_f64).ln() + 1.0;
        let reach_ok = reach.map(|t| t <= bound).unwrap_or(false);
        let horizon_ok = rows.last().map(|r| (r.t - 10.0).abs() < 1e-9).unwrap_or(false);
        gate.record(
            8,
            "local_stabilization",
            reach_ok && horizon_ok && sim_elapsed < 60.0,
            format!(
                "reached at t={:.3} (bound {bound:.3}), horizon covered: {horizon_ok}, {sim_elapsed:.1}s",
                reach.unwrap_or(f64::NAN)
            ),
        );

        let step_ok = rows
            .iter()
            .filter_map(|r| r.step_bound_margin)
            .all(|m| m >= 0.0);
        let worst_step = rows
            .iter()
            .filter_map(|r| r.step_bound_margin)
            .fold(f64::INFINITY, f64::min);
        gate.record(
            9,
            "step_bound",
            step_ok,
            format!("worst segment margin {worst_step:.2e}"),
        );
    }

    // 10. Global stabilization: exact shell ratio, monotone descent, bounded
    //     excursion, shrinking M(R).
    {
        let dir = tempfile::tempdir().unwrap();
        let scenario = load_scenario(&scenario_path("linear_steer_global.toml")).unwrap();
        let built = build_scenario(scenario, &scenario_path(""), None).unwrap();
        let outcome = cmd_simulate(&built, dir.path()).unwrap();
        let report = outcome.report;
        let verdicts = report.verdicts.as_ref().expect("global verdicts");

        let shell_rows = stab::stabilize::read_shells_csv(&dir.path().join("shells.csv")).unwrap();
        let ratio = 2.0 * 2.0_f64.sqrt();
        let ratio_ok = shell_rows
            .windows(2)
            .all(|w| ((w[1].1 / w[0].1) - ratio).abs() <= 1e-12 * ratio);

        let rows = read_trajectory_csv(&dir.path().join("trajectory.csv")).unwrap();
        let indices: Vec<i64> = rows.iter().filter_map(|r| r.shell_index).collect();
        let monotone = indices.windows(2).all(|w| w[1] <= w[0]);
        let final_in_ball = rows.last().map(|r| r.w2_to_target <= 0.2 + 1e-9).unwrap_or(false);
        let sweep_ok = verdicts.shrinking.status == VerdictStatus::Pass
            && verdicts
                .m_of_r
                .windows(2)
                .all(|w| w[1].1 <= w[0].1 + 1e-12);
        let pass = ratio_ok
            && monotone
            && final_in_ball
            && sweep_ok
            && verdicts.reach.status == VerdictStatus::Pass
            && verdicts.bounded.status == VerdictStatus::Pass
            && verdicts.shell_monotone.status == VerdictStatus::Pass
            && outcome.exit_code == 0;
        gate.record(
            10,
            "global_stabilization",
            pass,
            format!(
                "ratio exact: {ratio_ok}, shells {:?} -> {:?}, M(R) sweep {:?}",
                indices.first(),
                indices.last(),
                verdicts.m_of_r.iter().map(|p| p.1).collect::<Vec<_>>()
            ),
        );
    }

    // 11. Determinism: identical seeds give byte-identical trajectories.
    {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let scenario = load_scenario(&scenario_path("linear_steer_local.toml")).unwrap();
        for dir in [&d1, &d2] {
            let built = build_scenario(scenario.clone(), &scenario_path(""), Some(7)).unwrap();
            cmd_simulate(&built, dir.path()).unwrap();
        }
        let a = std::fs::read(d1.path().join("trajectory.csv")).unwrap();
        let b = std::fs::read(d2.path().join("trajectory.csv")).unwrap();
        gate.record(
            11,
            "determinism",
            a == b,
            format!("{} bytes compared", a.len()),
        );
    }

    // 12. Whole-suite wall clock.
    {
        let elapsed = suite_start.elapsed().as_secs_f64();
        gate.record(12, "wall_clock", elapsed < 300.0, format!("{elapsed:.1}s < 300s"));
    }

    assert!(gate.failures.is_empty(), "failed criteria: {:#?}", gate.failures);
}

/// The envelope solver and the extremal shift must behave on the dedicated
/// control set used by the acceptance scenarios (zero control first).
#[test]
fn acceptance_scenario_control_order() {
    let controls = ControlSet::new(vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, -1.0],
    ])
    .unwrap();
    assert_eq!(controls.neutral_index(), 0);
    let clp = QuadraticClp::new(EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
    let at_target = EmpiricalMeasure::from_points(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let policy = stab::stabilize::LocalFeedback {
        clp: &clp,
        field: &LinearSteer,
        controls: &controls,
        kappa: 0.5,
        eps: 1e-3,
        opts: InfConvOptions::default(),
        seed: 3,
    };
    use stab::stabilize::FeedbackPolicy;
    let d = policy.decide(&at_target, 0).unwrap();
    assert_eq!(d.control_index, 0, "ties at the target hold the zero control");
    // A held zero control keeps the target fixed.
    let plan = optimal_plan(&at_target, &at_target).unwrap();
    assert_eq!(plan.squared_cost(&at_target, &at_target), 0.0);
}
