//! Randomized property suites behind `stab verify`. Every suite draws from
//! named sub-streams of the scenario seed and reports one outcome per
//! property with its worst observed margin.

use rand::Rng;

use crate::dynamics::{
    c2_constant, c3_constant, eval_field, flow_segment, sublinear_bound, LinearSteer,
};
use crate::error::Result;
use crate::harness::report::CheckOutcome;
use crate::harness::scenario::BuiltScenario;
use crate::lyapunov::{derived_constants, moduli_table, ControlLyapunov, DeltaOptions, ModulusOptions};
use crate::measures::{
    disintegrate_plan, optimal_plan, push_forward, second_moment_sqrt, w2_distance,
    EmpiricalMeasure, PlanMargin,
};
use crate::proximal::{
    ekeland_probes, ekeland_verify, gamma_subgradient, inf_convolution, proximal_subgradient_verify,
    taylor_bound_verify, InfConvOptions, SubgradientAtom, SubgradientMeasure,
};
use crate::rng::sub_rng;
use crate::sampling::{displace, gaussian_cloud, normalize_to_w2_from_point, unit_displacement};
use crate::stabilize::{
    make_partition, run_theta_trajectory, select_parameters, validate_parameters, LocalFeedback,
    PartitionRule, SelectorOptions, TrajectoryOptions,
};
use crate::CHECK_TOL;

fn random_cloud(seed: u64, name: &str, n: usize, d: usize, scale: f64) -> EmpiricalMeasure {
    let mut rng = sub_rng(seed, name);
    let coords: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-scale..scale)).collect();
    EmpiricalMeasure::new(d, coords).unwrap()
}

pub fn transport_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    // Assignment cost against the exhaustive permutation oracle.
    {
        let mut rng = sub_rng(seed, "transport/oracle");
        let mut worst = f64::INFINITY;
        let trials = 50;
        for k in 0..trials {
            let n = rng.gen_range(1..=6);
            let d = rng.gen_range(1..=3);
            let m = random_cloud(seed, &format!("transport/oracle-m{k}"), n, d, 3.0);
            let nu = random_cloud(seed, &format!("transport/oracle-nu{k}"), n, d, 3.0);
            let got = optimal_plan(&m, &nu)?.squared_cost(&m, &nu);
            let oracle = permutation_oracle(&m, &nu);
            worst = worst.min(1e-9 - (got - oracle).abs());
        }
        out.push(CheckOutcome::new("transport_oracle", trials, worst, worst >= 0.0, ""));
    }

    // Metric axioms: bitwise symmetry, triangle inequality within 1e-9.
    {
        let trials = 200;
        let mut worst = f64::INFINITY;
        let mut symmetric = true;
        for k in 0..trials {
            let a = random_cloud(seed, &format!("transport/tri-a{k}"), 20, 2, 3.0);
            let b = random_cloud(seed, &format!("transport/tri-b{k}"), 20, 2, 3.0);
            let c = random_cloud(seed, &format!("transport/tri-c{k}"), 20, 2, 3.0);
            let ab = w2_distance(&a, &b)?;
            symmetric &= ab.to_bits() == w2_distance(&b, &a)?.to_bits();
            let slack = w2_distance(&a, &c)? + w2_distance(&c, &b)? + 1e-9 - ab;
            worst = worst.min(slack);
        }
        out.push(CheckOutcome::new(
            "metric_axioms",
            trials,
            worst,
            symmetric && worst >= 0.0,
            if symmetric { "" } else { "symmetry broken" },
        ));
    }

    // Marginal conservation across assignment and LP plans.
    {
        let mut rng = sub_rng(seed, "transport/marginals");
        let trials = 50;
        let mut worst = f64::INFINITY;
        for k in 0..trials {
            let sn = rng.gen_range(2..=8);
            let tn = if k % 2 == 0 { sn } else { rng.gen_range(2..=8) };
            let m = random_cloud(seed, &format!("transport/marg-m{k}"), sn, 2, 2.0);
            let nu = random_cloud(seed, &format!("transport/marg-nu{k}"), tn, 2, 2.0);
            let plan = optimal_plan(&m, &nu)?;
            let mut src = vec![0.0; sn];
            let mut tgt = vec![0.0; tn];
            for p in &plan.pairs {
                src[p.source] += p.mass;
                tgt[p.target] += p.mass;
            }
            let dev = src
                .iter()
                .map(|s| (s - 1.0 / sn as f64).abs())
                .chain(tgt.iter().map(|t| (t - 1.0 / tn as f64).abs()))
                .fold(0.0, f64::max);
            worst = worst.min(1e-12 - dev);
        }
        out.push(CheckOutcome::new("marginal_conservation", trials, worst, worst >= 0.0, ""));
    }

    // (g o h) # m == g # (h # m), exactly.
    {
        let trials = 50;
        let mut worst = f64::INFINITY;
        for k in 0..trials {
            let m = random_cloud(seed, &format!("transport/functor{k}"), 9, 3, 2.0);
            let g = |p: &[f64]| -> Vec<f64> { p.iter().map(|x| 1.5 * x + 0.3).collect() };
            let h = |p: &[f64]| -> Vec<f64> { p.iter().map(|x| x * x - 0.1).collect() };
            let lhs = push_forward(&m, |p| g(&h(p)))?;
            let rhs = push_forward(&push_forward(&m, h)?, g)?;
            let dev = lhs
                .coords()
                .iter()
                .zip(rhs.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.min(-dev);
        }
        out.push(CheckOutcome::new(
            "pushforward_functoriality",
            trials,
            worst,
            worst >= 0.0,
            "pointwise equality",
        ));
    }

    // Disintegration recombines to the original plan.
    {
        let trials = 20;
        let mut worst = f64::INFINITY;
        for k in 0..trials {
            let m = random_cloud(seed, &format!("transport/dis-m{k}"), 3, 2, 2.0);
            let nu = random_cloud(seed, &format!("transport/dis-nu{k}"), 2, 2, 2.0);
            let plan = optimal_plan(&m, &nu)?;
            let dis = disintegrate_plan(&plan, PlanMargin::Source)?;
            let back = dis.recombine(3, 2);
            for p in &plan.pairs {
                let q = back
                    .pairs
                    .iter()
                    .find(|q| q.source == p.source && q.target == p.target)
                    .map(|q| q.mass)
                    .unwrap_or(0.0);
                worst = worst.min(1e-12 - (q - p.mass).abs());
            }
        }
        out.push(CheckOutcome::new("disintegration_round_trip", trials, worst, worst >= 0.0, ""));
    }

    Ok(out)
}

fn permutation_oracle(m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    fn go(
        perm: &mut Vec<usize>,
        k: usize,
        m: &EmpiricalMeasure,
        nu: &EmpiricalMeasure,
        best: &mut f64,
    ) {
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
            *best = best.min(total);
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

/// Envelope, Ekeland, subgradient, and expansion-bound properties at the
/// scenario's radii. The quadratic closed forms serve as the independent
/// oracle throughout.
pub fn proximal_suite(built: &BuiltScenario) -> Result<Vec<CheckOutcome>> {
    let seed = built.scenario.seed;
    let clp = &built.clp;
    let big_r = built.scenario.radii.big_r;
    let d = built.scenario.space.dim;
    let opts = InfConvOptions::default();
    let mut out = Vec::new();
    let target_pt = clp.target().point(0).to_vec();

    let draw = |name: &str, k: usize, n: usize, lo: f64, hi: f64| -> Result<EmpiricalMeasure> {
        let mut rng = sub_rng(seed, &format!("{name}{k}"));
        let cloud = gaussian_cloud(&mut rng, n, d, &vec![0.2; d], 1.0);
        let w = rng.gen_range(lo..hi);
        normalize_to_w2_from_point(&cloud, &target_pt, w)
    };

    // Envelope value and minimizer against the closed form.
    {
        let mut worst = f64::INFINITY;
        let mut trials = 0;
        let mut rng = sub_rng(seed, "proximal/moreau");
        for kappa in [0.25, 0.5, 1.0] {
            for k in 0..20 {
                let m = draw("proximal/moreau-m", k, 50, 0.5, big_r * 0.95)?;
                let res = inf_convolution(clp, kappa, 1e-4, &m, &opts, &mut rng)?;
                let s2 = second_moment_sqrt(&m, Some(&target_pt))?;
                let expect = s2 * s2 / (2.0 * (1.0 + kappa * kappa));
                let rel = (res.value - expect).abs() / expect.max(1e-12);
                worst = worst.min(1e-4 - rel);
                let shrink = 1.0 / (1.0 + kappa * kappa);
                for (i, p) in m.points().enumerate() {
                    let y = res.minimizer.point(i);
                    for c in 0..d {
                        let want = target_pt[c] + shrink * (p[c] - target_pt[c]);
                        worst = worst.min(1e-3 - (y[c] - want).abs());
                    }
                }
                trials += 1;
            }
        }
        out.push(CheckOutcome::new("moreau_closed_form", trials, worst, worst >= 0.0, ""));
    }

    // Ekeland acceptance with a fresh 64-probe family, plus the travel,
    // ball, slack, and gap bounds on the same accepted runs.
    {
        let kappa = 0.5;
        let eps = 1e-3;
        let mut rng = sub_rng(seed, "proximal/ekeland");
        let moduli = moduli_table(clp, big_r, eps, None, &ModulusOptions::default())?;
        let consts =
            derived_constants(clp, &moduli, kappa, eps, big_r * 0.1, big_r, &DeltaOptions::default())?;
        let trials = 40;
        let mut ek_worst = f64::INFINITY;
        let mut travel = f64::INFINITY;
        let mut ball = f64::INFINITY;
        let mut slack = f64::INFINITY;
        let mut gap = f64::INFINITY;
        for k in 0..trials {
            let m = draw("proximal/ek-m", k, 40, 0.3, big_r)?;
            let res = inf_convolution(clp, kappa, eps, &m, &opts, &mut rng)?;
            let probes = ekeland_probes(&m, &res.minimizer, kappa, 64, &mut rng)?;
            let rep = ekeland_verify(clp, kappa, eps, &m, &res.minimizer, &probes)?;
            ek_worst = ek_worst.min(rep.worst_margin + CHECK_TOL);
            let w_m_mu = w2_distance(&m, &res.minimizer)?;
            travel = travel.min(consts.m_ke + CHECK_TOL - w_m_mu);
            ball = ball.min(consts.m_e + CHECK_TOL - w2_distance(clp.target(), &res.minimizer)?);
            ball = ball.min(consts.k_ke + CHECK_TOL - w_m_mu);
            let s2 = second_moment_sqrt(&m, Some(&target_pt))?;
            let envelope_true = s2 * s2 / (2.0 * (1.0 + kappa * kappa));
            slack = slack.min(envelope_true + consts.n_ke + CHECK_TOL - res.value);
            gap = gap.min(moduli.omega(consts.m_ke) + consts.n_ke + CHECK_TOL - (clp.phi(&m) - res.value));
        }
        out.push(CheckOutcome::new("ekeland_acceptance", trials, ek_worst, ek_worst >= 0.0, "64 fresh probes"));
        out.push(CheckOutcome::new("envelope_travel_bound", trials, travel, travel >= 0.0, ""));
        out.push(CheckOutcome::new("minimizer_ball_bound", trials, ball, ball >= 0.0, ""));
        out.push(CheckOutcome::new("acceptance_slack_bound", trials, slack, slack >= 0.0, "vs closed-form envelope"));
        out.push(CheckOutcome::new("envelope_gap_bound", trials, gap, gap >= 0.0, ""));
    }

    // Level-set chain and R-ball containment at parameters satisfying the
    // containment precondition.
    {
        let kappa = 0.1;
        let eps = 1e-4;
        let moduli = moduli_table(clp, big_r, eps, None, &ModulusOptions::default())?;
        let consts =
            derived_constants(clp, &moduli, kappa, eps, big_r * 0.1, big_r, &DeltaOptions::default())?;
        let pre = moduli.omega(consts.m_ke) + consts.n_ke;
        let half_i = 0.5 * moduli.inf_phi;
        let mut rng = sub_rng(seed, "proximal/levelset");
        let trials = 30;
        let mut worst = f64::INFINITY;
        let mut chain = f64::INFINITY;
        let mut members = 0;
        for k in 0..trials {
            let m = draw("proximal/ls-m", k, 30, 0.1, big_r * 1.4)?;
            let res = inf_convolution(clp, kappa, eps, &m, &opts, &mut rng)?;
            if res.value <= half_i {
                members += 1;
                worst = worst.min(big_r - w2_distance(clp.target(), &m)?);
            }
            // Chain: inside the inscribed ball, phi and the envelope both sit
            // below the threshold.
            let w = w2_distance(clp.target(), &m)?;
            if w < moduli.inscribed_radius {
                chain = chain.min(half_i - clp.phi(&m));
                chain = chain.min(half_i + consts.n_ke + CHECK_TOL - res.value);
            }
        }
        let pass = pre < half_i && worst >= 0.0 && chain >= 0.0 && members > 0;
        out.push(CheckOutcome::new(
            "level_set_containment",
            trials,
            worst.min(chain),
            pass,
            &format!("kappa={kappa}, eps={eps}, members={members}"),
        ));
    }

    // Canonical subgradient certificate with the doubled-covector negative
    // control.
    {
        let kappa = 0.5;
        let eps = 1e-3;
        let sigma = 0.5 / (kappa * kappa);
        let mut rng = sub_rng(seed, "proximal/cert");
        let trials = 20;
        let mut worst = f64::INFINITY;
        let mut negative_failed = true;
        for k in 0..trials {
            let m = draw("proximal/cert-m", k, 30, 0.5, big_r)?;
            let res = inf_convolution(clp, kappa, eps, &m, &opts, &mut rng)?;
            let gamma = gamma_subgradient(&res, kappa)?;
            let m0 = res.minimizer.clone();
            let mut probes = Vec::with_capacity(101);
            for _ in 0..100 {
                let field = unit_displacement(&mut rng, m0.n(), m0.dim());
                let scale = rng.gen_range(0.01..0.5);
                probes.push(displace(&m0, &field, scale));
            }
            probes.push(m0.clone());
            let rep = proximal_subgradient_verify(clp, &m0, &gamma, eps, sigma, 1.0, &probes)?;
            worst = worst.min(rep.worst_margin + CHECK_TOL);

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
                d,
            )?;
            // An inflated covector over-promises growth along its own
            // direction; small ascent pushes expose the violation.
            let ascent: Vec<f64> = (0..m0.n() * d)
                .map(|idx| doubled.atoms()[idx / d].covector[idx % d])
                .collect();
            let mut neg_probes = probes.clone();
            for scale in [0.05, 0.1, 0.15] {
                neg_probes.push(displace(&m0, &ascent, scale));
            }
            let neg = proximal_subgradient_verify(clp, &m0, &doubled, eps, sigma, 1.0, &neg_probes)?;
            negative_failed &= !neg.ok;
        }
        out.push(CheckOutcome::new(
            "subgradient_certificate",
            trials,
            worst,
            worst >= 0.0 && negative_failed,
            if negative_failed { "doubled covectors rejected" } else { "negative control passed unexpectedly" },
        ));
    }

    // Expansion bound over random displacement fields and steps.
    {
        let kappa = 0.5;
        let eps = 1e-3;
        let mut rng = sub_rng(seed, "proximal/taylor");
        let mut worst = f64::INFINITY;
        let mut trials = 0;
        for tau in [1e-3, 1e-2, 1e-1] {
            for k in 0..12 {
                let m = draw("proximal/taylor-m", k + (tau * 1e4) as usize, 30, 0.3, big_r * 0.9)?;
                let b = unit_displacement(&mut rng, m.n(), d);
                let rep = taylor_bound_verify(clp, kappa, eps, &m, &b, tau, big_r, &opts, &mut rng)?;
                worst = worst.min(rep.slack + CHECK_TOL);
                trials += 1;
            }
        }
        out.push(CheckOutcome::new("taylor_expansion_bound", trials, worst, worst >= 0.0, ""));
    }

    Ok(out)
}

/// Per-segment drift bounds, integrator order, knot decrease and pairing
/// bounds, and selector feasibility, all at the scenario's radii. A
/// sabotaged declared Lipschitz constant flows into the bounds here and is
/// expected to break them.
pub fn lemmas_suite(built: &BuiltScenario) -> Result<Vec<CheckOutcome>> {
    let seed = built.scenario.seed;
    let clp = &built.clp;
    let field = built.field.as_ref();
    let controls = &built.controls;
    let d = built.scenario.space.dim;
    let big_r = built.scenario.radii.big_r;
    let r = built.scenario.radii.r;
    let delta = built.scenario.partition.delta_max;
    let sigma2_target = second_moment_sqrt(clp.target(), None)?;
    let mut out = Vec::new();

    let sabotaged = built.scenario.sabotage.as_ref().and_then(|s| s.declared_c0);
    let (c0, c1, label) = match sabotaged {
        Some(c0) => (c0, sublinear_bound(field, c0, controls, d), "sabotaged declared constant"),
        None => {
            let opts = SelectorOptions { seed, ..Default::default() };
            let (c0, c1) = crate::stabilize::select::field_constants(field, controls, d, &opts)?;
            (c0, c1, "")
        }
    };
    let c2 = c2_constant(big_r, delta, c1, sigma2_target);
    let c3 = c3_constant(big_r, delta, c0, c1, sigma2_target);

    // Held-interval drift: W2(m_t, m_knot) <= C2(R) (t - t_knot).
    {
        let mut rng = sub_rng(seed, "lemmas/segments");
        let trials = 25;
        let mut worst_w2 = f64::INFINITY;
        let mut worst_drift = f64::INFINITY;
        let target_pt = clp.target().point(0).to_vec();
        for k in 0..trials {
            let cloud = gaussian_cloud(&mut rng, 30, d, &vec![0.1; d], 1.0);
            let w = rng.gen_range(0.2..big_r * 0.95);
            let m0 = normalize_to_w2_from_point(&cloud, &target_pt, w)?;
            let u = controls.get(k % controls.len()).to_vec();
            let seg = flow_segment(&m0, field, &u, 0.0, delta, 10)?;
            for (i, t) in seg.times.iter().enumerate().skip(1) {
                let drift = w2_distance(&seg.states[i], &m0)?;
                worst_w2 = worst_w2.min(c2 * t + 1e-6 - drift);

                // Frozen-control field difference in L2(m0).
                let mut acc = 0.0;
                for (j, x0) in m0.points().enumerate() {
                    let moved = eval_field(field, seg.states[i].point(j), &seg.states[i], &u)?;
                    let frozen = eval_field(field, x0, &m0, &u)?;
                    acc += moved
                        .iter()
                        .zip(&frozen)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
                let l2 = (acc / m0.n() as f64).sqrt();
                worst_drift = worst_drift.min(c3 * t + 1e-6 - l2);
            }
        }
        out.push(CheckOutcome::new("step_bound", trials, worst_w2, worst_w2 >= 0.0, label));
        out.push(CheckOutcome::new("drift_difference_bound", trials, worst_drift, worst_drift >= 0.0, label));
    }

    // Fourth-order convergence of the integrator on the linear field.
    {
        let m0 = EmpiricalMeasure::dirac(&vec![1.0; d])?;
        let u = vec![0.0; d];
        let exact = (d as f64).sqrt() * (-1.0_f64).exp();
        let err = |steps: usize| -> Result<f64> {
            let seg = flow_segment(&m0, &LinearSteer, &u, 0.0, 1.0, steps)?;
            let last = seg.states.last().unwrap();
            let norm: f64 = last.point(0).iter().map(|v| v * v).sum::<f64>();
            Ok((norm.sqrt() - exact).abs())
        };
        let ratio = err(8)? / err(16)?.max(1e-300);
        out.push(CheckOutcome::new(
            "integrator_order",
            2,
            ratio - 8.0,
            ratio >= 8.0,
            "error ratio when halving the step",
        ));
    }

    // Knot-level decrease and pairing bounds on a short closed-loop run.
    if built.scenario.field.label == "linear_steer" {
        let kappa = built.scenario.feedback.kappa.unwrap_or(0.5);
        let eps = built.scenario.feedback.eps.unwrap_or(1e-3);
        let moduli = moduli_table(clp, big_r, eps, None, &ModulusOptions::default())?;
        let consts = derived_constants(clp, &moduli, kappa, eps, r, big_r, &DeltaOptions::default())?;
        let rcal_r = clp.closed_form_inscribed(r).unwrap_or(r / 2.0_f64.sqrt());
        let policy = LocalFeedback {
            clp,
            field,
            controls,
            kappa,
            eps,
            opts: InfConvOptions { probe_count: 16, ..Default::default() },
            seed: crate::rng::sub_seed(seed, "lemmas/knots"),
        };
        let partition = make_partition(delta, delta, 1.5, PartitionRule::Uniform)?;
        let mut rng = sub_rng(seed, "lemmas/knots-init");
        let m0 = normalize_to_w2_from_point(
            &gaussian_cloud(&mut rng, 40, d, &vec![0.0; d], 1.0),
            clp.target().point(0),
            big_r * 0.9,
        )?;
        let log = run_theta_trajectory(
            clp,
            &m0,
            &partition,
            &policy,
            field,
            &TrajectoryOptions {
                seed,
                c2_bound: Some(c2),
                two_delta_threshold: Some(2.0 * consts.delta),
                exclusion_radius: Some(rcal_r),
                ..Default::default()
            },
        )?;
        let worst_pair = log
            .records
            .iter()
            .filter_map(|r| r.pairing_margin)
            .fold(f64::INFINITY, f64::min);
        let worst_dec = log
            .records
            .iter()
            .filter_map(|r| r.decrease_margin)
            .fold(f64::INFINITY, f64::min);
        out.push(CheckOutcome::new(
            "knot_pairing_bound",
            log.records.len(),
            worst_pair,
            log.completed() && worst_pair >= 0.0,
            "",
        ));
        out.push(CheckOutcome::new(
            "knot_decrease",
            log.records.len(),
            worst_dec,
            log.completed() && worst_dec > 0.0,
            "",
        ));
    }

    // The selector finds a tuple and every inequality re-validates.
    {
        let opts = SelectorOptions { seed, ..Default::default() };
        match select_parameters(clp, field, controls, r, big_r, &opts) {
            Ok(sel) => {
                let (checks, _, _) = validate_parameters(
                    clp, sel.c0, sel.c1, r, big_r, sel.kappa, sel.eps, sel.delta_max, &opts,
                )?;
                let pass = checks.iter().all(|c| c.satisfied);
                let worst = checks
                    .iter()
                    .map(|c| c.rhs * (1.0 - c.margin_required) - c.lhs)
                    .fold(f64::INFINITY, f64::min);
                out.push(CheckOutcome::new("selector_feasibility", checks.len(), worst, pass, ""));
            }
            Err(e) => {
                out.push(CheckOutcome::new("selector_feasibility", 0, f64::NEG_INFINITY, false, &e.to_string()));
            }
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::{build_scenario, Scenario};
    use std::path::Path;

    fn built() -> BuiltScenario {
        let s: Scenario = toml::from_str(crate::harness::scenario::tests::MINIMAL).unwrap();
        build_scenario(s, Path::new("."), None).unwrap()
    }

    #[test]
    fn transport_suite_passes() {
        let outcomes = transport_suite(7).unwrap();
        assert!(outcomes.iter().all(|o| o.pass), "{outcomes:#?}");
    }

    #[test]
    fn lemmas_suite_passes_on_reference_scenario() {
        let outcomes = lemmas_suite(&built()).unwrap();
        assert!(outcomes.iter().all(|o| o.pass), "{outcomes:#?}");
    }
}
