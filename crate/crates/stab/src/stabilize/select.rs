//! Feedback parameter selection: descend geometric grids in `kappa` and
//! `eps` until the sufficient-decrease inequality system holds with margin,
//! then derive the admissible hold interval and the guaranteed capture time.

use serde::Serialize;

use crate::dynamics::{
    c2_constant, c3_constant, estimate_lipschitz, sublinear_bound, ControlSet, LipschitzSampler,
    VectorField,
};
use crate::error::{Result, StabError};
use crate::lyapunov::{
    derived_constants, moduli_table, modulus_i, radius_rcal, ControlLyapunov, DeltaOptions,
    DerivedConstants, ModuliTable, ModulusOptions,
};
use crate::measures::second_moment_sqrt;
use crate::rng::sub_rng;
use crate::sampling::BallSampler;

/// One strict inequality of the selection system, evaluated with its
/// required relative margin.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin_required: f64,
    pub satisfied: bool,
}

fn check(name: &str, lhs: f64, rhs: f64, margin: f64) -> InequalityCheck {
    InequalityCheck {
        name: name.to_string(),
        lhs,
        rhs,
        margin_required: margin,
        satisfied: lhs <= rhs * (1.0 - margin),
    }
}

#[derive(Debug, Clone)]
pub struct SelectorOptions {
    pub kappa_factor: f64,
    pub kappa_grid_len: usize,
    /// eps grid starts at `kappa^2` and descends by this factor.
    pub eps_factor: f64,
    pub eps_grid_len: usize,
    pub margin: f64,
    /// Headroom divisor applied to the hold-interval bound (1.5 = 50%).
    pub delta_headroom: f64,
    /// Assumed ratio `delta_min / delta_max` of the partitions this tuple
    /// will drive; enters the capture-time bound.
    pub delta_min_fraction: f64,
    /// Upper cap for the hold interval; drift constants are evaluated here,
    /// which over-estimates them for any smaller step.
    pub delta_ref: f64,
    pub seed: u64,
    pub lipschitz_trials: usize,
    pub sampler_particles: usize,
    pub modulus: ModulusOptions,
    pub delta_opts: DeltaOptions,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        Self {
            kappa_factor: 0.7,
            kappa_grid_len: 80,
            eps_factor: 0.5,
            eps_grid_len: 80,
            margin: 0.05,
            delta_headroom: 1.5,
            delta_min_fraction: 0.5,
            delta_ref: 1.0,
            seed: 0,
            lipschitz_trials: 64,
            sampler_particles: 16,
            modulus: ModulusOptions::default(),
            delta_opts: DeltaOptions::default(),
        }
    }
}

/// A selector-validated parameter tuple together with everything needed to
/// re-derive it.
#[derive(Debug, Clone, Serialize)]
pub struct SelectedParameters {
    pub kappa: f64,
    pub eps: f64,
    pub delta_max: f64,
    pub t_bound: f64,
    pub c0: f64,
    pub c1: f64,
    pub constants: DerivedConstants,
    pub moduli: ModuliTable,
    pub checks: Vec<InequalityCheck>,
}

/// Evaluates the full inequality system at a concrete `(kappa, eps, delta)`.
/// Returns the seven checks plus the constants they were computed from.
#[allow(clippy::too_many_arguments)]
pub fn validate_parameters(
    clp: &dyn ControlLyapunov,
    c0: f64,
    c1: f64,
    r: f64,
    big_r: f64,
    kappa: f64,
    eps: f64,
    delta: f64,
    opts: &SelectorOptions,
) -> Result<(Vec<InequalityCheck>, DerivedConstants, ModuliTable)> {
    let mut sampler = BallSampler::new(
        clp.target(),
        opts.sampler_particles,
        sub_rng(opts.seed, "selector-moduli"),
    );
    let moduli = moduli_table(clp, big_r, eps, Some(&mut sampler), &opts.modulus)?;
    let constants = derived_constants(clp, &moduli, kappa, eps, r, big_r, &opts.delta_opts)?;
    let rcal_r = radius_rcal(clp, r, Some(&mut sampler), &opts.modulus)?;
    let i_r = modulus_i(clp, r, Some(&mut sampler), &opts.modulus)?.value;
    let sigma2_target = second_moment_sqrt(clp.target(), None)?;

    let omega_mke = moduli.omega(constants.m_ke);
    let m = opts.margin;
    let mut checks = Vec::with_capacity(7);
    checks.push(check(
        "level_set_containment",
        omega_mke + constants.n_ke,
        0.5 * moduli.inf_phi,
        m,
    ));
    checks.push(check("proximal_travel", constants.m_ke, 0.5 * rcal_r, m));
    checks.push(check(
        "pairing_perturbation",
        2.0 * c0 / (kappa * kappa) * constants.k_ke * constants.k_ke,
        constants.delta,
        m,
    ));
    checks.push(check(
        "capture_gap",
        omega_mke + constants.n_ke,
        0.25 * i_r,
        m,
    ));
    let growth = 1.0
        + 4.0 * (sigma2_target + big_r)
        + 4.0 * (sigma2_target + big_r) * (sigma2_target + big_r);
    let c3 = c3_constant(big_r, delta, c0, c1, sigma2_target);
    checks.push(check(
        "hold_interval",
        delta * (constants.m_ke * c3 + c1 * c1 / (2.0 * kappa * kappa) * growth),
        constants.delta,
        m,
    ));
    let c2 = c2_constant(big_r, delta, c1, sigma2_target);
    checks.push(check("segment_drift", moduli.omega(c2 * delta), 0.25 * i_r, m));
    checks.push(check(
        "knot_decrease",
        constants.n_ke,
        constants.delta * delta * opts.delta_min_fraction,
        m,
    ));
    Ok((checks, constants, moduli))
}

/// Field constants used by the selector: the analytic or sampled Lipschitz
/// constant and the sublinear growth bound.
pub fn field_constants(
    field: &dyn VectorField,
    controls: &ControlSet,
    dim: usize,
    opts: &SelectorOptions,
) -> Result<(f64, f64)> {
    let mut sampler = LipschitzSampler {
        rng: sub_rng(opts.seed, "selector-lipschitz"),
        dim,
        particles: opts.sampler_particles,
        scale: 3.0,
        controls,
    };
    let c0 = estimate_lipschitz(field, &mut sampler, opts.lipschitz_trials)?;
    let c1 = sublinear_bound(field, c0, controls, dim);
    Ok((c0, c1))
}

/// Searches `kappa = kappa_factor^k`, `eps = kappa^2 eps_factor^j` until the
/// whole system holds with the configured margin, derives the hold-interval
/// bound with headroom, and returns the first feasible tuple. Errors with the
/// last failing inequality when the grids are exhausted.
pub fn select_parameters(
    clp: &dyn ControlLyapunov,
    field: &dyn VectorField,
    controls: &ControlSet,
    r: f64,
    big_r: f64,
    opts: &SelectorOptions,
) -> Result<SelectedParameters> {
    if !(r > 0.0 && r < big_r) {
        return Err(StabError::ParameterOrdering(format!(
            "need 0 < r < R, got r={r}, R={big_r}"
        )));
    }
    let dim = clp.target().dim();
    let (c0, c1) = field_constants(field, controls, dim, opts)?;
    let sigma2_target = second_moment_sqrt(clp.target(), None)?;
    let mut sampler = BallSampler::new(
        clp.target(),
        opts.sampler_particles,
        sub_rng(opts.seed, "selector-moduli"),
    );
    let i_r = modulus_i(clp, r, Some(&mut sampler), &opts.modulus)?.value;

    let mut last_failed = ("grid exhausted".to_string(), 0.0, 0.0);
    for k in 0..opts.kappa_grid_len {
        let kappa = opts.kappa_factor.powi(k as i32);
        for j in 0..opts.eps_grid_len {
            let eps = kappa * kappa * opts.eps_factor.powi(j as i32);
            if eps <= 0.0 {
                break;
            }
            // Stage 1: the delta-independent inequalities at the cap.
            let (stage, constants, moduli) = validate_parameters(
                clp,
                c0,
                c1,
                r,
                big_r,
                kappa,
                eps,
                opts.delta_ref,
                opts,
            )?;
            let head = &stage[..4];
            if let Some(fail) = head.iter().find(|c| !c.satisfied) {
                last_failed = (fail.name.clone(), kappa, eps);
                continue;
            }
            // Stage 2: hold-interval bound. Drift constants evaluated at the
            // cap over-estimate the true constants for any smaller step.
            let growth = 1.0
                + 4.0 * (sigma2_target + big_r)
                + 4.0 * (sigma2_target + big_r) * (sigma2_target + big_r);
            let c3_ref = c3_constant(big_r, opts.delta_ref, c0, c1, sigma2_target);
            let coeff = constants.m_ke * c3_ref + c1 * c1 / (2.0 * kappa * kappa) * growth;
            let delta_54 = (1.0 - opts.margin) * constants.delta / coeff / opts.delta_headroom;
            let c2_ref = c2_constant(big_r, opts.delta_ref, c1, sigma2_target);
            let omega_cap = (1.0 - opts.margin) * 0.25 * i_r;
            let delta_55 = bisect_omega_bound(&moduli, c2_ref, omega_cap, opts.delta_ref);
            let delta_max = delta_54.min(delta_55).min(opts.delta_ref);
            if !(delta_max > 0.0) {
                last_failed = ("hold_interval".into(), kappa, eps);
                continue;
            }
            // Full re-validation at the chosen step.
            let (checks, constants, moduli) =
                validate_parameters(clp, c0, c1, r, big_r, kappa, eps, delta_max, opts)?;
            if let Some(fail) = checks.iter().find(|c| !c.satisfied) {
                last_failed = (fail.name.clone(), kappa, eps);
                continue;
            }
            let t_bound = capture_time_bound(
                moduli.inf_phi,
                constants.n_ke,
                constants.delta,
                delta_max * opts.delta_min_fraction,
            );
            return Ok(SelectedParameters {
                kappa,
                eps,
                delta_max,
                t_bound,
                c0,
                c1,
                constants,
                moduli,
                checks,
            });
        }
    }
    Err(StabError::InfeasibleParameters {
        last_failed: last_failed.0,
        kappa: last_failed.1,
        eps: last_failed.2,
    })
}

/// Largest `delta <= cap` with `omega(c2 * delta) <= bound`.
fn bisect_omega_bound(moduli: &ModuliTable, c2: f64, bound: f64, cap: f64) -> f64 {
    if moduli.omega(c2 * cap) <= bound {
        return cap;
    }
    let mut lo = 0.0;
    let mut hi = cap;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if moduli.omega(c2 * mid) <= bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Guaranteed first-entry knot time: `(I(R) + 2 n_steps N) / (2 Delta)` with
/// the step count read off the decrease budget per knot.
pub fn capture_time_bound(i_big_r: f64, n_ke: f64, delta_cap: f64, delta_min: f64) -> f64 {
    let denom = 2.0 * delta_cap - 2.0 * n_ke / delta_min;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    let t0 = i_big_r / denom;
    let n_steps = (t0 / delta_min).ceil().max(1.0);
    (i_big_r + 2.0 * n_steps * n_ke) / (2.0 * delta_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearSteer;
    use crate::lyapunov::QuadraticClp;
    use crate::measures::EmpiricalMeasure;

    fn setup() -> (QuadraticClp, ControlSet) {
        let target = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let clp = QuadraticClp::new(target, 1.0).unwrap();
        let controls = ControlSet::new(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        (clp, controls)
    }

    #[test]
    fn finds_feasible_tuple_for_reference_radii() {
        let (clp, controls) = setup();
        let opts = SelectorOptions::default();
        let sel = select_parameters(&clp, &LinearSteer, &controls, 0.2, 2.0, &opts).unwrap();
        assert!(sel.kappa > 0.0 && sel.kappa <= 1.0);
        assert!(sel.eps > 0.0);
        assert!(sel.delta_max > 0.0);
        assert!(sel.t_bound.is_finite() && sel.t_bound > 0.0);
        assert_eq!(sel.checks.len(), 7);
        assert!(sel.checks.iter().all(|c| c.satisfied));

        // Self-check oracle: independent re-evaluation of every inequality.
        let (checks, _, _) = validate_parameters(
            &clp,
            sel.c0,
            sel.c1,
            0.2,
            2.0,
            sel.kappa,
            sel.eps,
            sel.delta_max,
            &opts,
        )
        .unwrap();
        assert!(checks.iter().all(|c| c.satisfied), "{checks:#?}");
    }

    #[test]
    fn rejects_bad_radius_ordering() {
        let (clp, controls) = setup();
        let opts = SelectorOptions::default();
        assert!(matches!(
            select_parameters(&clp, &LinearSteer, &controls, 2.0, 2.0, &opts),
            Err(StabError::ParameterOrdering(_))
        ));
    }

    #[test]
    fn infeasible_grid_names_failing_inequality() {
        let (clp, controls) = setup();
        let opts = SelectorOptions {
            kappa_grid_len: 2,
            eps_grid_len: 2,
            ..Default::default()
        };
        match select_parameters(&clp, &LinearSteer, &controls, 0.2, 2.0, &opts) {
            Err(StabError::InfeasibleParameters { last_failed, .. }) => {
                assert!(!last_failed.is_empty());
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}

#[cfg(test)]
mod margin_trend_tests {
    use super::*;
    use crate::dynamics::LinearSteer;
    use crate::lyapunov::QuadraticClp;
    use crate::measures::EmpiricalMeasure;

    /// Growing the hold interval toward its admissible bound tightens the
    /// hold-interval inequality monotonically.
    #[test]
    fn hold_interval_margin_shrinks_with_delta() {
        let clp = QuadraticClp::new(EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
        let controls = crate::dynamics::ControlSet::new(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let opts = SelectorOptions::default();
        let sel = select_parameters(&clp, &LinearSteer, &controls, 0.2, 2.0, &opts).unwrap();
        let mut last = f64::INFINITY;
        for factor in [0.25, 0.5, 0.75, 1.0] {
            let delta = sel.delta_max * factor;
            let (checks, _, _) = validate_parameters(
                &clp, sel.c0, sel.c1, 0.2, 2.0, sel.kappa, sel.eps, delta, &opts,
            )
            .unwrap();
            let hold = checks.iter().find(|c| c.name == "hold_interval").unwrap();
            let margin = hold.rhs * (1.0 - hold.margin_required) - hold.lhs;
            assert!(hold.satisfied);
            assert!(margin < last, "margin must shrink as delta grows");
            last = margin;
        }
    }
}
