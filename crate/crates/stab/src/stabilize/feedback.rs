//! Extremal-shift feedback: at a partition knot, run the envelope at the
//! current measure and pick the control minimizing the pairing of the
//! displacement covectors with the dynamics. The global variant dispatches
//! to per-shell local feedbacks by level-set classification.

use crate::dynamics::{ControlSet, VectorField};
use crate::error::{Result, StabError};
use crate::lyapunov::ControlLyapunov;
use crate::measures::{w2_distance, EmpiricalMeasure, TransportPlan};
use crate::proximal::{inf_convolution_adaptive, InfConvOptions};
use crate::rng::sub_rng;
use crate::stabilize::shells::ShellTable;

/// What a feedback policy reports at one knot, beyond the control itself.
#[derive(Debug, Clone)]
pub struct ControlDecision {
    pub control_index: usize,
    pub control: Vec<f64>,
    /// Value of the pairing objective at the chosen control.
    pub pairing_value: Option<f64>,
    /// Envelope value at the knot measure.
    pub phi_kappa: Option<f64>,
    pub eps_used: Option<f64>,
    pub inf_conv_iterations: Option<usize>,
    /// Shell index that handled the measure (global feedback only).
    pub shell_index: Option<i64>,
}

/// Deterministic measure-to-control map evaluated at partition knots.
pub trait FeedbackPolicy: Sync {
    fn decide(&self, m: &EmpiricalMeasure, knot: usize) -> Result<ControlDecision>;
    fn label(&self) -> String;
}

/// Minimizes `(1/N) sum <(x_i - y_i)/kappa^2, f(x_i, m, u)>` over the control
/// set, pairing plan sources with targets. Ties resolve to the first control
/// in stored order. Returns the winning index and the attained value.
pub fn extremal_shift_control(
    m: &EmpiricalMeasure,
    minimizer: &EmpiricalMeasure,
    plan: &TransportPlan,
    field: &dyn VectorField,
    controls: &ControlSet,
    kappa: f64,
) -> Result<(usize, f64)> {
    if controls.is_empty() {
        return Err(StabError::EmptyControlSet);
    }
    let inv_ksq = 1.0 / (kappa * kappa);
    let d = m.dim();
    let mut out = vec![0.0; d];
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (ui, u) in controls.iter().enumerate() {
        let mut value = 0.0;
        for p in &plan.pairs {
            let x = m.point(p.source);
            let y = minimizer.point(p.target);
            field.eval_into(x, m, u, &mut out);
            let dot: f64 = x
                .iter()
                .zip(y)
                .zip(&out)
                .map(|((a, b), v)| (a - b) * inv_ksq * v)
                .sum();
            value += p.mass * dot;
        }
        if value < best {
            best = value;
            best_idx = ui;
        }
    }
    Ok((best_idx, best))
}

/// Sample-and-hold local feedback: fresh envelope run at every knot (nothing
/// cached), then the extremal shift along its plan.
pub struct LocalFeedback<'a> {
    pub clp: &'a dyn ControlLyapunov,
    pub field: &'a dyn VectorField,
    pub controls: &'a ControlSet,
    pub kappa: f64,
    pub eps: f64,
    pub opts: InfConvOptions,
    pub seed: u64,
}

impl FeedbackPolicy for LocalFeedback<'_> {
    fn decide(&self, m: &EmpiricalMeasure, knot: usize) -> Result<ControlDecision> {
        let mut rng = sub_rng(self.seed, &format!("infconv/knot{knot}"));
        let res = inf_convolution_adaptive(self.clp, self.kappa, self.eps, m, &self.opts, &mut rng)?;
        let (idx, pairing) = extremal_shift_control(
            &res.base,
            &res.minimizer,
            &res.plan,
            self.field,
            self.controls,
            self.kappa,
        )?;
        Ok(ControlDecision {
            control_index: idx,
            control: self.controls.get(idx).to_vec(),
            pairing_value: Some(pairing),
            phi_kappa: Some(res.value),
            eps_used: Some(res.eps_used),
            inf_conv_iterations: Some(res.iterations),
            shell_index: None,
        })
    }

    fn label(&self) -> String {
        format!("local(kappa={}, eps={})", self.kappa, self.eps)
    }
}

/// Constant-control policy; the non-stabilizing reference.
pub struct OpenLoopFeedback {
    pub control_index: usize,
    pub control: Vec<f64>,
}

impl FeedbackPolicy for OpenLoopFeedback {
    fn decide(&self, _m: &EmpiricalMeasure, _knot: usize) -> Result<ControlDecision> {
        Ok(ControlDecision {
            control_index: self.control_index,
            control: self.control.clone(),
            pairing_value: None,
            phi_kappa: None,
            eps_used: None,
            inf_conv_iterations: None,
            shell_index: None,
        })
    }

    fn label(&self) -> String {
        format!("open_loop(u{})", self.control_index)
    }
}

/// Shell-dispatching global feedback. A measure is classified into the
/// smallest stored shell whose envelope level set contains it (computed
/// envelope value against `I(Q_j)/2` plus the acceptance tolerance), and that
/// shell's local feedback runs. At the target the fallback control applies.
pub struct GlobalFeedback<'a> {
    pub shells: &'a ShellTable,
    pub clp: &'a dyn ControlLyapunov,
    pub field: &'a dyn VectorField,
    pub controls: &'a ControlSet,
    pub fallback_index: usize,
    pub opts: InfConvOptions,
    pub seed: u64,
    /// Per-coordinate tolerance for atom coincidence with the target.
    pub atom_tol: f64,
}

impl GlobalFeedback<'_> {
    /// Smallest stored shell index whose level set contains `m`. Exact
    /// bounds short-circuit the envelope run: `phi <= threshold` certifies
    /// membership (the computed envelope never exceeds `phi`), and
    /// `phi - gap > threshold + tol` certifies exclusion (the envelope sits
    /// within `gap` of `phi`).
    pub fn classify(&self, m: &EmpiricalMeasure, knot: usize) -> Result<i64> {
        let phi = self.clp.phi(m);
        for row in &self.shells.rows {
            if phi <= row.threshold {
                return Ok(row.index);
            }
            if phi - row.gap_bound > row.threshold + row.accept_tol {
                continue;
            }
            let mut rng = sub_rng(
                self.seed,
                &format!("classify/shell{}/knot{knot}", row.index),
            );
            let res =
                inf_convolution_adaptive(self.clp, row.kappa, row.eps, m, &self.opts, &mut rng)?;
            if res.value <= row.threshold + row.accept_tol {
                return Ok(row.index);
            }
        }
        Err(StabError::OutOfShellRange {
            w2: w2_distance(m, self.clp.target())?,
        })
    }
}

impl FeedbackPolicy for GlobalFeedback<'_> {
    fn decide(&self, m: &EmpiricalMeasure, knot: usize) -> Result<ControlDecision> {
        let target = self.clp.target();
        if m.dim() == target.dim()
            && m.points()
                .all(|p| p.iter().zip(target.point(0)).all(|(a, b)| (a - b).abs() <= self.atom_tol))
        {
            return Ok(ControlDecision {
                control_index: self.fallback_index,
                control: self.controls.get(self.fallback_index).to_vec(),
                pairing_value: None,
                phi_kappa: None,
                eps_used: None,
                inf_conv_iterations: None,
                shell_index: None,
            });
        }
        let shell = self.classify(m, knot)?;
        let row = self.shells.row(shell).expect("classified into stored shell");
        let local = LocalFeedback {
            clp: self.clp,
            field: self.field,
            controls: self.controls,
            kappa: row.kappa,
            eps: row.eps,
            opts: self.opts.clone(),
            seed: crate::rng::sub_seed(self.seed, &format!("shell{shell}")),
        };
        let mut decision = local.decide(m, knot)?;
        decision.shell_index = Some(shell);
        Ok(decision)
    }

    fn label(&self) -> String {
        format!(
            "global(shells {}..={})",
            self.shells.rows.first().map(|r| r.index).unwrap_or(0),
            self.shells.rows.last().map(|r| r.index).unwrap_or(0)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearSteer;
    use crate::lyapunov::QuadraticClp;
    use crate::measures::{optimal_plan, PlanPair};

    struct PureControl;
    impl VectorField for PureControl {
        fn label(&self) -> &str {
            "pure_control"
        }
        fn eval_into(&self, _x: &[f64], _m: &EmpiricalMeasure, u: &[f64], out: &mut [f64]) {
            out.copy_from_slice(u);
        }
    }

    #[test]
    fn extremal_shift_minimizes_linear_form() {
        // d=1, f = u, displacement covectors average positive: pick u = -1.
        let m = EmpiricalMeasure::from_points(&[vec![2.0], vec![1.0]]).unwrap();
        let minimizer = EmpiricalMeasure::from_points(&[vec![1.5], vec![0.5]]).unwrap();
        let plan = optimal_plan(&m, &minimizer).unwrap();
        let controls = ControlSet::new(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let (idx, value) = extremal_shift_control(
            &m,
            &minimizer,
            &plan,
            &PureControl,
            &controls,
            1.0,
        )
        .unwrap();
        assert_eq!(idx, 0);
        assert!(value < 0.0);
    }

    #[test]
    fn zero_displacement_ties_to_first_control() {
        let m = EmpiricalMeasure::from_points(&[vec![0.0], vec![0.0]]).unwrap();
        let plan = TransportPlan {
            pairs: vec![
                PlanPair { source: 0, target: 0, mass: 0.5 },
                PlanPair { source: 1, target: 1, mass: 0.5 },
            ],
            source_n: 2,
            target_n: 2,
        };
        let controls = ControlSet::new(vec![vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        let (idx, value) =
            extremal_shift_control(&m, &m, &plan, &PureControl, &controls, 0.5).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn local_feedback_is_deterministic_and_stationary_at_target() {
        let target = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let clp = QuadraticClp::new(target, 1.0).unwrap();
        let controls = ControlSet::new(vec![vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        let policy = LocalFeedback {
            clp: &clp,
            field: &LinearSteer,
            controls: &controls,
            kappa: 0.5,
            eps: 1e-3,
            opts: InfConvOptions::default(),
            seed: 7,
        };
        let at_target = EmpiricalMeasure::from_points(&[vec![0.0], vec![0.0]]).unwrap();
        let d1 = policy.decide(&at_target, 0).unwrap();
        assert_eq!(d1.control_index, 0, "tie at the target resolves to first control");

        let m = EmpiricalMeasure::from_points(&[vec![2.0], vec![1.0]]).unwrap();
        let a = policy.decide(&m, 3).unwrap();
        let b = policy.decide(&m, 3).unwrap();
        assert_eq!(a.control_index, b.control_index);
        assert_eq!(a.pairing_value, b.pairing_value);
        assert_eq!(a.phi_kappa, b.phi_kappa);
    }
}
