//! Sample-and-hold trajectory execution with per-knot diagnostics, plus the
//! stabilization verdicts read off a finished log.

use serde::Serialize;

use crate::dynamics::{c2_constant, default_substeps, flow_segment, VectorField};
use crate::error::{Result, StabError};
use crate::lyapunov::ControlLyapunov;
use crate::measures::{w2_distance, EmpiricalMeasure};
use crate::stabilize::feedback::FeedbackPolicy;
use crate::stabilize::partition::Partition;
use crate::stabilize::shells::ShellTable;

#[derive(Debug, Clone)]
pub struct TrajectoryOptions {
    /// RK4 substeps per held interval; `None` derives one stage per 0.01
    /// time units.
    pub substeps_per_knot: Option<usize>,
    pub seed: u64,
    pub scenario_hash: String,
    /// `C2(R)` for the per-segment drift bound diagnostic.
    pub c2_bound: Option<f64>,
    /// `2 Delta(r, R)`: the pairing objective must sit below its negative.
    pub two_delta_threshold: Option<f64>,
    /// `Rcal(r)`: decrease and pairing diagnostics apply outside this ball.
    pub exclusion_radius: Option<f64>,
    /// Additive tolerance in the diagnostic margins.
    pub margin_tol: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            substeps_per_knot: None,
            seed: 0,
            scenario_hash: String::new(),
            c2_bound: None,
            two_delta_threshold: None,
            exclusion_radius: None,
            margin_tol: 1e-6,
        }
    }
}

/// One knot of the executed trajectory. Margins are oriented so nonnegative
/// means the corresponding inequality held.
#[derive(Debug, Clone)]
pub struct KnotRecord {
    pub t: f64,
    pub control_id: usize,
    pub control: Vec<f64>,
    pub phi: f64,
    pub phi_kappa: Option<f64>,
    pub w2_to_target: f64,
    pub shell_index: Option<i64>,
    pub pairing_value: Option<f64>,
    /// `(-2 Delta + tol) - pairing`, outside the exclusion ball.
    pub pairing_margin: Option<f64>,
    /// `phi_kappa(t_i) - phi_kappa(t_{i+1})`, outside the exclusion ball.
    pub decrease_margin: Option<f64>,
    /// `min_k [C2 (t_k - t_i) + tol - W2(m_{t_k}, m_{t_i})]` over the
    /// segment's sub-samples.
    pub step_bound_margin: Option<f64>,
    /// `(t, W2 from the knot state)` at each integrator sub-sample.
    pub sub_samples: Vec<(f64, f64)>,
    /// Measure snapshot at the knot.
    pub measure: EmpiricalMeasure,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub records: Vec<KnotRecord>,
    pub final_state: EmpiricalMeasure,
    pub final_time: f64,
    pub seed: u64,
    pub scenario_hash: String,
    /// Populated when the run stopped early; the records up to the failure
    /// are preserved.
    pub abort: Option<String>,
}

impl TrajectoryLog {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }

    pub fn max_w2(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.w2_to_target)
            .fold(0.0, f64::max)
    }

    /// Earliest knot time from which the distance stays at or below `r`.
    pub fn reach_time(&self, r: f64, tol: f64) -> Option<f64> {
        let mut reach = None;
        for rec in &self.records {
            if rec.w2_to_target <= r + tol {
                if reach.is_none() {
                    reach = Some(rec.t);
                }
            } else {
                reach = None;
            }
        }
        reach
    }
}

/// Executes the policy over the partition: evaluate at each knot, hold the
/// control across the interval with the RK4 particle integrator, record
/// diagnostics. Runtime failures abort the run but preserve the partial log.
pub fn run_theta_trajectory(
    clp: &dyn ControlLyapunov,
    m_star: &EmpiricalMeasure,
    partition: &Partition,
    policy: &dyn FeedbackPolicy,
    field: &dyn VectorField,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryLog> {
    partition.validate()?;
    let target = clp.target();
    if m_star.dim() != target.dim() {
        return Err(StabError::DimensionMismatch {
            expected: target.dim(),
            got: m_star.dim(),
        });
    }
    let mut records: Vec<KnotRecord> = Vec::with_capacity(partition.times.len());
    let mut m = m_star.clone();
    let mut abort = None;
    let mut final_time = 0.0;

    for i in 0..partition.times.len() {
        let t_i = partition.times[i];
        final_time = t_i;
        let decision = match policy.decide(&m, i) {
            Ok(d) => d,
            Err(e) => {
                abort = Some(format!("knot {i} at t={t_i}: {e}"));
                break;
            }
        };
        if i % 50 == 0 {
            log::debug!(
                "knot {i} t={t_i:.3}: control {} phi_kappa {:?}",
                decision.control_index,
                decision.phi_kappa
            );
        }
        let phi = clp.phi(&m);
        let w2 = w2_distance(&m, target)?;
        let outside = opts
            .exclusion_radius
            .map(|rc| w2 > rc)
            .unwrap_or(true);
        let pairing_margin = match (opts.two_delta_threshold, decision.pairing_value) {
            (Some(two_delta), Some(p)) if outside => Some((-two_delta + opts.margin_tol) - p),
            _ => None,
        };

        let mut record = KnotRecord {
            t: t_i,
            control_id: decision.control_index,
            control: decision.control.clone(),
            phi,
            phi_kappa: decision.phi_kappa,
            w2_to_target: w2,
            shell_index: decision.shell_index,
            pairing_value: decision.pairing_value,
            pairing_margin,
            decrease_margin: None,
            step_bound_margin: None,
            sub_samples: Vec::new(),
            measure: m.clone(),
        };

        if i + 1 == partition.times.len() {
            records.push(record);
            break;
        }
        let t_next = partition.times[i + 1];
        let substeps = opts
            .substeps_per_knot
            .unwrap_or_else(|| default_substeps(t_i, t_next));
        let segment = match flow_segment(&m, field, &decision.control, t_i, t_next, substeps) {
            Ok(s) => s,
            Err(e) => {
                records.push(record);
                abort = Some(format!("segment from t={t_i}: {e}"));
                break;
            }
        };
        let mut step_margin: Option<f64> = None;
        for (k, t_k) in segment.times.iter().enumerate().skip(1) {
            let drift = w2_distance(&segment.states[k], &m)?;
            record.sub_samples.push((*t_k, drift));
            if let Some(c2) = opts.c2_bound {
                let margin = c2 * (t_k - t_i) + opts.margin_tol - drift;
                step_margin = Some(step_margin.map_or(margin, |s: f64| s.min(margin)));
            }
        }
        record.step_bound_margin = step_margin;
        records.push(record);
        m = segment.states.last().unwrap().clone();
        final_time = t_next;
    }

    // Decrease margins are retroactive: they need the next knot's envelope.
    for i in 0..records.len().saturating_sub(1) {
        let outside = opts
            .exclusion_radius
            .map(|rc| records[i].w2_to_target > rc)
            .unwrap_or(true);
        if let (true, Some(a), Some(b)) = (outside, records[i].phi_kappa, records[i + 1].phi_kappa)
        {
            records[i].decrease_margin = Some(a - b);
        }
    }

    let final_state = records
        .last()
        .map(|r| r.measure.clone())
        .unwrap_or_else(|| m_star.clone());
    Ok(TrajectoryLog {
        final_state: if abort.is_none() { m } else { final_state },
        final_time,
        records,
        seed: opts.seed,
        scenario_hash: opts.scenario_hash.clone(),
        abort,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    InsufficientData,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictDetail {
    pub status: VerdictStatus,
    pub observed: f64,
    pub bound: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilizationVerdicts {
    /// Reaches the r-ball by the theory capture time and stays.
    pub reach: VerdictDetail,
    /// Never exceeds `M(R) = Q_{N(R)}`.
    pub bounded: VerdictDetail,
    /// `M(R)` is nonincreasing along the requested sweep of R values.
    pub shrinking: VerdictDetail,
    /// Shell indices never increase, and every non-terminal shell is left
    /// within its capture bound.
    pub shell_monotone: VerdictDetail,
    /// The `(R, M(R))` sweep used for the shrinking verdict.
    pub m_of_r: Vec<(f64, f64)>,
    pub theory_t: f64,
}

/// Grades a global-feedback log against the stabilization definition on the
/// radii pair `(r, R)` with an `M(R)` sweep over `m_sweep`.
pub fn s_stabilization_check(
    log: &TrajectoryLog,
    r: f64,
    big_r: f64,
    shells: &ShellTable,
    m_sweep: &[f64],
) -> Result<StabilizationVerdicts> {
    if log.records.is_empty() {
        return Err(StabError::MissingRecords("empty trajectory log".into()));
    }
    let n = shells.n_of_r(big_r)?;
    let m_r = shells.row(n).unwrap().q_outer;
    let horizon = log.final_time;

    // Theory capture time: sum of per-shell capture bounds plus one hold
    // interval each, over the shells between K(r) and N(R).
    let k = shells.k_of_r(r, n);
    let theory_t = match k {
        Some(k) => {
            let delta_global = shell_hold_bound(shells, k, n);
            shells
                .rows
                .iter()
                .filter(|row| row.index > k && row.index <= n)
                .map(|row| row.t_bound + delta_global)
                .sum::<f64>()
        }
        None => f64::INFINITY,
    };

    let reach = match log.reach_time(r, crate::CHECK_TOL) {
        Some(t_reach) => {
            if t_reach <= theory_t {
                VerdictDetail {
                    status: VerdictStatus::Pass,
                    observed: t_reach,
                    bound: theory_t,
                    note: format!("entered and stayed in the {r}-ball from t={t_reach:.4}"),
                }
            } else {
                VerdictDetail {
                    status: VerdictStatus::Fail,
                    observed: t_reach,
                    bound: theory_t,
                    note: "entered later than the capture bound".into(),
                }
            }
        }
        None => {
            if horizon < theory_t {
                VerdictDetail {
                    status: VerdictStatus::InsufficientData,
                    observed: horizon,
                    bound: theory_t,
                    note: "horizon ends before the capture bound".into(),
                }
            } else {
                VerdictDetail {
                    status: VerdictStatus::Fail,
                    observed: horizon,
                    bound: theory_t,
                    note: "never settled inside the ball".into(),
                }
            }
        }
    };

    let max_w2 = log.max_w2();
    let bounded = VerdictDetail {
        status: if max_w2 <= m_r + crate::CHECK_TOL {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        },
        observed: max_w2,
        bound: m_r,
        note: "supremum of the distance to the target".into(),
    };

    let mut m_of_r = Vec::new();
    let mut shrink_ok = true;
    let mut prev = f64::INFINITY;
    for &radius in m_sweep {
        let m_val = shells.m_of_r(radius)?;
        if m_val > prev + crate::CHECK_TOL {
            shrink_ok = false;
        }
        prev = m_val;
        m_of_r.push((radius, m_val));
    }
    let shrinking = VerdictDetail {
        status: if shrink_ok { VerdictStatus::Pass } else { VerdictStatus::Fail },
        observed: m_of_r.last().map(|p| p.1).unwrap_or(f64::NAN),
        bound: m_of_r.first().map(|p| p.1).unwrap_or(f64::NAN),
        note: "M(R) along the shrinking sweep".into(),
    };

    let shell_monotone = grade_shell_monotonicity(log, shells);

    Ok(StabilizationVerdicts {
        reach,
        bounded,
        shrinking,
        shell_monotone,
        m_of_r,
        theory_t,
    })
}

/// Paper-style global hold bound: the smallest per-shell hold interval, also
/// capped by `Q_{K-1} / C2(Q_N)`.
fn shell_hold_bound(shells: &ShellTable, k: i64, n: i64) -> f64 {
    let mut bound = f64::INFINITY;
    for row in &shells.rows {
        if row.index > k && row.index <= n {
            bound = bound.min(row.delta_max);
        }
    }
    if let (Some(row_k), Some(row_n)) = (shells.row(k), shells.row(n)) {
        let c2 = c2_constant(row_n.q_outer, bound.min(1.0), shells.c1, shells.sigma2_target);
        bound = bound.min(row_k.q_outer_prev / c2);
    }
    bound
}

fn grade_shell_monotonicity(log: &TrajectoryLog, shells: &ShellTable) -> VerdictDetail {
    let indexed: Vec<(f64, i64)> = log
        .records
        .iter()
        .filter_map(|r| r.shell_index.map(|s| (r.t, s)))
        .collect();
    if indexed.is_empty() {
        return VerdictDetail {
            status: VerdictStatus::InsufficientData,
            observed: f64::NAN,
            bound: f64::NAN,
            note: "no shell indices recorded".into(),
        };
    }
    let monotone = indexed.windows(2).all(|w| w[1].1 <= w[0].1);
    let min_observed = indexed.iter().map(|p| p.1).min().unwrap();
    let mut dwell_ok = true;
    let mut note = String::from("indices nonincreasing");
    for row in &shells.rows {
        if row.index == min_observed {
            continue; // terminal shell may hold the state indefinitely
        }
        let enter = indexed.iter().find(|p| p.1 == row.index).map(|p| p.0);
        let leave = indexed.iter().find(|p| p.1 < row.index).map(|p| p.0);
        if let Some(t_in) = enter {
            match leave {
                Some(t_out) if t_out - t_in <= row.t_bound => {}
                Some(t_out) => {
                    dwell_ok = false;
                    note = format!(
                        "shell {} held for {:.3}, beyond its bound {:.3}",
                        row.index,
                        t_out - t_in,
                        row.t_bound
                    );
                }
                None => {
                    dwell_ok = false;
                    note = format!("run ended inside non-terminal shell {}", row.index);
                }
            }
        }
    }
    VerdictDetail {
        status: if monotone && dwell_ok {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        },
        observed: min_observed as f64,
        bound: f64::NAN,
        note: if monotone { note } else { "shell index increased".into() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlSet, LinearSteer, ZeroField};
    use crate::lyapunov::QuadraticClp;
    use crate::proximal::InfConvOptions;
    use crate::rng::sub_rng;
    use crate::sampling::{gaussian_cloud, normalize_to_w2_from_point};
    use crate::stabilize::feedback::{LocalFeedback, OpenLoopFeedback};
    use crate::stabilize::partition::{make_partition, PartitionRule};

    fn quadratic_2d() -> QuadraticClp {
        QuadraticClp::new(EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0).unwrap()
    }

    fn controls_2d() -> ControlSet {
        ControlSet::new(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap()
    }

    #[test]
    fn zero_field_keeps_the_trajectory_constant() {
        let clp = quadratic_2d();
        let partition = make_partition(0.1, 0.1, 0.5, PartitionRule::Uniform).unwrap();
        let policy = OpenLoopFeedback {
            control_index: 0,
            control: vec![0.0, 0.0],
        };
        let mut rng = sub_rng(1, "zero");
        let m0 = gaussian_cloud(&mut rng, 8, 2, &[1.0, -0.5], 0.5);
        let log = run_theta_trajectory(
            &clp,
            &m0,
            &partition,
            &policy,
            &ZeroField,
            &TrajectoryOptions::default(),
        )
        .unwrap();
        assert!(log.completed());
        let w0 = log.records[0].w2_to_target;
        for rec in &log.records {
            assert_eq!(rec.w2_to_target, w0);
        }
    }

    #[test]
    fn open_loop_linear_decay_matches_analytic_rate() {
        let clp = quadratic_2d();
        let partition = make_partition(0.05, 0.05, 2.0, PartitionRule::Uniform).unwrap();
        let policy = OpenLoopFeedback {
            control_index: 0,
            control: vec![0.0, 0.0],
        };
        let mut rng = sub_rng(2, "decay");
        let m0 = normalize_to_w2_from_point(
            &gaussian_cloud(&mut rng, 20, 2, &[0.0, 0.0], 1.0),
            &[0.0, 0.0],
            2.0,
        )
        .unwrap();
        let log = run_theta_trajectory(
            &clp,
            &m0,
            &partition,
            &policy,
            &LinearSteer,
            &TrajectoryOptions::default(),
        )
        .unwrap();
        for rec in &log.records {
            let expect = 2.0 * (-rec.t).exp();
            assert!(
                (rec.w2_to_target - expect).abs() < 1e-6,
                "t={}: {} vs {expect}",
                rec.t,
                rec.w2_to_target
            );
        }
    }

    #[test]
    fn closed_loop_never_loses_to_open_loop_at_desk_scale() {
        let clp = quadratic_2d();
        let controls = controls_2d();
        let partition = make_partition(0.05, 0.05, 2.5, PartitionRule::Uniform).unwrap();
        let policy = LocalFeedback {
            clp: &clp,
            field: &LinearSteer,
            controls: &controls,
            kappa: 0.5,
            eps: 1e-3,
            opts: InfConvOptions {
                probe_count: 16,
                ..Default::default()
            },
            seed: 11,
        };
        let mut rng = sub_rng(3, "closed");
        let m0 = normalize_to_w2_from_point(
            &gaussian_cloud(&mut rng, 20, 2, &[0.3, 0.1], 1.0),
            &[0.0, 0.0],
            2.0,
        )
        .unwrap();
        let log = run_theta_trajectory(
            &clp,
            &m0,
            &partition,
            &policy,
            &LinearSteer,
            &TrajectoryOptions::default(),
        )
        .unwrap();
        assert!(log.completed(), "{:?}", log.abort);
        for rec in &log.records {
            let open_loop = 2.0 * (-rec.t).exp();
            assert!(
                rec.w2_to_target <= open_loop * (1.0 + 1e-6) + 1e-9,
                "t={}: {} vs open loop {open_loop}",
                rec.t,
                rec.w2_to_target
            );
        }
    }
}
