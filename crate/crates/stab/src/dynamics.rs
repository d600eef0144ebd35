//! Controlled mean-field particle dynamics.
//!
//! Each particle follows `xdot = f(x, m, u)` where `m` is the empirical
//! measure of the whole cloud, so the continuity equation is realized purely
//! through characteristics: integrating the coupled system and re-reading the
//! particle positions as a measure is exact for empirical initial data.

use crate::error::{Result, StabError};
use crate::measures::{second_moment_sqrt, w2_distance, EmpiricalMeasure};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A controlled interaction field. `eval_into` must be deterministic and
/// finite on finite inputs.
pub trait VectorField: Sync {
    fn label(&self) -> &str;
    fn eval_into(&self, x: &[f64], m: &EmpiricalMeasure, u: &[f64], out: &mut [f64]);
    /// Analytic joint Lipschitz constant in (x, m) when known.
    fn declared_lipschitz(&self) -> Option<f64> {
        None
    }
}

/// `f(x, m, u) = -x + u`: independent relaxation toward the origin steered by
/// a bounded control.
pub struct LinearSteer;

impl VectorField for LinearSteer {
    fn label(&self) -> &str {
        "linear_steer"
    }
    fn eval_into(&self, x: &[f64], _m: &EmpiricalMeasure, u: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = -x[k] + u[k];
        }
    }
    fn declared_lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `f(x, m, u) = -(x - mean(m)) + u`: particles relax toward the cloud mean.
/// One unit of Lipschitz constant comes from `x`, one from the mean, which is
/// 1-Lipschitz in the Wasserstein distance.
pub struct MeanAttract;

impl VectorField for MeanAttract {
    fn label(&self) -> &str {
        "mean_attract"
    }
    fn eval_into(&self, x: &[f64], m: &EmpiricalMeasure, u: &[f64], out: &mut [f64]) {
        let mean = m.mean();
        for k in 0..x.len() {
            out[k] = -(x[k] - mean[k]) + u[k];
        }
    }
    fn declared_lipschitz(&self) -> Option<f64> {
        Some(2.0)
    }
}

/// `f(x, m, u) = mean(m)`: rigid drift by the cloud mean; the mean itself
/// grows exponentially. Useful as a non-contracting reference dynamic.
pub struct MeanDrift;

impl VectorField for MeanDrift {
    fn label(&self) -> &str {
        "mean_drift"
    }
    fn eval_into(&self, _x: &[f64], m: &EmpiricalMeasure, _u: &[f64], out: &mut [f64]) {
        let mean = m.mean();
        out.copy_from_slice(&mean);
    }
    fn declared_lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `f = 0`: identity flow.
pub struct ZeroField;

impl VectorField for ZeroField {
    fn label(&self) -> &str {
        "zero"
    }
    fn eval_into(&self, _x: &[f64], _m: &EmpiricalMeasure, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn declared_lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }
}

pub const BUILTIN_FIELD_LABELS: [&str; 4] = ["linear_steer", "mean_attract", "mean_drift", "zero"];

pub fn builtin_field(label: &str) -> Result<Box<dyn VectorField>> {
    match label {
        "linear_steer" => Ok(Box::new(LinearSteer)),
        "mean_attract" => Ok(Box::new(MeanAttract)),
        "mean_drift" => Ok(Box::new(MeanDrift)),
        "zero" => Ok(Box::new(ZeroField)),
        other => Err(StabError::Config(format!(
            "unknown field label `{other}`; supported: {}",
            BUILTIN_FIELD_LABELS.join(", ")
        ))),
    }
}

/// Evaluates the field once with dimension and finiteness checks.
pub fn eval_field(
    f: &dyn VectorField,
    x: &[f64],
    m: &EmpiricalMeasure,
    u: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != m.dim() || u.len() != m.dim() {
        return Err(StabError::DimensionMismatch {
            expected: m.dim(),
            got: x.len().max(u.len()),
        });
    }
    let mut out = vec![0.0; x.len()];
    f.eval_into(x, m, u, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(StabError::FieldEvaluation { particle: 0 });
    }
    Ok(out)
}

/// Finite discretization of the control set. Element order is significant:
/// argmin ties resolve to the first stored control.
#[derive(Debug, Clone)]
pub struct ControlSet {
    controls: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(controls: Vec<Vec<f64>>) -> Result<Self> {
        if controls.is_empty() {
            return Err(StabError::EmptyControlSet);
        }
        let dim = controls[0].len();
        for (i, u) in controls.iter().enumerate() {
            if u.len() != dim {
                return Err(StabError::DimensionMismatch {
                    expected: dim,
                    got: u.len(),
                });
            }
            for v in controls.iter().take(i) {
                if v == u {
                    return Err(StabError::Config(format!("duplicate control {u:?}")));
                }
            }
        }
        Ok(Self { controls })
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.controls[i]
    }

    pub fn dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.controls.iter()
    }

    pub fn max_norm(&self) -> f64 {
        self.controls
            .iter()
            .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Index of the zero control if present, else 0.
    pub fn neutral_index(&self) -> usize {
        self.controls
            .iter()
            .position(|u| u.iter().all(|v| *v == 0.0))
            .unwrap_or(0)
    }
}

/// Draws (x, mu), (y, nu), u triples inside the scenario's working ball for
/// Lipschitz-ratio sampling.
pub struct LipschitzSampler<'a> {
    pub rng: ChaCha8Rng,
    pub dim: usize,
    pub particles: usize,
    pub scale: f64,
    pub controls: &'a ControlSet,
}

impl LipschitzSampler<'_> {
    fn random_point(&mut self) -> Vec<f64> {
        let s = self.scale;
        (0..self.dim).map(|_| self.rng.gen_range(-s..s)).collect()
    }

    fn random_measure(&mut self) -> EmpiricalMeasure {
        let s = self.scale;
        let coords: Vec<f64> = (0..self.particles * self.dim)
            .map(|_| self.rng.gen_range(-s..s))
            .collect();
        EmpiricalMeasure::new(self.dim, coords).unwrap()
    }
}

const LIPSCHITZ_SAFETY: f64 = 1.2;

/// Best joint Lipschitz estimate: the declared analytic constant when the
/// field provides one, otherwise the sampled maximum ratio inflated by 1.2.
pub fn estimate_lipschitz(
    f: &dyn VectorField,
    sampler: &mut LipschitzSampler,
    trials: usize,
) -> Result<f64> {
    if let Some(c0) = f.declared_lipschitz() {
        return Ok(c0);
    }
    estimate_lipschitz_sampled(f, sampler, trials)
}

/// Sampled max of |f(x,mu,u) - f(y,nu,u)| / (|x-y| + W2(mu,nu)) times 1.2.
/// The first trial holds the measure fixed so pure-state variation is always
/// probed. Zero denominators are skipped.
pub fn estimate_lipschitz_sampled(
    f: &dyn VectorField,
    sampler: &mut LipschitzSampler,
    trials: usize,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for trial in 0..trials {
        let x = sampler.random_point();
        let y = sampler.random_point();
        let mu = sampler.random_measure();
        let nu = if trial == 0 { mu.clone() } else { sampler.random_measure() };
        let u_idx = sampler.rng.gen_range(0..sampler.controls.len());
        let u = sampler.controls.get(u_idx).to_vec();

        let dx: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dm = w2_distance(&mu, &nu)?;
        let denom = dx + dm;
        if denom == 0.0 {
            continue;
        }
        let fx = eval_field(f, &x, &mu, &u)?;
        let fy = eval_field(f, &y, &nu, &u)?;
        let num: f64 = fx
            .iter()
            .zip(&fy)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ratio = num / denom;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.map(|b| b * LIPSCHITZ_SAFETY).ok_or(StabError::NoSamples)
}

/// Sublinear growth constant: `|f(x,mu,u)| <= C1 (1 + |x| + sigma2(mu))` with
/// `C1 = max(C0, max_u |f(0, dirac0, u)|)`, clamped away from zero so the
/// bound never degenerates.
pub fn sublinear_bound(f: &dyn VectorField, c0: f64, controls: &ControlSet, dim: usize) -> f64 {
    let origin = EmpiricalMeasure::new(dim, vec![0.0; dim]).unwrap();
    let zero = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    let mut out = vec![0.0; dim];
    for u in controls.iter() {
        f.eval_into(&zero, &origin, u, &mut out);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(norm);
    }
    c0.max(worst).max(1e-12)
}

/// One held-control interval of a sampled trajectory.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    /// Sample times, `substeps + 1` of them, from `t_start` to `t_end`.
    pub times: Vec<f64>,
    /// Measure snapshot at each sample time; `states[0]` is the initial state.
    pub states: Vec<EmpiricalMeasure>,
    /// The held control vector.
    pub control: Vec<f64>,
    pub substeps: usize,
}

/// Integrates the coupled particle system with classical fixed-step RK4,
/// holding `u` over `[t_start, t_end]`. Stage measures are rebuilt from the
/// stage positions, which keeps the mean-field coupling fourth-order.
pub fn flow_segment(
    m0: &EmpiricalMeasure,
    f: &dyn VectorField,
    u: &[f64],
    t_start: f64,
    t_end: f64,
    substeps: usize,
) -> Result<FlowSegment> {
    if !(t_end > t_start) || substeps == 0 {
        return Err(StabError::ParameterOrdering(format!(
            "flow segment needs t_end > t_start and substeps >= 1 (got {t_start}..{t_end}, {substeps})"
        )));
    }
    let n = m0.n();
    let d = m0.dim();
    let h = (t_end - t_start) / substeps as f64;

    let deriv = |coords: &[f64], out: &mut Vec<f64>, t: f64| -> Result<()> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(StabError::BlowUp { t });
        }
        let m = EmpiricalMeasure::new(d, coords.to_vec())?;
        out.resize(n * d, 0.0);
        for i in 0..n {
            let (x, o) = (&coords[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
            f.eval_into(x, &m, u, o);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(StabError::BlowUp { t });
        }
        Ok(())
    };

    let mut times = Vec::with_capacity(substeps + 1);
    let mut states = Vec::with_capacity(substeps + 1);
    times.push(t_start);
    states.push(m0.clone());

    let mut x = m0.coords().to_vec();
    let mut k1 = Vec::new();
    let mut k2 = Vec::new();
    let mut k3 = Vec::new();
    let mut k4 = Vec::new();
    let mut tmp = vec![0.0; n * d];

    for step in 0..substeps {
        let t = t_start + step as f64 * h;
        deriv(&x, &mut k1, t)?;
        for i in 0..n * d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2, t)?;
        for i in 0..n * d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3, t)?;
        for i in 0..n * d {
            tmp[i] = x[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4, t)?;
        for i in 0..n * d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(StabError::BlowUp { t: t + h });
        }
        times.push(if step + 1 == substeps { t_end } else { t + h });
        states.push(EmpiricalMeasure::new(d, x.clone())?);
    }

    Ok(FlowSegment {
        times,
        states,
        control: u.to_vec(),
        substeps,
    })
}

/// Default substep count for a held interval: one stage per 0.01 time units.
pub fn default_substeps(t_start: f64, t_end: f64) -> usize {
    (((t_end - t_start) / 0.01).ceil() as usize).max(1)
}

/// Per-interval Wasserstein drift bound: along a held interval starting in
/// the R-ball around the target, `W2(m_t, m_{t_i}) <= C2(R) (t - t_i)`.
pub fn c2_constant(big_r: f64, delta: f64, c1: f64, sigma2_target: f64) -> f64 {
    c1 * (c1 * delta).exp()
        * (1.0 + 2.0 * (c1 * delta + sigma2_target + big_r) * (2.0 * c1 * delta).exp())
}

/// Drift-difference bound for the frozen-control comparison; algebraically
/// twice `C0 * C2(R)`.
pub fn c3_constant(big_r: f64, delta: f64, c0: f64, c1: f64, sigma2_target: f64) -> f64 {
    let c2 = c2_constant(big_r, delta, c1, sigma2_target);
    c0 * (c1 * (c1 * delta).exp()
        * (1.0 + 2.0 * (c1 * delta + sigma2_target + big_r) * (2.0 * c1 * delta).exp())
        + c2)
}

/// Measured sublinear-growth check: `|f| <= c1 (1 + |x| + sigma2)`.
pub fn sublinear_holds(
    f: &dyn VectorField,
    c1: f64,
    x: &[f64],
    m: &EmpiricalMeasure,
    u: &[f64],
) -> Result<bool> {
    let fx = eval_field(f, x, m, u)?;
    let norm = fx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s2 = second_moment_sqrt(m, None)?;
    Ok(norm <= c1 * (1.0 + xn + s2) + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;

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
    fn eval_field_examples() {
        let m = EmpiricalMeasure::from_points(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let f = LinearSteer;
        assert_eq!(
            eval_field(&f, &[2.0, 0.0], &m, &[0.0, 0.0]).unwrap(),
            vec![-2.0, 0.0]
        );
        assert_eq!(
            eval_field(&f, &[0.0, 0.0], &m, &[1.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        let g = MeanAttract;
        let mean = m.mean();
        assert_eq!(
            eval_field(&g, &mean, &m, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn unknown_label_lists_supported() {
        let err = match builtin_field("warp") {
            Err(e) => e.to_string(),
            Ok(_) => panic!("unknown label must error"),
        };
        for label in BUILTIN_FIELD_LABELS {
            assert!(err.contains(label));
        }
    }

    #[test]
    fn control_set_rejects_duplicates_and_empty() {
        assert!(ControlSet::new(vec![]).is_err());
        assert!(ControlSet::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert_eq!(controls_2d().neutral_index(), 0);
    }

    #[test]
    fn lipschitz_constants() {
        let controls = controls_2d();
        let mut sampler = LipschitzSampler {
            rng: sub_rng(5, "lipschitz"),
            dim: 2,
            particles: 8,
            scale: 2.0,
            controls: &controls,
        };
        assert_eq!(estimate_lipschitz(&LinearSteer, &mut sampler, 50).unwrap(), 1.0);
        assert_eq!(estimate_lipschitz(&MeanAttract, &mut sampler, 50).unwrap(), 2.0);
        let sampled = estimate_lipschitz_sampled(&LinearSteer, &mut sampler, 100).unwrap();
        assert!((1.0..=1.2 + 1e-12).contains(&sampled), "sampled={sampled}");
    }

    #[test]
    fn declared_constants_dominate_sampled_ratios() {
        let controls = controls_2d();
        for field in [&LinearSteer as &dyn VectorField, &MeanAttract] {
            let declared = field.declared_lipschitz().unwrap();
            let mut sampler = LipschitzSampler {
                rng: sub_rng(6, field.label()),
                dim: 2,
                particles: 6,
                scale: 3.0,
                controls: &controls,
            };
            let sampled = estimate_lipschitz_sampled(field, &mut sampler, 200).unwrap();
            assert!(sampled / LIPSCHITZ_SAFETY <= declared * (1.0 + 1e-6));
        }
    }

    #[test]
    fn sublinear_bound_examples() {
        let controls = controls_2d();
        let c1 = sublinear_bound(&LinearSteer, 1.0, &controls, 2);
        assert_eq!(c1, 1.0);
        let zero = sublinear_bound(&ZeroField, 0.0, &controls, 2);
        assert_eq!(zero, 1e-12);

        let mut rng = sub_rng(7, "sublinear");
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let coords: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = EmpiricalMeasure::new(2, coords).unwrap();
            let u = controls.get(rng.gen_range(0..controls.len())).to_vec();
            assert!(sublinear_holds(&LinearSteer, c1, &x, &m, &u).unwrap());
        }
    }

    #[test]
    fn flow_matches_linear_decay() {
        let m0 = EmpiricalMeasure::dirac(&[1.0]).unwrap();
        let u = vec![0.0];
        let seg = flow_segment(&m0, &LinearSteer, &u, 0.0, 0.1, 10).unwrap();
        let x = seg.states.last().unwrap().point(0)[0];
        assert!((x - (-0.1_f64).exp()).abs() < 1e-8, "x={x}");
    }

    #[test]
    fn flow_mean_drift_translates_rigidly() {
        let m0 = EmpiricalMeasure::from_points(&[vec![1.0], vec![3.0]]).unwrap();
        let seg = flow_segment(&m0, &MeanDrift, &[0.0], 0.0, 0.5, 50).unwrap();
        let last = seg.states.last().unwrap();
        // mean(t) = mean(0) e^t, particles share the shift mean(0)(e^t - 1).
        let shift = 2.0 * ((0.5_f64).exp() - 1.0);
        assert!((last.point(0)[0] - (1.0 + shift)).abs() < 1e-6);
        assert!((last.point(1)[0] - (3.0 + shift)).abs() < 1e-6);
        let spread0 = m0.point(1)[0] - m0.point(0)[0];
        let spread1 = last.point(1)[0] - last.point(0)[0];
        assert!((spread0 - spread1).abs() < 1e-9, "translation is rigid");
    }

    #[test]
    fn zero_field_is_identity_flow() {
        let m0 = EmpiricalMeasure::from_points(&[vec![1.0, -2.0], vec![0.5, 0.5]]).unwrap();
        let seg = flow_segment(&m0, &ZeroField, &[0.0, 0.0], 0.0, 1.0, 7).unwrap();
        for s in &seg.states {
            assert_eq!(s, &m0);
        }
    }

    #[test]
    fn blow_up_reports_last_finite_time() {
        struct Cubic;
        impl VectorField for Cubic {
            fn label(&self) -> &str {
                "cubic"
            }
            fn eval_into(&self, x: &[f64], _m: &EmpiricalMeasure, _u: &[f64], out: &mut [f64]) {
                for k in 0..x.len() {
                    out[k] = x[k] * x[k] * x[k];
                }
            }
        }
        let m0 = EmpiricalMeasure::dirac(&[1e150]).unwrap();
        let res = flow_segment(&m0, &Cubic, &[0.0], 0.0, 1.0, 4);
        assert!(matches!(res, Err(StabError::BlowUp { .. })));
    }

    #[test]
    fn integrator_is_fourth_order() {
        let m0 = EmpiricalMeasure::dirac(&[1.0]).unwrap();
        let exact = (-1.0_f64).exp();
        let err = |substeps: usize| {
            let seg = flow_segment(&m0, &LinearSteer, &[0.0], 0.0, 1.0, substeps).unwrap();
            (seg.states.last().unwrap().point(0)[0] - exact).abs()
        };
        let e1 = err(8);
        let e2 = err(16);
        assert!(e1 / e2 >= 8.0, "order check: {e1:.3e} vs {e2:.3e}");
    }

    #[test]
    fn c2_c3_formulas() {
        assert_eq!(c2_constant(2.0, 0.1, 0.0, 0.0), 0.0);
        let c2 = c2_constant(2.0, 0.1, 1.0, 0.0);
        let expect = (0.1_f64).exp() * (1.0 + 2.0 * 2.1 * (0.2_f64).exp());
        assert!((c2 - expect).abs() < 1e-12);
        assert!((expect - 6.775).abs() < 1e-3);

        let mut rng = sub_rng(8, "c3");
        for _ in 0..50 {
            let r = rng.gen_range(0.1..5.0);
            let d = rng.gen_range(0.01..0.5);
            let c0 = rng.gen_range(0.1..3.0);
            let c1 = rng.gen_range(0.1..3.0);
            let s = rng.gen_range(0.0..2.0);
            let c3 = c3_constant(r, d, c0, c1, s);
            assert!((c3 - 2.0 * c0 * c2_constant(r, d, c1, s)).abs() < 1e-12);
        }
    }
}
