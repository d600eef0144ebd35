//! Control-Lyapunov pairs over the Wasserstein space and the ball moduli that
//! feed every quantitative feedback bound.
//!
//! A pair `(phi, psi)` consists of a nonnegative functional `phi` vanishing
//! exactly at the target measure and a positive rate function `psi(m, eps)`
//! that upper-bounds the best achievable subgradient pairing: for every
//! admissible subgradient `alpha` of `phi` at `m`,
//! `min_u  integral p . f(x, m, u) dalpha <= -psi(m, eps)`.
//!
//! From `phi` alone we derive, for a radius `R` around the target:
//! `S(R)` (sup of `phi` on the closed ball), `I(R)` (inf outside the open
//! ball), the sublevel sets `G_R = {phi <= I(R)/2}`, the inscribed radius
//! `Rcal(R) = sup { r : B_r inside G_R }`, and a continuity modulus `omega`.
//! The built-in quadratic pair has closed forms for all of them; sampled
//! estimates (with conservative safety factors) cover user-supplied pairs.

use serde::Serialize;

use crate::dynamics::{ControlSet, VectorField};
use crate::error::{Result, StabError};
use crate::measures::{second_moment_sqrt, w2_distance, EmpiricalMeasure};
use crate::proximal::SubgradientMeasure;
use crate::sampling::{gaussian_cloud, normalize_to_w2_from_point, BallSampler};
use crate::CHECK_TOL;

/// Evaluation interface of a control-Lyapunov pair. Gradients are sampled
/// per particle, in the same layout as the measure's coordinates.
///
/// The `closed_form_*` hooks let a pair expose exact moduli; estimators fall
/// back to sampling when they return `None`.
pub trait ControlLyapunov: Sync {
    fn phi(&self, m: &EmpiricalMeasure) -> f64;
    fn phi_grad(&self, m: &EmpiricalMeasure) -> Vec<f64>;
    fn psi(&self, m: &EmpiricalMeasure, eps: f64) -> f64;
    fn eps0(&self) -> f64;
    fn target(&self) -> &EmpiricalMeasure;

    fn closed_form_sup(&self, _radius: f64) -> Option<f64> {
        None
    }
    fn closed_form_inf(&self, _radius: f64) -> Option<f64> {
        None
    }
    fn closed_form_inscribed(&self, _radius: f64) -> Option<f64> {
        None
    }
    /// Upper bound for `sup |phi(a) - phi(b)|` over pairs within `delta`
    /// inside the ball of the given radius.
    fn closed_form_omega(&self, _ball_radius: f64, _delta: f64) -> Option<f64> {
        None
    }
    /// Infimum of `psi(., eps)` over the annulus `inner <= W2(target, .) <=
    /// outer`.
    fn closed_form_annulus_psi_inf(&self, _inner: f64, _outer: f64, _eps: f64) -> Option<f64> {
        None
    }
}

/// The built-in pair: `phi(m) = sigma2(m)^2 / 2` about a Dirac target at the
/// origin, `psi(m, eps) = phi(m) (1 + eps/eps0)`. Since `W2(m, dirac0)`
/// equals the second moment root, `phi = W2^2/2` and every ball modulus is
/// explicit.
#[derive(Debug, Clone)]
pub struct QuadraticClp {
    target: EmpiricalMeasure,
    eps0: f64,
}

impl QuadraticClp {
    pub fn new(target: EmpiricalMeasure, eps0: f64) -> Result<Self> {
        if !target.is_concentrated_at(&vec![0.0; target.dim()], 0.0) {
            return Err(StabError::UnsupportedClp(
                "quadratic pair requires a target concentrated at the origin".into(),
            ));
        }
        if eps0 <= 0.0 {
            return Err(StabError::UnsupportedClp("eps0 must be positive".into()));
        }
        Ok(Self { target, eps0 })
    }
}

impl ControlLyapunov for QuadraticClp {
    fn phi(&self, m: &EmpiricalMeasure) -> f64 {
        let s2 = second_moment_sqrt(m, None).expect("dimension checked at call sites");
        0.5 * s2 * s2
    }

    fn phi_grad(&self, m: &EmpiricalMeasure) -> Vec<f64> {
        m.coords().to_vec()
    }

    fn psi(&self, m: &EmpiricalMeasure, eps: f64) -> f64 {
        self.phi(m) * (1.0 + eps / self.eps0)
    }

    fn eps0(&self) -> f64 {
        self.eps0
    }

    fn target(&self) -> &EmpiricalMeasure {
        &self.target
    }

    fn closed_form_sup(&self, radius: f64) -> Option<f64> {
        Some(0.5 * radius * radius)
    }

    fn closed_form_inf(&self, radius: f64) -> Option<f64> {
        Some(0.5 * radius * radius)
    }

    fn closed_form_inscribed(&self, radius: f64) -> Option<f64> {
        Some(radius / 2.0_f64.sqrt())
    }

    fn closed_form_omega(&self, ball_radius: f64, delta: f64) -> Option<f64> {
        // Lipschitz-on-ball bound; overestimates the true sup by at most
        // delta^2, which is the safe side wherever omega is compared against.
        Some(delta * ball_radius + 0.5 * delta * delta)
    }

    fn closed_form_annulus_psi_inf(&self, inner: f64, _outer: f64, eps: f64) -> Option<f64> {
        Some(0.5 * inner * inner * (1.0 + eps / self.eps0))
    }
}

/// Builds the built-in quadratic pair for one of the supported controlled
/// fields, starting from `eps0_start` and shrinking `eps0` until the
/// subgradient pairing condition passes a calibration sweep of exact
/// gradient lifts.
pub fn builtin_quadratic_clp(
    target: &EmpiricalMeasure,
    controls: &ControlSet,
    field: &dyn VectorField,
    eps0_start: f64,
) -> Result<QuadraticClp> {
    match field.label() {
        "linear_steer" | "mean_attract" => {}
        other => {
            return Err(StabError::UnsupportedClp(format!(
                "no built-in pair for field `{other}`"
            )))
        }
    }
    let mut eps0 = eps0_start;
    let sweep = calibration_measures(target, controls)?;
    for _ in 0..20 {
        let clp = QuadraticClp::new(target.clone(), eps0)?;
        let mut all_pass = true;
        'sweep: for m in &sweep {
            for frac in [0.3, 0.6, 0.9] {
                let eps = frac * eps0;
                let alpha = SubgradientMeasure::gradient_lift(m, &clp.phi_grad(m))?;
                let report = clp_condition4_check(&clp, field, controls, m, eps, &[alpha])?;
                if !report.pass {
                    all_pass = false;
                    break 'sweep;
                }
            }
        }
        if all_pass {
            return QuadraticClp::new(target.clone(), eps0);
        }
        eps0 *= 0.5;
    }
    Err(StabError::UnsupportedClp(
        "calibration sweep failed to certify the pairing condition".into(),
    ))
}

fn calibration_measures(
    target: &EmpiricalMeasure,
    controls: &ControlSet,
) -> Result<Vec<EmpiricalMeasure>> {
    let d = target.dim();
    let n = 16;
    let mut rng = crate::rng::sub_rng(0x0c11b, "clp-calibration");
    let origin = vec![0.0; d];
    let offset_cap = 0.4 * controls.max_norm().min(1.0);
    let zero_mean = |m: &EmpiricalMeasure| -> Result<EmpiricalMeasure> {
        let mean = m.mean();
        crate::measures::push_forward(m, |p| p.iter().zip(&mean).map(|(x, c)| x - c).collect())
    };
    let mut out = Vec::new();
    for &radius in &[0.05, 0.2, 1.0, 3.0] {
        let cloud = zero_mean(&gaussian_cloud(&mut rng, n, d, &origin, 1.0))?;
        out.push(normalize_to_w2_from_point(&cloud, &origin, radius)?);
        if offset_cap > 0.0 {
            // Barycenter offsets stay within the control authority at every
            // radius: normalize the spread first, then translate.
            let offset = offset_cap.min(0.5 * radius);
            let spread_radius = (radius * radius - offset * offset).max(0.0).sqrt();
            let cloud = zero_mean(&gaussian_cloud(&mut rng, n, d, &origin, 1.0))?;
            let scaled = normalize_to_w2_from_point(&cloud, &origin, spread_radius)?;
            let recentred = crate::measures::push_forward(&scaled, |p| {
                let mut q = p.to_vec();
                q[0] += offset;
                q
            })?;
            out.push(recentred);
        }
    }
    Ok(out)
}

/// Result of a sup/inf modulus estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulusValue {
    pub value: f64,
    /// Raw sampled extremum before the safety factor, when sampling ran.
    pub sampled_raw: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ModulusOptions {
    pub samples: usize,
    pub safety_sup: f64,
    pub safety_inf: f64,
    pub prefer_closed_form: bool,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        Self {
            samples: 128,
            safety_sup: 1.1,
            safety_inf: 0.9,
            prefer_closed_form: true,
        }
    }
}

/// `S(R)`: sup of `phi` over the closed R-ball around the target. Sampled
/// estimates are lower bounds of the true sup and are inflated by the
/// configured safety factor.
pub fn modulus_s(
    clp: &dyn ControlLyapunov,
    radius: f64,
    sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<ModulusValue> {
    if opts.prefer_closed_form {
        if let Some(v) = clp.closed_form_sup(radius) {
            return Ok(ModulusValue {
                value: v,
                sampled_raw: None,
            });
        }
    }
    let sampler = sampler.ok_or(StabError::NoSamples)?;
    if opts.samples == 0 {
        return Err(StabError::NoSamples);
    }
    let mut sup = f64::NEG_INFINITY;
    for _ in 0..opts.samples {
        let m = sampler.sample(radius);
        sup = sup.max(clp.phi(&m));
    }
    Ok(ModulusValue {
        value: sup * opts.safety_sup,
        sampled_raw: Some(sup),
    })
}

/// `I(R)`: inf of `phi` outside the open R-ball. Sampling covers the sphere
/// and a band beyond it; the estimate is deflated by the safety factor.
pub fn modulus_i(
    clp: &dyn ControlLyapunov,
    radius: f64,
    sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<ModulusValue> {
    if opts.prefer_closed_form {
        if let Some(v) = clp.closed_form_inf(radius) {
            return Ok(ModulusValue {
                value: v,
                sampled_raw: None,
            });
        }
    }
    let sampler = sampler.ok_or(StabError::NoSamples)?;
    if opts.samples == 0 {
        return Err(StabError::NoSamples);
    }
    let mut inf = f64::INFINITY;
    for k in 0..opts.samples {
        // Bias toward the sphere where the infimum of a coercive phi lives.
        let stretch = 1.0 + 2.0 * (k as f64 / opts.samples as f64).powi(2);
        let m = sampler.sample_at(radius * stretch);
        inf = inf.min(clp.phi(&m));
    }
    Ok(ModulusValue {
        value: inf * opts.safety_inf,
        sampled_raw: Some(inf),
    })
}

/// `Rcal(R)`: the largest `r` with `sup_{B_r} phi <= I(R)/2`, i.e. the radius
/// of the biggest ball inscribed in the half-level set `G_R`. Generic pairs
/// are resolved by bisection on the sup modulus.
pub fn radius_rcal(
    clp: &dyn ControlLyapunov,
    radius: f64,
    sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<f64> {
    if radius <= 0.0 {
        return Err(StabError::ParameterOrdering("radius must be positive".into()));
    }
    if opts.prefer_closed_form {
        if let Some(v) = clp.closed_form_inscribed(radius) {
            return Ok(v);
        }
    }
    let sampler = sampler.ok_or(StabError::NoSamples)?;
    let half_i = 0.5 * modulus_i(clp, radius, Some(sampler), opts)?.value;
    let sup_at = |r: f64, sampler: &mut BallSampler| -> Result<f64> {
        Ok(modulus_s(clp, r, Some(sampler), opts)?.value)
    };
    let mut lo = 0.0;
    let mut hi = radius;
    if sup_at(hi, sampler)? <= half_i {
        return Err(StabError::BisectionFailure(format!(
            "sup phi on the {radius}-ball does not exceed I/2; level set is degenerate"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if sup_at(mid, sampler)? <= half_i {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `omega_R^eps(delta)`: modulus of continuity of `phi` over the ball of
/// radius `M^eps(R)` around the target. The sampled variant draws pairs at
/// distance at most `delta` inside the ball and inflates by the sup safety
/// factor.
pub fn omega_modulus(
    clp: &dyn ControlLyapunov,
    radius: f64,
    eps: f64,
    delta: f64,
    sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<ModulusValue> {
    if delta < 0.0 {
        return Err(StabError::ParameterOrdering("delta must be nonnegative".into()));
    }
    let ball = outer_ball_radius(clp, radius, eps, opts)?;
    omega_on_ball(clp, ball, delta, sampler, opts)
}

fn omega_on_ball(
    clp: &dyn ControlLyapunov,
    ball: f64,
    delta: f64,
    sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<ModulusValue> {
    if opts.prefer_closed_form {
        if let Some(v) = clp.closed_form_omega(ball, delta) {
            return Ok(ModulusValue {
                value: v,
                sampled_raw: None,
            });
        }
    }
    let sampler = sampler.ok_or(StabError::NoSamples)?;
    let mut sup: f64 = 0.0;
    for _ in 0..opts.samples {
        let inner = (ball - delta).max(0.0);
        let a = sampler.sample(inner);
        let field = crate::sampling::unit_displacement(&mut sampler.rng, a.n(), a.dim());
        let b = crate::sampling::displace(&a, &field, delta);
        sup = sup.max((clp.phi(&a) - clp.phi(&b)).abs());
    }
    Ok(ModulusValue {
        value: sup * opts.safety_sup,
        sampled_raw: Some(sup),
    })
}

/// `M^eps(R) = R + sqrt(2 S(R) + eps^2)`: the ball that contains every
/// envelope pseudo-minimizer started inside `B_R`.
pub fn outer_ball_radius(
    clp: &dyn ControlLyapunov,
    radius: f64,
    eps: f64,
    opts: &ModulusOptions,
) -> Result<f64> {
    let s = modulus_s(clp, radius, None, opts)
        .or_else(|_| {
            let mut fallback = BallSampler::new(
                clp.target(),
                16.max(clp.target().n()),
                crate::rng::sub_rng(0x0c11b, "outer-ball"),
            );
            modulus_s(clp, radius, Some(&mut fallback), opts)
        })?
        .value;
    Ok(radius + (2.0 * s + eps * eps).sqrt())
}

/// Ball moduli of a pair at one working radius, with the continuity modulus
/// pinned to the `M^eps(R)` ball.
#[derive(Debug, Clone, Serialize)]
pub struct ModuliTable {
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "S")]
    pub sup_phi: f64,
    #[serde(rename = "I")]
    pub inf_phi: f64,
    #[serde(rename = "Rcal")]
    pub inscribed_radius: f64,
    pub omega: OmegaModel,
}

/// How the continuity modulus is evaluated.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaModel {
    /// `omega(d) = d * ball_radius + d^2 / 2`.
    LipschitzBall { ball_radius: f64 },
    /// Piecewise-linear interpolation of sampled values, inflated by
    /// `safety`; constant extrapolation beyond the grid is not allowed.
    Sampled { ball_radius: f64, grid: Vec<(f64, f64)>, safety: f64 },
}

impl OmegaModel {
    pub fn eval(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        match self {
            OmegaModel::LipschitzBall { ball_radius } => {
                delta * ball_radius + 0.5 * delta * delta
            }
            OmegaModel::Sampled { grid, safety, .. } => {
                let mut prev = (0.0, 0.0);
                for &(d, w) in grid {
                    if delta <= d {
                        let t = if d > prev.0 { (delta - prev.0) / (d - prev.0) } else { 1.0 };
                        return (prev.1 + t * (w - prev.1)) * safety;
                    }
                    prev = (d, w);
                }
                prev.1 * safety
            }
        }
    }
}

impl ModuliTable {
    pub fn omega(&self, delta: f64) -> f64 {
        self.omega.eval(delta)
    }
}

/// Builds the moduli table at radius `R` for the inf-convolution parameter
/// `eps` (which sets the omega ball).
pub fn moduli_table(
    clp: &dyn ControlLyapunov,
    radius: f64,
    eps: f64,
    mut sampler: Option<&mut BallSampler>,
    opts: &ModulusOptions,
) -> Result<ModuliTable> {
    let sup_phi = modulus_s(clp, radius, sampler.as_deref_mut(), opts)?.value;
    let inf_phi = modulus_i(clp, radius, sampler.as_deref_mut(), opts)?.value;
    let inscribed = radius_rcal(clp, radius, sampler.as_deref_mut(), opts)?;
    let ball = radius + (2.0 * sup_phi + eps * eps).sqrt();
    let omega = if opts.prefer_closed_form && clp.closed_form_omega(ball, 1.0).is_some() {
        OmegaModel::LipschitzBall { ball_radius: ball }
    } else {
        let sampler = sampler.ok_or(StabError::NoSamples)?;
        let mut grid = Vec::new();
        let steps = 16;
        for k in 1..=steps {
            let d = ball * k as f64 / steps as f64;
            let w = omega_on_ball(
                clp,
                ball,
                d,
                Some(sampler),
                &ModulusOptions {
                    prefer_closed_form: false,
                    safety_sup: 1.0,
                    ..opts.clone()
                },
            )?;
            grid.push((d, w.value));
        }
        // Enforce monotonicity of the sampled table.
        for k in 1..grid.len() {
            grid[k].1 = grid[k].1.max(grid[k - 1].1);
        }
        OmegaModel::Sampled {
            ball_radius: ball,
            grid,
            safety: opts.safety_sup,
        }
    };
    Ok(ModuliTable {
        radius,
        sup_phi,
        inf_phi,
        inscribed_radius: inscribed,
        omega,
    })
}

/// The scalar constants derived from the moduli for one parameter choice.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedConstants {
    /// `kappa sqrt(2 S(R) + eps^2 kappa^2) - eps kappa^2`: how far the
    /// envelope minimizer can travel from its base point.
    pub m_ke: f64,
    /// `R + sqrt(2 S(R) + eps^2)`: ball radius containing the minimizers.
    pub m_e: f64,
    /// `eps sqrt(2 kappa^2 S(R)) + eps m_ke`: acceptance slack of the
    /// envelope value. `S(R)` replaces the pointwise envelope value so the
    /// constant depends on `R` alone.
    pub n_ke: f64,
    /// `eps kappa^2 + kappa sqrt(eps^2 kappa^2 + 2 omega(m_ke))`: travel
    /// bound sharpened through the continuity modulus.
    pub k_ke: f64,
    /// One third of the inf of `psi(., eps_floor)` over the annulus
    /// `[Rcal(r)/2, m_e]`: the guaranteed decrease rate.
    pub delta: f64,
    pub kappa: f64,
    pub eps: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
}

#[derive(Debug, Clone)]
pub struct DeltaOptions {
    /// `psi` is evaluated at `eps_floor_factor * eps0` in the annulus inf.
    pub eps_floor_factor: f64,
    pub samples: usize,
    pub safety_inf: f64,
    pub prefer_closed_form: bool,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            eps_floor_factor: 1e-6,
            samples: 192,
            safety_inf: 0.9,
            prefer_closed_form: true,
        }
    }
}

/// Computes all derived constants for parameters `(kappa, eps)` on the radii
/// pair `0 < r < R`.
pub fn derived_constants(
    clp: &dyn ControlLyapunov,
    moduli: &ModuliTable,
    kappa: f64,
    eps: f64,
    r: f64,
    big_r: f64,
    delta_opts: &DeltaOptions,
) -> Result<DerivedConstants> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(StabError::ParameterOrdering(format!(
            "kappa must lie in (0, 1], got {kappa}"
        )));
    }
    if eps < 0.0 {
        return Err(StabError::ParameterOrdering("eps must be nonnegative".into()));
    }
    if !(r > 0.0 && r < big_r) {
        return Err(StabError::ParameterOrdering(format!(
            "need 0 < r < R, got r={r}, R={big_r}"
        )));
    }
    if (moduli.radius - big_r).abs() > 1e-12 * big_r.max(1.0) {
        return Err(StabError::ParameterOrdering(format!(
            "moduli table was built for R={}, asked for R={big_r}",
            moduli.radius
        )));
    }
    let s = moduli.sup_phi;
    let m_ke = kappa * (2.0 * s + eps * eps * kappa * kappa).sqrt() - eps * kappa * kappa;
    let m_e = big_r + (2.0 * s + eps * eps).sqrt();
    let n_ke = eps * (2.0 * kappa * kappa * s).sqrt() + eps * m_ke;
    let k_ke = eps * kappa * kappa
        + kappa * (eps * eps * kappa * kappa + 2.0 * moduli.omega(m_ke)).sqrt();

    let opts = ModulusOptions::default();
    let inner = 0.5
        * match clp.closed_form_inscribed(r) {
            Some(v) if delta_opts.prefer_closed_form => v,
            _ => {
                let mut sampler = BallSampler::new(
                    clp.target(),
                    16.max(clp.target().n()),
                    crate::rng::sub_rng(0x0c11b, "delta-inner"),
                );
                radius_rcal(clp, r, Some(&mut sampler), &opts)?
            }
        };
    let eps_floor = delta_opts.eps_floor_factor * clp.eps0();
    let psi_inf = if delta_opts.prefer_closed_form {
        clp.closed_form_annulus_psi_inf(inner, m_e, eps_floor)
    } else {
        None
    };
    let psi_inf = match psi_inf {
        Some(v) => v,
        None => {
            let mut sampler = BallSampler::new(
                clp.target(),
                16.max(clp.target().n()),
                crate::rng::sub_rng(0x0c11b, "delta-annulus"),
            );
            let mut inf = f64::INFINITY;
            for k in 0..delta_opts.samples.max(1) {
                let t = k as f64 / (delta_opts.samples.max(2) - 1) as f64;
                let radius = inner + t * (m_e - inner);
                let m = sampler.sample_at(radius);
                inf = inf.min(clp.psi(&m, eps_floor));
            }
            inf * delta_opts.safety_inf
        }
    };
    let delta = psi_inf / 3.0;

    let out = DerivedConstants {
        m_ke,
        m_e,
        n_ke,
        k_ke,
        delta,
        kappa,
        eps,
        r,
        big_r,
    };
    debug_assert!(out.m_ke <= out.m_e - big_r + CHECK_TOL);
    Ok(out)
}

/// Outcome of the pairing condition for one candidate subgradient.
#[derive(Debug, Clone, Serialize)]
pub struct Condition4Item {
    pub pairing_min: f64,
    pub best_control: usize,
    /// `-psi(m, eps)`, the level the pairing must not exceed.
    pub threshold: f64,
    /// `threshold - pairing_min`; nonnegative means pass.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition4Report {
    pub items: Vec<Condition4Item>,
    pub pass: bool,
    pub worst_margin: f64,
}

/// Checks the defining pairing inequality of a control-Lyapunov pair on a
/// list of candidate subgradients at `m`: the best control must make the
/// pairing at most `-psi(m, eps)`.
pub fn clp_condition4_check(
    clp: &dyn ControlLyapunov,
    field: &dyn VectorField,
    controls: &ControlSet,
    m: &EmpiricalMeasure,
    eps: f64,
    alphas: &[SubgradientMeasure],
) -> Result<Condition4Report> {
    if controls.is_empty() {
        return Err(StabError::EmptyControlSet);
    }
    if eps >= clp.eps0() {
        return Err(StabError::ParameterOrdering(format!(
            "eps={eps} must stay below eps0={}",
            clp.eps0()
        )));
    }
    if m.is_concentrated_at(&vec![0.0; m.dim()], 0.0)
        && w2_distance(m, clp.target())? == 0.0
    {
        return Err(StabError::ParameterOrdering(
            "pairing condition is undefined at the target measure".into(),
        ));
    }
    let threshold = -clp.psi(m, eps);
    let mut items = Vec::with_capacity(alphas.len());
    let mut worst = f64::INFINITY;
    let mut out = vec![0.0; m.dim()];
    for alpha in alphas {
        let mut best_value = f64::INFINITY;
        let mut best_control = 0;
        for (ui, u) in controls.iter().enumerate() {
            let mut pairing = 0.0;
            for atom in alpha.atoms() {
                field.eval_into(&atom.position, m, u, &mut out);
                let dot: f64 = atom.covector.iter().zip(&out).map(|(p, v)| p * v).sum();
                pairing += atom.mass * dot;
            }
            if pairing < best_value {
                best_value = pairing;
                best_control = ui;
            }
        }
        let margin = threshold - best_value;
        worst = worst.min(margin);
        items.push(Condition4Item {
            pairing_min: best_value,
            best_control,
            threshold,
            margin,
        });
    }
    Ok(Condition4Report {
        pass: worst >= 0.0,
        worst_margin: worst,
        items,
    })
}
