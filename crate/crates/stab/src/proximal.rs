//! Wasserstein Moreau envelopes and proximal subgradients.
//!
//! The envelope of `phi` at `m` with parameter `kappa` is
//!
//! ```text
//! phi_k(m) = inf over (mu, pi)  [ phi(mu) + (1/2k^2) * transport cost of pi ]
//! ```
//!
//! Exact minimizers need not exist over the whole measure space, so an
//! accepted point is certified against the two Ekeland variational
//! inequalities on a probe family instead: (1) the candidate improves on `m`
//! by at least `eps` times its displacement, and (2) no probe beats the
//! candidate by more than `eps` times their separation.
//!
//! The minimizing measure is parametrized by one point per particle of `m`,
//! descended with backtracking line search while the coupling is refreshed by
//! exact re-assignment. Pushing the final plan through
//! `(x, y) -> (y, (x - y)/k^2)` yields a discrete measure on position x
//! covector pairs: the canonical proximal subgradient at the minimizer.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, StabError};
use crate::lyapunov::ControlLyapunov;
use crate::measures::{optimal_plan, w2_distance, EmpiricalMeasure, TransportPlan};
use crate::sampling::{displace, segment_points, unit_displacement};
use crate::CHECK_TOL;

/// Discrete measure on position x covector pairs.
#[derive(Debug, Clone)]
pub struct SubgradientAtom {
    pub position: Vec<f64>,
    pub covector: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct SubgradientMeasure {
    atoms: Vec<SubgradientAtom>,
    dim: usize,
}

impl SubgradientMeasure {
    pub fn new(atoms: Vec<SubgradientAtom>, dim: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(StabError::DegenerateMeasure);
        }
        let mut total = 0.0;
        for a in &atoms {
            if a.position.len() != dim || a.covector.len() != dim {
                return Err(StabError::DimensionMismatch {
                    expected: dim,
                    got: a.position.len().max(a.covector.len()),
                });
            }
            if a.mass <= 0.0 || !a.mass.is_finite() {
                return Err(StabError::MarginalMismatch("atom mass must be positive".into()));
            }
            if a.position.iter().chain(&a.covector).any(|v| !v.is_finite()) {
                return Err(StabError::InvalidMap("non-finite subgradient atom".into()));
            }
            total += a.mass;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(StabError::MarginalMismatch(format!(
                "atom masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms, dim })
    }

    /// The exact-gradient lift of a measure: one atom `(x_i, grad_i, 1/N)`
    /// per particle.
    pub fn gradient_lift(m: &EmpiricalMeasure, grad: &[f64]) -> Result<Self> {
        if grad.len() != m.n() * m.dim() {
            return Err(StabError::DimensionMismatch {
                expected: m.n() * m.dim(),
                got: grad.len(),
            });
        }
        let d = m.dim();
        let mass = m.particle_mass();
        let atoms = (0..m.n())
            .map(|i| SubgradientAtom {
                position: m.point(i).to_vec(),
                covector: grad[i * d..(i + 1) * d].to_vec(),
                mass,
            })
            .collect();
        Self::new(atoms, d)
    }

    pub fn atoms(&self) -> &[SubgradientAtom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Second moments of both marginal components.
    pub fn second_moments(&self) -> (f64, f64) {
        let mut pos = 0.0;
        let mut cov = 0.0;
        for a in &self.atoms {
            pos += a.mass * a.position.iter().map(|v| v * v).sum::<f64>();
            cov += a.mass * a.covector.iter().map(|v| v * v).sum::<f64>();
        }
        (pos, cov)
    }

    /// Returns, for each particle of `m0`, the list of (atom index,
    /// conditional probability) whose positions sit on that particle.
    /// Errors unless the position marginal reproduces `m0` exactly.
    pub fn group_by_position(&self, m0: &EmpiricalMeasure) -> Result<Vec<Vec<(usize, f64)>>> {
        let tol = 1e-9;
        let n = m0.n();
        let unit = m0.particle_mass();
        let mut groups: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut marginal = vec![0.0; n];
        for (ai, atom) in self.atoms.iter().enumerate() {
            let mut chosen = None;
            for (i, used) in marginal.iter().enumerate().take(n) {
                let close = m0
                    .point(i)
                    .iter()
                    .zip(&atom.position)
                    .all(|(a, b)| (a - b).abs() <= tol);
                if close && used + atom.mass <= unit + tol {
                    chosen = Some(i);
                    break;
                }
            }
            let i = chosen.ok_or_else(|| {
                StabError::MarginalMismatch(format!(
                    "atom {ai} does not sit on any base particle with remaining mass"
                ))
            })?;
            marginal[i] += atom.mass;
            groups[i].push((ai, atom.mass));
        }
        for (i, &mass) in marginal.iter().enumerate() {
            if (mass - unit).abs() > tol {
                return Err(StabError::MarginalMismatch(format!(
                    "particle {i} carries marginal {mass}, expected {unit}"
                )));
            }
        }
        for group in groups.iter_mut() {
            let total: f64 = group.iter().map(|(_, m)| m).sum();
            for entry in group.iter_mut() {
                entry.1 /= total;
            }
        }
        Ok(groups)
    }
}

/// Accepted output of the envelope minimization.
#[derive(Debug, Clone)]
pub struct InfConvResult {
    /// Envelope value: `phi(minimizer) + cost/(2 kappa^2)` at the accepted
    /// point; never exceeds `phi(base)`.
    pub value: f64,
    pub minimizer: EmpiricalMeasure,
    /// Optimal plan between the base measure and the minimizer.
    pub plan: TransportPlan,
    /// The measure the envelope was evaluated at.
    pub base: EmpiricalMeasure,
    /// Ekeland parameter actually used (halved once on retry).
    pub eps_used: f64,
    pub iterations: usize,
    pub ekeland_ok: bool,
}

impl InfConvResult {
    /// Squared transport cost between base and minimizer under the plan.
    pub fn squared_cost(&self) -> f64 {
        self.plan.squared_cost(&self.base, &self.minimizer)
    }
}

#[derive(Debug, Clone)]
pub struct InfConvOptions {
    pub max_iters: usize,
    /// Re-solve the base-to-candidate assignment every this many iterations.
    pub repair_every: usize,
    pub probe_count: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub tol: f64,
}

impl Default for InfConvOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            repair_every: 10,
            probe_count: 64,
            armijo: 1e-4,
            shrink: 0.5,
            tol: CHECK_TOL,
        }
    }
}

struct Objective<'a> {
    clp: &'a dyn ControlLyapunov,
    base: &'a EmpiricalMeasure,
    inv_two_kappa_sq: f64,
}

impl Objective<'_> {
    /// `phi(mu_Y) + (1/2k^2) * (1/N) sum |y_i - x_pair(i)|^2`.
    fn value(&self, y: &EmpiricalMeasure, pair: &[usize]) -> f64 {
        let n = y.n() as f64;
        let mut msd = 0.0;
        for (i, &xi) in pair.iter().enumerate() {
            let (yy, xx) = (y.point(i), self.base.point(xi));
            msd += yy.iter().zip(xx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        self.clp.phi(y) + self.inv_two_kappa_sq * msd / n
    }

    /// L2(m) gradient: `grad phi(mu_Y)_i + (y_i - x_pair(i)) / kappa^2`.
    fn gradient(&self, y: &EmpiricalMeasure, pair: &[usize], out: &mut Vec<f64>) -> f64 {
        let d = y.dim();
        let g = self.clp.phi_grad(y);
        out.resize(y.n() * d, 0.0);
        let mut sq = 0.0;
        for (i, &xi) in pair.iter().enumerate() {
            let (yy, xx) = (y.point(i), self.base.point(xi));
            for k in 0..d {
                let v = g[i * d + k] + 2.0 * self.inv_two_kappa_sq * (yy[k] - xx[k]);
                out[i * d + k] = v;
                sq += v * v;
            }
        }
        (sq / y.n() as f64).sqrt()
    }
}

/// Minimizes the envelope objective by gradient descent with backtracking,
/// refreshing the coupling by exact re-assignment, and accepts only once the
/// descent direction is below `eps/2` in L2(m) and the Ekeland probe check
/// passes. Errors with the best iterate when the iteration cap is hit.
pub fn inf_convolution(
    clp: &dyn ControlLyapunov,
    kappa: f64,
    eps: f64,
    m: &EmpiricalMeasure,
    opts: &InfConvOptions,
    rng: &mut ChaCha8Rng,
) -> Result<InfConvResult> {
    if !(kappa > 0.0 && kappa <= 1.0) || eps <= 0.0 {
        return Err(StabError::ParameterOrdering(format!(
            "need kappa in (0,1] and eps > 0, got kappa={kappa}, eps={eps}"
        )));
    }
    let n = m.n();
    let d = m.dim();
    let obj = Objective {
        clp,
        base: m,
        inv_two_kappa_sq: 0.5 / (kappa * kappa),
    };

    let mut pair: Vec<usize> = (0..n).collect();
    let mut y = m.clone();
    let mut value = obj.value(&y, &pair);
    let mut grad = Vec::new();
    let mut ekeland_attempts = 0;

    for iter in 0..opts.max_iters {
        let gnorm = obj.gradient(&y, &pair, &mut grad);
        if gnorm <= 0.5 * eps {
            let probes = ekeland_probes(m, &y, kappa, opts.probe_count, rng)?;
            let report = ekeland_verify(clp, kappa, eps, m, &y, &probes)?;
            if report.ok {
                return finalize(clp, &obj, m, y, pair, eps, iter, opts);
            }
            ekeland_attempts += 1;
            if ekeland_attempts >= 3 {
                return Err(StabError::NonConvergence {
                    iterations: iter,
                    eps,
                    best_value: value,
                });
            }
        }

        // Backtracking step along the negative gradient.
        let mut step = kappa * kappa;
        let mut accepted = false;
        while step > 1e-18 {
            let coords: Vec<f64> = y
                .coords()
                .iter()
                .zip(&grad)
                .map(|(a, g)| a - step * g)
                .collect();
            let candidate = EmpiricalMeasure::new(d, coords)?;
            let cand_value = obj.value(&candidate, &pair);
            if cand_value <= value - opts.armijo * step * gnorm * gnorm {
                y = candidate;
                value = cand_value;
                accepted = true;
                break;
            }
            step *= opts.shrink;
        }
        if !accepted && gnorm > 0.5 * eps {
            // Numerically stalled above the threshold; surface the cap error
            // with the best iterate's value.
            return Err(StabError::NonConvergence {
                iterations: iter,
                eps,
                best_value: value,
            });
        }

        if (iter + 1) % opts.repair_every == 0 {
            repair_pairing(&obj, m, &y, &mut pair, &mut value, opts.tol)?;
        }
    }
    Err(StabError::NonConvergence {
        iterations: opts.max_iters,
        eps,
        best_value: value,
    })
}

fn repair_pairing(
    obj: &Objective,
    m: &EmpiricalMeasure,
    y: &EmpiricalMeasure,
    pair: &mut Vec<usize>,
    value: &mut f64,
    tol: f64,
) -> Result<()> {
    let plan = optimal_plan(m, y)?;
    let perm = plan.as_permutation()?;
    let mut new_pair = vec![0usize; y.n()];
    for (src, &tgt) in perm.iter().enumerate() {
        new_pair[tgt] = src;
    }
    let new_value = obj.value(y, &new_pair);
    if new_value < *value - tol {
        *pair = new_pair;
        *value = new_value;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    clp: &dyn ControlLyapunov,
    obj: &Objective,
    m: &EmpiricalMeasure,
    y: EmpiricalMeasure,
    mut pair: Vec<usize>,
    eps: f64,
    iterations: usize,
    opts: &InfConvOptions,
) -> Result<InfConvResult> {
    let mut value = obj.value(&y, &pair);
    repair_pairing(obj, m, &y, &mut pair, &mut value, opts.tol)?;
    let plan = optimal_plan(m, &y)?;
    let final_value = clp.phi(&y) + plan.squared_cost(m, &y) * obj.inv_two_kappa_sq;
    Ok(InfConvResult {
        value: final_value.min(value),
        minimizer: y,
        plan,
        base: m.clone(),
        eps_used: eps,
        iterations,
        ekeland_ok: true,
    })
}

/// Runs `inf_convolution`, halving `eps` and retrying once on
/// non-convergence.
pub fn inf_convolution_adaptive(
    clp: &dyn ControlLyapunov,
    kappa: f64,
    eps: f64,
    m: &EmpiricalMeasure,
    opts: &InfConvOptions,
    rng: &mut ChaCha8Rng,
) -> Result<InfConvResult> {
    match inf_convolution(clp, kappa, eps, m, opts, rng) {
        Ok(res) => Ok(res),
        Err(StabError::NonConvergence { .. }) => {
            inf_convolution(clp, kappa, 0.5 * eps, m, opts, rng)
        }
        Err(e) => Err(e),
    }
}

/// Standard probe family for the Ekeland check: the base measure itself,
/// random perturbations of the candidate at scales `kappa^2`, `kappa`, 1,
/// descent-direction pushes at scale `kappa^2`, and points on the segment
/// between candidate and base.
pub fn ekeland_probes(
    m: &EmpiricalMeasure,
    candidate: &EmpiricalMeasure,
    kappa: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EmpiricalMeasure>> {
    let count = count.max(8);
    let mut probes = Vec::with_capacity(count);
    probes.push(m.clone());

    let segments = (count / 4).clamp(2, 8);
    let fractions: Vec<f64> = (1..=segments)
        .map(|k| k as f64 / (segments + 1) as f64)
        .collect();
    probes.extend(segment_points(candidate, m, &fractions)?);

    let scales = [kappa * kappa, kappa, 1.0, 4.0 * kappa * kappa];
    let mut k = 0;
    while probes.len() < count {
        let field = unit_displacement(rng, candidate.n(), candidate.dim());
        probes.push(displace(candidate, &field, scales[k % scales.len()]));
        k += 1;
    }
    Ok(probes)
}

#[derive(Debug, Clone, Serialize)]
pub struct EkelandReport {
    pub ok: bool,
    /// Smallest slack across the base inequality and every probe; negative
    /// beyond tolerance means rejection.
    pub worst_margin: f64,
    /// Index of the first failing probe, if any (the base inequality reports
    /// as `usize::MAX`).
    pub failing_probe: Option<usize>,
}

/// Verifies both variational inequalities for a candidate pseudo-minimizer:
/// against the base measure exactly, and against every probe.
pub fn ekeland_verify(
    clp: &dyn ControlLyapunov,
    kappa: f64,
    eps: f64,
    m: &EmpiricalMeasure,
    candidate: &EmpiricalMeasure,
    probes: &[EmpiricalMeasure],
) -> Result<EkelandReport> {
    if probes.is_empty() {
        return Err(StabError::NoSamples);
    }
    let half_inv = 0.5 / (kappa * kappa);
    let w_mc = w2_distance(m, candidate)?;
    let lhs = clp.phi(candidate) + half_inv * w_mc * w_mc;

    let mut worst = clp.phi(m) - eps * w_mc - lhs;
    let mut failing = if worst < -CHECK_TOL { Some(usize::MAX) } else { None };

    for (idx, probe) in probes.iter().enumerate() {
        let w_mp = w2_distance(m, probe)?;
        let w_cp = w2_distance(candidate, probe)?;
        let margin = clp.phi(probe) + half_inv * w_mp * w_mp + eps * w_cp - lhs;
        if margin < worst {
            worst = margin;
        }
        if margin < -CHECK_TOL && failing.is_none() {
            failing = Some(idx);
        }
    }
    Ok(EkelandReport {
        ok: failing.is_none(),
        worst_margin: worst,
        failing_probe: failing,
    })
}

/// Pushes the accepted plan through `(x, y) -> (y, (x - y)/kappa^2)`: the
/// canonical subgradient of `phi` at the minimizer.
pub fn gamma_subgradient(result: &InfConvResult, kappa: f64) -> Result<SubgradientMeasure> {
    let perm = result.plan.as_permutation()?;
    let d = result.base.dim();
    let mass = result.base.particle_mass();
    let inv_ksq = 1.0 / (kappa * kappa);
    let mut atoms = Vec::with_capacity(perm.len());
    for (i, &j) in perm.iter().enumerate() {
        let x = result.base.point(i);
        let yv = result.minimizer.point(j);
        let covector: Vec<f64> = x.iter().zip(yv).map(|(a, b)| (a - b) * inv_ksq).collect();
        atoms.push(SubgradientAtom {
            position: yv.to_vec(),
            covector,
            mass,
        });
    }
    SubgradientMeasure::new(atoms, d)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubgradientReport {
    pub ok: bool,
    pub worst_margin: f64,
    pub probes_checked: usize,
    pub couplings_checked: usize,
    /// (probe index, coupling index) of the first failure.
    pub first_failure: Option<(usize, usize)>,
}

/// Checks the defining inequality of a proximal eps-subgradient at `m0`
/// against probe measures: for every tested coupling of `(m0, probe)` lifted
/// through the subgradient's conditionals,
///
/// ```text
/// phi(probe) >= phi(m0) + <p, x2 - x1> - sigma * cost - eps * W2(m0, probe)
/// ```
///
/// Probes outside the stated radius are skipped.
pub fn proximal_subgradient_verify(
    clp: &dyn ControlLyapunov,
    m0: &EmpiricalMeasure,
    alpha: &SubgradientMeasure,
    eps: f64,
    sigma: f64,
    radius: f64,
    probes: &[EmpiricalMeasure],
) -> Result<SubgradientReport> {
    let groups = alpha.group_by_position(m0)?;
    let phi0 = clp.phi(m0);
    let mut worst = f64::INFINITY;
    let mut first_failure = None;
    let mut probes_checked = 0;
    let mut couplings_checked = 0;

    for (pi, probe) in probes.iter().enumerate() {
        let w = w2_distance(m0, probe)?;
        if w > radius + CHECK_TOL {
            continue;
        }
        probes_checked += 1;
        let phi_probe = clp.phi(probe);
        let couplings = candidate_couplings(m0, probe)?;
        for (ci, plan) in couplings.iter().enumerate() {
            couplings_checked += 1;
            let mut pairing = 0.0;
            let mut cost = 0.0;
            for p in &plan.pairs {
                let x1 = m0.point(p.source);
                let x2 = probe.point(p.target);
                cost += p.mass
                    * x1.iter()
                        .zip(x2)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                for &(ai, cond) in &groups[p.source] {
                    let atom = &alpha.atoms()[ai];
                    let dot: f64 = atom
                        .covector
                        .iter()
                        .zip(x2.iter().zip(x1))
                        .map(|(pv, (b, a))| pv * (b - a))
                        .sum();
                    pairing += p.mass * cond * dot;
                }
            }
            let margin = phi_probe - (phi0 + pairing - sigma * cost - eps * w);
            if margin < worst {
                worst = margin;
            }
            if margin < -CHECK_TOL && first_failure.is_none() {
                first_failure = Some((pi, ci));
            }
        }
    }
    if probes_checked == 0 {
        return Err(StabError::NoSamples);
    }
    Ok(SubgradientReport {
        ok: first_failure.is_none(),
        worst_margin: worst,
        probes_checked,
        couplings_checked,
        first_failure,
    })
}

/// The optimal coupling plus, for equal particle counts, the identity and a
/// cyclic-shift pairing; enough to exercise the lifted inequality beyond the
/// optimal plan alone.
fn candidate_couplings(
    m0: &EmpiricalMeasure,
    probe: &EmpiricalMeasure,
) -> Result<Vec<TransportPlan>> {
    let mut plans = vec![optimal_plan(m0, probe)?];
    if m0.n() == probe.n() && m0.n() > 1 {
        let n = m0.n();
        let mass = 1.0 / n as f64;
        for shift in [0usize, 1] {
            let pairs = (0..n)
                .map(|i| crate::measures::PlanPair {
                    source: i,
                    target: (i + shift) % n,
                    mass,
                })
                .collect();
            plans.push(TransportPlan {
                pairs,
                source_n: n,
                target_n: n,
            });
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorReport {
    pub ok: bool,
    /// `rhs - lhs`; nonnegative means the expansion bound holds.
    pub slack: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Checks the envelope Taylor bound for a displacement field `b` (flat
/// `n * d` layout) and step `tau`: the envelope at `(Id + tau b) # m` must
/// not exceed the envelope at `m` plus the plan pairing with `tau b`, the
/// quadratic remainder, and the acceptance slack constant.
#[allow(clippy::too_many_arguments)]
pub fn taylor_bound_verify(
    clp: &dyn ControlLyapunov,
    kappa: f64,
    eps: f64,
    m: &EmpiricalMeasure,
    b: &[f64],
    tau: f64,
    big_r: f64,
    opts: &InfConvOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TaylorReport> {
    if b.len() != m.n() * m.dim() {
        return Err(StabError::DimensionMismatch {
            expected: m.n() * m.dim(),
            got: b.len(),
        });
    }
    if w2_distance(m, clp.target())? > big_r + CHECK_TOL {
        return Err(StabError::ParameterOrdering(
            "base measure must lie in the R-ball around the target".into(),
        ));
    }
    let res = inf_convolution(clp, kappa, eps, m, opts, rng)?;
    let n_ke = acceptance_slack(clp, kappa, eps, big_r);

    let mu = displace(m, b, tau);
    let lhs = inf_convolution(clp, kappa, eps, &mu, opts, rng)?.value;

    let d = m.dim();
    let inv_ksq = 1.0 / (kappa * kappa);
    let mut pairing = 0.0;
    for p in &res.plan.pairs {
        let x = res.base.point(p.source);
        let y = res.minimizer.point(p.target);
        let bi = &b[p.source * d..(p.source + 1) * d];
        let dot: f64 = x
            .iter()
            .zip(y)
            .zip(bi)
            .map(|((a, c), bb)| (a - c) * inv_ksq * tau * bb)
            .sum();
        pairing += p.mass * dot;
    }
    let b_l2_sq = b.iter().map(|v| v * v).sum::<f64>() / m.n() as f64;
    let rhs = res.value + pairing + tau * tau * 0.5 * inv_ksq * b_l2_sq + n_ke;
    Ok(TaylorReport {
        ok: lhs <= rhs + CHECK_TOL,
        slack: rhs - lhs,
        lhs,
        rhs,
    })
}

/// `N_k^e(R) = eps sqrt(2 k^2 S(R)) + eps M_k^e(R)` evaluated through the
/// pair's sup modulus.
pub fn acceptance_slack(clp: &dyn ControlLyapunov, kappa: f64, eps: f64, big_r: f64) -> f64 {
    let s = clp.closed_form_sup(big_r).unwrap_or(0.5 * big_r * big_r);
    let m_ke = kappa * (2.0 * s + eps * eps * kappa * kappa).sqrt() - eps * kappa * kappa;
    eps * (2.0 * kappa * kappa * s).sqrt() + eps * m_ke
}
