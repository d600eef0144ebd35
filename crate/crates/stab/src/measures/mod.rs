//! Uniform empirical measures and exact discrete optimal transport.
//!
//! A state is `N` equally weighted points in `R^d`. Squared-Wasserstein
//! distances between equal-count measures reduce to an assignment problem,
//! solved exactly in O(N^3); mixed counts fall back to a transportation LP.
//! Ties between optimal plans resolve to the lexicographically smallest
//! pairing so that downstream feedback laws are reproducible.

mod assignment;
mod flow;

use std::cmp::Ordering;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Result, StabError};
use crate::COST_TIE_TOL;

/// `N` equally weighted points in `R^d`; total mass is exactly 1 by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(StabError::DegenerateMeasure);
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(StabError::InvalidMap("non-finite coordinate".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(StabError::DegenerateMeasure);
        }
        let dim = points[0].len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(StabError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    /// Single particle at the given point.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec())
    }

    pub fn n(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mass carried by each particle.
    pub fn particle_mass(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for p in self.points() {
            for (a, x) in acc.iter_mut().zip(p) {
                *a += x;
            }
        }
        let n = self.n() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// True when every atom coincides with `point` to within `tol` per
    /// coordinate.
    pub fn is_concentrated_at(&self, point: &[f64], tol: f64) -> bool {
        point.len() == self.dim
            && self
                .points()
                .all(|p| p.iter().zip(point).all(|(a, b)| (a - b).abs() <= tol))
    }
}

/// Total order on measures used to canonicalize transport calls: dimension,
/// then particle count, then coordinates lexicographically. Coordinates are
/// finite by construction so the comparison is total.
pub fn lex_cmp(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Ordering {
    a.dim
        .cmp(&b.dim)
        .then(a.n().cmp(&b.n()))
        .then_with(|| {
            for (x, y) in a.coords.iter().zip(&b.coords) {
                match x.partial_cmp(y).expect("finite coordinates") {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
}

/// A coupling between two empirical measures with per-pair mass.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub pairs: Vec<PlanPair>,
    pub source_n: usize,
    pub target_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanPair {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Cost summary for a plan between two specific measures.
#[derive(Debug, Clone, Copy)]
pub struct PlanCostReport {
    pub squared_cost: f64,
    pub is_optimal: bool,
}

impl TransportPlan {
    /// Sum of mass * squared distance over the stored pair order. The order is
    /// fixed at construction, so the same plan always sums identically.
    pub fn squared_cost(&self, m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.mass * sq_dist(m.point(p.source), nu.point(p.target)))
            .sum()
    }

    pub fn cost_report(&self, m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> PlanCostReport {
        PlanCostReport {
            squared_cost: self.squared_cost(m, nu),
            is_optimal: true,
        }
    }

    /// Checks positivity, total mass 1, and both uniform marginals to `tol`.
    pub fn validate_marginals(&self, tol: f64) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(StabError::EmptyPlan);
        }
        let mut src = vec![0.0; self.source_n];
        let mut tgt = vec![0.0; self.target_n];
        let mut total = 0.0;
        for p in &self.pairs {
            if p.mass <= 0.0 {
                return Err(StabError::MarginalMismatch("non-positive pair mass".into()));
            }
            src[p.source] += p.mass;
            tgt[p.target] += p.mass;
            total += p.mass;
        }
        if (total - 1.0).abs() > tol {
            return Err(StabError::MarginalMismatch(format!(
                "total mass {total} differs from 1"
            )));
        }
        let su = 1.0 / self.source_n as f64;
        let tu = 1.0 / self.target_n as f64;
        for (i, s) in src.iter().enumerate() {
            if (s - su).abs() > tol {
                return Err(StabError::MarginalMismatch(format!(
                    "source {i} carries {s}, expected {su}"
                )));
            }
        }
        for (j, t) in tgt.iter().enumerate() {
            if (t - tu).abs() > tol {
                return Err(StabError::MarginalMismatch(format!(
                    "target {j} carries {t}, expected {tu}"
                )));
            }
        }
        Ok(())
    }

    /// For equal-count one-to-one plans, the permutation source -> target.
    pub fn as_permutation(&self) -> Result<Vec<usize>> {
        if self.source_n != self.target_n || self.pairs.len() != self.source_n {
            return Err(StabError::NonPermutationPlan);
        }
        let mut perm = vec![usize::MAX; self.source_n];
        for p in &self.pairs {
            if perm[p.source] != usize::MAX {
                return Err(StabError::NonPermutationPlan);
            }
            perm[p.source] = p.target;
        }
        if perm.contains(&usize::MAX) {
            return Err(StabError::NonPermutationPlan);
        }
        Ok(perm)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Image measure under a point map; particle order is preserved, so the
/// discrete change-of-variables identity holds exactly.
pub fn push_forward<F>(m: &EmpiricalMeasure, map: F) -> Result<EmpiricalMeasure>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut coords = Vec::with_capacity(m.coords.len());
    for p in m.points() {
        let q = map(p);
        if q.len() != m.dim {
            return Err(StabError::InvalidMap(format!(
                "map output has dimension {}, expected {}",
                q.len(),
                m.dim
            )));
        }
        if q.iter().any(|c| !c.is_finite()) {
            return Err(StabError::InvalidMap("map produced non-finite output".into()));
        }
        coords.extend_from_slice(&q);
    }
    EmpiricalMeasure::new(m.dim, coords)
}

/// Square root of the second moment about `base` (the origin when `None`).
pub fn second_moment_sqrt(m: &EmpiricalMeasure, base: Option<&[f64]>) -> Result<f64> {
    let origin = vec![0.0; m.dim];
    let base = base.unwrap_or(&origin);
    if base.len() != m.dim {
        return Err(StabError::DimensionMismatch {
            expected: m.dim,
            got: base.len(),
        });
    }
    let acc: f64 = m.points().map(|p| sq_dist(p, base)).sum();
    Ok((acc / m.n() as f64).sqrt())
}

fn check_compatible(m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if m.dim != nu.dim {
        return Err(StabError::DimensionMismatch {
            expected: m.dim,
            got: nu.dim,
        });
    }
    Ok(())
}

/// Minimum-squared-cost coupling. Equal particle counts are solved as an
/// assignment (the plan is a permutation with mass 1/N per pair); otherwise a
/// transportation LP runs on lcm-scaled integer masses. Among cost ties the
/// lexicographically smallest pairing is returned.
pub fn optimal_plan(m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<TransportPlan> {
    check_compatible(m, nu)?;
    // Canonical orientation keeps costs and tie-breaks independent of
    // argument order.
    let swapped = lex_cmp(m, nu) == Ordering::Greater;
    let (a, b) = if swapped { (nu, m) } else { (m, nu) };

    let plan = if a.n() == b.n() {
        optimal_plan_assignment(a, b)?
    } else {
        optimal_plan_lp(a, b)?
    };

    if !swapped {
        return Ok(plan);
    }
    Ok(TransportPlan {
        pairs: plan
            .pairs
            .iter()
            .map(|p| PlanPair {
                source: p.target,
                target: p.source,
                mass: p.mass,
            })
            .collect(),
        source_n: plan.target_n,
        target_n: plan.source_n,
    })
}

fn optimal_plan_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<TransportPlan> {
    let n = a.n();
    let mut cost = vec![0.0; n * n];
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = sq_dist(a.point(i), b.point(j));
            cost[i * n + j] = c;
            scale = scale.max(c.abs());
        }
    }
    let mut asg = assignment::solve_assignment(&cost, n);
    assignment::lexicographic_refine(&cost, n, &mut asg, COST_TIE_TOL * scale.max(1.0));
    let mass = 1.0 / n as f64;
    let pairs = (0..n)
        .map(|i| PlanPair {
            source: i,
            target: asg.row_to_col[i],
            mass,
        })
        .collect();
    Ok(TransportPlan {
        pairs,
        source_n: n,
        target_n: n,
    })
}

fn optimal_plan_lp(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<TransportPlan> {
    let (sn, tn) = (a.n(), b.n());
    // One atom on either side admits a single coupling; skip the LP.
    if sn == 1 || tn == 1 {
        let mass = 1.0 / sn.max(tn) as f64;
        let pairs = if sn == 1 {
            (0..tn)
                .map(|j| PlanPair {
                    source: 0,
                    target: j,
                    mass,
                })
                .collect()
        } else {
            (0..sn)
                .map(|i| PlanPair {
                    source: i,
                    target: 0,
                    mass,
                })
                .collect()
        };
        return Ok(TransportPlan {
            pairs,
            source_n: sn,
            target_n: tn,
        });
    }
    let mut cost = vec![0.0; sn * tn];
    for i in 0..sn {
        for j in 0..tn {
            cost[i * tn + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    let units = flow::lcm_units(sn, tn)? as f64;
    let flows = flow::solve_transport_lp(&cost, sn, tn)?;
    let pairs = flows
        .iter()
        .map(|&(i, j, f)| PlanPair {
            source: i,
            target: j,
            mass: f as f64 / units,
        })
        .collect();
    Ok(TransportPlan {
        pairs,
        source_n: sn,
        target_n: tn,
    })
}

/// Wasserstein distance of order 2. Symmetric bit-for-bit (both orientations
/// reduce to the same canonical computation) and zero exactly when the point
/// multisets coincide.
pub fn w2_distance(m: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_compatible(m, nu)?;
    // Couplings with a Dirac are unique; the distance is the second moment
    // about the atom.
    if nu.n() == 1 {
        return second_moment_sqrt(m, Some(nu.point(0)));
    }
    if m.n() == 1 {
        return second_moment_sqrt(nu, Some(m.point(0)));
    }
    let swapped = lex_cmp(m, nu) == Ordering::Greater;
    let (a, b) = if swapped { (nu, m) } else { (m, nu) };
    let plan = if a.n() == b.n() {
        optimal_plan_assignment(a, b)?
    } else {
        optimal_plan_lp(a, b)?
    };
    Ok(plan.squared_cost(a, b).max(0.0).sqrt())
}

/// Which marginal a plan is disintegrated by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMargin {
    Source,
    Target,
}

/// Family of conditional distributions keyed by the conditioning index.
#[derive(Debug, Clone)]
pub struct PlanDisintegration {
    pub by: PlanMargin,
    /// `conditionals[i]` lists (other-side index, conditional probability),
    /// each summing to 1.
    pub conditionals: Vec<Vec<(usize, f64)>>,
    /// Marginal mass at each conditioning index.
    pub marginal_mass: Vec<f64>,
}

impl PlanDisintegration {
    /// Reassembles pair masses from conditionals and the marginal; inverse of
    /// `disintegrate_plan` up to rounding.
    pub fn recombine(&self, source_n: usize, target_n: usize) -> TransportPlan {
        let mut pairs = Vec::new();
        for (i, cond) in self.conditionals.iter().enumerate() {
            for &(other, prob) in cond {
                let (source, target) = match self.by {
                    PlanMargin::Source => (i, other),
                    PlanMargin::Target => (other, i),
                };
                pairs.push(PlanPair {
                    source,
                    target,
                    mass: prob * self.marginal_mass[i],
                });
            }
        }
        TransportPlan {
            pairs,
            source_n,
            target_n,
        }
    }
}

/// Splits a plan into conditional distributions given the source (or target)
/// index. Conditionals are nonnegative and sum to 1; recombining with the
/// marginal reproduces the plan.
pub fn disintegrate_plan(plan: &TransportPlan, by: PlanMargin) -> Result<PlanDisintegration> {
    plan.validate_marginals(1e-9)?;
    let n = match by {
        PlanMargin::Source => plan.source_n,
        PlanMargin::Target => plan.target_n,
    };
    let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut marginal = vec![0.0; n];
    for p in &plan.pairs {
        let (key, other) = match by {
            PlanMargin::Source => (p.source, p.target),
            PlanMargin::Target => (p.target, p.source),
        };
        buckets[key].push((other, p.mass));
        marginal[key] += p.mass;
    }
    for (bucket, mass) in buckets.iter_mut().zip(&marginal) {
        bucket.sort_by_key(|&(other, _)| other);
        for entry in bucket.iter_mut() {
            entry.1 /= mass;
        }
    }
    Ok(PlanDisintegration {
        by,
        conditionals: buckets,
        marginal_mass: marginal,
    })
}

/// Writes a measure as CSV with header `x0,...,x{d-1}`, one row per particle.
pub fn write_measure_csv(m: &EmpiricalMeasure, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..m.dim).map(|k| format!("x{k}")).collect();
    writeln!(file, "{}", header.join(","))?;
    for p in m.points() {
        let row: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_measure_csv(path: &Path) -> Result<EmpiricalMeasure> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| StabError::Config(format!("{}: empty measure file", path.display())))??;
    let dim = header.split(',').count();
    let mut coords = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| StabError::Config(format!("{}: {e}", path.display())))
            })
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(StabError::Config(format!(
                "{}: row has {} fields, expected {dim}",
                path.display(),
                row.len()
            )));
        }
        coords.extend(row);
    }
    EmpiricalMeasure::new(dim, coords)
}
