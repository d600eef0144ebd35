//! Measure samplers shared by the moduli estimators, the Ekeland probe
//! families, and the randomized property suites. All draws run off an owned
//! deterministic stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::measures::{optimal_plan, EmpiricalMeasure};

/// Box-Muller standard normal; keeps the dependency surface at plain `rand`.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Expands a measure to exactly `n` particles by cycling its atoms. The
/// result represents the same distribution when `n` is a multiple of the
/// original count (in particular for single-atom targets).
pub fn replicate_to(m: &EmpiricalMeasure, n: usize) -> EmpiricalMeasure {
    let d = m.dim();
    let mut coords = Vec::with_capacity(n * d);
    for i in 0..n {
        coords.extend_from_slice(m.point(i % m.n()));
    }
    EmpiricalMeasure::new(d, coords).unwrap()
}

/// A per-particle displacement field with unit L2(m) norm.
pub fn unit_displacement(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n * d).map(|_| standard_normal(rng)).collect();
        let norm = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Applies `m + scale * field` particle-wise.
pub fn displace(m: &EmpiricalMeasure, field: &[f64], scale: f64) -> EmpiricalMeasure {
    let coords: Vec<f64> = m
        .coords()
        .iter()
        .zip(field)
        .map(|(x, v)| x + scale * v)
        .collect();
    EmpiricalMeasure::new(m.dim(), coords).unwrap()
}

/// Draws measures inside the Wasserstein ball of the given radius around a
/// base measure, pushing a fraction of draws onto the boundary sphere. The
/// transport along the displacement coupling bounds W2 by the displacement
/// norm, so membership is guaranteed.
pub struct BallSampler {
    pub base: EmpiricalMeasure,
    pub particles: usize,
    pub rng: ChaCha8Rng,
    /// Probability of sampling at exactly the requested radius.
    pub boundary_fraction: f64,
}

impl BallSampler {
    pub fn new(base: &EmpiricalMeasure, particles: usize, rng: ChaCha8Rng) -> Self {
        Self {
            base: replicate_to(base, particles),
            particles,
            rng,
            boundary_fraction: 0.5,
        }
    }

    /// One measure with `W2(sample, base) <= radius`; exactly `radius` when
    /// the boundary branch fires and the base is a replicated Dirac.
    pub fn sample(&mut self, radius: f64) -> EmpiricalMeasure {
        let push_boundary = self.rng.gen_bool(self.boundary_fraction.clamp(0.0, 1.0));
        let t = if push_boundary {
            radius
        } else {
            self.rng.gen_range(0.0..=radius)
        };
        let field = unit_displacement(&mut self.rng, self.particles, self.base.dim());
        displace(&self.base, &field, t)
    }

    /// One measure at displacement distance exactly `radius`.
    pub fn sample_at(&mut self, radius: f64) -> EmpiricalMeasure {
        let field = unit_displacement(&mut self.rng, self.particles, self.base.dim());
        displace(&self.base, &field, radius)
    }
}

/// Gaussian particle cloud centered at `center` with per-coordinate spread.
pub fn gaussian_cloud(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    center: &[f64],
    spread: f64,
) -> EmpiricalMeasure {
    let coords: Vec<f64> = (0..n * d)
        .map(|k| center[k % d] + spread * standard_normal(rng))
        .collect();
    EmpiricalMeasure::new(d, coords).unwrap()
}

/// Rescales displacements from a single-point target so the Wasserstein
/// distance to it is exactly `w2`.
pub fn normalize_to_w2_from_point(
    m: &EmpiricalMeasure,
    point: &[f64],
    w2: f64,
) -> Result<EmpiricalMeasure> {
    let current = crate::measures::second_moment_sqrt(m, Some(point))?;
    if current <= 1e-300 {
        // Concentrated at the target: push along an arbitrary axis.
        let mut coords = m.coords().to_vec();
        let d = m.dim();
        for i in 0..m.n() {
            coords[i * d] += w2;
        }
        return EmpiricalMeasure::new(d, coords);
    }
    let s = w2 / current;
    let d = m.dim();
    let coords: Vec<f64> = m
        .coords()
        .iter()
        .enumerate()
        .map(|(k, x)| point[k % d] + s * (x - point[k % d]))
        .collect();
    EmpiricalMeasure::new(d, coords)
}

/// Pairing-wise linear interpolation between `a` and `b` along their optimal
/// plan: the displacement geodesic restricted to empirical measures.
pub fn segment_points(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    fractions: &[f64],
) -> Result<Vec<EmpiricalMeasure>> {
    let plan = optimal_plan(a, b)?;
    let perm = plan.as_permutation()?;
    let d = a.dim();
    let mut out = Vec::with_capacity(fractions.len());
    for &s in fractions {
        let mut coords = Vec::with_capacity(a.n() * d);
        for (i, &j) in perm.iter().enumerate() {
            let (x, y) = (a.point(i), b.point(j));
            for k in 0..d {
                coords.push((1.0 - s) * x[k] + s * y[k]);
            }
        }
        out.push(EmpiricalMeasure::new(d, coords)?);
    }
    Ok(out)
}
