//! Sample-and-hold time grids: strictly increasing knot sequences covering
//! `[0, horizon]` with every step inside `[delta_min, delta_max]`.

use rand::Rng;

use crate::error::{Result, StabError};
use crate::rng::sub_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionRule {
    Uniform,
    Jittered { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub times: Vec<f64>,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Partition {
    pub fn knots(&self) -> usize {
        self.times.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.first() != Some(&0.0) {
            return Err(StabError::InfeasiblePartition("must start at 0".into()));
        }
        for w in self.times.windows(2) {
            let step = w[1] - w[0];
            if step < self.delta_min - 1e-12 || step > self.delta_max + 1e-12 {
                return Err(StabError::InfeasiblePartition(format!(
                    "step {step} outside [{}, {}]",
                    self.delta_min, self.delta_max
                )));
            }
        }
        Ok(())
    }
}

/// Builds a partition of `[0, horizon]`. Uniform partitions use the largest
/// equal step not exceeding `delta_max` that lands exactly on the horizon;
/// jittered ones draw steps uniformly and may overshoot the horizon by less
/// than one minimal step.
pub fn make_partition(
    delta_min: f64,
    delta_max: f64,
    horizon: f64,
    rule: PartitionRule,
) -> Result<Partition> {
    if !(delta_min > 0.0 && delta_min <= delta_max) {
        return Err(StabError::InfeasiblePartition(format!(
            "need 0 < delta_min <= delta_max, got [{delta_min}, {delta_max}]"
        )));
    }
    if !(horizon > 0.0) || delta_min > horizon {
        return Err(StabError::InfeasiblePartition(format!(
            "horizon {horizon} shorter than the minimal step {delta_min}"
        )));
    }
    let times = match rule {
        PartitionRule::Uniform => {
            let k = (horizon / delta_max - 1e-12).ceil().max(1.0) as usize;
            let step = horizon / k as f64;
            if step < delta_min - 1e-12 {
                return Err(StabError::InfeasiblePartition(format!(
                    "uniform step {step} would fall below delta_min {delta_min}"
                )));
            }
            let mut times: Vec<f64> = (0..=k).map(|i| i as f64 * step).collect();
            *times.last_mut().unwrap() = horizon;
            times
        }
        PartitionRule::Jittered { seed } => {
            let mut rng = sub_rng(seed, "partition-jitter");
            let mut times = vec![0.0];
            let mut t = 0.0;
            loop {
                let remaining = horizon - t;
                if remaining <= delta_max + 1e-12 {
                    let step = if remaining >= delta_min { remaining } else { delta_min };
                    t += step;
                    times.push(t);
                    break;
                }
                let hi = delta_max.min(remaining - delta_min).max(delta_min);
                let step = if hi > delta_min {
                    rng.gen_range(delta_min..=hi)
                } else {
                    delta_min
                };
                t += step;
                times.push(t);
            }
            times
        }
    };
    Ok(Partition {
        times,
        delta_min,
        delta_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_lands_exactly() {
        let p = make_partition(0.05, 0.1, 1.0, PartitionRule::Uniform).unwrap();
        assert_eq!(p.times.len(), 11);
        assert_eq!(p.times[1], 0.1);
        assert_eq!(p.horizon(), 1.0);
        p.validate().unwrap();
    }

    #[test]
    fn jitter_is_reproducible_and_bounded() {
        let a = make_partition(0.05, 0.2, 10.0, PartitionRule::Jittered { seed: 9 }).unwrap();
        let b = make_partition(0.05, 0.2, 10.0, PartitionRule::Jittered { seed: 9 }).unwrap();
        assert_eq!(a.times, b.times);
        let c = make_partition(0.05, 0.2, 10.0, PartitionRule::Jittered { seed: 10 }).unwrap();
        assert_ne!(a.times, c.times);

        for seed in 0..1000 {
            let p = make_partition(0.03, 0.11, 2.0, PartitionRule::Jittered { seed }).unwrap();
            p.validate().unwrap();
            assert!(p.horizon() >= 2.0);
        }
    }

    #[test]
    fn infeasible_bounds_error() {
        assert!(make_partition(0.5, 0.4, 1.0, PartitionRule::Uniform).is_err());
        assert!(make_partition(2.0, 3.0, 1.0, PartitionRule::Uniform).is_err());
        assert!(make_partition(0.0, 0.1, 1.0, PartitionRule::Uniform).is_err());
    }
}
