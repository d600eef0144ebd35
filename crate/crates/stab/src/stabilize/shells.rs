//! Nested level-set shells for global stabilization. Outer radii satisfy
//! `2 Q_i <= Rcal(Q_{i+1})`, so the ball of radius `2 Q_i` sits inside the
//! next level set up and the shells `H_i = G_{Q_{i+1}} \ G_{Q_i}` cover
//! everything except the target itself. Each shell carries the parameters of
//! the local feedback that drives it inward.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{ControlSet, VectorField};
use crate::error::{Result, StabError};
use crate::lyapunov::{
    derived_constants, moduli_table, modulus_i, radius_rcal, ControlLyapunov, DeltaOptions,
};
use crate::measures::second_moment_sqrt;
use crate::rng::sub_rng;
use crate::sampling::BallSampler;
use crate::stabilize::select::{field_constants, select_parameters, SelectorOptions};

#[derive(Debug, Clone, Serialize)]
pub struct ShellRow {
    pub index: i64,
    /// Outer radius `Q_i`.
    pub q_outer: f64,
    /// Previous outer radius `Q_{i-1}` (kept for the hold-interval bound).
    pub q_outer_prev: f64,
    /// `Rcal(Q_i)`.
    pub rcal_q: f64,
    /// Inner target radius `q_i = Rcal(Q_{i-1}) / 2`.
    pub q_inner: f64,
    /// Operational feedback parameters for this shell.
    pub kappa: f64,
    pub eps: f64,
    pub delta_max: f64,
    /// Guaranteed capture time into `B_{q_i}`.
    pub t_bound: f64,
    /// Level threshold `I(Q_i) / 2` for membership.
    pub threshold: f64,
    /// Acceptance tolerance added to the threshold (envelope slack).
    pub accept_tol: f64,
    /// Upper bound on `phi - phi_kappa` inside the working ball; used to
    /// certify non-membership without running the envelope.
    pub gap_bound: f64,
    /// Selector tuple behind `t_bound` when the operational parameters were
    /// overridden.
    pub theory_kappa: Option<f64>,
    pub theory_eps: Option<f64>,
    pub theory_delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShellTable {
    pub rows: Vec<ShellRow>,
    pub q0: f64,
    pub c0: f64,
    pub c1: f64,
    pub sigma2_target: f64,
}

/// Where per-shell feedback parameters come from.
#[derive(Debug, Clone)]
pub enum ShellParamSource {
    /// Run the selector per shell: `(kappa_i, eps_i, delta_i, T_i)` from the
    /// inequality system on `(q_i, Q_i)`.
    Selector(SelectorOptions),
    /// Fixed operational parameters for every shell; `T_i` still comes from
    /// the per-shell selector run so the capture bound stays meaningful.
    Override {
        kappa: f64,
        eps: f64,
        delta_max: f64,
        selector: SelectorOptions,
    },
}

impl ShellTable {
    pub fn row(&self, index: i64) -> Option<&ShellRow> {
        self.rows.iter().find(|r| r.index == index)
    }

    /// Smallest stored index whose level set contains the R-ball.
    pub fn n_of_r(&self, big_r: f64) -> Result<i64> {
        self.rows
            .iter()
            .find(|r| r.rcal_q >= big_r)
            .map(|r| r.index)
            .ok_or(StabError::OutOfShellRange { w2: big_r })
    }

    /// `M(R) = Q_{N(R)}`.
    pub fn m_of_r(&self, big_r: f64) -> Result<f64> {
        let n = self.n_of_r(big_r)?;
        Ok(self.row(n).unwrap().q_outer)
    }

    /// Largest stored index strictly below `n` whose outer radius fits in
    /// the r-ball.
    pub fn k_of_r(&self, r: f64, n: i64) -> Option<i64> {
        self.rows
            .iter()
            .rev()
            .find(|row| row.index < n && row.q_outer <= r)
            .map(|row| row.index)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.index != a.index + 1 {
                return Err(StabError::Config("shell indices must be contiguous".into()));
            }
            if b.q_outer <= a.q_outer {
                return Err(StabError::Config("outer radii must increase".into()));
            }
            if 2.0 * a.q_outer > b.rcal_q * (1.0 + 1e-9) {
                return Err(StabError::Config(format!(
                    "nesting violated at shell {}: 2Q = {} exceeds Rcal(next) = {}",
                    a.index,
                    2.0 * a.q_outer,
                    b.rcal_q
                )));
            }
            if b.q_inner >= a.rcal_q {
                return Err(StabError::Config(format!(
                    "inner radius of shell {} must stay below Rcal of shell {}",
                    b.index, a.index
                )));
            }
        }
        for r in &self.rows {
            if r.rcal_q > r.q_outer * (1.0 + 1e-9) {
                return Err(StabError::Config(format!(
                    "Rcal(Q) exceeds Q at shell {}",
                    r.index
                )));
            }
        }
        Ok(())
    }
}

/// Builds the shell table on indices `i_min..=i_max` with `Q_0 = q0`.
/// Upward, each outer radius is the smallest value whose inscribed radius
/// covers twice the previous one; downward, the largest value covered by the
/// current inscribed radius.
pub fn build_shells(
    clp: &dyn ControlLyapunov,
    field: &dyn VectorField,
    controls: &ControlSet,
    q0: f64,
    i_min: i64,
    i_max: i64,
    source: &ShellParamSource,
) -> Result<ShellTable> {
    if q0 <= 0.0 || !(i_min < 0 && 0 < i_max) {
        return Err(StabError::ParameterOrdering(format!(
            "need q0 > 0 and i_min < 0 < i_max, got q0={q0}, [{i_min}, {i_max}]"
        )));
    }
    let sel_opts = match source {
        ShellParamSource::Selector(o) => o.clone(),
        ShellParamSource::Override { selector, .. } => selector.clone(),
    };
    let mods = &sel_opts.modulus;
    let mut sampler = BallSampler::new(
        clp.target(),
        sel_opts.sampler_particles,
        sub_rng(sel_opts.seed, "shell-moduli"),
    );
    let rcal = |q: f64, sampler: &mut BallSampler| -> Result<f64> {
        radius_rcal(clp, q, Some(sampler), mods)
    };

    // Outer radii over i_min-1 ..= i_max, anchored at index 0.
    let count = (i_max - i_min + 2) as usize;
    let mut q = vec![0.0_f64; count];
    let at = |i: i64| -> usize { (i - (i_min - 1)) as usize };
    q[at(0)] = q0;
    // Homogeneity shortcut: when Rcal is linear in its argument the smallest
    // admissible next radius is exactly 2 Q / Rcal(1).
    let rcal1 = rcal(1.0, &mut sampler)?;
    let probe = rcal(3.7, &mut sampler)?;
    let homogeneous = (probe - 3.7 * rcal1).abs() <= 1e-9 * probe.abs().max(1.0);

    let mut i = 0;
    while i < i_max {
        let next = if homogeneous {
            2.0 * q[at(i)] / rcal1
        } else {
            let target = 2.0 * q[at(i)];
            grow_until(q[at(i)], |cand| Ok(rcal(cand, &mut sampler)? >= target))?
        };
        q[at(i + 1)] = next;
        i += 1;
    }
    let mut i = 0;
    while i > i_min - 1 {
        let prev = rcal(q[at(i)], &mut sampler)? / 2.0;
        if !(prev > 0.0) {
            return Err(StabError::BisectionFailure(format!(
                "inscribed radius vanished descending from shell {i}"
            )));
        }
        q[at(i - 1)] = prev;
        i -= 1;
    }

    let sigma2_target = second_moment_sqrt(clp.target(), None)?;
    let (c0, c1) = field_constants(field, controls, clp.target().dim(), &sel_opts)?;

    let mut rows = Vec::new();
    for i in i_min..=i_max {
        let q_outer = q[at(i)];
        let q_outer_prev = q[at(i - 1)];
        let rcal_q = rcal(q_outer, &mut sampler)?;
        let q_inner = rcal(q_outer_prev, &mut sampler)? / 2.0;
        let threshold = 0.5 * modulus_i(clp, q_outer, Some(&mut sampler), mods)?.value;

        let (kappa, eps, delta_max, t_bound, theory) = match source {
            ShellParamSource::Selector(opts) => {
                let sel = select_parameters(clp, field, controls, q_inner, q_outer, opts)
                    .map_err(|e| {
                        StabError::Config(format!("shell {i}: parameter selection failed: {e}"))
                    })?;
                (sel.kappa, sel.eps, sel.delta_max, sel.t_bound, None)
            }
            ShellParamSource::Override {
                kappa,
                eps,
                delta_max,
                selector,
            } => {
                let sel = select_parameters(clp, field, controls, q_inner, q_outer, selector)
                    .map_err(|e| {
                        StabError::Config(format!("shell {i}: parameter selection failed: {e}"))
                    })?;
                (
                    *kappa,
                    *eps,
                    *delta_max,
                    sel.t_bound,
                    Some((sel.kappa, sel.eps, sel.delta_max)),
                )
            }
        };

        // Envelope acceptance slack and value gap at the operational
        // parameters, for classification short-circuits.
        let moduli = moduli_table(clp, q_outer, eps, Some(&mut sampler), mods)?;
        let constants = derived_constants(
            clp,
            &moduli,
            kappa,
            eps,
            q_inner.min(q_outer * 0.5),
            q_outer,
            &DeltaOptions::default(),
        )?;
        let gap_bound = moduli.omega(constants.m_ke) + constants.n_ke;

        rows.push(ShellRow {
            index: i,
            q_outer,
            q_outer_prev,
            rcal_q,
            q_inner,
            kappa,
            eps,
            delta_max,
            t_bound,
            threshold,
            accept_tol: constants.n_ke.max(crate::CHECK_TOL),
            gap_bound,
            theory_kappa: theory.map(|t| t.0),
            theory_eps: theory.map(|t| t.1),
            theory_delta: theory.map(|t| t.2),
        });
    }

    let table = ShellTable {
        rows,
        q0,
        c0,
        c1,
        sigma2_target,
    };
    table.validate()?;
    Ok(table)
}

fn grow_until(start: f64, mut pred: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    let mut cand = start;
    for _ in 0..2000 {
        cand *= 1.05;
        if pred(cand)? {
            return Ok(cand);
        }
    }
    Err(StabError::BisectionFailure(
        "no admissible next shell radius within the search range".into(),
    ))
}

const SHELL_CSV_HEADER: &str = "index,Q,q,kappa,eps,delta,T,invariant_ok";

/// Writes the table in the documented column order; `invariant_ok` records
/// `2 Q_i <= Rcal(Q_{i+1})` per row (vacuously true for the last).
pub fn write_shells_csv(table: &ShellTable, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SHELL_CSV_HEADER}")?;
    for (k, row) in table.rows.iter().enumerate() {
        let ok = match table.rows.get(k + 1) {
            Some(next) => 2.0 * row.q_outer <= next.rcal_q * (1.0 + 1e-9),
            None => true,
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            row.index, row.q_outer, row.q_inner, row.kappa, row.eps, row.delta_max, row.t_bound, ok
        )?;
    }
    Ok(())
}

/// One parsed row of the shell-table CSV:
/// `(index, Q, q, kappa, eps, delta, T, invariant_ok)`.
pub type ShellCsvRow = (i64, f64, f64, f64, f64, f64, f64, bool);

/// Reloads the CSV columns written by `write_shells_csv`.
pub fn read_shells_csv(path: &Path) -> Result<Vec<ShellCsvRow>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines
        .next()
        .ok_or_else(|| StabError::Config("empty shell table".into()))??;
    if header != SHELL_CSV_HEADER {
        return Err(StabError::Config(format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(StabError::Config(format!("bad shell row `{line}`")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| StabError::Config(format!("bad number `{s}`: {e}")))
        };
        out.push((
            parts[0]
                .parse::<i64>()
                .map_err(|e| StabError::Config(format!("bad index: {e}")))?,
            parse(parts[1])?,
            parse(parts[2])?,
            parse(parts[3])?,
            parse(parts[4])?,
            parse(parts[5])?,
            parse(parts[6])?,
            parts[7] == "true",
        ));
    }
    Ok(out)
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
    fn quadratic_ratio_is_exact() {
        let (clp, controls) = setup();
        let source = ShellParamSource::Override {
            kappa: 0.5,
            eps: 1e-3,
            delta_max: 0.05,
            selector: SelectorOptions::default(),
        };
        let table =
            build_shells(&clp, &LinearSteer, &controls, 1.0, -2, 3, &source).unwrap();
        let ratio = 2.0 * 2.0_f64.sqrt();
        for pair in table.rows.windows(2) {
            let got = pair[1].q_outer / pair[0].q_outer;
            assert!((got - ratio).abs() < 1e-12, "ratio {got}");
        }
        let q2 = table.row(2).unwrap().q_outer;
        assert!((q2 - 8.0).abs() < 1e-12, "Q_2 = {q2}");
        table.validate().unwrap();

        // Inner radii sit strictly inside the previous shell.
        for pair in table.rows.windows(2) {
            assert!(pair[1].q_inner < pair[0].q_outer);
        }
        // Capture bounds are finite (selector-backed).
        assert!(table.rows.iter().all(|r| r.t_bound.is_finite()));
    }

    #[test]
    fn csv_round_trip_is_stable() {
        let (clp, controls) = setup();
        let source = ShellParamSource::Override {
            kappa: 0.5,
            eps: 1e-3,
            delta_max: 0.05,
            selector: SelectorOptions::default(),
        };
        let table =
            build_shells(&clp, &LinearSteer, &controls, 1.0, -1, 2, &source).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shells.csv");
        write_shells_csv(&table, &path).unwrap();
        let rows = read_shells_csv(&path).unwrap();
        assert_eq!(rows.len(), table.rows.len());
        for (parsed, row) in rows.iter().zip(&table.rows) {
            assert_eq!(parsed.0, row.index);
            assert_eq!(parsed.1, row.q_outer);
            assert_eq!(parsed.5, row.delta_max);
            assert!(parsed.7);
        }
    }

    #[test]
    fn lookup_helpers() {
        let (clp, controls) = setup();
        let source = ShellParamSource::Override {
            kappa: 0.5,
            eps: 1e-3,
            delta_max: 0.05,
            selector: SelectorOptions::default(),
        };
        let table =
            build_shells(&clp, &LinearSteer, &controls, 1.0, -4, 4, &source).unwrap();
        // Rcal(Q_i) = Q_i / sqrt(2); N(R) is the smallest i with Rcal >= R.
        let n = table.n_of_r(2.0).unwrap();
        assert_eq!(n, 1);
        let m = table.m_of_r(2.0).unwrap();
        assert!((m - 2.0 * 2.0_f64.sqrt()).abs() < 1e-12);
        // Q_{-2} = 1/8 is the largest stored radius inside the 0.2-ball.
        assert_eq!(table.k_of_r(0.2, n), Some(-2));
    }
}
