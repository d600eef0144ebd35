//! Run reports and trajectory persistence. Reports are JSON; trajectories
//! are CSV with a fixed column order so downstream tooling can rely on it.
//! A report that claims success must re-validate from its own artifacts:
//! the margins are re-read from disk and re-checked without re-simulation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, StabError};
use crate::harness::scenario::Scenario;
use crate::lyapunov::{DerivedConstants, ModuliTable};
use crate::measures::write_measure_csv;
use crate::stabilize::{SelectedParameters, StabilizationVerdicts, TrajectoryLog};

pub const TRAJECTORY_CSV_HEADER: &str =
    "t,control_id,phi,phi_kappa,w2_to_target,shell_index,lemma52_margin,lemma53_margin,prop26_margin";

/// One named check with its worst observed margin (nonnegative = pass).
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub worst_margin: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl CheckOutcome {
    pub fn new(name: &str, trials: usize, worst_margin: f64, pass: bool, note: &str) -> Self {
        Self {
            name: name.to_string(),
            trials,
            worst_margin,
            pass,
            note: note.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OperationalParams {
    pub source: String,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
    pub delta_max: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct RunReport {
    pub scenario_hash: String,
    pub seed: u64,
    /// `sub_seed = seed XOR fnv1a64(name)`; the named streams used here.
    pub seed_derivation: BTreeMap<String, u64>,
    pub scenario: Option<Scenario>,
    /// Theory tuple from the parameter selector, when it was computed.
    pub selected: Option<SelectedParameters>,
    pub operational: Option<OperationalParams>,
    pub moduli: Option<ModuliTable>,
    pub constants: Option<DerivedConstants>,
    pub checks: Vec<CheckOutcome>,
    pub verdicts: Option<StabilizationVerdicts>,
    pub notes: Vec<String>,
    pub timings_sec: BTreeMap<String, f64>,
    pub revalidated: Option<bool>,
    pub all_pass: bool,
}

impl RunReport {
    pub fn compute_all_pass(&mut self) {
        self.all_pass = self.checks.iter().all(|c| c.pass)
            && self
                .verdicts
                .as_ref()
                .map(|v| {
                    use crate::stabilize::VerdictStatus::Pass;
                    v.reach.status == Pass
                        && v.bounded.status == Pass
                        && v.shrinking.status == Pass
                        && v.shell_monotone.status == Pass
                })
                .unwrap_or(true)
            && self.revalidated.unwrap_or(true);
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| StabError::Config(format!("report serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_opt_i(v: Option<i64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes the knot records in the fixed column order.
pub fn write_trajectory_csv(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRAJECTORY_CSV_HEADER}")?;
    for r in &log.records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.control_id,
            r.phi,
            fmt_opt(r.phi_kappa),
            r.w2_to_target,
            fmt_opt_i(r.shell_index),
            fmt_opt(r.pairing_margin),
            fmt_opt(r.decrease_margin),
            fmt_opt(r.step_bound_margin),
        )?;
    }
    Ok(())
}

/// Measure snapshots every `stride` knots (and the final state).
pub fn write_snapshots(log: &TrajectoryLog, dir: &Path, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Ok(0);
    }
    std::fs::create_dir_all(dir)?;
    let mut written = 0;
    for (i, r) in log.records.iter().enumerate() {
        if i % stride == 0 || i + 1 == log.records.len() {
            write_measure_csv(&r.measure, &dir.join(format!("measure_{i:06}.csv")))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Parsed row of a trajectory CSV.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub t: f64,
    pub control_id: usize,
    pub phi: f64,
    pub phi_kappa: Option<f64>,
    pub w2_to_target: f64,
    pub shell_index: Option<i64>,
    pub pairing_margin: Option<f64>,
    pub decrease_margin: Option<f64>,
    pub step_bound_margin: Option<f64>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines
        .next()
        .ok_or_else(|| StabError::MissingRecords(format!("{}: empty", path.display())))??;
    if header != TRAJECTORY_CSV_HEADER {
        return Err(StabError::Config(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| StabError::Config(format!("bad float `{s}`: {e}")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 9 {
            return Err(StabError::Config(format!("bad trajectory row `{line}`")));
        }
        rows.push(TrajectoryRow {
            t: p[0].parse().map_err(|e| StabError::Config(format!("{e}")))?,
            control_id: p[1].parse().map_err(|e| StabError::Config(format!("{e}")))?,
            phi: p[2].parse().map_err(|e| StabError::Config(format!("{e}")))?,
            phi_kappa: parse_opt(p[3])?,
            w2_to_target: p[4].parse().map_err(|e| StabError::Config(format!("{e}")))?,
            shell_index: if p[5].is_empty() {
                None
            } else {
                Some(p[5].parse().map_err(|e| StabError::Config(format!("{e}")))?)
            },
            pairing_margin: parse_opt(p[6])?,
            decrease_margin: parse_opt(p[7])?,
            step_bound_margin: parse_opt(p[8])?,
        });
    }
    Ok(rows)
}

/// Re-reads the persisted trajectory and re-checks every margin column plus
/// the reach-and-stay property, without re-simulating. Returns false when
/// any persisted margin contradicts a claimed pass.
pub fn revalidate_from_artifacts(out_dir: &Path, r: f64, require_reach: bool) -> Result<bool> {
    let rows = read_trajectory_csv(&out_dir.join("trajectory.csv"))?;
    if rows.is_empty() {
        return Ok(false);
    }
    let mut ok = true;
    for row in &rows {
        if let Some(m) = row.pairing_margin {
            ok &= m >= 0.0;
        }
        if let Some(m) = row.decrease_margin {
            ok &= m > 0.0;
        }
        if let Some(m) = row.step_bound_margin {
            ok &= m >= 0.0;
        }
    }
    if require_reach {
        let mut reach = None;
        for row in &rows {
            if row.w2_to_target <= r + crate::CHECK_TOL {
                reach = reach.or(Some(row.t));
            } else {
                reach = None;
            }
        }
        ok &= reach.is_some();
    }
    Ok(ok)
}
