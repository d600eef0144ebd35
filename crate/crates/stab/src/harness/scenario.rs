//! Scenario files: a single TOML document describing the space, dynamics,
//! control set, Lyapunov pair, radii, partition, and tolerances of one run.
//! Loading validates everything up front and echoes the resolved defaults
//! back, so the report always shows the exact configuration that ran.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{builtin_field, ControlSet, VectorField, BUILTIN_FIELD_LABELS};
use crate::error::{Result, StabError};
use crate::lyapunov::{builtin_quadratic_clp, QuadraticClp};
use crate::measures::{read_measure_csv, EmpiricalMeasure};
use crate::rng::sub_rng;
use crate::sampling::{gaussian_cloud, normalize_to_w2_from_point};
use crate::stabilize::{make_partition, Partition, PartitionRule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    /// "local" or "global".
    pub mode: String,
    pub space: SpaceSpec,
    pub field: FieldSpec,
    pub controls: ControlsSpec,
    pub clp: ClpSpec,
    #[serde(default)]
    pub target: TargetSpec,
    pub initial: InitialSpec,
    pub radii: RadiiSpec,
    pub feedback: FeedbackSpec,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub shells: Option<ShellsSpec>,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sabotage: Option<SabotageSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub dim: usize,
    pub particles: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSpec {
    /// Explicit control vectors; the zero control should come first when ties
    /// at the target are meant to hold it still.
    pub list: Option<Vec<Vec<f64>>>,
    /// Axis lattice: zero plus +/- max_norm along each coordinate axis.
    pub axis_max_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClpSpec {
    /// Only "builtin_quadratic" is supported.
    pub kind: String,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
}

fn default_eps0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// "origin" (default) or a measure CSV path.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// "gaussian" or "file".
    pub kind: String,
    pub file: Option<PathBuf>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    pub center: Option<Vec<f64>>,
    /// Rescale so the distance to the target point is exactly this.
    pub normalize_w2: Option<f64>,
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiSpec {
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSpec {
    /// "selector": run with the selector tuple. "override": run with the
    /// kappa/eps below (the selector tuple is still computed and reported).
    /// "constant": hold one control open-loop (negative control).
    pub source: String,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
    pub control_index: Option<usize>,
    /// Envelope probe count per knot.
    #[serde(default = "default_probes")]
    pub probe_count: usize,
}

fn default_probes() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub rule: String,
    pub delta_max: f64,
    pub delta_min: Option<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    /// RK4 substeps per held interval; default one stage per 0.01 time.
    pub substeps_per_knot: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellsSpec {
    pub q0: f64,
    pub i_min: i64,
    pub i_max: i64,
    #[serde(default)]
    pub m_sweep: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    #[serde(default = "default_margin_tol")]
    pub margin_tol: f64,
    #[serde(default = "default_atom_tol")]
    pub atom_tol: f64,
}

impl Default for TolerancesSpec {
    fn default() -> Self {
        Self {
            margin_tol: default_margin_tol(),
            atom_tol: default_atom_tol(),
        }
    }
}

fn default_margin_tol() -> f64 {
    1e-6
}

fn default_atom_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Write a measure CSV every this many knots (0 = never).
    #[serde(default)]
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SabotageSpec {
    /// Deliberately wrong Lipschitz constant for negative-control checks.
    pub declared_c0: Option<f64>,
}

/// Everything a command needs, constructed and validated from a scenario.
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub hash: String,
    pub field: Box<dyn VectorField>,
    pub controls: ControlSet,
    pub clp: QuadraticClp,
    pub initial: EmpiricalMeasure,
    pub partition: Partition,
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StabError::Config(format!("{}: {e}", path.display())))?;
    let scenario: Scenario = toml::from_str(&text)
        .map_err(|e| StabError::Config(format!("{}: {e}", path.display())))?;
    validate(&scenario, path.parent().unwrap_or(Path::new(".")))?;
    Ok(scenario)
}

fn validate(s: &Scenario, base: &Path) -> Result<()> {
    if s.schema_version != SCHEMA_VERSION {
        return Err(StabError::Config(format!(
            "schema_version {} unsupported (expected {SCHEMA_VERSION})",
            s.schema_version
        )));
    }
    if s.space.dim == 0 || s.space.particles == 0 {
        return Err(StabError::Config("space: dim and particles must be >= 1".into()));
    }
    if !(s.radii.r > 0.0 && s.radii.r < s.radii.big_r) {
        return Err(StabError::Config(format!(
            "radii: need 0 < r < R, got r={}, R={}",
            s.radii.r, s.radii.big_r
        )));
    }
    if !BUILTIN_FIELD_LABELS.contains(&s.field.label.as_str()) {
        return Err(StabError::Config(format!(
            "field: unknown label `{}`; supported: {}",
            s.field.label,
            BUILTIN_FIELD_LABELS.join(", ")
        )));
    }
    match s.mode.as_str() {
        "local" => {}
        "global" => {
            if s.shells.is_none() {
                return Err(StabError::Config("global mode requires a [shells] section".into()));
            }
        }
        other => {
            return Err(StabError::Config(format!(
                "mode: `{other}` is not one of local, global"
            )))
        }
    }
    match s.feedback.source.as_str() {
        "selector" => {}
        "override" => {
            if s.feedback.kappa.is_none() || s.feedback.eps.is_none() {
                return Err(StabError::Config(
                    "feedback: override source requires kappa and eps".into(),
                ));
            }
        }
        "constant" => {
            if s.feedback.control_index.is_none() {
                return Err(StabError::Config(
                    "feedback: constant source requires control_index".into(),
                ));
            }
        }
        other => {
            return Err(StabError::Config(format!(
                "feedback: `{other}` is not one of selector, override, constant"
            )))
        }
    }
    if s.clp.kind != "builtin_quadratic" {
        return Err(StabError::Config(format!(
            "clp: unsupported kind `{}` (only builtin_quadratic)",
            s.clp.kind
        )));
    }
    match s.initial.kind.as_str() {
        "gaussian" => {}
        "file" => {
            let file = s.initial.file.as_ref().ok_or_else(|| {
                StabError::Config("initial: kind = file requires a path".into())
            })?;
            let resolved = base.join(file);
            if !resolved.exists() {
                return Err(StabError::Config(format!(
                    "initial: file {} does not exist",
                    resolved.display()
                )));
            }
        }
        other => {
            return Err(StabError::Config(format!(
                "initial: `{other}` is not one of gaussian, file"
            )))
        }
    }
    if let Some(file) = &s.target.file {
        let resolved = base.join(file);
        if !resolved.exists() {
            return Err(StabError::Config(format!(
                "target: file {} does not exist",
                resolved.display()
            )));
        }
    }
    if s.controls.list.is_none() && s.controls.axis_max_norm.is_none() {
        return Err(StabError::Config(
            "controls: provide either `list` or `axis_max_norm`".into(),
        ));
    }
    if !(s.partition.delta_max > 0.0 && s.partition.horizon > 0.0) {
        return Err(StabError::Config("partition: delta_max and horizon must be positive".into()));
    }
    Ok(())
}

/// Stable content hash of the resolved scenario (seed included).
pub fn scenario_hash(s: &Scenario) -> String {
    let canonical = serde_json::to_string(s).expect("scenario serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Instantiates every runtime object the commands need.
pub fn build_scenario(mut s: Scenario, base: &Path, seed_override: Option<u64>) -> Result<BuiltScenario> {
    if let Some(seed) = seed_override {
        s.seed = seed;
    }
    validate(&s, base)?;
    let d = s.space.dim;

    let controls = match (&s.controls.list, s.controls.axis_max_norm) {
        (Some(list), _) => ControlSet::new(list.clone())?,
        (None, Some(max_norm)) => {
            let mut vs = vec![vec![0.0; d]];
            for k in 0..d {
                for sign in [1.0, -1.0] {
                    let mut u = vec![0.0; d];
                    u[k] = sign * max_norm;
                    vs.push(u);
                }
            }
            ControlSet::new(vs)?
        }
        (None, None) => unreachable!("validated"),
    };
    if controls.dim() != d {
        return Err(StabError::Config(format!(
            "controls have dimension {}, space has {d}",
            controls.dim()
        )));
    }

    let field = builtin_field(&s.field.label)?;

    let target = match &s.target.file {
        Some(file) => read_measure_csv(&base.join(file))?,
        None => EmpiricalMeasure::dirac(&vec![0.0; d])?,
    };
    if target.dim() != d {
        return Err(StabError::Config("target dimension mismatch".into()));
    }
    let clp = builtin_quadratic_clp(&target, &controls, field.as_ref(), s.clp.eps0)?;

    let initial = match s.initial.kind.as_str() {
        "file" => read_measure_csv(&base.join(s.initial.file.as_ref().unwrap()))?,
        _ => {
            let center = s
                .initial
                .center
                .clone()
                .unwrap_or_else(|| vec![0.0; d]);
            if center.len() != d {
                return Err(StabError::Config("initial: center dimension mismatch".into()));
            }
            let mut rng = sub_rng(s.seed, "initial-measure");
            gaussian_cloud(&mut rng, s.space.particles, d, &center, s.initial.spread)
        }
    };
    if initial.dim() != d {
        return Err(StabError::Config("initial measure dimension mismatch".into()));
    }
    let initial = match s.initial.normalize_w2 {
        Some(w2) => normalize_to_w2_from_point(&initial, target.point(0), w2)?,
        None => initial,
    };

    let rule = match s.partition.rule.as_str() {
        "uniform" => PartitionRule::Uniform,
        "jittered" => PartitionRule::Jittered {
            seed: crate::rng::sub_seed(s.seed, "partition"),
        },
        other => {
            return Err(StabError::Config(format!(
                "partition: `{other}` is not one of uniform, jittered"
            )))
        }
    };
    let delta_min = s.partition.delta_min.unwrap_or(match rule {
        PartitionRule::Uniform => s.partition.delta_max,
        PartitionRule::Jittered { .. } => 0.5 * s.partition.delta_max,
    });
    let partition = make_partition(delta_min, s.partition.delta_max, s.partition.horizon, rule)?;

    let hash = scenario_hash(&s);
    Ok(BuiltScenario {
        scenario: s,
        hash,
        field,
        controls,
        clp,
        initial,
        partition,
    })
}
