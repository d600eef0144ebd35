//! The four CLI commands. Each one builds its scenario, does the work,
//! writes artifacts under the output directory, and returns a report plus
//! the process exit code (0 pass, 2 property failure, 3 configuration
//! error, 4 numerical non-convergence).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::dynamics::c2_constant;
use crate::error::{Result, StabError};
use crate::harness::report::{
    revalidate_from_artifacts, write_snapshots, write_trajectory_csv, CheckOutcome,
    OperationalParams, RunReport,
};
use crate::harness::scenario::{build_scenario, load_scenario, BuiltScenario, Scenario};
use crate::harness::suites::{lemmas_suite, proximal_suite, transport_suite};
use crate::lyapunov::{derived_constants, moduli_table, ControlLyapunov, DeltaOptions, ModulusOptions};
use crate::measures::second_moment_sqrt;
use crate::proximal::InfConvOptions;
use crate::rng::sub_seed;
use crate::stabilize::select::field_constants;
use crate::stabilize::{
    build_shells, s_stabilization_check, select_parameters, write_shells_csv, FeedbackPolicy,
    GlobalFeedback, LocalFeedback, OpenLoopFeedback, SelectorOptions, ShellParamSource, ShellTable,
    TrajectoryLog, TrajectoryOptions,
};

pub struct CommandOutcome {
    pub report: RunReport,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct LocalVerdicts {
    pub reached: bool,
    pub t_reach: Option<f64>,
    pub stayed_to_horizon: bool,
    pub max_w2: f64,
}

fn base_report(built: &BuiltScenario) -> RunReport {
    let mut seed_derivation = BTreeMap::new();
    for name in [
        "initial-measure",
        "partition",
        "selector-moduli",
        "selector-lipschitz",
        "infconv/knot0",
        "classify/shell0/knot0",
    ] {
        seed_derivation.insert(name.to_string(), sub_seed(built.scenario.seed, name));
    }
    RunReport {
        scenario_hash: built.hash.clone(),
        seed: built.scenario.seed,
        seed_derivation,
        scenario: Some(built.scenario.clone()),
        notes: vec![
            "decrease-rate annulus: upper radius taken as the pseudo-minimizer ball bound M_eps(R)"
                .into(),
            "capture-time bound: explicit first-entry estimate plus one hold interval".into(),
        ],
        ..Default::default()
    }
}

/// Runs the scenario's trajectory (local or shell-dispatched), writes the
/// trajectory CSV, snapshots, shell table, and report, and re-validates the
/// persisted artifacts before claiming success.
pub fn cmd_simulate(built: &BuiltScenario, out_dir: &Path) -> Result<CommandOutcome> {
    std::fs::create_dir_all(out_dir)?;
    log::info!(
        "simulate: scenario {} (seed {}, mode {}) -> {}",
        &built.hash[..12],
        built.scenario.seed,
        built.scenario.mode,
        out_dir.display()
    );
    let mut report = base_report(built);
    let mut timings = BTreeMap::new();
    let s = &built.scenario;
    let clp = &built.clp;
    let (r, big_r) = (s.radii.r, s.radii.big_r);

    // Theory tuple (recorded even when overridden).
    let sel_opts = SelectorOptions {
        seed: s.seed,
        ..Default::default()
    };
    let t0 = Instant::now();
    let selected = match select_parameters(clp, built.field.as_ref(), &built.controls, r, big_r, &sel_opts)
    {
        Ok(sel) => Some(sel),
        Err(e) => {
            if s.feedback.source == "selector" {
                return Err(e);
            }
            report.notes.push(format!("selector found no tuple: {e}"));
            None
        }
    };
    timings.insert("select_parameters".into(), t0.elapsed().as_secs_f64());

    let (kappa, eps) = match s.feedback.source.as_str() {
        "selector" => {
            let sel = selected.as_ref().expect("selector source requires a tuple");
            (Some(sel.kappa), Some(sel.eps))
        }
        "override" => (s.feedback.kappa, s.feedback.eps),
        _ => (None, None),
    };
    if let (Some(sel), true) = (&selected, s.feedback.source.as_str() == "selector") {
        if built.partition.delta_max > sel.delta_max {
            report.notes.push(format!(
                "partition step {} exceeds the selector hold bound {}",
                built.partition.delta_max, sel.delta_max
            ));
        }
    }
    report.selected = selected;
    report.operational = Some(OperationalParams {
        source: s.feedback.source.clone(),
        kappa,
        eps,
        delta_max: built.partition.delta_max,
        horizon: s.partition.horizon,
    });

    // Shell table first (global mode): its outer coverage sets the working
    // ball for the drift diagnostics and the verdict radii.
    let mut shells_table: Option<ShellTable> = None;
    if s.mode == "global" {
        let spec = s.shells.as_ref().expect("validated");
        let source = match s.feedback.source.as_str() {
            "override" => ShellParamSource::Override {
                kappa: kappa.expect("validated"),
                eps: eps.expect("validated"),
                delta_max: built.partition.delta_max,
                selector: sel_opts.clone(),
            },
            _ => ShellParamSource::Selector(sel_opts.clone()),
        };
        let table = build_shells(
            clp,
            built.field.as_ref(),
            &built.controls,
            spec.q0,
            spec.i_min,
            spec.i_max,
            &source,
        )?;
        write_shells_csv(&table, &out_dir.join("shells.csv"))?;
        std::fs::write(
            out_dir.join("shells.json"),
            serde_json::to_string_pretty(&table)
                .map_err(|e| StabError::Config(format!("shell table serialization: {e}")))?,
        )?;
        shells_table = Some(table);
    }

    // Constants behind the per-knot diagnostics. The drift bound holds for
    // segments starting inside the working ball, which for shell-dispatched
    // runs is the containing level set's outer radius rather than the
    // target-ball radius.
    let (_c0, c1) = field_constants(built.field.as_ref(), &built.controls, s.space.dim, &sel_opts)?;
    let sigma2_target = second_moment_sqrt(clp.target(), None)?;
    let start_w2 = crate::measures::w2_distance(&built.initial, clp.target())?;
    let drift_radius = match &shells_table {
        Some(table) => table.m_of_r(start_w2.max(big_r))?,
        None => big_r.max(start_w2),
    };
    let c2 = c2_constant(drift_radius, built.partition.delta_max, c1, sigma2_target);
    let diag_eps = eps.unwrap_or(1e-3);
    let diag_kappa = kappa.unwrap_or(0.5);
    let moduli = moduli_table(clp, big_r, diag_eps, None, &ModulusOptions::default())?;
    let constants = derived_constants(
        clp,
        &moduli,
        diag_kappa,
        diag_eps,
        r,
        big_r,
        &DeltaOptions::default(),
    )?;
    let rcal_r = clp
        .closed_form_inscribed(r)
        .unwrap_or(r / 2.0_f64.sqrt());
    let traj_opts = TrajectoryOptions {
        substeps_per_knot: s.integrator.substeps_per_knot,
        seed: s.seed,
        scenario_hash: built.hash.clone(),
        c2_bound: Some(c2),
        two_delta_threshold: Some(2.0 * constants.delta),
        exclusion_radius: Some(rcal_r),
        margin_tol: s.tolerances.margin_tol,
    };
    report.moduli = Some(moduli);
    report.constants = Some(constants.clone());

    let inf_opts = InfConvOptions {
        probe_count: s.feedback.probe_count,
        ..Default::default()
    };

    // Build the policy and run.
    let t0 = Instant::now();
    let log: TrajectoryLog = if s.mode == "global" {
        let policy = GlobalFeedback {
            shells: shells_table.as_ref().unwrap(),
            clp,
            field: built.field.as_ref(),
            controls: &built.controls,
            fallback_index: built.controls.neutral_index(),
            opts: inf_opts,
            seed: s.seed,
            atom_tol: s.tolerances.atom_tol,
        };
        crate::stabilize::run_theta_trajectory(
            clp,
            &built.initial,
            &built.partition,
            &policy,
            built.field.as_ref(),
            &traj_opts,
        )?
    } else {
        let policy: Box<dyn FeedbackPolicy> = match s.feedback.source.as_str() {
            "constant" => {
                let idx = s.feedback.control_index.expect("validated");
                if idx >= built.controls.len() {
                    return Err(StabError::Config(format!(
                        "feedback: control_index {idx} out of range"
                    )));
                }
                Box::new(OpenLoopFeedback {
                    control_index: idx,
                    control: built.controls.get(idx).to_vec(),
                })
            }
            _ => Box::new(LocalFeedback {
                clp,
                field: built.field.as_ref(),
                controls: &built.controls,
                kappa: kappa.expect("validated"),
                eps: eps.expect("validated"),
                opts: inf_opts,
                seed: s.seed,
            }),
        };
        crate::stabilize::run_theta_trajectory(
            clp,
            &built.initial,
            &built.partition,
            policy.as_ref(),
            built.field.as_ref(),
            &traj_opts,
        )?
    };
    timings.insert("trajectory".into(), t0.elapsed().as_secs_f64());
    log::info!(
        "trajectory: {} knots in {:.2}s{}",
        log.records.len(),
        timings["trajectory"],
        log.abort.as_deref().map(|a| format!(", aborted: {a}")).unwrap_or_default()
    );

    write_trajectory_csv(&log, &out_dir.join("trajectory.csv"))?;
    write_snapshots(&log, &out_dir.join("measures"), s.output.snapshot_stride)?;

    if let Some(abort) = &log.abort {
        report.notes.push(format!("run aborted: {abort}"));
        report.timings_sec = timings;
        report.all_pass = false;
        report.write_json(&out_dir.join("report.json"))?;
        return Ok(CommandOutcome {
            report,
            exit_code: 4,
        });
    }

    // Per-knot margin checks.
    let worst = |f: fn(&crate::stabilize::KnotRecord) -> Option<f64>| -> (usize, f64) {
        let margins: Vec<f64> = log.records.iter().filter_map(f).collect();
        (
            margins.len(),
            margins.iter().copied().fold(f64::INFINITY, f64::min),
        )
    };
    let (n_pair, worst_pair) = worst(|r| r.pairing_margin);
    let (n_dec, worst_dec) = worst(|r| r.decrease_margin);
    let (n_step, worst_step) = worst(|r| r.step_bound_margin);
    report.checks.push(CheckOutcome::new(
        "knot_pairing_bound",
        n_pair,
        worst_pair,
        n_pair == 0 || worst_pair >= 0.0,
        "pairing objective vs -2 Delta(r,R)",
    ));
    report.checks.push(CheckOutcome::new(
        "knot_decrease",
        n_dec,
        worst_dec,
        n_dec == 0 || worst_dec > 0.0,
        "envelope value strictly decreasing outside the capture ball",
    ));
    report.checks.push(CheckOutcome::new(
        "step_bound",
        n_step,
        worst_step,
        n_step == 0 || worst_step >= 0.0,
        "per-segment drift vs C2(R) (t - t_i)",
    ));

    // Verdicts.
    if s.mode == "global" {
        let shells = shells_table.as_ref().unwrap();
        let sweep = s
            .shells
            .as_ref()
            .map(|sp| sp.m_sweep.clone())
            .unwrap_or_default();
        // The boundedness property is relative to the ball the run actually
        // started in.
        let verdict_radius = start_w2.max(big_r);
        let verdicts = s_stabilization_check(&log, r, verdict_radius, shells, &sweep)?;
        report.verdicts = Some(verdicts);
    } else {
        let reach = log.reach_time(r, crate::CHECK_TOL);
        let lv = LocalVerdicts {
            reached: reach.is_some(),
            t_reach: reach,
            stayed_to_horizon: reach.is_some(),
            max_w2: log.max_w2(),
        };
        report.checks.push(CheckOutcome::new(
            "reach_and_stay",
            log.records.len(),
            reach.map(|t| s.partition.horizon - t).unwrap_or(f64::NEG_INFINITY),
            lv.reached,
            &format!("target ball radius {r}"),
        ));
        report
            .notes
            .push(format!("local verdicts: {}", serde_json::to_string(&lv).unwrap()));
    }

    // Only a report that claims success must survive re-validation from its
    // own artifacts.
    report.compute_all_pass();
    if report.all_pass {
        let revalidated = revalidate_from_artifacts(out_dir, r, s.mode != "global")?;
        report.revalidated = Some(revalidated);
    }
    report.timings_sec = timings;
    report.compute_all_pass();
    report.write_json(&out_dir.join("report.json"))?;
    Ok(CommandOutcome {
        exit_code: if report.all_pass { 0 } else { 2 },
        report,
    })
}

/// Runs the named property suites and writes their report.
pub fn cmd_verify(built: &BuiltScenario, suite: &str, out_dir: &Path) -> Result<CommandOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = base_report(built);
    let mut timings = BTreeMap::new();
    let mut checks = Vec::new();
    let run_transport = matches!(suite, "transport" | "all");
    let run_proximal = matches!(suite, "proximal" | "all");
    let run_lemmas = matches!(suite, "lemmas" | "all");
    if !(run_transport || run_proximal || run_lemmas) {
        return Err(StabError::Config(format!(
            "unknown suite `{suite}`; expected transport, proximal, lemmas, or all"
        )));
    }
    if run_transport {
        let t0 = Instant::now();
        checks.extend(transport_suite(built.scenario.seed)?);
        timings.insert("transport".into(), t0.elapsed().as_secs_f64());
    }
    if run_proximal {
        let t0 = Instant::now();
        checks.extend(proximal_suite(built)?);
        timings.insert("proximal".into(), t0.elapsed().as_secs_f64());
    }
    if run_lemmas {
        let t0 = Instant::now();
        checks.extend(lemmas_suite(built)?);
        timings.insert("lemmas".into(), t0.elapsed().as_secs_f64());
    }
    report.checks = checks;
    report.timings_sec = timings;
    report.compute_all_pass();
    report.write_json(&out_dir.join("report.json"))?;
    Ok(CommandOutcome {
        exit_code: if report.all_pass { 0 } else { 2 },
        report,
    })
}

/// Builds and dumps the shell table.
pub fn cmd_shells(built: &BuiltScenario, out_dir: &Path) -> Result<CommandOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let s = &built.scenario;
    let spec = s
        .shells
        .as_ref()
        .ok_or_else(|| StabError::Config("shells command requires a [shells] section".into()))?;
    let sel_opts = SelectorOptions {
        seed: s.seed,
        ..Default::default()
    };
    let source = match (s.feedback.source.as_str(), s.feedback.kappa, s.feedback.eps) {
        ("override", Some(kappa), Some(eps)) => ShellParamSource::Override {
            kappa,
            eps,
            delta_max: built.partition.delta_max,
            selector: sel_opts,
        },
        _ => ShellParamSource::Selector(sel_opts),
    };
    let table = build_shells(
        &built.clp,
        built.field.as_ref(),
        &built.controls,
        spec.q0,
        spec.i_min,
        spec.i_max,
        &source,
    )?;
    write_shells_csv(&table, &out_dir.join("shells.csv"))?;
    std::fs::write(
        out_dir.join("shells.json"),
        serde_json::to_string_pretty(&table)
            .map_err(|e| StabError::Config(format!("shell table serialization: {e}")))?,
    )?;
    let mut report = base_report(built);
    let nested_ok = table.validate().is_ok();
    report.checks.push(CheckOutcome::new(
        "shell_nesting",
        table.rows.len(),
        if nested_ok { 0.0 } else { f64::NEG_INFINITY },
        nested_ok,
        "2 Q_i <= Rcal(Q_{i+1}) for all stored rows",
    ));
    report.compute_all_pass();
    report.write_json(&out_dir.join("report.json"))?;
    Ok(CommandOutcome {
        exit_code: if report.all_pass { 0 } else { 2 },
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub exit_code: i32,
    pub time_to_ball: Option<f64>,
    pub max_w2: Option<f64>,
    pub worst_pairing: Option<f64>,
    pub worst_decrease: Option<f64>,
    pub worst_step: Option<f64>,
}

/// Runs one simulation per axis value in parallel jobs (share-nothing) and
/// aggregates reach times and margins into a single CSV. Individual job
/// failures are recorded and the sweep continues.
pub fn cmd_sweep(
    scenario: &Scenario,
    base: &Path,
    axis: &str,
    values: &[f64],
    out_dir: &Path,
    jobs: usize,
) -> Result<CommandOutcome> {
    std::fs::create_dir_all(out_dir)?;
    match axis {
        "N" | "kappa" | "eps" | "delta" => {}
        other => {
            return Err(StabError::Config(format!(
                "unknown sweep axis `{other}`; expected N, kappa, eps, delta"
            )))
        }
    }
    if axis != "N" && scenario.feedback.source != "override" {
        return Err(StabError::Config(
            "kappa/eps/delta sweeps require feedback.source = \"override\"".into(),
        ));
    }

    let mut rows: Vec<SweepRow> = Vec::with_capacity(values.len());
    for chunk in values.chunks(jobs.max(1)) {
        let mut handles = Vec::new();
        for &value in chunk {
            let mut s = scenario.clone();
            match axis {
                "N" => s.space.particles = value.round().max(1.0) as usize,
                "kappa" => s.feedback.kappa = Some(value),
                "eps" => s.feedback.eps = Some(value),
                "delta" => {
                    s.partition.delta_max = value;
                    s.partition.delta_min = Some(value.min(s.partition.delta_min.unwrap_or(value)));
                }
                _ => unreachable!(),
            }
            let base = base.to_path_buf();
            let job_dir = out_dir.join(format!("{axis}_{value}"));
            let axis_name = axis.to_string();
            handles.push(std::thread::spawn(move || -> SweepRow {
                match run_sweep_job(s, &base, &job_dir, &axis_name, value) {
                    Ok(row) => row,
                    Err(e) => SweepRow {
                        axis: axis_name,
                        value,
                        exit_code: e.exit_code(),
                        time_to_ball: None,
                        max_w2: None,
                        worst_pairing: None,
                        worst_decrease: None,
                        worst_step: None,
                    },
                }
            }));
        }
        for h in handles {
            rows.push(h.join().expect("sweep job panicked"));
        }
    }

    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("aggregate.csv"))?);
    writeln!(
        f,
        "axis,value,exit_code,time_to_ball,max_w2,worst_lemma52,worst_lemma53,worst_prop26"
    )?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            row.axis,
            row.value,
            row.exit_code,
            fmt(row.time_to_ball),
            fmt(row.max_w2),
            fmt(row.worst_pairing),
            fmt(row.worst_decrease),
            fmt(row.worst_step),
        )?;
    }
    drop(f);

    let mut report = RunReport {
        scenario_hash: crate::harness::scenario::scenario_hash(scenario),
        seed: scenario.seed,
        ..Default::default()
    };
    let all_ok = rows.iter().all(|r| r.exit_code == 0);
    report.checks.push(CheckOutcome::new(
        "sweep_jobs",
        rows.len(),
        if all_ok { 0.0 } else { f64::NEG_INFINITY },
        all_ok,
        &format!("{} jobs over axis {axis}", rows.len()),
    ));
    report.compute_all_pass();
    report.write_json(&out_dir.join("report.json"))?;
    Ok(CommandOutcome {
        exit_code: if all_ok { 0 } else { 2 },
        report,
    })
}

fn run_sweep_job(
    s: Scenario,
    base: &Path,
    out_dir: &Path,
    axis: &str,
    value: f64,
) -> Result<SweepRow> {
    let built = build_scenario(s, base, None)?;
    let outcome = cmd_simulate(&built, out_dir)?;
    let checks = &outcome.report.checks;
    let find = |name: &str| -> Option<f64> {
        checks
            .iter()
            .find(|c| c.name == name && c.trials > 0)
            .map(|c| c.worst_margin)
    };
    let reach = outcome
        .report
        .notes
        .iter()
        .find_map(|n| n.strip_prefix("local verdicts: "))
        .and_then(|json| serde_json::from_str::<LocalVerdicts>(json).ok());
    Ok(SweepRow {
        axis: axis.to_string(),
        value,
        exit_code: outcome.exit_code,
        time_to_ball: reach.as_ref().and_then(|v| v.t_reach),
        max_w2: reach.as_ref().map(|v| v.max_w2),
        worst_pairing: find("knot_pairing_bound"),
        worst_decrease: find("knot_decrease"),
        worst_step: find("step_bound"),
    })
}

/// Convenience: load, build, and dispatch one command.
pub fn run_command(
    config: &Path,
    seed_override: Option<u64>,
    action: CommandAction,
) -> Result<CommandOutcome> {
    let scenario = load_scenario(config)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    match action {
        CommandAction::Simulate { out } => {
            let built = build_scenario(scenario, &base, seed_override)?;
            cmd_simulate(&built, &out)
        }
        CommandAction::Verify { suite, out } => {
            let built = build_scenario(scenario, &base, seed_override)?;
            cmd_verify(&built, &suite, &out)
        }
        CommandAction::Shells { out } => {
            let built = build_scenario(scenario, &base, seed_override)?;
            cmd_shells(&built, &out)
        }
        CommandAction::Sweep {
            axis,
            values,
            out,
            jobs,
        } => cmd_sweep(&scenario, &base, &axis, &values, &out, jobs),
    }
}

pub enum CommandAction {
    Simulate { out: PathBuf },
    Verify { suite: String, out: PathBuf },
    Shells { out: PathBuf },
    Sweep { axis: String, values: Vec<f64>, out: PathBuf, jobs: usize },
}
