//! Subcommand implementations. Each writes its artifacts into an output
//! directory and returns the summary it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use satflow_core::diagnostics::{
    alternative_classify, cells_in_ball, convergence_monitor, ess_extrema, oscillation_cascade,
    Classification, Cylinder,
};
use satflow_core::estimates::{
    build_cutoff, caccioppoli_check, degiorgi_check, geometric_convergence, kappa_default,
    log_estimate_check, CutoffFunction, EstimateReport, Sign,
};
use satflow_core::io::{
    create, open, read_trajectory, write_distance_csv, write_field_csv, write_json, write_ledger,
    write_oscillation_csv, write_trajectory, OscillationSummary,
};
use satflow_core::mesh::l1_distance;
use satflow_core::{DensityField, Solver, Trajectory};

use crate::manifest::{point, CheckSpec, CutoffBlock, CylinderBlock, LoadedManifest};
use crate::CliError;

/// Free-energy growth per step above which the ledger counts an increase.
pub const ENERGY_TOL: f64 = 1e-9;
/// Largest tolerated growth of the L1 distance between snapshots.
pub const CONTRACTION_TOL: f64 = 1e-10;

pub const TRAJECTORY_FILE: &str = "trajectory.bin";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const FINAL_FIELD_FILE: &str = "final.csv";
pub const SUMMARY_FILE: &str = "summary.json";
/// Wall-clock data lives apart from the reproducible artifacts.
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub t: f64,
    pub mass: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub rejections: usize,
    pub snapshots: usize,
    pub rho_max: f64,
    pub initial: StateSummary,
    #[serde(rename = "final")]
    pub last: StateSummary,
    pub max_relative_mass_step: f64,
    pub energy_increases: usize,
    pub max_energy_increase: f64,
    pub energy_monotone: bool,
    /// `0 <= rho <= rho_max` held at every accepted step.
    pub bounds_respected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Timing {
    wall_seconds: f64,
}

fn write_timing(dir: &Path, start: Instant) -> Result<(), CliError> {
    let timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(write_json(&timing, create(&dir.join(TIMING_FILE))?)?)
}

/// Runs the simulation and writes trajectory, ledger, final field and summary.
pub fn cmd_run(m: &LoadedManifest, out: &Path) -> Result<RunSummary, CliError> {
    let solver = m.solver()?;
    let start = Instant::now();
    let output = solver.run()?;
    let rho_max = solver.config().saturation.rho_max;
    let rows = &output.ledger.rows;
    let state = |r: &satflow_core::solver::LedgerRow| StateSummary {
        t: r.t,
        mass: r.mass,
        free_energy: r.free_energy,
        dissipation: r.dissipation,
        min_rho: r.min_rho,
        max_rho: r.max_rho,
    };
    let first = rows.first().expect("ledger holds the initial state");
    let last = rows.last().expect("ledger holds the initial state");
    let energy_increases = output.ledger.energy_increases(ENERGY_TOL);
    let summary = RunSummary {
        scenario: m.scenario().to_string(),
        steps: rows.len() - 1,
        rejections: output.rejections,
        snapshots: output.trajectory.len(),
        rho_max,
        initial: state(first),
        last: state(last),
        max_relative_mass_step: output.ledger.max_relative_mass_step(),
        energy_increases,
        max_energy_increase: if rows.len() > 1 {
            output.ledger.max_energy_increase()
        } else {
            0.0
        },
        energy_monotone: energy_increases == 0,
        bounds_respected: rows
            .iter()
            .all(|r| r.min_rho >= 0.0 && r.max_rho <= rho_max),
    };
    write_trajectory(&output.trajectory, create(&out.join(TRAJECTORY_FILE))?)?;
    write_ledger(&output.ledger, create(&out.join(LEDGER_FILE))?)?;
    let final_field = output.trajectory.last().expect("at least one snapshot");
    write_field_csv(&final_field, create(&out.join(FINAL_FIELD_FILE))?)?;
    write_json(&summary, create(&out.join(SUMMARY_FILE))?)?;
    write_timing(out, start)?;
    log::info!(
        "{}: {} steps to t = {}, {} rejections",
        summary.scenario,
        summary.steps,
        summary.last.t,
        summary.rejections
    );
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub scenarios: [String; 2],
    pub samples: usize,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// Largest growth of the distance between consecutive snapshots, floored at 0.
    pub max_increase: f64,
    pub non_increasing: bool,
    pub tolerance: f64,
}

fn contraction_guard(a: &LoadedManifest, b: &LoadedManifest) -> Result<(), CliError> {
    for m in [a, b] {
        if !m.manifest.simulation.potentials.w.is_zero() {
            return Err(CliError::Config(format!(
                "{}: L1 contraction is only established for W = 0; refusing a pair with an interaction kernel",
                m.scenario()
            )));
        }
    }
    let (sa, sb) = (&a.manifest.simulation, &b.manifest.simulation);
    let mismatch = [
        ("grid", sa.grid != sb.grid),
        ("saturation", sa.saturation != sb.saturation),
        ("energy", sa.energy != sb.energy),
        ("potentials.v", sa.potentials.v != sb.potentials.v),
        ("t_end", sa.t_end != sb.t_end),
        ("cfl", sa.cfl != sb.cfl),
        ("snapshot_every", sa.snapshot_every != sb.snapshot_every),
        ("dt", sa.dt != sb.dt),
    ];
    if let Some((field, _)) = mismatch.iter().find(|(_, differs)| *differs) {
        return Err(CliError::Config(format!(
            "simulation.{field}: paired manifests must agree on everything but the initial data"
        )));
    }
    Ok(())
}

/// Runs two solutions side by side and records their L1 distance.
pub fn cmd_pair(
    a: &LoadedManifest,
    b: &LoadedManifest,
    out: &Path,
) -> Result<ContractionReport, CliError> {
    contraction_guard(a, b)?;
    let (sa, sb) = (a.solver()?, b.solver()?);
    let start = Instant::now();
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| sa.run());
        let hb = s.spawn(|| sb.run());
        (
            ha.join().expect("solver thread panicked"),
            hb.join().expect("solver thread panicked"),
        )
    });
    let (ta, tb) = (ra?.trajectory, rb?.trajectory);
    if ta.times() != tb.times() {
        return Err(CliError::Abort(
            "paired runs took different time steps; snapshots cannot be compared".into(),
        ));
    }
    let mut series = Vec::with_capacity(ta.len());
    for k in 0..ta.len() {
        series.push((
            ta.times()[k],
            l1_distance(&ta.snapshot(k), &tb.snapshot(k))?,
        ));
    }
    let max_increase = series
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(0.0, f64::max);
    let report = ContractionReport {
        scenarios: [a.scenario().to_string(), b.scenario().to_string()],
        samples: series.len(),
        initial_distance: series[0].1,
        final_distance: series[series.len() - 1].1,
        max_increase,
        non_increasing: max_increase <= CONTRACTION_TOL,
        tolerance: CONTRACTION_TOL,
    };
    write_distance_csv(&series, create(&out.join("contraction.csv"))?)?;
    write_json(&report, create(&out.join("contraction.json"))?)?;
    write_timing(out, start)?;
    if !report.non_increasing {
        return Err(CliError::Verification(format!(
            "L1 distance grew by {} between snapshots (tolerance {CONTRACTION_TOL})",
            report.max_increase
        )));
    }
    Ok(report)
}

pub fn load_trajectory(m: &LoadedManifest, path: &Path) -> Result<Trajectory, CliError> {
    let traj = open(path)
        .and_then(read_trajectory)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let grid = m.config()?.grid;
    if traj.grid() != &grid {
        return Err(CliError::Config(format!(
            "{}: trajectory grid does not match simulation.grid",
            path.display()
        )));
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelClassification {
    pub k: usize,
    #[serde(flatten)]
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub index: usize,
    pub vertex: Vec<f64>,
    pub t0: f64,
    pub radius: f64,
    pub omegas: Vec<f64>,
    #[serde(flatten)]
    pub summary: OscillationSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOutcome {
    pub tail_fraction: f64,
    pub tail_max_gap: f64,
    pub residual: f64,
    pub converged: bool,
    pub settling_time: Option<f64>,
    pub tail_monotone: bool,
    /// `(t, sup |rho(t) - rho_inf|)`.
    pub gaps: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub scenario: String,
    pub cascades: Vec<CascadeOutcome>,
    pub convergence: Option<ConvergenceOutcome>,
}

/// Oscillation cascades with per-level classification, and convergence
/// monitoring, as configured in the manifest's diagnostics block.
pub fn cmd_analyze(
    m: &LoadedManifest,
    traj_path: &Path,
    out: &Path,
) -> Result<AnalysisSummary, CliError> {
    let traj = load_trajectory(m, traj_path)?;
    let solver = m.solver()?;
    let spec = &solver.config().saturation;
    let diag = &m.manifest.diagnostics;
    let dim = traj.grid().dim();
    let (_, t_last) = traj.time_span();
    let mut cascades = Vec::new();
    for (i, c) in diag.cascades.iter().enumerate() {
        let vertex = point(&c.vertex, dim, &format!("diagnostics.cascades[{i}].vertex"))?;
        let t0 = c.t0.unwrap_or(t_last);
        let rec = oscillation_cascade(&traj, vertex, t0, c.radius, spec, &diag.cascade_options)?;
        let mut classes = Vec::with_capacity(rec.levels.len());
        for level in &rec.levels {
            let cyl = Cylinder::new(vertex, t0, level.radius, level.height)?;
            classes.push(LevelClassification {
                k: level.k,
                classification: alternative_classify(
                    &traj,
                    &cyl,
                    level.omega,
                    diag.nu,
                    spec.rho_max,
                )?,
            });
        }
        write_oscillation_csv(&rec, create(&out.join(format!("oscillation-{i}.csv")))?)?;
        let summary = OscillationSummary::from_record(&rec);
        write_json(
            &summary,
            create(&out.join(format!("oscillation-{i}.json")))?,
        )?;
        write_json(
            &classes,
            create(&out.join(format!("classification-{i}.json")))?,
        )?;
        cascades.push(CascadeOutcome {
            index: i,
            vertex: c.vertex.clone(),
            t0,
            radius: c.radius,
            omegas: rec.omegas(),
            summary,
        });
    }
    let convergence = match &diag.convergence {
        None => None,
        Some(c) => {
            let report = convergence_monitor(&traj, c.tail_fraction, &solver, &c.tolerances())?;
            Some(ConvergenceOutcome {
                tail_fraction: c.tail_fraction,
                tail_max_gap: report.tail_max_gap,
                residual: report.residual,
                converged: report.converged,
                settling_time: report.settling_time(c.gap),
                tail_monotone: report.tail_is_monotone(c.tail_fraction),
                gaps: report.gaps,
            })
        }
    };
    let summary = AnalysisSummary {
        scenario: m.scenario().to_string(),
        cascades,
        convergence,
    };
    write_json(&summary, create(&out.join("analysis.json"))?)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub index: usize,
    /// Relative to the output directory.
    pub check: String,
    pub path: PathBuf,
    pub pass: bool,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub scenario: String,
    pub passed: usize,
    pub failed: usize,
    pub reports: Vec<ReportEntry>,
}

fn latest_at_or_before(traj: &Trajectory, t: f64) -> usize {
    traj.times().iter().rposition(|&s| s <= t).unwrap_or(0)
}

/// Outer cylinder, cutoff and essential range of `rho` on the cylinder.
fn setup_cylinder(
    traj: &Trajectory,
    cylinder: &CylinderBlock,
    cutoff: &CutoffBlock,
    path: &str,
) -> Result<(Cylinder, CutoffFunction, f64, f64), CliError> {
    let grid = traj.grid();
    let center = point(
        &cylinder.center,
        grid.dim(),
        &format!("{path}.cylinder.center"),
    )?;
    let outer = Cylinder::new(center, cylinder.t0, cylinder.radius, cylinder.height)?;
    let inner = Cylinder::new(
        center,
        cylinder.t0,
        cutoff.inner.radius,
        cutoff.inner.height,
    )?;
    let zeta = build_cutoff(&outer, &inner, cutoff.profile, cutoff.time_dependent, grid)?;
    let (lo, hi) = ess_extrema(traj, &outer)?;
    Ok((outer, zeta, lo, hi))
}

fn run_check(
    check: &CheckSpec,
    traj: &Trajectory,
    solver: &Solver,
    path: &str,
) -> Result<EstimateReport, CliError> {
    let grid = traj.grid();
    let spec = &solver.config().saturation;
    let pots = solver.potentials();
    match check {
        CheckSpec::Caccioppoli {
            cylinder,
            cutoff,
            level,
            sign,
            constants,
        } => {
            let (outer, zeta, lo, hi) = setup_cylinder(traj, cylinder, cutoff, path)?;
            let k = level.resolve(lo, hi);
            Ok(caccioppoli_check(
                traj, &outer, k, *sign, &zeta, spec, pots, constants,
            )?)
        }
        CheckSpec::Log {
            cylinder,
            cutoff,
            level,
            c_fraction,
            sign,
            constants,
        } => {
            let (outer, zeta, lo, hi) = setup_cylinder(traj, cylinder, cutoff, path)?;
            let k = level.resolve(lo, hi);
            let big_h = match sign {
                Sign::Plus => (hi - k).max(0.0),
                Sign::Minus => (k - lo).max(0.0),
            };
            Ok(log_estimate_check(
                traj,
                &outer,
                k,
                c_fraction * big_h,
                *sign,
                &zeta,
                spec,
                pots,
                constants,
            )?)
        }
        CheckSpec::Degiorgi {
            time,
            center,
            radius,
            k0,
            k1,
            constant,
            slack,
        } => {
            let c = point(center, grid.dim(), &format!("{path}.center"))?;
            let k = latest_at_or_before(traj, time.unwrap_or(f64::INFINITY));
            let field = traj.snapshot(k);
            let cells = cells_in_ball(grid, &c, *radius);
            let v = field.values();
            let lo = cells.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
            let hi = cells
                .iter()
                .map(|&i| v[i])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(degiorgi_check(
                &field,
                c,
                *radius,
                k0.resolve(lo, hi),
                k1.resolve(lo, hi),
                *constant,
                *slack,
            )?)
        }
        CheckSpec::GeometricConvergence {
            y0,
            z0,
            c,
            b,
            kappa,
            upsilon,
            n_max,
        } => {
            let kappa = kappa.unwrap_or_else(|| kappa_default(grid.dim()));
            let g = geometric_convergence(*y0, *z0, *c, *b, kappa, *upsilon, *n_max)?;
            let hypothesis = g.start <= g.threshold;
            let mut terms = std::collections::BTreeMap::new();
            terms.insert("hypothesis".to_string(), f64::from(u8::from(hypothesis)));
            terms.insert("converged".to_string(), f64::from(u8::from(g.converged)));
            terms.insert("final_y".to_string(), *g.y.last().expect("Y_0 is recorded"));
            terms.insert("final_z".to_string(), *g.z.last().expect("Z_0 is recorded"));
            Ok(EstimateReport {
                name: "geometric_convergence".into(),
                lhs: g.start,
                rhs: g.threshold,
                constant: *c,
                ratio: Some(g.start / g.threshold),
                slack: 0.0,
                pass: !hypothesis || g.converged,
                terms,
            })
        }
    }
}

/// Runs every check of the verify block; fails if any report fails.
pub fn cmd_verify(
    m: &LoadedManifest,
    traj_path: &Path,
    out: &Path,
) -> Result<VerifySummary, CliError> {
    let traj = load_trajectory(m, traj_path)?;
    let solver = m.solver()?;
    let mut reports = Vec::new();
    for (i, check) in m.manifest.verify.iter().enumerate() {
        let field_path = format!("verify[{i}]");
        let report = run_check(check, &traj, &solver, &field_path).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{field_path}: {msg}")),
            other => other,
        })?;
        let path = PathBuf::from("reports").join(format!("{i:02}-{}.json", check.name()));
        write_json(&report, create(&out.join(&path))?)?;
        reports.push(ReportEntry {
            index: i,
            check: check.name().to_string(),
            path,
            pass: report.pass,
            ratio: report.ratio,
        });
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let summary = VerifySummary {
        scenario: m.scenario().to_string(),
        passed: reports.len() - failed,
        failed,
        reports,
    };
    write_json(&summary, create(&out.join("verify.json"))?)?;
    if failed > 0 {
        let paths: Vec<String> = summary
            .reports
            .iter()
            .filter(|r| !r.pass)
            .map(|r| out.join(&r.path).display().to_string())
            .collect();
        return Err(CliError::Verification(format!(
            "{failed} check(s) failed: {}",
            paths.join(", ")
        )));
    }
    Ok(summary)
}

/// Runs every manifest concurrently, each into its own directory.
pub fn cmd_sweep(
    manifests: &[LoadedManifest],
    out: Option<&Path>,
) -> Vec<(String, Result<RunSummary, CliError>)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = manifests
            .iter()
            .map(|m| {
                let dir = match out {
                    Some(root) => root.join(m.scenario()),
                    None => m.output_dir(None),
                };
                s.spawn(move || cmd_run(m, &dir))
            })
            .collect();
        manifests
            .iter()
            .zip(handles)
            .map(|(m, h)| {
                (
                    m.scenario().to_string(),
                    h.join().expect("sweep thread panicked"),
                )
            })
            .collect()
    })
}

/// Final field of a run directory.
pub fn final_field(m: &LoadedManifest, dir: &Path) -> Result<DensityField, CliError> {
    let traj = load_trajectory(m, &dir.join(TRAJECTORY_FILE))?;
    Ok(traj
        .last()
        .expect("trajectories hold at least one snapshot"))
}
