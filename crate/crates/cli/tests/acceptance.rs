//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use satflow::commands::{LEDGER_FILE, TIMING_FILE, TRAJECTORY_FILE};
use satflow::{cmd_analyze, cmd_pair, cmd_sweep, cmd_verify, LoadedManifest, RunSummary};
use satflow_core::estimates::{
    geometric_convergence, weak_form_residual, CosineTest, EstimateReport,
};
use satflow_core::io::{
    create, open, read_distance_csv, read_json, read_ledger, read_oscillation_csv, read_trajectory,
    write_trajectory,
};
use satflow_core::{DensityField, Grid, Trajectory};

const SUITE: [&str; 6] = [
    "gibbs-1d",
    "aggregation-1d",
    "confined-aggregation-1d",
    "porous-1d",
    "porous-aggregation-1d",
    "diffusion-2d",
];
const VERIFY_SUITE: [&str; 3] = ["gibbs-1d", "aggregation-1d", "diffusion-2d"];
const PAIRS: [&str; 3] = ["shifted-bump", "porous-plateau", "two-vs-one"];

const MASS_TOL: f64 = 1e-13;
const ENERGY_TOL: f64 = 1e-9;
const CONTRACTION_TOL: f64 = 1e-10;
const HEAT_RATIO: (f64, f64) = (3.5, 4.5);
const HEAT_TIME: f64 = 0.1;
const GAP_TOL: f64 = 1e-4;
const GIBBS_HORIZON: f64 = 20.0;
const RESIDUAL_FACTOR: f64 = 10.0;
const PROFILE_FACTOR: f64 = 10.0;
const MIN_LEVELS: usize = 5;
const HOLDER_ALPHA: f64 = 0.5;
const HOLDER_TOL: f64 = 0.1;
const SLACK: f64 = 0.10;
const DRAWS: usize = 100;
const WEAK_RATIO: f64 = 2.0;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("{ctx}: {e}")
}

fn manifests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests")
}

fn load(rel: &str) -> LoadedManifest {
    LoadedManifest::from_path(&manifests_dir().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

struct Runs {
    root: PathBuf,
    suite: BTreeMap<String, Result<RunSummary, String>>,
}

impl Runs {
    fn dir(&self, scenario: &str) -> PathBuf {
        self.root.join(scenario)
    }

    fn summary(&self, scenario: &str) -> Result<&RunSummary, String> {
        match self.suite.get(scenario) {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(format!("{scenario}: {e}")),
            None => Err(format!("{scenario}: not run")),
        }
    }
}

fn run_suite(root: &Path) -> Runs {
    let manifests: Vec<LoadedManifest> = SUITE.iter().map(|s| load(&format!("{s}.json"))).collect();
    let suite = cmd_sweep(&manifests, Some(root))
        .into_iter()
        .map(|(name, r)| (name, r.map_err(|e| e.to_string())))
        .collect();
    Runs {
        root: root.to_path_buf(),
        suite,
    }
}

fn criterion_1(runs: &Runs) -> Check {
    let mut worst_mass = 0.0f64;
    let mut steps = 0;
    for s in SUITE {
        let summary = runs.summary(s)?;
        let ledger =
            read_ledger(open(&runs.dir(s).join(LEDGER_FILE)).map_err(err(s))?).map_err(err(s))?;
        ensure(ledger.rows.len() == summary.steps + 1, || {
            format!("{s}: ledger has {} rows", ledger.rows.len())
        })?;
        for w in ledger.rows.windows(2) {
            let rel = (w[1].mass - w[0].mass).abs() / w[0].mass;
            worst_mass = worst_mass.max(rel);
            ensure(rel <= MASS_TOL, || {
                format!("{s}: mass drift {rel:e} at t = {}", w[1].t)
            })?;
        }
        for r in &ledger.rows {
            ensure(r.min_rho >= 0.0 && r.max_rho <= summary.rho_max, || {
                format!("{s}: bounds [{}, {}] at t = {}", r.min_rho, r.max_rho, r.t)
            })?;
        }
        let traj = read_trajectory(open(&runs.dir(s).join(TRAJECTORY_FILE)).map_err(err(s))?)
            .map_err(err(s))?;
        for (t, f) in traj.times().iter().zip(traj.fields()) {
            ensure(
                f.iter().all(|&v| (0.0..=summary.rho_max).contains(&v)),
                || format!("{s}: snapshot at t = {t} leaves [0, rho_max]"),
            )?;
        }
        steps += summary.steps;
    }
    Ok(format!("{steps} accepted steps, worst relative mass step {worst_mass:.2e} <= {MASS_TOL:e}, zero bound violations"))
}

fn criterion_2(runs: &Runs) -> Check {
    let mut worst = f64::NEG_INFINITY;
    for s in SUITE {
        let ledger =
            read_ledger(open(&runs.dir(s).join(LEDGER_FILE)).map_err(err(s))?).map_err(err(s))?;
        let increases = ledger.energy_increases(ENERGY_TOL);
        ensure(increases == 0, || {
            format!("{s}: {increases} steps raise F by more than {ENERGY_TOL:e}")
        })?;
        worst = worst.max(ledger.max_energy_increase());
        ensure(runs.summary(s)?.energy_monotone, || {
            format!("{s}: summary flags F as non-monotone")
        })?;
    }
    Ok(format!(
        "no step raises F by more than {ENERGY_TOL:e}; largest change {worst:.2e}"
    ))
}

fn criterion_3(root: &Path) -> Check {
    let mut details = Vec::new();
    for p in PAIRS {
        let a = load(&format!("pairs/{p}-a.json"));
        let b = load(&format!("pairs/{p}-b.json"));
        let dir = root.join(p);
        cmd_pair(&a, &b, &dir).map_err(err(p))?;
        let series = read_distance_csv(open(&dir.join("contraction.csv")).map_err(err(p))?)
            .map_err(err(p))?;
        let worst = series
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(worst <= CONTRACTION_TOL, || {
            format!("{p}: L1 distance grows by {worst:e}")
        })?;
        details.push(format!(
            "{p} {:.3}->{:.3} (max step {worst:.1e})",
            series[0].1,
            series[series.len() - 1].1
        ));
    }
    Ok(details.join(", "))
}

/// Sup error against `1/2 + 1/4 exp(-pi^2 t) cos(pi x)` at the final time.
fn heat_error(cells: usize) -> Result<f64, String> {
    let mut m = load("heat-1d.json");
    m.manifest.simulation.grid.cells = vec![cells];
    m.manifest.simulation.snapshot_every = usize::MAX;
    let solver = m.solver().map_err(err("heat"))?;
    let out = solver.run().map_err(err("heat"))?;
    let last = out.trajectory.last().ok_or("empty heat trajectory")?;
    let t = *out.trajectory.times().last().unwrap();
    ensure((t - HEAT_TIME).abs() < 1e-14, || {
        format!("heat run ended at {t}")
    })?;
    let pi = std::f64::consts::PI;
    let grid = solver.grid();
    let decay = (-pi * pi * t).exp();
    let e = (0..grid.len())
        .map(|i| {
            let x = grid.center(i)[0];
            (last.values()[i] - (0.5 + 0.25 * decay * (pi * x).cos())).abs()
        })
        .fold(0.0, f64::max);
    Ok(e)
}

fn criterion_4() -> Check {
    let coarse = heat_error(64)?;
    let fine = heat_error(128)?;
    let ratio = coarse / fine;
    ensure((HEAT_RATIO.0..=HEAT_RATIO.1).contains(&ratio), || {
        format!(
            "error ratio {ratio:.3} outside [{}, {}] (errors {coarse:e}, {fine:e})",
            HEAT_RATIO.0, HEAT_RATIO.1
        )
    })?;
    Ok(format!(
        "n=64 error {coarse:.3e}, n=128 error {fine:.3e}, ratio {ratio:.3}"
    ))
}

fn criterion_5(runs: &Runs) -> Check {
    let m = load("gibbs-1d.json");
    let dir = runs.dir("gibbs-1d");
    let analysis = cmd_analyze(&m, &dir.join(TRAJECTORY_FILE), &dir).map_err(err("analyze"))?;
    let conv = analysis
        .convergence
        .ok_or("gibbs-1d has no convergence block")?;
    let traj = read_trajectory(open(&dir.join(TRAJECTORY_FILE)).map_err(err("traj"))?)
        .map_err(err("traj"))?;
    let t_last = *traj.times().last().unwrap();
    ensure((t_last - GIBBS_HORIZON).abs() < 1e-9, || {
        format!("run ended at {t_last}")
    })?;
    let settle = conv
        .settling_time
        .ok_or("gap never settles below tolerance")?;
    ensure(
        settle <= GIBBS_HORIZON && conv.tail_max_gap <= GAP_TOL,
        || format!("tail gap {:e}, settling time {settle}", conv.tail_max_gap),
    )?;
    let grid = traj.grid();
    let h = grid.spacing(0);
    ensure(conv.residual <= RESIDUAL_FACTOR * h * h, || {
        format!(
            "stationary residual {:e} > {:e}",
            conv.residual,
            RESIDUAL_FACTOR * h * h
        )
    })?;
    // With V = x^2/2 and this mass the cap is inactive: Z e^{-V} stays below rho_max.
    let rho_inf = traj.last().unwrap();
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| (-0.5 * grid.center(i)[0].powi(2)).exp())
        .collect();
    let z = rho_inf.mass() / (weights.iter().sum::<f64>() * h);
    let rho_max = m.config().map_err(err("config"))?.saturation.rho_max;
    ensure(z <= rho_max, || format!("Z = {z} reaches the cap"))?;
    let profile = weights
        .iter()
        .zip(rho_inf.values())
        .map(|(w, r)| (r - (z * w).min(rho_max)).abs())
        .fold(0.0, f64::max);
    ensure(profile <= PROFILE_FACTOR * h, || {
        format!("profile error {profile:e} > {:e}", PROFILE_FACTOR * h)
    })?;
    Ok(format!(
        "tail gap {:.2e} (settled by t = {settle:.2}), residual {:.2e} <= {:.2e}, profile error {profile:.2e} <= {:.2e}",
        conv.tail_max_gap,
        conv.residual,
        RESIDUAL_FACTOR * h * h,
        PROFILE_FACTOR * h
    ))
}

fn holder_alpha(root: &Path) -> Result<f64, String> {
    let grid = Grid::uniform_1d(-1.0, 1.0, 4096).map_err(err("grid"))?;
    let field = DensityField::from_fn(grid.clone(), |x| x[0].abs().sqrt()).map_err(err("field"))?;
    let mut traj = Trajectory::new(grid);
    for k in 0..400 {
        traj.push(k as f64 * 0.01, field.values().to_vec())
            .map_err(err("traj"))?;
    }
    let dir = root.join("holder");
    let traj_path = dir.join(TRAJECTORY_FILE);
    write_trajectory(&traj, create(&traj_path).map_err(err("write"))?).map_err(err("write"))?;
    let manifest = r#"{
        "scenario": "holder-field",
        "simulation": {
            "grid": {"lower": [-1.0], "upper": [1.0], "cells": [4096]},
            "saturation": {"kind": "power", "rho_max": 1.0, "m": 1.0},
            "energy": {"kind": "boltzmann"},
            "initial": {"constant": {"value": 0.5}},
            "t_end": 0.0
        },
        "diagnostics": {
            "cascades": [{"vertex": [0.0], "t0": 3.99, "radius": 0.9}],
            "cascade_options": {"eta": 0.5}
        }
    }"#;
    let m = LoadedManifest::from_str(manifest, dir.clone()).map_err(err("manifest"))?;
    let analysis = cmd_analyze(&m, &traj_path, &dir).map_err(err("analyze"))?;
    let c = &analysis.cascades[0];
    ensure(c.summary.levels >= MIN_LEVELS && c.summary.monotone, || {
        format!("{} levels", c.summary.levels)
    })?;
    c.summary.alpha.ok_or_else(|| "no fit".to_string())
}

fn criterion_6(runs: &Runs, root: &Path) -> Check {
    let dir = runs.dir("gibbs-1d");
    let rows = read_oscillation_csv(open(&dir.join("oscillation-0.csv")).map_err(err("csv"))?)
        .map_err(err("csv"))?;
    ensure(rows.len() >= MIN_LEVELS, || {
        format!("{} levels", rows.len())
    })?;
    for w in rows.windows(2) {
        ensure(w[1].3 <= w[0].3, || {
            format!("omega rises at level {}", w[1].0)
        })?;
        ensure(w[1].1 <= w[0].1, || {
            format!("radius rises at level {}", w[1].0)
        })?;
    }
    let alpha = holder_alpha(root)?;
    ensure((alpha - HOLDER_ALPHA).abs() <= HOLDER_TOL, || {
        format!("fitted alpha {alpha}")
    })?;
    let omegas: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.3)).collect();
    Ok(format!(
        "{} nested levels, omega [{}]; synthetic alpha {alpha:.3}",
        rows.len(),
        omegas.join(", ")
    ))
}

/// `(2C)^{-(1+k)/d} b^{-(1+k)/d^2}` with `d = min(k, u)`.
fn fast_threshold(c: f64, b: f64, kappa: f64, upsilon: f64) -> f64 {
    let d = kappa.min(upsilon);
    (2.0 * c).powf(-(1.0 + kappa) / d) * b.powf(-(1.0 + kappa) / (d * d))
}

fn criterion_7(runs: &Runs) -> Check {
    let mut total = 0;
    for s in VERIFY_SUITE {
        let m = load(&format!("{s}.json"));
        let dir = runs.dir(s);
        let summary = cmd_verify(&m, &dir.join(TRAJECTORY_FILE), &dir).map_err(err(s))?;
        for entry in &summary.reports {
            let report: EstimateReport =
                read_json(open(&dir.join(&entry.path)).map_err(err(s))?).map_err(err(s))?;
            ensure(report.pass, || {
                format!(
                    "{}: lhs {} rhs {}",
                    entry.path.display(),
                    report.lhs,
                    report.rhs
                )
            })?;
            if report.name == "geometric_convergence" {
                ensure(report.terms["hypothesis"] == 1.0, || {
                    format!("{}: hypothesis not met", entry.path.display())
                })?;
            } else {
                ensure(report.slack == SLACK, || {
                    format!("{}: slack {}", entry.path.display(), report.slack)
                })?;
            }
        }
        total += summary.reports.len();
    }
    let mut rng = StdRng::seed_from_u64(0x5a7f_1e55);
    let mut converged = 0;
    for _ in 0..DRAWS {
        let c = rng.gen_range(1.1..8.0);
        let b = rng.gen_range(1.5..8.0);
        let kappa = rng.gen_range(0.25..2.0);
        let upsilon = rng.gen_range(0.25..2.0);
        let budget = rng.gen_range(0.01..1.0) * fast_threshold(c, b, kappa, upsilon);
        let split = rng.gen_range(0.0..=1.0);
        let y0 = split * budget;
        let z0 = ((1.0 - split) * budget).powf(1.0 / (1.0 + kappa));
        let g = geometric_convergence(y0, z0, c, b, kappa, upsilon, 2000).map_err(err("draw"))?;
        ensure(g.start <= g.threshold * (1.0 + 1e-12), || {
            format!("draw above threshold: {g:?}")
        })?;
        converged += usize::from(g.converged);
    }
    ensure(converged == DRAWS, || {
        format!("{converged}/{DRAWS} draws converged")
    })?;
    Ok(format!("{total} estimate reports pass at slack {SLACK}; {converged}/{DRAWS} below-threshold draws converge"))
}

fn weak_residual(cells: usize, dt: f64) -> Result<f64, String> {
    let mut m = load("heat-1d.json");
    m.manifest.simulation.grid.cells = vec![cells];
    m.manifest.simulation.dt = Some(dt);
    m.manifest.simulation.snapshot_every = 1;
    let solver = m.solver().map_err(err("heat"))?;
    let out = solver.run().map_err(err("heat"))?;
    let test = CosineTest::new(solver.grid(), [1.0, 0.0], HEAT_TIME);
    weak_form_residual(&out.trajectory, &solver, &test).map_err(err("weak form"))
}

fn criterion_8() -> Check {
    let coarse = weak_residual(32, 1e-5)?;
    let fine = weak_residual(64, 5e-6)?;
    let ratio = coarse.abs() / fine.abs();
    ensure(ratio >= WEAK_RATIO, || {
        format!("residuals {coarse:e} -> {fine:e}, ratio {ratio:.3}")
    })?;
    Ok(format!(
        "residual {coarse:.3e} -> {fine:.3e}, reduction {ratio:.2}"
    ))
}

fn data_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().and_then(|n| n.to_str()) != Some(TIMING_FILE) {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9(runs: &Runs, root: &Path) -> Check {
    let again = run_suite(&root.join("rerun"));
    for s in SUITE {
        again.summary(s)?;
    }
    for s in VERIFY_SUITE {
        let m = load(&format!("{s}.json"));
        let dir = again.dir(s);
        cmd_verify(&m, &dir.join(TRAJECTORY_FILE), &dir).map_err(err(s))?;
    }
    let gibbs = load("gibbs-1d.json");
    let dir = again.dir("gibbs-1d");
    cmd_analyze(&gibbs, &dir.join(TRAJECTORY_FILE), &dir).map_err(err("analyze"))?;
    let a = load("pairs/shifted-bump-a.json");
    let b = load("pairs/shifted-bump-b.json");
    cmd_pair(&a, &b, &again.dir("shifted-bump")).map_err(err("pair"))?;

    let mut compared = 0;
    for s in SUITE.iter().chain(["shifted-bump"].iter()) {
        let first = runs.dir(s);
        let second = again.dir(s);
        let files = data_files(&second);
        ensure(files == data_files(&first), || {
            format!("{s}: different file sets")
        })?;
        ensure(!files.is_empty(), || format!("{s}: no files written"))?;
        for f in &files {
            let (x, y) = (std::fs::read(first.join(f)), std::fs::read(second.join(f)));
            let (x, y) = (x.map_err(err("read"))?, y.map_err(err("read"))?);
            ensure(x == y, || {
                format!("{s}/{} differs between runs", f.display())
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} data files byte-identical across reruns"
    ))
}

fn main() {
    let _ = env_logger::try_init();
    let work = tempfile::tempdir().expect("temporary directory");
    let root = work.path();
    let runs = run_suite(&root.join("suite"));
    let pairs_root = runs.root.clone();

    let results: Vec<(u8, &str, Check)> = vec![
        (1, "conservation and bounds", criterion_1(&runs)),
        (2, "energy dissipation", criterion_2(&runs)),
        (3, "L1 contraction", criterion_3(&pairs_root)),
        (4, "heat-equation limit", criterion_4()),
        (5, "long-time convergence", criterion_5(&runs)),
        (6, "oscillation decay", criterion_6(&runs, root)),
        (7, "inequality suite", criterion_7(&runs)),
        (8, "weak-form residual", criterion_8()),
        (9, "determinism", criterion_9(&runs, root)),
    ];
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("[PASS] criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {n} ({name}): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
