//! Scenario manifests: one JSON tree describing a run, its diagnostics and the
//! estimate checks to verify against it.
//!
//! Relative table paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use satflow_core::diagnostics::{CascadeOptions, ConvergenceTolerances};
use satflow_core::estimates::{
    CaccioppoliConstants, LogConstants, RampProfile, Sign, DEFAULT_SLACK,
};
use satflow_core::io::{open, read_table_csv};
use satflow_core::{
    EnergyDensity, Grid, InitialCondition, Potential, PotentialSpec, SaturationSpec,
    SimulationConfig, Solver,
};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scenario: String,
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub verify: Vec<CheckSpec>,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub grid: GridBlock,
    pub saturation: SaturationBlock,
    pub energy: EnergyDensity,
    #[serde(default)]
    pub potentials: PotentialsBlock,
    pub initial: InitialCondition,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    /// Fixed step, bypassing the CFL rule.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_cfl() -> f64 {
    0.9
}
fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

/// Inline samples or a two-column CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Table {
    File(PathBuf),
    Inline { coords: Vec<f64>, values: Vec<f64> },
}

impl Table {
    fn load(&self, base: &Path) -> Result<(Vec<f64>, Vec<f64>), satflow_core::Error> {
        match self {
            Table::File(p) => read_table_csv(open(&base.join(p))?),
            Table::Inline { coords, values } => Ok((coords.clone(), values.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SaturationBlock {
    Power {
        rho_max: f64,
        m: f64,
    },
    Unit {
        rho_max: f64,
    },
    Tabulated {
        rho_max: f64,
        table: Table,
        beta: f64,
        c0: f64,
        c1: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsBlock {
    #[serde(default)]
    pub v: PotentialBlock,
    #[serde(default)]
    pub w: PotentialBlock,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialBlock {
    #[default]
    Zero,
    Quadratic,
    Tabulated {
        table: Table,
    },
}

impl PotentialBlock {
    pub fn is_zero(&self) -> bool {
        matches!(self, PotentialBlock::Zero)
    }

    fn build(&self, base: &Path) -> Result<Potential, satflow_core::Error> {
        Ok(match self {
            PotentialBlock::Zero => Potential::Zero,
            PotentialBlock::Quadratic => Potential::Quadratic,
            PotentialBlock::Tabulated { table } => {
                let (coords, values) = table.load(base)?;
                Potential::Tabulated { coords, values }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    #[serde(default)]
    pub cascades: Vec<CascadeSpec>,
    #[serde(default)]
    pub cascade_options: CascadeOptions,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default)]
    pub convergence: Option<ConvergenceSpec>,
}

fn default_nu() -> f64 {
    0.5
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            cascades: Vec::new(),
            cascade_options: CascadeOptions::default(),
            nu: default_nu(),
            convergence: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSpec {
    pub vertex: Vec<f64>,
    /// Defaults to the final recorded time.
    #[serde(default)]
    pub t0: Option<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub tail_fraction: f64,
    pub gap: f64,
    pub residual: f64,
}

impl ConvergenceSpec {
    pub fn tolerances(&self) -> ConvergenceTolerances {
        ConvergenceTolerances {
            gap: self.gap,
            residual: self.residual,
        }
    }
}

/// A truncation level, either absolute or as a fraction of the essential
/// range `[lo, hi]` sampled where the check runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Level {
    Value(f64),
    Fraction(f64),
}

impl Level {
    pub fn resolve(self, lo: f64, hi: f64) -> f64 {
        match self {
            Level::Value(v) => v,
            Level::Fraction(f) => lo + f * (hi - lo),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderBlock {
    pub center: Vec<f64>,
    pub t0: f64,
    pub radius: f64,
    pub height: f64,
}

/// Inner cylinder of a cutoff, sharing the outer vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerBlock {
    pub radius: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffBlock {
    pub inner: InnerBlock,
    #[serde(default = "default_profile")]
    pub profile: RampProfile,
    #[serde(default)]
    pub time_dependent: bool,
}

fn default_profile() -> RampProfile {
    RampProfile::Smoothed
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Caccioppoli {
        cylinder: CylinderBlock,
        cutoff: CutoffBlock,
        level: Level,
        sign: Sign,
        #[serde(default)]
        constants: CaccioppoliConstants,
    },
    Log {
        cylinder: CylinderBlock,
        cutoff: CutoffBlock,
        level: Level,
        /// Fraction of `H = ess sup (rho - k)_{+-}` on the cylinder.
        c_fraction: f64,
        sign: Sign,
        #[serde(default)]
        constants: LogConstants,
    },
    Degiorgi {
        /// Snapshot time; the latest snapshot at or before it is used.
        /// Defaults to the final time.
        #[serde(default)]
        time: Option<f64>,
        center: Vec<f64>,
        radius: f64,
        k0: Level,
        k1: Level,
        #[serde(default)]
        constant: Option<f64>,
        #[serde(default = "default_slack")]
        slack: f64,
    },
    GeometricConvergence {
        y0: f64,
        z0: f64,
        c: f64,
        b: f64,
        /// Defaults to `1 + 4/N` for the manifest's grid.
        #[serde(default)]
        kappa: Option<f64>,
        upsilon: f64,
        #[serde(default = "default_n_max")]
        n_max: usize,
    },
}

fn default_n_max() -> usize {
    200
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Caccioppoli { .. } => "caccioppoli",
            CheckSpec::Log { .. } => "log",
            CheckSpec::Degiorgi { .. } => "degiorgi",
            CheckSpec::GeometricConvergence { .. } => "geometric_convergence",
        }
    }
}

fn at(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {e}"))
}

fn range_check(
    path: &str,
    ok: bool,
    value: impl std::fmt::Display,
    range: &str,
) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(at(path, format!("{value} is outside {range}")))
    }
}

/// Parsed manifest together with the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and validates; errors carry the offending field path.
    pub fn from_str(text: &str, base: PathBuf) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let manifest: Manifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            at(if path.is_empty() { "." } else { &path }, e.into_inner())
        })?;
        let loaded = Self { manifest, base };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let m = &self.manifest;
        if m.scenario.is_empty() {
            return Err(at("scenario", "must not be empty"));
        }
        let config = self.config()?;
        let dim = config.grid.dim();
        let d = &m.diagnostics;
        range_check("diagnostics.nu", d.nu > 0.0 && d.nu < 1.0, d.nu, "(0, 1)")?;
        d.cascade_options
            .validate()
            .map_err(|e| at("diagnostics.cascade_options", e))?;
        for (i, c) in d.cascades.iter().enumerate() {
            let p = format!("diagnostics.cascades[{i}]");
            point(&c.vertex, dim, &format!("{p}.vertex"))?;
            range_check(&format!("{p}.radius"), c.radius > 0.0, c.radius, "(0, inf)")?;
        }
        if let Some(c) = &d.convergence {
            let p = "diagnostics.convergence";
            range_check(
                &format!("{p}.tail_fraction"),
                c.tail_fraction > 0.0 && c.tail_fraction <= 1.0,
                c.tail_fraction,
                "(0, 1]",
            )?;
            range_check(&format!("{p}.gap"), c.gap > 0.0, c.gap, "(0, inf)")?;
            range_check(
                &format!("{p}.residual"),
                c.residual > 0.0,
                c.residual,
                "(0, inf)",
            )?;
        }
        for (i, check) in m.verify.iter().enumerate() {
            validate_check(check, dim, &format!("verify[{i}]"))?;
        }
        Ok(())
    }

    pub fn scenario(&self) -> &str {
        &self.manifest.scenario
    }

    /// Core configuration; every failure names the manifest field.
    pub fn config(&self) -> Result<SimulationConfig, CliError> {
        let s = &self.manifest.simulation;
        let extents: Vec<(f64, f64)> = s
            .grid
            .lower
            .iter()
            .zip(&s.grid.upper)
            .map(|(&a, &b)| (a, b))
            .collect();
        if s.grid.lower.len() != s.grid.upper.len() {
            return Err(at(
                "simulation.grid",
                "lower and upper have different lengths",
            ));
        }
        let grid = Grid::new(&extents, &s.grid.cells).map_err(|e| at("simulation.grid", e))?;
        let saturation = match &s.saturation {
            SaturationBlock::Power { rho_max, m } => SaturationSpec::power(*rho_max, *m),
            SaturationBlock::Unit { rho_max } => SaturationSpec::unit(*rho_max),
            SaturationBlock::Tabulated {
                rho_max,
                table,
                beta,
                c0,
                c1,
            } => table
                .load(&self.base)
                .and_then(|(k, v)| SaturationSpec::tabulated(*rho_max, k, v, *beta, *c0, *c1)),
        }
        .map_err(|e| at("simulation.saturation", e))?;
        s.energy
            .validate()
            .map_err(|e| at("simulation.energy", e))?;
        let v = s
            .potentials
            .v
            .build(&self.base)
            .map_err(|e| at("simulation.potentials.v", e))?;
        let w = s
            .potentials
            .w
            .build(&self.base)
            .map_err(|e| at("simulation.potentials.w", e))?;
        range_check(
            "simulation.t_end",
            s.t_end >= 0.0 && s.t_end.is_finite(),
            s.t_end,
            "[0, inf)",
        )?;
        range_check(
            "simulation.cfl",
            s.cfl > 0.0 && s.cfl <= 1.0,
            s.cfl,
            "(0, 1]",
        )?;
        range_check(
            "simulation.snapshot_every",
            s.snapshot_every >= 1,
            s.snapshot_every,
            "[1, inf)",
        )?;
        if let Some(dt) = s.dt {
            range_check("simulation.dt", dt > 0.0 && dt.is_finite(), dt, "(0, inf)")?;
        }
        let config = SimulationConfig {
            grid,
            saturation,
            energy: s.energy,
            potentials: PotentialSpec::new(v, w),
            initial: s.initial.clone(),
            t_end: s.t_end,
            cfl: s.cfl,
            snapshot_every: s.snapshot_every,
            dt_override: s.dt,
        };
        config
            .initial
            .build(&config.grid)
            .and_then(|f| f.check_admissible(config.saturation.rho_max))
            .map_err(|e| at("simulation.initial", e))?;
        Ok(config)
    }

    pub fn solver(&self) -> Result<Solver, CliError> {
        Solver::new(self.config()?).map_err(|e| at("simulation", e))
    }

    /// Output directory: the override, else the manifest's, else `out/<scenario>`.
    pub fn output_dir(&self, over: Option<&Path>) -> PathBuf {
        match (over, &self.manifest.output) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.base.join(p),
            (None, None) => PathBuf::from("out").join(&self.manifest.scenario),
        }
    }
}

pub fn point(coords: &[f64], dim: usize, path: &str) -> Result<[f64; 2], CliError> {
    if coords.len() != dim {
        return Err(at(
            path,
            format!("expected {dim} coordinates, got {}", coords.len()),
        ));
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(coords);
    Ok(p)
}

fn validate_level(level: Level, path: &str) -> Result<(), CliError> {
    match level {
        Level::Value(v) => range_check(path, v.is_finite(), v, "finite values"),
        Level::Fraction(f) => range_check(path, (0.0..=1.0).contains(&f), f, "[0, 1]"),
    }
}

fn validate_cylinder(
    c: &CylinderBlock,
    cut: &CutoffBlock,
    dim: usize,
    p: &str,
) -> Result<(), CliError> {
    point(&c.center, dim, &format!("{p}.cylinder.center"))?;
    range_check(
        &format!("{p}.cylinder.radius"),
        c.radius > 0.0,
        c.radius,
        "(0, inf)",
    )?;
    range_check(
        &format!("{p}.cylinder.height"),
        c.height > 0.0,
        c.height,
        "(0, inf)",
    )?;
    range_check(
        &format!("{p}.cutoff.inner.radius"),
        cut.inner.radius > 0.0 && cut.inner.radius < c.radius,
        cut.inner.radius,
        "(0, cylinder.radius)",
    )?;
    range_check(
        &format!("{p}.cutoff.inner.height"),
        cut.inner.height > 0.0 && cut.inner.height <= c.height,
        cut.inner.height,
        "(0, cylinder.height]",
    )
}

fn validate_check(check: &CheckSpec, dim: usize, p: &str) -> Result<(), CliError> {
    match check {
        CheckSpec::Caccioppoli {
            cylinder,
            cutoff,
            level,
            constants,
            ..
        } => {
            validate_cylinder(cylinder, cutoff, dim, p)?;
            validate_level(*level, &format!("{p}.level"))?;
            range_check(
                &format!("{p}.constants.slack"),
                constants.slack >= 0.0,
                constants.slack,
                "[0, inf)",
            )
        }
        CheckSpec::Log {
            cylinder,
            cutoff,
            level,
            c_fraction,
            constants,
            ..
        } => {
            validate_cylinder(cylinder, cutoff, dim, p)?;
            validate_level(*level, &format!("{p}.level"))?;
            range_check(
                &format!("{p}.c_fraction"),
                *c_fraction > 0.0 && *c_fraction < 1.0,
                c_fraction,
                "(0, 1)",
            )?;
            range_check(
                &format!("{p}.constants.slack"),
                constants.slack >= 0.0,
                constants.slack,
                "[0, inf)",
            )
        }
        CheckSpec::Degiorgi {
            center,
            radius,
            k0,
            k1,
            slack,
            ..
        } => {
            point(center, dim, &format!("{p}.center"))?;
            range_check(&format!("{p}.radius"), *radius > 0.0, radius, "(0, inf)")?;
            validate_level(*k0, &format!("{p}.k0"))?;
            validate_level(*k1, &format!("{p}.k1"))?;
            range_check(&format!("{p}.slack"), *slack >= 0.0, slack, "[0, inf)")
        }
        CheckSpec::GeometricConvergence { c, b, upsilon, .. } => {
            range_check(&format!("{p}.c"), *c > 1.0, c, "(1, inf)")?;
            range_check(&format!("{p}.b"), *b > 1.0, b, "(1, inf)")?;
            range_check(&format!("{p}.upsilon"), *upsilon > 0.0, upsilon, "(0, inf)")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": "tiny",
        "simulation": {
            "grid": {"lower": [0.0], "upper": [1.0], "cells": [8]},
            "saturation": {"kind": "power", "rho_max": 1.0, "m": 1.0},
            "energy": {"kind": "boltzmann"},
            "initial": {"constant": {"value": 0.5}},
            "t_end": 0.0
        }
    }"#;

    fn parse(text: &str) -> Result<LoadedManifest, CliError> {
        LoadedManifest::from_str(text, PathBuf::new())
    }

    fn config_message(text: &str) -> String {
        match parse(text) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_manifest_uses_defaults() {
        let m = parse(MINIMAL).unwrap();
        let s = &m.manifest.simulation;
        assert_eq!(s.cfl, 0.9);
        assert_eq!(s.snapshot_every, 1);
        assert!(s.potentials.v.is_zero() && s.potentials.w.is_zero());
        assert_eq!(m.manifest.diagnostics.nu, 0.5);
        assert!(m.manifest.verify.is_empty());
        assert_eq!(m.output_dir(None), PathBuf::from("out/tiny"));
    }

    #[test]
    fn zero_cfl_names_the_field() {
        let text = MINIMAL.replace(r#""t_end": 0.0"#, r#""t_end": 0.0, "cfl": 0.0"#);
        assert!(config_message(&text).starts_with("simulation.cfl:"));
    }

    #[test]
    fn unknown_fields_and_presets_name_the_path() {
        let text = MINIMAL.replace(r#""m": 1.0"#, r#""m": 1.0, "mm": 2"#);
        assert!(config_message(&text).starts_with("simulation.saturation"));
        let text = MINIMAL.replace(r#""kind": "boltzmann""#, r#""kind": "fermi""#);
        assert!(config_message(&text).starts_with("simulation.energy"));
    }

    #[test]
    fn inadmissible_initial_data_is_rejected() {
        let text = MINIMAL.replace(r#""value": 0.5"#, r#""value": 1.5"#);
        assert!(config_message(&text).starts_with("simulation.initial:"));
    }

    #[test]
    fn check_fields_are_validated() {
        let text = MINIMAL.replace(
            r#""t_end": 0.0
        }"#,
            r#""t_end": 0.0
        },
        "verify": [{"check": "degiorgi", "center": [0.5], "radius": 0.25,
                    "k0": {"fraction": 1.5}, "k1": {"value": 0.1}}]"#,
        );
        assert!(config_message(&text).starts_with("verify[0].k0:"));
    }

    #[test]
    fn inline_tables_build() {
        let text = MINIMAL.replace(
            r#"{"kind": "power", "rho_max": 1.0, "m": 1.0}"#,
            r#"{"kind": "tabulated", "rho_max": 1.0, "beta": 1.0, "c0": 1.0, "c1": 1.0,
                "table": {"inline": {"coords": [0.0, 1.0], "values": [1.0, 0.0]}}}"#,
        );
        let cfg = parse(&text).unwrap().config().unwrap();
        assert!((cfg.saturation.sigma(0.25).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn levels_resolve() {
        assert_eq!(Level::Value(0.3).resolve(0.0, 1.0), 0.3);
        assert!((Level::Fraction(0.25).resolve(0.2, 0.6) - 0.3).abs() < 1e-15);
    }
}
