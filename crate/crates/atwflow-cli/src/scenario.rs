//! Scenario files: one JSON object with the keys `domain`, `shape`, `phi`,
//! `psi`, `h`, `t_max`, `solver`, `probes`, `output` and `seed`.
//!
//! ```json
//! {
//!   "domain": { "origin": [-2.25, -2.25], "extent": [4.5, 4.5], "cells": [512, 512] },
//!   "shape": { "kind": "cross", "L": 2 },
//!   "phi": { "kind": "weighted-l1" },
//!   "psi": { "kind": "weighted-l1" },
//!   "h": 0.015625,
//!   "t_max": 2.0,
//!   "probes": [0.5, 1.0, 1.25],
//!   "output": "out/cross",
//!   "seed": 7
//! }
//! ```
//!
//! `solver`, `probes`, `output` and `seed` are optional. Unknown keys are
//! rejected anywhere in the file.

use std::path::{Path, PathBuf};

use atwflow::distance::Interface;
use atwflow::oracles::OracleSolution;
use atwflow::solver::{SolverConfig, SolverKind};
use atwflow::{Anisotropy, AnisotropySpec, AtwError, GridDomain, IndicatorField, Shape};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub origin: Vec<f64>,
    pub extent: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub tol_gap: f64,
    pub max_iters: usize,
    pub check_every: usize,
    pub interface: Interface,
    /// `null` solves on the whole grid every step
    pub window_margin: Option<usize>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let c = SolverConfig::default();
        SolverSpec {
            kind: c.kind,
            tol_gap: c.tol_gap,
            max_iters: c.max_iters,
            check_every: c.check_every,
            interface: c.interface,
            window_margin: c.window_margin,
        }
    }
}

impl SolverSpec {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            kind: self.kind,
            tol_gap: self.tol_gap,
            max_iters: self.max_iters,
            check_every: self.check_every,
            interface: self.interface,
            window_margin: self.window_margin,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    domain: Option<DomainSpec>,
    shape: Option<Shape>,
    phi: Option<AnisotropySpec>,
    psi: Option<AnisotropySpec>,
    h: Option<f64>,
    t_max: Option<f64>,
    #[serde(default)]
    solver: SolverSpec,
    #[serde(default)]
    probes: Vec<f64>,
    output: Option<PathBuf>,
    seed: Option<u64>,
}

/// A validated scenario with its grid and initial set built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub domain_spec: DomainSpec,
    pub shape: Shape,
    pub phi_spec: AnisotropySpec,
    pub psi_spec: AnisotropySpec,
    pub solver: SolverSpec,
    pub domain: GridDomain,
    pub phi: Anisotropy,
    pub psi: Anisotropy,
    pub h: f64,
    pub t_max: f64,
    pub probes: Vec<f64>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub initial: IndicatorField,
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, CliError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Scenario(format!("{}: {e}", path.display())))?;
    parse_scenario_str(&text).map_err(|e| match e {
        CliError::Scenario(m) => CliError::Scenario(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, CliError> {
    // serde_json messages carry "at line L column C"
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| CliError::Scenario(e.to_string()))?;
    let missing = |k: &str| CliError::Scenario(format!("{k} required"));
    let domain_spec = raw.domain.ok_or_else(|| missing("domain"))?;
    let shape = raw.shape.ok_or_else(|| missing("shape"))?;
    let phi_spec = raw.phi.ok_or_else(|| missing("phi"))?;
    let psi_spec = raw.psi.ok_or_else(|| missing("psi"))?;
    let h = raw.h.ok_or_else(|| missing("h"))?;
    let t_max = raw.t_max.ok_or_else(|| missing("t_max"))?;
    let invalid = |m: String| CliError::Scenario(m);
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("h must be positive, got {h}")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(invalid(format!("t_max must be positive, got {t_max}")));
    }
    if let Some(t) = raw.probes.iter().find(|t| !(**t >= 0.0 && **t <= t_max)) {
        return Err(invalid(format!("probe time {t} outside [0, t_max]")));
    }
    if !(raw.solver.tol_gap > 0.0) || raw.solver.max_iters == 0 {
        return Err(invalid("solver tolerance and iteration cap must be positive".into()));
    }
    let domain = GridDomain::new(&domain_spec.origin, &domain_spec.extent, &domain_spec.cells)
        .map_err(|e| invalid(format!("domain: {e}")))?;
    let dim = domain.dim();
    let phi = phi_spec.build(dim).map_err(|e| invalid(format!("phi: {e}")))?;
    let psi = psi_spec.build(dim).map_err(|e| invalid(format!("psi: {e}")))?;
    let initial = match shape.rasterize(&domain) {
        Ok(e) => e,
        Err(AtwError::FrameViolation) => {
            return Err(invalid("shape does not fit inside the domain minus its two-layer frame".into()))
        }
        Err(e) => return Err(invalid(format!("shape: {e}"))),
    };
    if initial.is_empty() {
        return Err(invalid("shape contains no cell centers".into()));
    }
    Ok(Scenario {
        domain_spec,
        shape,
        phi_spec,
        psi_spec,
        solver: raw.solver,
        domain,
        phi,
        psi,
        h,
        t_max,
        probes: raw.probes,
        output: raw.output,
        seed: raw.seed.unwrap_or(0),
        initial,
    })
}

impl Scenario {
    pub fn solver_config(&self) -> SolverConfig {
        self.solver.config()
    }

    /// The closed-form evolution matching this scenario, when there is one.
    pub fn oracle(&self) -> Option<OracleSolution> {
        let dim = self.domain.dim();
        let unit_l1 = |s: &AnisotropySpec| match s {
            AnisotropySpec::WeightedL1 { weights } => weights.as_ref().is_none_or(|w| w.iter().all(|v| *v == 1.0)),
            _ => false,
        };
        let euclid = |s: &AnisotropySpec| matches!(s, AnisotropySpec::Euclidean);
        let at_origin = |c: &Option<Vec<f64>>| c.as_ref().is_none_or(|c| c.iter().all(|v| *v == 0.0));
        let (phi, psi) = (&self.phi_spec, &self.psi_spec);
        match &self.shape {
            Shape::Cross { l } if dim == 2 && unit_l1(phi) && unit_l1(psi) => Some(OracleSolution::Cross { l: *l }),
            Shape::Ball { center, radius } if euclid(phi) && euclid(psi) && at_origin(center) => {
                Some(OracleSolution::ShrinkingBall { r0: *radius, dim })
            }
            Shape::Rectangle { min, max } if dim == 2 && unit_l1(phi) && unit_l1(psi) => {
                let s0 = max[0];
                let square = [min[0], min[1], max[1]].iter().zip([-s0, -s0, s0]).all(|(a, b)| *a == b);
                square.then_some(OracleSolution::ShrinkingSquareL1 { s0 })
            }
            Shape::DiskUnion { centers, radii } if dim == 2 && euclid(phi) && euclid(psi) => {
                let centers = centers.iter().map(|c| [c[0], c[1]]).collect();
                Some(OracleSolution::DiskFamily { centers, radii: radii.clone() })
            }
            _ => None,
        }
    }
}
