//! Files written by the subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use atwflow::contour::{contour_extract, svg_document, Layer, Polyline};
use atwflow::flow::FlowTrace;
use atwflow::oracles::OracleSolution;
use atwflow::{raster, GridDomain, IndicatorField, ScalarField};
use serde::Serialize;

use crate::CliError;

pub const TRACE_HEADER: &str = "n,t,volume,P_phi,delta_cert,residual";

/// One row per completed step after the header. Infinite certificates
/// (sets without interior) are written as `inf`.
pub fn trace_csv(trace: &FlowTrace) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for st in &trace.steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            st.n, st.t, st.volume, st.perimeter, st.delta_certificate, st.residual
        );
    }
    s
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_scalar(dir: &Path, stem: &str, f: &ScalarField) -> Result<(), CliError> {
    raster::write_scalar(dir.join(format!("{stem}.atwf")), f)?;
    if f.domain.dim() == 2 {
        fs::write(dir.join(format!("{stem}.pgm")), raster::to_pgm(f)?)?;
    }
    Ok(())
}

pub fn write_indicator(dir: &Path, stem: &str, e: &IndicatorField) -> Result<(), CliError> {
    raster::write_indicator(dir.join(format!("{stem}.atwf")), e)?;
    if e.domain().dim() == 2 {
        fs::write(dir.join(format!("{stem}.pgm")), raster::to_pgm(&e.as_scalar())?)?;
    }
    Ok(())
}

pub fn closed(p: &[[f64; 2]]) -> Polyline {
    let mut l = p.to_vec();
    if let Some(first) = p.first() {
        l.push(*first);
    }
    l
}

/// Computed contour in black, the oracle (if any) in red.
pub fn contour_svg(dom: &GridDomain, set: &IndicatorField, oracle: Option<(&OracleSolution, f64)>) -> String {
    let computed = contour_extract(set);
    let exact: Vec<Polyline> = oracle.map(|(o, t)| o.outline(t, 256).iter().map(|p| closed(p)).collect()).unwrap_or_default();
    let mut layers = vec![Layer { lines: &computed, stroke: "black", label: "computed" }];
    if oracle.is_some() {
        layers.push(Layer { lines: &exact, stroke: "red", label: "closed form" });
    }
    svg_document(dom, &layers)
}

/// Probe file names keep the time readable: `contour_t1.25.svg`.
pub fn probe_name(t: f64) -> String {
    format!("contour_t{t}.svg")
}
