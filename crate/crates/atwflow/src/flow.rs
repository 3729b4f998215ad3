//! Iterated steps, arrival time and its total variation.

use crate::anisotropy::Anisotropy;
use crate::distance::Interface;
use crate::error::{AtwError, Result};
use crate::grid::{volume, GridDomain, IndicatorField, ScalarField};
use crate::solver::{Scheme, SolverConfig};
use crate::stencil::Stencil;

/// Diagnostics recorded after step `n` (the set is `T_h^n E0`).
#[derive(Clone, Debug)]
pub struct FlowStep {
    pub n: usize,
    pub t: f64,
    pub set: IndicatorField,
    pub volume: f64,
    pub perimeter: f64,
    pub delta_certificate: f64,
    pub residual: f64,
    pub iterations: usize,
    pub energy: f64,
    pub dual_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Extinct,
    TimeLimit,
    /// the solver missed its tolerance at this step; the trace stops before it
    NotCertified { step: usize, gap: f64, iterations: usize },
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub h: f64,
    pub initial: IndicatorField,
    pub initial_perimeter: f64,
    pub steps: Vec<FlowStep>,
    pub extinction_step: Option<usize>,
    pub stop: StopReason,
}

impl FlowTrace {
    pub fn domain(&self) -> &GridDomain {
        self.initial.domain()
    }

    /// `T_h^n E0`; the empty set past the end of an extinct trace.
    pub fn set(&self, n: usize) -> Option<&IndicatorField> {
        if n == 0 {
            return Some(&self.initial);
        }
        self.steps.get(n - 1).map(|s| &s.set)
    }

    /// `E_h(t) = T_h^{[t/h]} E0`.
    pub fn set_at(&self, t: f64) -> Option<IndicatorField> {
        let n = (t / self.h + 1e-9).floor().max(0.0) as usize;
        match self.set(n) {
            Some(e) => Some(e.clone()),
            None if self.extinction_step.is_some() => Some(IndicatorField::empty(self.domain())),
            None => None,
        }
    }

    pub fn extinction_time(&self) -> Option<f64> {
        self.extinction_step.map(|n| n as f64 * self.h)
    }

    pub fn perimeters(&self) -> Vec<f64> {
        std::iter::once(self.initial_perimeter).chain(self.steps.iter().map(|s| s.perimeter)).collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        std::iter::once(volume(&self.initial)).chain(self.steps.iter().map(|s| s.volume)).collect()
    }
}

/// Iterate the scheme from `e0` until extinction or `n h > t_max`.
pub fn run_flow(
    e0: &IndicatorField,
    h: f64,
    phi: &Anisotropy,
    psi: &Anisotropy,
    cfg: &SolverConfig,
    t_max: f64,
) -> Result<FlowTrace> {
    let scheme = Scheme::new(e0.domain(), phi, psi, h, cfg.clone())?;
    run_flow_with(&scheme, e0, t_max, |_| {})
}

/// Same as [`run_flow`] with a prebuilt scheme and a per-step callback.
pub fn run_flow_with(
    scheme: &Scheme,
    e0: &IndicatorField,
    t_max: f64,
    mut on_step: impl FnMut(&FlowStep),
) -> Result<FlowTrace> {
    let h = scheme.h;
    let mut trace = FlowTrace {
        h,
        initial: e0.clone(),
        initial_perimeter: scheme.perimeter(e0),
        steps: Vec::new(),
        extinction_step: None,
        stop: StopReason::TimeLimit,
    };
    if e0.is_empty() {
        trace.extinction_step = Some(0);
        trace.stop = StopReason::Extinct;
        return Ok(trace);
    }
    let mut current = e0.clone();
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut level: Option<ScalarField> = None;
    let mut n = 0;
    while (n + 1) as f64 * h <= t_max + 1e-12 * t_max.abs().max(1.0) {
        n += 1;
        let r = match (&level, scheme.cfg.interface) {
            (Some(w), Interface::Subcell) => scheme.step_with_distance(scheme.level_distance(w)?, warm.as_deref())?,
            _ => scheme.step(&current, warm.as_deref())?,
        };
        if !r.certified {
            trace.stop = StopReason::NotCertified { step: n, gap: r.residual, iterations: r.iterations };
            return Ok(trace);
        }
        let step = FlowStep {
            n,
            t: n as f64 * h,
            volume: volume(&r.next_set),
            perimeter: scheme.perimeter(&r.next_set),
            delta_certificate: r.delta_certificate,
            residual: r.residual,
            iterations: r.iterations,
            energy: r.energy,
            dual_max: r.dual_max,
            set: r.next_set,
        };
        on_step(&step);
        current = step.set.clone();
        trace.steps.push(step);
        warm = Some(r.rof.zeta);
        level = Some(r.w);
        if current.is_empty() {
            trace.extinction_step = Some(n);
            trace.stop = StopReason::Extinct;
            break;
        }
    }
    Ok(trace)
}

/// Discrete arrival time `u_h(x) = h min{n : x not in T_h^n E0}`.
#[derive(Clone, Debug)]
pub struct ArrivalTime {
    pub field: ScalarField,
    pub h: f64,
}

pub fn arrival_time(trace: &FlowTrace) -> Result<ArrivalTime> {
    let Some(last) = trace.extinction_step else {
        return Err(AtwError::NotExtinct);
    };
    let dom = trace.domain();
    let mut exit = vec![0usize; dom.len()];
    let mut alive = trace.initial.members().to_vec();
    for n in 1..=last {
        let e = trace.set(n).expect("trace holds every step up to extinction");
        for x in 0..dom.len() {
            if alive[x] && !e.contains(x) {
                alive[x] = false;
                exit[x] = n;
            }
        }
    }
    let values = exit.iter().map(|&n| n as f64 * trace.h).collect();
    Ok(ArrivalTime { field: ScalarField { domain: dom.clone(), values }, h: trace.h })
}

/// `int phi(-D u)` with the stencil total variation.
pub fn bv_energy(u: &ArrivalTime, phi: &Anisotropy) -> f64 {
    let dom = &u.field.domain;
    let stencil = Stencil::for_gauge(phi, dom.spacing());
    let neg: Vec<f64> = u.field.values.iter().map(|v| -v).collect();
    stencil.tv(dom, &neg)
}

/// `(bv_energy, coarea sum)`; errors when they differ by more than `rel_tol`.
pub fn bv_energy_checked(u: &ArrivalTime, trace: &FlowTrace, phi: &Anisotropy, rel_tol: f64) -> Result<(f64, f64)> {
    let grid = bv_energy(u, phi);
    let stencil = Stencil::for_gauge(phi, u.field.domain.spacing());
    let last = trace.extinction_step.ok_or(AtwError::NotExtinct)?;
    let levels: f64 = (0..last)
        .map(|n| stencil.perimeter(trace.set(n).expect("step within trace")))
        .sum::<f64>()
        * trace.h;
    if (grid - levels).abs() > rel_tol * grid.abs().max(levels.abs()).max(f64::MIN_POSITIVE) {
        return Err(AtwError::CoareaMismatch { grid, levels });
    }
    Ok((grid, levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;

    #[test]
    fn empty_start_is_extinct_at_zero() {
        let dom = GridDomain::centered(2, 1.0, 16).unwrap();
        let l1 = Anisotropy::l1(2).unwrap();
        let tr = run_flow(&IndicatorField::empty(&dom), 0.1, &l1, &l1, &SolverConfig::default(), 1.0).unwrap();
        assert_eq!(tr.extinction_step, Some(0));
        assert!(tr.steps.is_empty());
        let u = arrival_time(&tr).unwrap();
        assert!(u.field.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn square_flow_is_monotone_and_coarea_consistent() {
        let dom = GridDomain::centered(2, 1.0, 40).unwrap();
        let l1 = Anisotropy::l1(2).unwrap();
        let e0 = Shape::Rectangle { min: vec![-0.5, -0.5], max: vec![0.5, 0.5] }.rasterize(&dom).unwrap();
        let tr = run_flow(&e0, 0.02, &l1, &l1, &SolverConfig::default(), 10.0).unwrap();
        assert_eq!(tr.stop, StopReason::Extinct);
        for n in 1..tr.steps.len() {
            assert!(tr.set(n).unwrap().is_subset_of(tr.set(n - 1).unwrap()));
        }
        let u = arrival_time(&tr).unwrap();
        let (grid, levels) = bv_energy_checked(&u, &tr, &l1, 1e-9).unwrap();
        assert!((grid - levels).abs() < 1e-9 * grid);
        // a square of half side 1/2 vanishes near t = 1/8
        let t = tr.extinction_time().unwrap();
        assert!((t - 0.125).abs() < 0.05, "{t}");
    }

    #[test]
    fn arrival_needs_extinction() {
        let dom = GridDomain::centered(2, 1.0, 24).unwrap();
        let l1 = Anisotropy::l1(2).unwrap();
        let e0 = Shape::Rectangle { min: vec![-0.5, -0.5], max: vec![0.5, 0.5] }.rasterize(&dom).unwrap();
        let tr = run_flow(&e0, 0.01, &l1, &l1, &SolverConfig::default(), 0.02).unwrap();
        assert_eq!(tr.stop, StopReason::TimeLimit);
        assert!(matches!(arrival_time(&tr), Err(AtwError::NotExtinct)));
    }
}
