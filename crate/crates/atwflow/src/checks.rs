//! Property checks on sets, traces and arrival times.
//!
//! Every check returns a [`CheckReport`] instead of failing; the caller
//! decides what a failure means. Random competitors come from ChaCha8
//! streams seeded by `(seed, sample index)`, so batches are evaluated in
//! parallel without changing the result.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::anisotropy::Anisotropy;
use crate::error::{AtwError, Result};
use crate::flow::{arrival_time, bv_energy_checked, run_flow_with, ArrivalTime, FlowTrace};
use crate::grid::{GridDomain, IndicatorField};
use crate::oracles::OracleSolution;
use crate::solver::{Scheme, SolverConfig};
use crate::stencil::Stencil;

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub property: String,
    pub passed: bool,
    pub samples: usize,
    pub failures: usize,
    /// smallest slack `rhs - lhs` seen; negative beyond `-tolerance` is a failure
    pub worst_margin: f64,
    pub tolerance: f64,
    pub worst_sample: Option<String>,
    pub values: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(property: &str, tolerance: f64) -> Self {
        CheckReport {
            property: property.to_string(),
            passed: true,
            samples: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
            tolerance,
            worst_sample: None,
            values: BTreeMap::new(),
        }
    }

    fn record(&mut self, margin: f64, label: impl FnOnce() -> String) {
        self.samples += 1;
        if margin < -self.tolerance || margin.is_nan() {
            self.failures += 1;
            self.passed = false;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.worst_sample = Some(label());
        }
    }

    fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }
}

fn rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

fn phi_max(phi: &Anisotropy) -> f64 {
    let d = phi.dim();
    let mut m: f64 = 0.0;
    for a in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; d];
            e[a] = s;
            m = m.max(phi.eval_unchecked(&e));
        }
    }
    // diagonals matter for l1-like gauges
    if d == 2 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (x, y) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
            m = m.max(phi.eval_unchecked(&[x, y]));
        }
    }
    m
}

/// Cells whose centers lie in the euclidean ball, clipped to the free region.
fn ball(dom: &GridDomain, c: &[f64], r: f64) -> Vec<bool> {
    (0..dom.len())
        .map(|x| {
            let p = dom.center_of(x);
            !dom.in_frame_idx(x) && (0..dom.dim()).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() <= r * r
        })
        .collect()
}

/// Minkowski sum with the discrete Wulff shape `{phi_dual <= r}`.
pub fn dilate(e: &IndicatorField, phi: &Anisotropy, r: f64) -> IndicatorField {
    let dom = e.domain();
    let sp = dom.spacing();
    let d = dom.dim();
    let reach: Vec<isize> = (0..3).map(|a| if a < d { (r / sp[a]).floor() as isize } else { 0 }).collect();
    let mut offs = Vec::new();
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -reach[2]..=reach[2] {
                let v = [i as f64 * sp[0], if d > 1 { j as f64 * sp[1] } else { 0.0 }, if d > 2 { k as f64 * sp[2] } else { 0.0 }];
                if phi.dual_unchecked(&v[..d]) <= r + 1e-12 {
                    offs.push([i, j, k]);
                }
            }
        }
    }
    let mut out = e.members().to_vec();
    // interior members add nothing the boundary ones do not
    let inner = crate::solver::erode(e, 1);
    for x in 0..dom.len() {
        if !e.contains(x) || inner[x] {
            continue;
        }
        let i = dom.multi(x);
        for o in &offs {
            if let Some(y) = dom.offset(i, *o) {
                if !dom.in_frame_idx(y) {
                    out[y] = true;
                }
            }
        }
    }
    IndicatorField::new(dom, out).expect("same domain")
}

/// `P(F) - delta |F \ E| - P(E n F)`; nonnegative when the pair respects (MC_delta).
pub fn mc_margin(e: &IndicatorField, f: &IndicatorField, stencil: &Stencil, delta: f64) -> f64 {
    let extra = f.difference(e).count() as f64 * e.domain().cell_volume();
    stencil.perimeter(f) - delta * extra - stencil.perimeter(&e.intersection(f))
}

/// Cells outside `e` with a member neighbour along a coordinate axis.
fn outer_boundary(e: &IndicatorField) -> Vec<usize> {
    let dom = e.domain();
    (0..dom.len())
        .filter(|&x| {
            !e.contains(x) && !dom.in_frame_idx(x) && {
                let i = dom.multi(x);
                (0..dom.dim()).any(|a| {
                    let mut o = [0isize; 3];
                    o[a] = 1;
                    let mut m = [0isize; 3];
                    m[a] = -1;
                    [o, m].iter().any(|o| dom.offset(i, *o).is_some_and(|y| e.contains(y)))
                })
            }
        })
        .collect()
}

/// Largest `delta` for which `e` is the smallest minimizer of
/// `P(F) - delta |F \ e|` over supersets `F` clear of the frame, i.e. the
/// discrete (MC_delta) constant of `e` for the scheme's stencil perimeter.
/// Each bisection probe is one relaxed solve with `d = -M` on `e`, `-delta h`
/// off it and `+M` on the frame, thresholded at `w < 0`. Returns the largest
/// probe that passed, so `e` is (MC_delta) for the returned value; `0` when
/// it is not even outward minimizing.
pub fn mc_delta_constant(scheme: &Scheme, e: &IndicatorField, rel_tol: f64) -> Result<f64> {
    let dom = scheme.domain();
    if e.domain() != dom {
        return Err(AtwError::DomainMismatch);
    }
    if e.is_empty() {
        return Err(AtwError::DegenerateSet);
    }
    let h = scheme.h;
    let inner: Vec<bool> = (0..dom.len()).map(|x| !dom.in_frame_idx(x)).collect();
    let full = IndicatorField::new(dom, inner.clone())?;
    let outside = full.difference(e).count() as f64 * dom.cell_volume();
    if outside == 0.0 {
        return Ok(f64::INFINITY);
    }
    // the whole interior is a competitor, which bounds delta from above
    let hi0 = (scheme.perimeter(&full) - scheme.perimeter(e)) / outside;
    if hi0 <= 0.0 {
        return Ok(0.0);
    }
    // forcing strong enough that dropping a member or entering the frame never pays
    let mut one = vec![false; dom.len()];
    let centre = dom.index([dom.cells()[0] / 2, dom.cells()[1] / 2, dom.cells().get(2).map_or(0, |n| n / 2)]);
    one[centre] = true;
    let cell_perimeter = scheme.perimeter(&IndicatorField::new(dom, one)?);
    let big = 10.0 * h * (cell_perimeter / dom.cell_volume() + hi0);
    let level = 1e-6 * h;
    let passes = |delta: f64| -> Result<bool> {
        let d: Vec<f64> = (0..dom.len())
            .map(|x| if !inner[x] { big } else if e.contains(x) { -big } else { -delta * h })
            .collect();
        let w = scheme.solve_w(&d, None)?.w;
        Ok((0..dom.len()).all(|x| !inner[x] || e.contains(x) || w[x] >= -level))
    };
    if !passes(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, hi0);
    if passes(hi)? {
        return Ok(hi);
    }
    while hi - lo > rel_tol * hi0 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Samples outward competitors `F` (Wulff dilations, unions with random
/// balls, balls centred on the outer boundary) and tests
/// `P(E n F) <= P(F) - delta |F \ E|` up to four cells of boundary.
pub fn check_mc_delta(e: &IndicatorField, phi: &Anisotropy, delta: f64, n_samples: usize, seed: u64) -> CheckReport {
    let dom = e.domain();
    let stencil = Stencil::for_gauge(phi, dom.spacing());
    let tol = 4.0 * dom.h_max().powi(dom.dim() as i32 - 1) * phi_max(phi);
    let mut rep = CheckReport::new("mc_delta", tol).value("delta", delta);
    if e.is_empty() {
        return rep;
    }
    let ext = dom.extent();
    let size = ext.iter().cloned().fold(f64::INFINITY, f64::min);
    let lo: Vec<f64> = (0..dom.dim()).map(|a| dom.origin()[a] + 2.0 * dom.spacing()[a]).collect();
    let boundary = outer_boundary(e);
    let results: Vec<(f64, String)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(seed, i);
            let radius = r.gen_range(2.0 * dom.h_max()..=0.25 * size);
            let (f, label) = match i % 3 {
                0 => (dilate(e, phi, radius), format!("dilation r={radius:.4}")),
                1 => {
                    let c: Vec<f64> = (0..dom.dim()).map(|a| r.gen_range(lo[a]..lo[a] + ext[a] - 4.0 * dom.spacing()[a])).collect();
                    let b = ball(dom, &c, radius);
                    let m = e.members().iter().zip(&b).map(|(p, q)| *p || *q).collect();
                    (IndicatorField::new(dom, m).expect("same domain"), format!("ball c={c:.3?} r={radius:.4}"))
                }
                _ => {
                    let x = boundary[r.gen_range(0..boundary.len().max(1)).min(boundary.len().saturating_sub(1))];
                    let c = dom.center_of(x);
                    let b = ball(dom, &c[..dom.dim()], radius);
                    let m = e.members().iter().zip(&b).map(|(p, q)| *p || *q).collect();
                    (IndicatorField::new(dom, m).expect("same domain"), format!("bump c={:.3?} r={radius:.4}", &c[..dom.dim()]))
                }
            };
            (mc_margin(e, &f, &stencil, delta), label)
        })
        .collect();
    for (m, l) in results {
        rep.record(m, || l);
    }
    rep
}

/// Competitors `v >= u` with compact support: `u + eps chi_{u>0}`, smooth
/// bumps added to `u`, and `max(u, c chi_B)`. Checks
/// `TV(v) >= TV(u) - abs_tol`, and with `delta > 0` also
/// `TV(v) >= TV(u) + delta int (v - u) - tol_delta`.
pub fn check_superharmonic(
    u: &ArrivalTime,
    phi: &Anisotropy,
    delta: f64,
    n_samples: usize,
    seed: u64,
    abs_tol: f64,
) -> (CheckReport, CheckReport) {
    let dom = &u.field.domain;
    let stencil = Stencil::for_gauge(phi, dom.spacing());
    let base = stencil.tv(dom, &neg(&u.field.values));
    let umax = u.field.values.iter().cloned().fold(0.0, f64::max).max(u.h);
    let sh_scale = 4.0 * dom.h_max().powi(dom.dim() as i32 - 1) * phi_max(phi);
    let mut plain = CheckReport::new("superharmonic", abs_tol).value("tv_u", base);
    let mut strong = CheckReport::new("superharmonic_delta", sh_scale).value("delta", delta).value("tv_u", base);
    let ext = dom.extent();
    let size = ext.iter().cloned().fold(f64::INFINITY, f64::min);
    let lo: Vec<f64> = (0..dom.dim()).map(|a| dom.origin()[a] + 2.0 * dom.spacing()[a]).collect();
    let cv = dom.cell_volume();
    let results: Vec<(f64, f64, f64, String)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(seed, i);
            let mut v = u.field.values.clone();
            let label = match i % 3 {
                0 => {
                    let eps = r.gen_range(0.05 * u.h..=u.h);
                    for (vx, ux) in v.iter_mut().zip(&u.field.values) {
                        if *ux > 0.0 {
                            *vx += eps;
                        }
                    }
                    format!("shift eps={eps:.4}")
                }
                1 => {
                    let rho = r.gen_range(2.0 * dom.h_max()..=0.25 * size);
                    let c: Vec<f64> = (0..dom.dim()).map(|a| r.gen_range(lo[a]..lo[a] + ext[a] - 4.0 * dom.spacing()[a])).collect();
                    let eps = r.gen_range(0.1 * u.h..=umax);
                    for (x, vx) in v.iter_mut().enumerate() {
                        if dom.in_frame_idx(x) {
                            continue;
                        }
                        let p = dom.center_of(x);
                        let q: f64 = (0..dom.dim()).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() / (rho * rho);
                        *vx += eps * (1.0 - q).max(0.0);
                    }
                    format!("bump c={c:.3?} r={rho:.4} eps={eps:.4}")
                }
                _ => {
                    let rho = r.gen_range(2.0 * dom.h_max()..=0.25 * size);
                    let c: Vec<f64> = (0..dom.dim()).map(|a| r.gen_range(lo[a]..lo[a] + ext[a] - 4.0 * dom.spacing()[a])).collect();
                    let level = r.gen_range(0.1 * u.h..=umax);
                    for (vx, inb) in v.iter_mut().zip(ball(dom, &c, rho)) {
                        if inb {
                            *vx = vx.max(level);
                        }
                    }
                    format!("cap c={c:.3?} r={rho:.4} level={level:.4}")
                }
            };
            let tv = stencil.tv(dom, &neg(&v));
            let excess: f64 = v.iter().zip(&u.field.values).map(|(a, b)| (a - b).max(0.0)).sum::<f64>() * cv;
            let height = v.iter().zip(&u.field.values).map(|(a, b)| a - b).fold(0.0, f64::max);
            (tv - base, excess, height, label)
        })
        .collect();
    for (gain, excess, height, label) in results {
        plain.record(gain, || label.clone());
        // the discretization slack scales with the thickness of the perturbation
        let m = gain - delta * excess;
        strong.record(m / height.max(f64::MIN_POSITIVE), || label);
    }
    (plain, strong)
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// `u(x) - u(y) <= h + psi_dual(y - x) / delta` over all axis neighbours and
/// `n_pairs` random pairs, with slack `2 spacing / delta`.
pub fn check_lipschitz(u: &ArrivalTime, psi: &Anisotropy, delta: f64, n_pairs: usize, seed: u64) -> CheckReport {
    let dom = &u.field.domain;
    let tol = 2.0 * dom.h_max() / delta;
    let mut rep = CheckReport::new("lipschitz", tol).value("delta", delta).value("h", u.h);
    if !(delta > 0.0) {
        rep.passed = false;
        rep.worst_sample = Some("no positive delta".into());
        return rep;
    }
    let vals = &u.field.values;
    let d = dom.dim();
    let margin = |x: usize, y: usize| {
        let (px, py) = (dom.center_of(x), dom.center_of(y));
        let diff: Vec<f64> = (0..d).map(|a| py[a] - px[a]).collect();
        u.h + psi.dual_unchecked(&diff) / delta - (vals[x] - vals[y])
    };
    let st = dom.strides();
    let neighbours: Vec<(f64, usize, usize)> = (0..dom.len())
        .into_par_iter()
        .flat_map_iter(|x| {
            let i = dom.multi(x);
            (0..d)
                .filter(move |&a| i[a] + 1 < dom.cells()[a])
                .flat_map(move |a| {
                    let y = x + st[a];
                    [(margin(x, y), x, y), (margin(y, x), y, x)]
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let pairs: Vec<(f64, usize, usize)> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(seed, i);
            let x = r.gen_range(0..dom.len());
            let y = r.gen_range(0..dom.len());
            (margin(x, y), x, y)
        })
        .collect();
    for (m, x, y) in neighbours.into_iter().chain(pairs) {
        rep.record(m, || format!("x={:.3?} y={:.3?}", &dom.center_of(x)[..d], &dom.center_of(y)[..d]));
    }
    rep
}

/// `|E_h(t) \ E_h(s)| <= C sqrt(s - t)` over all step pairs. The exponent
/// is the least-squares slope of log(mean volume change) against
/// log(gap) for dyadic gaps, using pairs inside `window` (all times if
/// `None`).
pub fn check_holder_volume(trace: &FlowTrace, window: Option<(f64, f64)>, min_exponent: f64) -> CheckReport {
    let sets: Vec<&IndicatorField> =
        (0..=trace.steps.len()).map(|n| trace.set(n).expect("index within trace")).collect();
    let n = sets.len();
    let cv = trace.domain().cell_volume();
    let vol_diff = |i: usize, j: usize| sets[i].difference(sets[j]).count() as f64 * cv;
    let mut c: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            c = c.max(vol_diff(i, j) / ((j - i) as f64 * trace.h).sqrt());
        }
    }
    let (wlo, whi) = window.unwrap_or((0.0, f64::INFINITY));
    let in_window = |k: usize| {
        let t = k as f64 * trace.h;
        t >= wlo - 1e-12 && t <= whi + 1e-12
    };
    let mut pts = Vec::new();
    let mut g = 1;
    while g < n {
        let diffs: Vec<f64> = (0..n - g).filter(|&i| in_window(i) && in_window(i + g)).map(|i| vol_diff(i, i + g)).collect();
        if !diffs.is_empty() {
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            if mean > 0.0 {
                pts.push(((g as f64 * trace.h).ln(), mean.ln()));
            }
        }
        g *= 2;
    }
    let mut rep = CheckReport::new("holder_volume", 0.0).value("holder_constant", c);
    if pts.len() < 2 {
        // a static trace has nothing to fit and trivially satisfies the bound
        rep.samples = pts.len();
        rep.worst_margin = 0.0;
        return rep.value("exponent", f64::NAN);
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    rep.record(slope - min_exponent, || format!("{} dyadic gaps", pts.len()));
    rep.samples = pts.len();
    rep.value("exponent", slope)
}

/// Members of `T_h E` sit at depth `delta h` in `E`, up to two cells:
/// `d_{E_{n-1}} <= -delta h + 2 spacing` on `E_n`, where `delta` certifies
/// `E_{n-1}` (the certificate of step `n - 1`, zero for the initial set).
pub fn check_inclusion(scheme: &Scheme, trace: &FlowTrace) -> Result<CheckReport> {
    let dom = trace.domain();
    let tol = 2.0 * dom.h_max();
    let mut rep = CheckReport::new("inclusion", 0.0);
    for s in &trace.steps {
        let prev = trace.set(s.n - 1).expect("previous step");
        if s.set.is_empty() {
            continue;
        }
        let delta = match s.n {
            1 => 0.0,
            n => trace.steps[n - 2].delta_certificate,
        };
        if !delta.is_finite() {
            continue;
        }
        let d = scheme.distance(prev)?;
        let worst = (0..dom.len())
            .filter(|x| s.set.contains(*x))
            .map(|x| -delta * trace.h + tol - d.field.values[x])
            .fold(f64::INFINITY, f64::min);
        rep.record(worst, || format!("step {} delta {delta:.4}", s.n));
    }
    Ok(rep)
}

/// `d_{E_n} >= d_{E_0} + delta (n - 1) h - 2 n spacing` everywhere, chaining
/// the inclusion bound step by step: `delta` is the smallest finite
/// certificate of the inputs `E_1 .. E_{n-1}`, and the initial raster
/// contributes no gain.
pub fn check_distance_growth(scheme: &Scheme, trace: &FlowTrace, every: usize) -> Result<CheckReport> {
    let dom = trace.domain();
    let mut rep = CheckReport::new("distance_growth", 0.0);
    let d0 = scheme.distance(&trace.initial)?;
    let mut delta = f64::INFINITY;
    for s in &trace.steps {
        if s.n >= 2 && trace.steps[s.n - 2].delta_certificate.is_finite() {
            delta = delta.min(trace.steps[s.n - 2].delta_certificate);
        }
        if s.set.is_empty() || s.n % every.max(1) != 0 {
            continue;
        }
        let gain = if delta.is_finite() { delta * (s.n - 1) as f64 * trace.h } else { 0.0 };
        let dn = scheme.distance(&s.set)?;
        let slack = 2.0 * s.n as f64 * dom.h_max();
        let worst = (0..dom.len())
            .map(|x| dn.field.values[x] - d0.field.values[x] - gain + slack)
            .fold(f64::INFINITY, f64::min);
        rep.record(worst, || format!("step {} delta {delta:.4}", s.n));
    }
    Ok(rep.value("delta", delta))
}

/// Perimeter never increases along the trace, within `rel_tol` per step.
pub fn check_perimeter_monotone(trace: &FlowTrace, rel_tol: f64) -> CheckReport {
    let p = trace.perimeters();
    let mut rep = CheckReport::new("perimeter_monotone", 0.0);
    for n in 1..p.len() {
        rep.record(p[n - 1] - p[n] + rel_tol * p[n - 1], || format!("step {n}"));
    }
    rep
}

/// `delta_{n+1} >= delta_n - rel_tol delta_0` for consecutive finite
/// certificates, where `delta_0` is the first positive one. A rasterized
/// start is often not (MC_delta) for any `delta > 0` and certifies `0`; the
/// first step that certifies something sets the scale.
pub fn check_delta_persistence(trace: &FlowTrace, rel_tol: f64) -> CheckReport {
    let deltas: Vec<(usize, f64)> = trace.steps.iter().map(|s| (s.n, s.delta_certificate)).collect();
    let d0 = deltas.iter().map(|d| d.1).find(|d| d.is_finite() && *d > 0.0).unwrap_or(0.0);
    let tol = rel_tol * d0;
    let mut rep = CheckReport::new("delta_persistence", tol).value("delta_0", d0);
    for w in deltas.windows(2) {
        let ((_, a), (n, b)) = (w[0], w[1]);
        if a.is_finite() {
            // a set without interior certifies nothing and cannot drop
            rep.record(b - a, || format!("step {n}"));
        }
    }
    rep
}

/// `delta |F| <= P(F)` for every recorded set, with `delta` the smallest
/// finite certificate of the trace.
pub fn check_isoperimetric(trace: &FlowTrace, rel_tol: f64) -> CheckReport {
    let delta = certified_delta(trace);
    let mut rep = CheckReport::new("isoperimetric", 0.0).value("delta", delta);
    if !delta.is_finite() {
        return rep;
    }
    let (p, v) = (trace.perimeters(), trace.volumes());
    for n in 0..p.len() {
        rep.record(p[n] - delta * v[n] + rel_tol * p[n], || format!("step {n}"));
    }
    rep
}

/// Smallest finite δ̂ along the trace (`+inf` if none).
pub fn certified_delta(trace: &FlowTrace) -> f64 {
    trace.steps.iter().map(|s| s.delta_certificate).filter(|d| d.is_finite()).fold(f64::INFINITY, f64::min)
}

/// Fitted density constant `gamma` with `|B(x,r) n E| >= gamma r^d` at
/// outer boundary cells for radii between two cells and `r_max`.
pub fn density_constant(e: &IndicatorField, r_max: f64) -> f64 {
    let dom = e.domain();
    let d = dom.dim() as i32;
    let boundary = outer_boundary(e);
    let cv = dom.cell_volume();
    let mut radii = Vec::new();
    let mut r = 2.0 * dom.h_max();
    while r <= r_max {
        radii.push(r);
        r *= 1.5;
    }
    boundary
        .par_iter()
        .map(|&x| {
            let c = dom.center_of(x);
            radii
                .iter()
                .map(|&r| {
                    let b = ball(dom, &c[..dom.dim()], r);
                    let inside = b.iter().zip(e.members()).filter(|(p, q)| **p && **q).count() as f64 * cv;
                    inside / r.powi(d)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Exact squared euclidean distance (in physical units) to the nearest
/// member, by separable lower envelopes of parabolas.
pub fn squared_distance_to(e: &IndicatorField) -> Vec<f64> {
    let dom = e.domain();
    let big = 1e300;
    let mut f: Vec<f64> = e.members().iter().map(|m| if *m { 0.0 } else { big }).collect();
    let st = dom.strides();
    for a in 0..dom.dim() {
        let n = dom.cells()[a];
        let sp = dom.spacing()[a];
        let starts: Vec<usize> = (0..dom.len()).filter(|&x| dom.multi(x)[a] == 0).collect();
        let lines: Vec<(usize, Vec<f64>)> = starts
            .par_iter()
            .map(|&s| {
                let line: Vec<f64> = (0..n).map(|t| f[s + t * st[a]]).collect();
                (s, envelope(&line, sp))
            })
            .collect();
        for (s, out) in lines {
            for (t, v) in out.into_iter().enumerate() {
                f[s + t * st[a]] = v;
            }
        }
    }
    f
}

fn envelope(f: &[f64], sp: f64) -> Vec<f64> {
    let n = f.len();
    let big = 1e299;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let pos = |q: usize| q as f64 * sp;
    let mut first = None;
    for q in 0..n {
        if f[q] >= big {
            continue;
        }
        match first {
            None => {
                first = Some(q);
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            }
            Some(_) => loop {
                let p = v[k];
                let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            },
        }
    }
    if first.is_none() {
        return f.to_vec();
    }
    let mut out = vec![0.0; n];
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < pos(q) {
            j += 1;
        }
        let p = v[j];
        *o = (pos(q) - pos(p)).powi(2) + f[p];
    }
    out
}

/// Hausdorff distance between the cell-centre sets, in physical units.
/// Two empty sets are at distance 0, an empty and a nonempty one at `+inf`.
pub fn hausdorff(a: &IndicatorField, b: &IndicatorField) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let da = squared_distance_to(a);
    let db = squared_distance_to(b);
    let one = |m: &IndicatorField, d: &[f64]| {
        m.members().iter().zip(d).filter(|(p, _)| **p).map(|(_, v)| *v).fold(0.0, f64::max)
    };
    one(a, &db).max(one(b, &da)).sqrt()
}

/// Oracle set at time t rasterized at cell centres.
pub fn oracle_raster(oracle: &OracleSolution, dom: &GridDomain, t: f64) -> IndicatorField {
    let m = (0..dom.len()).map(|x| oracle.contains(t, &dom.center_of(x)[..dom.dim()])).collect();
    IndicatorField::new(dom, m).expect("same domain")
}

/// One level of a refinement study.
#[derive(Clone, Debug)]
pub struct RefineLevel {
    pub h: f64,
    pub domain: GridDomain,
    pub initial: IndicatorField,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefineRow {
    pub h: f64,
    pub cells: usize,
    pub steps: usize,
    pub bv_energy: f64,
    pub coarea_sum: f64,
    pub bv_error: f64,
    pub extinction_time: Option<f64>,
    pub extinction_error: f64,
    pub hausdorff: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefineTable {
    pub rows: Vec<RefineRow>,
    /// relative bv error strictly decreases over the last two refinements
    pub bv_error_decreasing: bool,
}

/// Runs each level to extinction and compares against the oracle.
pub fn refine_study(
    levels: &[RefineLevel],
    phi: &Anisotropy,
    psi: &Anisotropy,
    cfg: &SolverConfig,
    oracle: &OracleSolution,
    bv_exact: Option<f64>,
    probes: &[f64],
    t_max: f64,
) -> Result<RefineTable> {
    let mut rows = Vec::new();
    for lv in levels {
        let scheme = Scheme::new(&lv.domain, phi, psi, lv.h, cfg.clone())?;
        let trace = run_flow_with(&scheme, &lv.initial, t_max, |_| {})?;
        if trace.extinction_step.is_none() {
            return Err(AtwError::NotExtinct);
        }
        let u = arrival_time(&trace)?;
        let (bv, levels_sum) = bv_energy_checked(&u, &trace, phi, 1e-6)?;
        let exact = bv_exact.unwrap_or(f64::NAN);
        let te = trace.extinction_time();
        rows.push(RefineRow {
            h: lv.h,
            cells: lv.domain.len(),
            steps: trace.steps.len(),
            bv_energy: bv,
            coarea_sum: levels_sum,
            bv_error: ((bv - exact) / exact).abs(),
            extinction_time: te,
            extinction_error: te.map_or(f64::INFINITY, |t| (t - oracle.extinction_time()).abs()),
            hausdorff: probes
                .iter()
                .map(|&t| {
                    let e = trace.set_at(t).unwrap_or_else(|| IndicatorField::empty(&lv.domain));
                    (t, hausdorff(&e, &oracle_raster(oracle, &lv.domain, t)))
                })
                .collect(),
        });
    }
    let k = rows.len();
    let bv_error_decreasing = k >= 2 && rows[k - 1].bv_error < rows[k - 2].bv_error;
    Ok(RefineTable { rows, bv_error_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;

    fn disk(n: usize, r: f64) -> IndicatorField {
        let dom = GridDomain::centered(2, 1.0, n).unwrap();
        Shape::Ball { center: None, radius: r }.rasterize(&dom).unwrap()
    }

    #[test]
    fn squared_distance_matches_brute_force() {
        let dom = GridDomain::new(&[0.0, 0.0], &[1.3, 1.0], &[13, 10]).unwrap();
        let m: Vec<bool> = (0..dom.len()).map(|x| !dom.in_frame_idx(x) && (x % 17 == 3 || x == 40)).collect();
        let e = IndicatorField::new(&dom, m).unwrap();
        let fast = squared_distance_to(&e);
        for x in 0..dom.len() {
            let p = dom.center_of(x);
            let brute = (0..dom.len())
                .filter(|y| e.contains(*y))
                .map(|y| {
                    let q = dom.center_of(y);
                    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((fast[x] - brute).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn hausdorff_of_nested_disks() {
        let a = disk(64, 0.5);
        let b = disk(64, 0.3);
        let h = hausdorff(&a, &b);
        assert!((h - 0.2).abs() < 2.0 * a.domain().h_max(), "{h}");
        assert_eq!(hausdorff(&a, &a), 0.0);
    }

    #[test]
    fn mc_margin_is_zero_for_the_set_itself() {
        let e = disk(48, 0.4);
        let phi = Anisotropy::euclidean(2).unwrap();
        let st = Stencil::for_gauge(&phi, e.domain().spacing());
        assert_eq!(mc_margin(&e, &e, &st, 0.0), 0.0);
    }

    #[test]
    fn disk_passes_and_euclidean_cross_fails() {
        let e = disk(64, 0.4);
        let phi = Anisotropy::euclidean(2).unwrap();
        assert!(check_mc_delta(&e, &phi, 0.2, 30, 1).passed);
        let dom = GridDomain::centered(2, 2.3, 128).unwrap();
        let cross = Shape::Cross { l: 2.0 }.rasterize(&dom).unwrap();
        assert!(!check_mc_delta(&cross, &phi, 0.1, 60, 1).passed);
        let l1 = Anisotropy::l1(2).unwrap();
        assert!(check_mc_delta(&cross, &l1, 0.0, 60, 1).passed);
    }

    #[test]
    fn holder_of_static_trace() {
        let e = disk(16, 0.4);
        let steps = (1..=4)
            .map(|n| crate::flow::FlowStep {
                n,
                t: n as f64 * 0.1,
                set: e.clone(),
                volume: 0.0,
                perimeter: 0.0,
                delta_certificate: 1.0,
                residual: 0.0,
                iterations: 0,
                energy: 0.0,
                dual_max: 0.0,
            })
            .collect();
        let tr = FlowTrace {
            h: 0.1,
            initial: e.clone(),
            initial_perimeter: 0.0,
            steps,
            extinction_step: None,
            stop: crate::flow::StopReason::TimeLimit,
        };
        let rep = check_holder_volume(&tr, None, 0.45);
        assert!(rep.passed);
        assert_eq!(rep.values["holder_constant"], 0.0);
    }

    #[test]
    fn lipschitz_on_a_cone() {
        // u = (0.5 - |x|)^+ is 1-Lipschitz, so delta = 1 passes with h = 0
        let dom = GridDomain::centered(2, 1.0, 40).unwrap();
        let u = ArrivalTime {
            field: crate::grid::ScalarField::from_fn(&dom, |x| (0.5 - x[0].hypot(x[1])).max(0.0)),
            h: 0.0,
        };
        let psi = Anisotropy::euclidean(2).unwrap();
        assert!(check_lipschitz(&u, &psi, 1.0, 200, 5).passed);
        assert!(!check_lipschitz(&u, &psi, 4.0, 200, 5).passed);
    }
}
