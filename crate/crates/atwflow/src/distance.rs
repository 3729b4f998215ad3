//! Signed anisotropic distance `d(x) = inf_{y in E} psi°(x - y) - inf_{y not in E} psi°(y - x)`.
//!
//! Two interface conventions are offered. `CellCenters` takes the infima over
//! cell centers exactly as written, which biases the zero level by half a cell
//! towards the outside. `EdgeMidpoint` places the interface on the midpoints
//! between axis-adjacent member/non-member pairs, which removes that bias.
//! `Subcell` does the same for a set given as `{w <= 0}`, putting each seed
//! at the linear zero crossing of `w` along the edge; the flow uses it to
//! carry the interface position between steps.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{AtwError, Result};
use crate::grid::{grad_forward, GridDomain, IndicatorField, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interface {
    #[default]
    EdgeMidpoint,
    CellCenters,
    /// midpoints for plain sets, zero crossings when a level function is known
    Subcell,
}

#[derive(Clone, Debug)]
pub struct SignedDistance {
    pub field: ScalarField,
    /// the mobility psi; distances use its dual
    pub gauge: Anisotropy,
    pub source: IndicatorField,
    pub interface: Interface,
}

/// Interface seeds in doubled coordinates (cell center i sits at 2i+1).
/// Each seed records the cells it touches on the outside and inside.
struct Seeds {
    points: Vec<[f64; 3]>,
    outer: Vec<Vec<usize>>,
    inner: Vec<Vec<usize>>,
}

fn doubled(dom: &GridDomain, idx: usize) -> [f64; 3] {
    let i = dom.multi(idx);
    [2.0 * i[0] as f64 + 1.0, 2.0 * i[1] as f64 + 1.0, 2.0 * i[2] as f64 + 1.0]
}

/// One seed per axis edge crossing `{w <= 0}`, at the linear zero crossing.
fn level_seeds(dom: &GridDomain, w: &[f64]) -> Seeds {
    let st = dom.strides();
    let mut s = Seeds { points: Vec::new(), outer: Vec::new(), inner: Vec::new() };
    for x in 0..dom.len() {
        let i = dom.multi(x);
        for a in 0..dom.dim() {
            if i[a] + 1 >= dom.cells()[a] {
                continue;
            }
            let y = x + st[a];
            if (w[x] <= 0.0) != (w[y] <= 0.0) {
                let (inside, outside) = if w[x] <= 0.0 { (x, y) } else { (y, x) };
                let theta = w[inside] / (w[inside] - w[outside]);
                let mut p = doubled(dom, inside);
                p[a] += if inside == x { 2.0 * theta } else { -2.0 * theta };
                s.points.push(p);
                s.outer.push(vec![outside]);
                s.inner.push(vec![inside]);
            }
        }
    }
    s
}

fn seeds(e: &IndicatorField, interface: Interface) -> Seeds {
    let dom = e.domain();
    let m = e.members();
    let mut s = Seeds { points: Vec::new(), outer: Vec::new(), inner: Vec::new() };
    match interface {
        Interface::EdgeMidpoint | Interface::Subcell => {
            let w: Vec<f64> = m.iter().map(|b| if *b { -1.0 } else { 1.0 }).collect();
            return level_seeds(dom, &w);
        }
        Interface::CellCenters => {
            // boundary cells on either side, each seeding its own position
            for x in 0..dom.len() {
                let i = dom.multi(x);
                let on_boundary = neighbors(dom, i, 1).any(|y| m[y] != m[x]);
                if on_boundary {
                    s.points.push(doubled(dom, x));
                    if m[x] {
                        s.outer.push(vec![x]);
                        s.inner.push(vec![]);
                    } else {
                        s.outer.push(vec![]);
                        s.inner.push(vec![x]);
                    }
                }
            }
        }
    }
    s
}

fn neighbors(dom: &GridDomain, i: [usize; 3], r: isize) -> impl Iterator<Item = usize> + '_ {
    let d = dom.dim();
    let r2 = if d == 3 { r } else { 0 };
    (-r..=r).flat_map(move |a| {
        (-r..=r).flat_map(move |b| {
            (-r2..=r2).filter_map(move |c| {
                if a == 0 && b == 0 && c == 0 {
                    None
                } else {
                    dom.offset(i, [a, b, c])
                }
            })
        })
    })
}

fn physical(dom: &GridDomain, v: [f64; 3], out: &mut [f64]) {
    for a in 0..dom.dim() {
        out[a] = v[a] * 0.5 * dom.spacing()[a];
    }
}

/// `psi°(p - q)` for doubled-coordinate points.
fn gauge_between(dom: &GridDomain, psi: &Anisotropy, p: [f64; 3], q: [f64; 3]) -> f64 {
    let mut buf = [0.0; 3];
    physical(dom, [p[0] - q[0], p[1] - q[1], p[2] - q[2]], &mut buf);
    psi.dual_unchecked(&buf[..dom.dim()])
}

fn check_source(e: &IndicatorField) -> Result<()> {
    if e.is_empty() || e.count() == e.domain().len() {
        return Err(AtwError::DegenerateSet);
    }
    Ok(())
}

pub fn signed_distance_bruteforce(e: &IndicatorField, psi: &Anisotropy) -> Result<SignedDistance> {
    signed_distance_bruteforce_with(e, psi, Interface::CellCenters)
}

/// Exact infima over all seeds. O(cells x seeds), parallel over cells.
pub fn signed_distance_bruteforce_with(
    e: &IndicatorField,
    psi: &Anisotropy,
    interface: Interface,
) -> Result<SignedDistance> {
    check_source(e)?;
    let dom = e.domain();
    if psi.dim() != dom.dim() {
        return Err(AtwError::Dimension { expected: dom.dim(), got: psi.dim() });
    }
    let s = seeds(e, interface);
    // for cell centers the inner infimum runs over non-member seeds and vice versa
    let (outer_pts, inner_pts): (Vec<[f64; 3]>, Vec<[f64; 3]>) = match interface {
        Interface::EdgeMidpoint | Interface::Subcell => (s.points.clone(), s.points.clone()),
        Interface::CellCenters => {
            let mut o = Vec::new();
            let mut i = Vec::new();
            for (k, p) in s.points.iter().enumerate() {
                if !s.outer[k].is_empty() {
                    o.push(*p);
                } else {
                    i.push(*p);
                }
            }
            (o, i)
        }
    };
    let m = e.members();
    let values: Vec<f64> = (0..dom.len())
        .into_par_iter()
        .map(|x| {
            let px = doubled(dom, x);
            if m[x] {
                let best = inner_pts
                    .iter()
                    .map(|q| gauge_between(dom, psi, *q, px))
                    .fold(f64::INFINITY, f64::min);
                -best
            } else {
                outer_pts
                    .iter()
                    .map(|q| gauge_between(dom, psi, px, *q))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    Ok(SignedDistance {
        field: ScalarField { domain: dom.clone(), values },
        gauge: psi.clone(),
        source: e.clone(),
        interface,
    })
}

pub fn signed_distance_sweep(e: &IndicatorField, psi: &Anisotropy) -> Result<SignedDistance> {
    signed_distance_sweep_with(e, psi, Interface::CellCenters)
}

/// Closest-seed Dijkstra on the 16- (2D) or 26-neighbor (3D) graph. Each cell
/// inherits a seed from the neighbor that settled it and stores the exact
/// gauge distance to that seed, so straight interfaces are reproduced exactly.
pub fn signed_distance_sweep_with(
    e: &IndicatorField,
    psi: &Anisotropy,
    interface: Interface,
) -> Result<SignedDistance> {
    check_source(e)?;
    let dom = e.domain();
    if psi.dim() != dom.dim() {
        return Err(AtwError::Dimension { expected: dom.dim(), got: psi.dim() });
    }
    let s = seeds(e, interface);
    Ok(finish_sweep(e.clone(), psi, s, interface))
}

/// Sweep distance to `{w <= 0}` with seeds at the zero crossings of `w`.
pub fn signed_distance_level(w: &ScalarField, psi: &Anisotropy) -> Result<SignedDistance> {
    let dom = &w.domain;
    let members: Vec<bool> = w.values.iter().map(|v| *v <= 0.0).collect();
    let e = IndicatorField::new(dom, members)?;
    check_source(&e)?;
    if psi.dim() != dom.dim() {
        return Err(AtwError::Dimension { expected: dom.dim(), got: psi.dim() });
    }
    let s = level_seeds(dom, &w.values);
    Ok(finish_sweep(e, psi, s, Interface::Subcell))
}

fn finish_sweep(e: IndicatorField, psi: &Anisotropy, s: Seeds, interface: Interface) -> SignedDistance {
    let dom = e.domain();
    let offsets = propagation_offsets(dom.dim());
    let outer = propagate(dom, psi, &s.points, &s.outer, &offsets, true);
    let inner = propagate(dom, psi, &s.points, &s.inner, &offsets, false);
    let m = e.members();
    let values = (0..dom.len()).map(|x| if m[x] { -inner[x] } else { outer[x] }).collect();
    SignedDistance {
        field: ScalarField { domain: dom.clone(), values },
        gauge: psi.clone(),
        source: e.clone(),
        interface,
    }
}

fn propagation_offsets(dim: usize) -> Vec<[isize; 3]> {
    let mut v = Vec::new();
    if dim == 2 {
        for a in -2isize..=2 {
            for b in -2isize..=2 {
                let knight = a.abs() + b.abs() == 3;
                if (a.abs() <= 1 && b.abs() <= 1 && (a, b) != (0, 0)) || knight {
                    v.push([a, b, 0]);
                }
            }
        }
    } else {
        for a in -1isize..=1 {
            for b in -1isize..=1 {
                for c in -1isize..=1 {
                    if (a, b, c) != (0, 0, 0) {
                        v.push([a, b, c]);
                    }
                }
            }
        }
    }
    v
}

/// `outward`: value at x is psi°(x - seed); otherwise psi°(seed - x).
fn propagate(
    dom: &GridDomain,
    psi: &Anisotropy,
    points: &[[f64; 3]],
    touching: &[Vec<usize>],
    offsets: &[[isize; 3]],
    outward: bool,
) -> Vec<f64> {
    let n = dom.len();
    let mut val = vec![f64::INFINITY; n];
    let mut seed = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let dist = |x: usize, k: usize| -> f64 {
        let px = doubled(dom, x);
        if outward {
            gauge_between(dom, psi, px, points[k])
        } else {
            gauge_between(dom, psi, points[k], px)
        }
    };
    for (k, cells) in touching.iter().enumerate() {
        for &x in cells {
            let v = dist(x, k);
            if v < val[x] {
                val[x] = v;
                seed[x] = k;
                heap.push(Reverse((v.to_bits(), x)));
            }
        }
    }
    while let Some(Reverse((bits, x))) = heap.pop() {
        if done[x] || f64::from_bits(bits) > val[x] {
            continue;
        }
        done[x] = true;
        let k = seed[x];
        let i = dom.multi(x);
        for o in offsets {
            if let Some(y) = dom.offset(i, *o) {
                if done[y] {
                    continue;
                }
                let v = dist(y, k);
                if v < val[y] {
                    val[y] = v;
                    seed[y] = k;
                    heap.push(Reverse((v.to_bits(), y)));
                }
            }
        }
    }
    val
}

/// `|psi(grad d) - 1|` on cells more than two spacings from the zero level;
/// zero elsewhere. `mask` reports which cells were checked.
pub fn eikonal_residual(d: &SignedDistance, psi: &Anisotropy) -> (ScalarField, Vec<bool>) {
    let dom = &d.field.domain;
    let g = grad_forward(&d.field);
    let band = 2.0 * dom.h_max();
    let mut out = ScalarField::zeros(dom);
    let mut mask = vec![false; dom.len()];
    for x in 0..dom.len() {
        let i = dom.multi(x);
        let interior = (0..dom.dim()).all(|a| i[a] + 1 < dom.cells()[a]);
        if !interior || d.field.values[x].abs() <= band {
            continue;
        }
        // the forward stencil must not straddle the zero level either
        let st = dom.strides();
        if (0..dom.dim()).any(|a| d.field.values[x + st[a]].abs() <= band) {
            continue;
        }
        mask[x] = true;
        out.values[x] = (psi.eval_unchecked(g.at(x)) - 1.0).abs();
    }
    (out, mask)
}
