//! Edge-separable ("graph") total variation.
//!
//! `TV(w) = cellvol * sum_x sum_k [a_k (w(x+o_k) - w(x))^+ + b_k (w(x) - w(x+o_k))^+]`
//!
//! Each edge term is a function of one difference only, so the functional
//! satisfies the coarea formula exactly and is submodular on sets. The
//! effective gauge is `sum_k a_k (p.e_k)^+ + b_k (p.e_k)^-` with
//! `e_k = o_k * spacing`; for axis-weighted l1 it equals the gauge itself,
//! otherwise the weights are fitted on a neighborhood stencil.

use crate::anisotropy::Anisotropy;
use crate::grid::{GridDomain, IndicatorField};

const OFFSETS_2D: [[isize; 3]; 8] = [
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [1, -1, 0],
    [2, 1, 0],
    [1, 2, 0],
    [2, -1, 0],
    [1, -2, 0],
];

const OFFSETS_3D: [[isize; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

#[derive(Clone, Debug)]
pub struct Stencil {
    dim: usize,
    pub offsets: Vec<[isize; 3]>,
    /// weight on positive differences w(x+o) - w(x)
    pub a: Vec<f64>,
    /// weight on negative differences
    pub b: Vec<f64>,
    /// physical edge vectors
    edges: Vec<[f64; 3]>,
    exact: bool,
}

impl Stencil {
    pub fn for_gauge(phi: &Anisotropy, spacing: &[f64]) -> Self {
        let dim = phi.dim();
        if let Some(w) = phi.axis_weights() {
            let mut offsets = Vec::new();
            let mut a = Vec::new();
            for k in 0..dim {
                let mut o = [0isize; 3];
                o[k] = 1;
                offsets.push(o);
                a.push(w[k] / spacing[k]);
            }
            return Self::from_parts(dim, offsets, a.clone(), a, spacing, true);
        }
        let offsets: Vec<[isize; 3]> = if dim == 2 { OFFSETS_2D.to_vec() } else { OFFSETS_3D.to_vec() };
        let edges: Vec<[f64; 3]> = offsets.iter().map(|o| edge_vector(o, spacing)).collect();
        let samples = unit_samples(dim);
        let target: Vec<f64> = samples.iter().map(|n| phi.eval_unchecked(&n[..dim])).collect();
        let (a, b) = fit_weights(&samples, &target, &edges, dim, phi.is_symmetric());
        Self::from_parts(dim, offsets, a, b, spacing, false)
    }

    fn from_parts(
        dim: usize,
        offsets: Vec<[isize; 3]>,
        a: Vec<f64>,
        b: Vec<f64>,
        spacing: &[f64],
        exact: bool,
    ) -> Self {
        let edges = offsets.iter().map(|o| edge_vector(o, spacing)).collect();
        Self { dim, offsets, a, b, edges, exact }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// True when the effective gauge coincides with the requested one.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn edge(&self, k: usize) -> &[f64] {
        &self.edges[k][..self.dim]
    }

    /// Effective gauge value.
    pub fn eval(&self, p: &[f64]) -> f64 {
        (0..self.len())
            .map(|k| {
                let t: f64 = (0..self.dim).map(|i| p[i] * self.edges[k][i]).sum();
                if t > 0.0 {
                    self.a[k] * t
                } else {
                    -self.b[k] * t
                }
            })
            .sum()
    }

    /// Worst relative deviation of the effective gauge from `phi` on the unit sphere.
    pub fn max_relative_error(&self, phi: &Anisotropy) -> f64 {
        unit_samples(self.dim)
            .iter()
            .map(|n| {
                let e = phi.eval_unchecked(&n[..self.dim]);
                (self.eval(&n[..self.dim]) - e).abs() / e
            })
            .fold(0.0, f64::max)
    }

    /// Edge penalty for a difference `t = w(x+o_k) - w(x)`.
    #[inline]
    pub fn lambda(&self, k: usize, t: f64) -> f64 {
        if t > 0.0 {
            self.a[k] * t
        } else {
            -self.b[k] * t
        }
    }

    /// Linear offset and validity test for each direction.
    pub fn linear_offsets(&self, dom: &GridDomain) -> Vec<isize> {
        let st = dom.strides();
        self.offsets
            .iter()
            .map(|o| (0..dom.dim()).map(|a| o[a] * st[a] as isize).sum())
            .collect()
    }

    /// Total variation of a grid function (values indexed like `dom`).
    pub fn tv(&self, dom: &GridDomain, w: &[f64]) -> f64 {
        let lin = self.linear_offsets(dom);
        let mut s = 0.0;
        for k in 0..self.len() {
            let mut sk = 0.0;
            for_each_edge(dom, self.offsets[k], |x| {
                let y = (x as isize + lin[k]) as usize;
                sk += self.lambda(k, w[y] - w[x]);
            });
            s += sk;
        }
        s * dom.cell_volume()
    }

    pub fn perimeter(&self, e: &IndicatorField) -> f64 {
        let dom = e.domain();
        let m = e.members();
        let lin = self.linear_offsets(dom);
        let mut s = 0.0;
        for k in 0..self.len() {
            for_each_edge(dom, self.offsets[k], |x| {
                let y = (x as isize + lin[k]) as usize;
                match (m[x], m[y]) {
                    // chi drops along the edge: the outward normal points along +o
                    (true, false) => s += self.a[k],
                    (false, true) => s += self.b[k],
                    _ => {}
                }
            });
        }
        s * dom.cell_volume()
    }

    /// Chains of cells along each direction, for line-wise solvers.
    pub fn chains(&self, dom: &GridDomain) -> Vec<Vec<Chain>> {
        let lin = self.linear_offsets(dom);
        (0..self.len())
            .map(|k| {
                let o = self.offsets[k];
                let mut out = Vec::new();
                for idx in 0..dom.len() {
                    let i = dom.multi(idx);
                    let back = [-o[0], -o[1], -o[2]];
                    if dom.offset(i, back).is_some() {
                        continue;
                    }
                    // walk forward
                    let mut len = 0;
                    let mut cur = Some(idx);
                    let mut free_lo = usize::MAX;
                    let mut free_hi = 0;
                    while let Some(c) = cur {
                        if !dom.in_frame_idx(c) {
                            free_lo = free_lo.min(len);
                            free_hi = len + 1;
                        }
                        len += 1;
                        cur = dom.offset(dom.multi(c), o);
                    }
                    if free_lo == usize::MAX {
                        free_lo = 0;
                        free_hi = 0;
                    }
                    debug_assert!(free_hi == 0 || (free_lo >= 1 && free_hi < len));
                    out.push(Chain { start: idx, stride: lin[k], len, free_lo, free_hi });
                }
                out
            })
            .collect()
    }
}

/// A maximal line of cells `start + t * stride`, `t < len`. Cells with chain
/// position in `free_lo..free_hi` are off the frame; the rest are fixed.
#[derive(Clone, Copy, Debug)]
pub struct Chain {
    pub start: usize,
    pub stride: isize,
    pub len: usize,
    pub free_lo: usize,
    pub free_hi: usize,
}

impl Chain {
    #[inline]
    pub fn cell(&self, t: usize) -> usize {
        (self.start as isize + t as isize * self.stride) as usize
    }
}

/// Calls `f(x)` for every cell `x` whose neighbor `x + o` is inside the grid.
pub fn for_each_edge(dom: &GridDomain, o: [isize; 3], mut f: impl FnMut(usize)) {
    let n = dom.cells();
    let d = dom.dim();
    let range = |a: usize| -> (usize, usize) {
        let lo = if o[a] < 0 { (-o[a]) as usize } else { 0 };
        let hi = if o[a] > 0 { n[a].saturating_sub(o[a] as usize) } else { n[a] };
        (lo, hi)
    };
    let (l0, h0) = range(0);
    let (l1, h1) = range(1);
    let (l2, h2) = if d == 3 { range(2) } else { (0, 1) };
    for i0 in l0..h0 {
        for i1 in l1..h1 {
            for i2 in l2..h2 {
                f(dom.index([i0, i1, i2]));
            }
        }
    }
}

fn edge_vector(o: &[isize; 3], spacing: &[f64]) -> [f64; 3] {
    let mut e = [0.0; 3];
    for a in 0..spacing.len() {
        e[a] = o[a] as f64 * spacing[a];
    }
    e
}

fn unit_samples(dim: usize) -> Vec<[f64; 3]> {
    if dim == 2 {
        (0..720)
            .map(|j| {
                let t = (j as f64 + 0.5) * std::f64::consts::PI / 360.0;
                [t.cos(), t.sin(), 0.0]
            })
            .collect()
    } else {
        // Fibonacci sphere
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|j| {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * j as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect()
    }
}

/// Nonnegative least squares on relative error, then a rescale so the mean
/// of the effective gauge over the samples matches the mean of `phi`.
fn fit_weights(
    samples: &[[f64; 3]],
    target: &[f64],
    edges: &[[f64; 3]],
    dim: usize,
    symmetric: bool,
) -> (Vec<f64>, Vec<f64>) {
    let k = edges.len();
    let nvar = if symmetric { k } else { 2 * k };
    let features = |n: &[f64; 3]| -> Vec<f64> {
        let mut f = vec![0.0; nvar];
        for j in 0..k {
            let t: f64 = (0..dim).map(|i| n[i] * edges[j][i]).sum();
            if symmetric {
                f[j] = t.abs();
            } else if t > 0.0 {
                f[j] = t;
            } else {
                f[k + j] = -t;
            }
        }
        f
    };
    let mut gram = vec![0.0; nvar * nvar];
    let mut rhs = vec![0.0; nvar];
    for (n, phi) in samples.iter().zip(target) {
        let f = features(n);
        let wgt = 1.0 / (phi * phi);
        for i in 0..nvar {
            rhs[i] += wgt * f[i] * phi;
            for j in 0..nvar {
                gram[i * nvar + j] += wgt * f[i] * f[j];
            }
        }
    }
    let mut x = vec![0.0; nvar];
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for i in 0..nvar {
            let g: f64 = (0..nvar).map(|j| gram[i * nvar + j] * x[j]).sum::<f64>() - rhs[i];
            let nx = (x[i] - g / gram[i * nvar + i]).max(0.0);
            change = change.max((nx - x[i]).abs() * gram[i * nvar + i].sqrt());
            x[i] = nx;
        }
        if change < 1e-15 {
            break;
        }
    }
    let fitted: f64 = samples
        .iter()
        .map(|n| features(n).iter().zip(&x).map(|(f, c)| f * c).sum::<f64>())
        .sum();
    let scale = target.iter().sum::<f64>() / fitted;
    x.iter_mut().for_each(|v| *v *= scale);
    if symmetric {
        (x.clone(), x)
    } else {
        (x[..k].to_vec(), x[k..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;

    #[test]
    fn l1_stencil_is_axis_exact() {
        let l1 = Anisotropy::weighted_l1(vec![1.0, 2.0]).unwrap();
        let s = Stencil::for_gauge(&l1, &[0.5, 0.25]);
        assert!(s.is_exact());
        assert_eq!(s.len(), 2);
        for p in [[1.0, 0.0], [0.3, -0.7], [-2.0, 1.0]] {
            assert!((s.eval(&p) - l1.eval_unchecked(&p)).abs() < 1e-14);
        }
    }

    #[test]
    fn euclidean_fit_is_close() {
        let eu = Anisotropy::euclidean(2).unwrap();
        let s = Stencil::for_gauge(&eu, &[0.1, 0.1]);
        let err = s.max_relative_error(&eu);
        assert!(err < 0.02, "{err}");
        let eu3 = Anisotropy::euclidean(3).unwrap();
        let s3 = Stencil::for_gauge(&eu3, &[0.1, 0.1, 0.1]);
        assert!(s3.max_relative_error(&eu3) < 0.08, "{}", s3.max_relative_error(&eu3));
    }

    #[test]
    fn chains_cover_every_cell_once() {
        let dom = GridDomain::centered(2, 1.0, 12).unwrap();
        let eu = Anisotropy::euclidean(2).unwrap();
        let s = Stencil::for_gauge(&eu, dom.spacing());
        for chains in s.chains(&dom) {
            let mut seen = vec![0; dom.len()];
            for c in &chains {
                for t in 0..c.len {
                    seen[c.cell(t)] += 1;
                }
                if c.free_hi > 0 {
                    assert!(dom.in_frame_idx(c.cell(c.free_lo - 1)));
                    assert!(dom.in_frame_idx(c.cell(c.free_hi)));
                }
            }
            assert!(seen.iter().all(|v| *v == 1));
        }
    }

    #[test]
    fn perimeter_of_ball_near_circumference() {
        let dom = GridDomain::centered(2, 1.5, 200).unwrap();
        let eu = Anisotropy::euclidean(2).unwrap();
        let e = Shape::Ball { center: None, radius: 1.0 }.rasterize(&dom).unwrap();
        let p = Stencil::for_gauge(&eu, dom.spacing()).perimeter(&e);
        assert!((p / (2.0 * std::f64::consts::PI) - 1.0).abs() < 0.02, "{p}");
    }
}
