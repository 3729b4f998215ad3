//! Uniform Cartesian grids and the fields that live on them.
//!
//! Cells are indexed row-major with axis 0 slowest. A cell's center is
//! `origin + (i + 1/2) * spacing`.

use serde::{Deserialize, Serialize};

use crate::anisotropy::{Anisotropy, AnisotropySpec};
use crate::error::{AtwError, Result};

/// Number of outermost cell layers that sets may not touch.
pub const FRAME: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    dim: usize,
    n: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
}

impl GridDomain {
    pub fn new(origin: &[f64], extent: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = cells.len();
        if !(dim == 2 || dim == 3) || origin.len() != dim || extent.len() != dim {
            return Err(AtwError::InvalidGrid("origin, extent and cells must share dimension 2 or 3".into()));
        }
        let mut n = [1; 3];
        let mut o = [0.0; 3];
        let mut s = [1.0; 3];
        for a in 0..dim {
            if cells[a] < 4 {
                return Err(AtwError::InvalidGrid("at least 4 cells per axis".into()));
            }
            if !(extent[a] > 0.0 && extent[a].is_finite() && origin[a].is_finite()) {
                return Err(AtwError::InvalidGrid("extent must be positive".into()));
            }
            n[a] = cells[a];
            o[a] = origin[a];
            s[a] = extent[a] / cells[a] as f64;
        }
        Ok(Self { dim, n, origin: o, spacing: s })
    }

    /// Same as [`GridDomain::new`] but with the spacing given directly.
    pub fn from_spacing(origin: &[f64], spacing: &[f64], cells: &[usize]) -> Result<Self> {
        if spacing.len() != cells.len() {
            return Err(AtwError::InvalidGrid("origin, extent and cells must share dimension 2 or 3".into()));
        }
        let extent: Vec<f64> = spacing.iter().zip(cells).map(|(s, n)| s * *n as f64).collect();
        let mut dom = Self::new(origin, &extent, cells)?;
        dom.spacing[..spacing.len()].copy_from_slice(spacing);
        Ok(dom)
    }

    /// The sub-grid of `n` cells starting at cell `lo`, with identical spacing.
    pub fn window(&self, lo: [usize; 3], n: [usize; 3]) -> Result<Self> {
        let mut o = self.origin;
        for a in 0..self.dim {
            if n[a] < 4 || lo[a] + n[a] > self.n[a] {
                return Err(AtwError::InvalidGrid("window outside the grid".into()));
            }
            o[a] += lo[a] as f64 * self.spacing[a];
        }
        let mut nn = [1; 3];
        nn[..self.dim].copy_from_slice(&n[..self.dim]);
        Ok(Self { dim: self.dim, n: nn, origin: o, spacing: self.spacing })
    }

    /// `[-half, half]^dim` with `cells` cells per axis.
    pub fn centered(dim: usize, half: f64, cells: usize) -> Result<Self> {
        Self::new(&vec![-half; dim], &vec![2.0 * half; dim], &vec![cells; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn extent(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.spacing[a] * self.n[a] as f64).collect()
    }

    /// Smallest spacing; the "one cell" length scale used by tolerances.
    pub fn h_min(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.spacing().iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Linear stride of each axis.
    pub fn strides(&self) -> [usize; 3] {
        match self.dim {
            2 => [self.n[1], 1, 0],
            _ => [self.n[1] * self.n[2], self.n[2], 1],
        }
    }

    pub fn index(&self, i: [usize; 3]) -> usize {
        let s = self.strides();
        i[0] * s[0] + i[1] * s[1] + if self.dim == 3 { i[2] } else { 0 }
    }

    pub fn multi(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n[a];
            idx /= self.n[a];
        }
        out
    }

    /// Neighbor by a signed integer offset, if it stays inside the grid.
    pub fn offset(&self, i: [usize; 3], o: [isize; 3]) -> Option<usize> {
        let mut j = [0usize; 3];
        for a in 0..self.dim {
            let v = i[a] as isize + o[a];
            if v < 0 || v >= self.n[a] as isize {
                return None;
            }
            j[a] = v as usize;
        }
        Some(self.index(j))
    }

    pub fn center(&self, i: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.origin[a] + (i[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    pub fn center_of(&self, idx: usize) -> [f64; 3] {
        self.center(self.multi(idx))
    }

    /// Cell containing a point, if any.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut i = [0usize; 3];
        for a in 0..self.dim {
            let t = ((x[a] - self.origin[a]) / self.spacing[a]).floor();
            if t < 0.0 || t >= self.n[a] as f64 {
                return None;
            }
            i[a] = t as usize;
        }
        Some(self.index(i))
    }

    pub fn in_frame(&self, i: [usize; 3]) -> bool {
        (0..self.dim).any(|a| i[a] < FRAME || i[a] >= self.n[a] - FRAME)
    }

    pub fn in_frame_idx(&self, idx: usize) -> bool {
        self.in_frame(self.multi(idx))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub domain: GridDomain,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(domain: &GridDomain) -> Self {
        Self { domain: domain.clone(), values: vec![0.0; domain.len()] }
    }

    pub fn from_fn(domain: &GridDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..domain.len()).map(|i| f(&domain.center_of(i)[..domain.dim()])).collect();
        Self { domain: domain.clone(), values }
    }

    pub fn new(domain: &GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(AtwError::DomainMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AtwError::Invalid("non-finite field value".into()));
        }
        Ok(Self { domain: domain.clone(), values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Face-staggered vector field: component `a` of cell `x` lives on the face
/// between `x` and `x + e_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub domain: GridDomain,
    /// `values[idx * dim + a]`
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(domain: &GridDomain) -> Self {
        Self { domain: domain.clone(), values: vec![0.0; domain.len() * domain.dim()] }
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        let d = self.domain.dim();
        &self.values[idx * d..(idx + 1) * d]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorField {
    domain: GridDomain,
    members: Vec<bool>,
}

impl Eq for GridDomain {}

impl IndicatorField {
    pub fn empty(domain: &GridDomain) -> Self {
        Self { domain: domain.clone(), members: vec![false; domain.len()] }
    }

    /// Builds a set from a membership mask; rejects masks touching the frame.
    pub fn new(domain: &GridDomain, members: Vec<bool>) -> Result<Self> {
        if members.len() != domain.len() {
            return Err(AtwError::DomainMismatch);
        }
        if members.iter().enumerate().any(|(i, m)| *m && domain.in_frame_idx(i)) {
            return Err(AtwError::FrameViolation);
        }
        Ok(Self { domain: domain.clone(), members })
    }

    /// Membership decided at cell centers.
    pub fn from_fn(domain: &GridDomain, f: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let members = (0..domain.len()).map(|i| f(&domain.center_of(i)[..domain.dim()])).collect();
        Self::new(domain, members)
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|m| *m)
    }

    pub fn is_subset_of(&self, other: &IndicatorField) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !*a || *b)
    }

    pub fn union(&self, other: &IndicatorField) -> IndicatorField {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect();
        Self { domain: self.domain.clone(), members }
    }

    pub fn intersection(&self, other: &IndicatorField) -> IndicatorField {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a && *b).collect();
        Self { domain: self.domain.clone(), members }
    }

    /// Cells of `self` not in `other`.
    pub fn difference(&self, other: &IndicatorField) -> IndicatorField {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a && !*b).collect();
        Self { domain: self.domain.clone(), members }
    }

    /// Translate by whole cells.
    pub fn shifted(&self, k: [isize; 3]) -> Result<IndicatorField> {
        let dom = &self.domain;
        let mut members = vec![false; dom.len()];
        for (i, m) in self.members.iter().enumerate() {
            if *m {
                let j = dom.offset(dom.multi(i), k).ok_or(AtwError::FrameViolation)?;
                members[j] = true;
            }
        }
        Self::new(dom, members)
    }

    pub fn as_scalar(&self) -> ScalarField {
        let values = self.members.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
        ScalarField { domain: self.domain.clone(), values }
    }
}

pub fn volume(e: &IndicatorField) -> f64 {
    e.count() as f64 * e.domain().cell_volume()
}

/// Forward differences per axis; zero in the last cell along each axis.
pub fn grad_forward(f: &ScalarField) -> VectorField {
    let dom = &f.domain;
    let d = dom.dim();
    let st = dom.strides();
    let mut out = VectorField::zeros(dom);
    for idx in 0..dom.len() {
        let i = dom.multi(idx);
        for a in 0..d {
            if i[a] + 1 < dom.cells()[a] {
                out.values[idx * d + a] = (f.values[idx + st[a]] - f.values[idx]) / dom.spacing()[a];
            }
        }
    }
    out
}

/// Negative adjoint of [`grad_forward`].
pub fn div_backward(p: &VectorField) -> ScalarField {
    let dom = &p.domain;
    let d = dom.dim();
    let st = dom.strides();
    let mut out = ScalarField::zeros(dom);
    for idx in 0..dom.len() {
        let i = dom.multi(idx);
        let mut s = 0.0;
        for a in 0..d {
            let h = dom.spacing()[a];
            if i[a] + 1 < dom.cells()[a] {
                s += p.values[idx * d + a] / h;
            }
            if i[a] > 0 {
                s -= p.values[(idx - st[a]) * d + a] / h;
            }
        }
        out.values[idx] = s;
    }
    out
}

/// Discrete anisotropic perimeter: the stencil total variation of the
/// indicator, i.e. exactly the functional the step solver minimizes.
pub fn perimeter_phi(e: &IndicatorField, phi: &Anisotropy) -> f64 {
    crate::stencil::Stencil::for_gauge(phi, e.domain().spacing()).perimeter(e)
}

/// The plain forward-difference perimeter `sum phi(-grad chi) * cellvol`.
/// Agrees with [`perimeter_phi`] for axis-weighted l1 gauges.
pub fn perimeter_forward(e: &IndicatorField, phi: &Anisotropy) -> f64 {
    let g = grad_forward(&e.as_scalar());
    let d = e.domain().dim();
    let mut neg = vec![0.0; d];
    let mut s = 0.0;
    for idx in 0..e.domain().len() {
        let v = g.at(idx);
        if v.iter().any(|x| *x != 0.0) {
            for a in 0..d {
                neg[a] = -v[a];
            }
            s += phi.eval_unchecked(&neg);
        }
    }
    s * e.domain().cell_volume()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    Ball {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
    },
    Rectangle {
        min: Vec<f64>,
        max: Vec<f64>,
    },
    /// `([-1,1] x [-L,L]) U ([-L,L] x [-1,1])`
    Cross {
        #[serde(rename = "L")]
        l: f64,
    },
    /// `{phi_dual(x - c) <= radius}`
    Wulff {
        phi: AnisotropySpec,
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
    },
    DiskUnion {
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
    },
}

impl Shape {
    /// Closed-set membership test for a point.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        let d = x.len();
        let origin = vec![0.0; d];
        let center = |c: &Option<Vec<f64>>| -> Result<Vec<f64>> {
            let c = c.clone().unwrap_or_else(|| origin.clone());
            if c.len() != d {
                return Err(AtwError::Dimension { expected: d, got: c.len() });
            }
            Ok(c)
        };
        Ok(match self {
            Shape::Ball { center: c, radius } => {
                let c = center(c)?;
                x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
            Shape::Rectangle { min, max } => {
                if min.len() != d || max.len() != d {
                    return Err(AtwError::Dimension { expected: d, got: min.len() });
                }
                (0..d).all(|a| x[a] >= min[a] && x[a] <= max[a])
            }
            Shape::Cross { l } => {
                if d != 2 {
                    return Err(AtwError::Dimension { expected: 2, got: d });
                }
                let (ax, ay) = (x[0].abs(), x[1].abs());
                (ax <= 1.0 && ay <= *l) || (ax <= *l && ay <= 1.0)
            }
            Shape::Wulff { phi, center: c, radius } => {
                let c = center(c)?;
                let g = phi.build(d)?;
                let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
                g.dual_unchecked(&y) <= *radius
            }
            Shape::DiskUnion { centers, radii } => {
                if centers.len() != radii.len() {
                    return Err(AtwError::Invalid("one radius per center".into()));
                }
                centers.iter().zip(radii).any(|(c, r)| {
                    c.len() == d && x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r * r
                })
            }
        })
    }

    /// Rasterize by cell centers. Fails if the shape reaches the frame.
    pub fn rasterize(&self, dom: &GridDomain) -> Result<IndicatorField> {
        // build the gauge once for Wulff shapes
        if let Shape::Wulff { phi, center, radius } = self {
            let g = phi.build(dom.dim())?;
            let c = center.clone().unwrap_or_else(|| vec![0.0; dom.dim()]);
            if c.len() != dom.dim() {
                return Err(AtwError::Dimension { expected: dom.dim(), got: c.len() });
            }
            return IndicatorField::from_fn(dom, |x| {
                let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
                g.dual_unchecked(&y) <= *radius
            });
        }
        self.contains(&vec![0.0; dom.dim()])?;
        IndicatorField::from_fn(dom, |x| self.contains(x).unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(n: usize, half: f64) -> GridDomain {
        GridDomain::centered(2, half, n).unwrap()
    }

    #[test]
    fn index_roundtrip() {
        let g = GridDomain::new(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], &[4, 5, 6]).unwrap();
        for idx in 0..g.len() {
            assert_eq!(g.index(g.multi(idx)), idx);
        }
        assert_eq!(g.strides(), [30, 6, 1]);
    }

    #[test]
    fn rejects_small_grids() {
        assert!(GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[3, 8]).is_err());
    }

    #[test]
    fn volume_basics() {
        let g = dom(64, 2.0);
        assert_eq!(volume(&IndicatorField::empty(&g)), 0.0);
        let inner = IndicatorField::from_fn(&g, |_| true);
        assert!(matches!(inner, Err(AtwError::FrameViolation)));
        let all_but_frame: Vec<bool> = (0..g.len()).map(|i| !g.in_frame_idx(i)).collect();
        let e = IndicatorField::new(&g, all_but_frame).unwrap();
        let hx = g.spacing()[0];
        let expect = 16.0 - (16.0 - (4.0 - 4.0 * hx).powi(2));
        assert!((volume(&e) - expect).abs() < 1e-12);
    }

    #[test]
    fn grad_of_linear_is_unit() {
        let g = dom(16, 1.0);
        let f = ScalarField::from_fn(&g, |x| x[0]);
        let p = grad_forward(&f);
        for idx in 0..g.len() {
            let i = g.multi(idx);
            if i[0] + 1 < 16 {
                assert!((p.at(idx)[0] - 1.0).abs() < 1e-12);
                assert_eq!(p.at(idx)[1], 0.0);
            }
        }
        let c = ScalarField::from_fn(&g, |_| 3.0);
        assert!(grad_forward(&c).values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn div_of_grad_quadratic_is_second_difference() {
        let g = dom(16, 1.0);
        let f = ScalarField::from_fn(&g, |x| x[0] * x[0]);
        let lap = div_backward(&grad_forward(&f));
        let h = g.spacing()[0];
        let idx = g.index([7, 7, 0]);
        assert!((lap.values[idx] - 2.0).abs() < 1e-9, "{}", lap.values[idx] / h);
    }

    #[test]
    fn square_perimeter_l1_is_exact() {
        let g = dom(128, 2.0);
        let sq = Shape::Rectangle { min: vec![-1.0, -1.0], max: vec![1.0, 1.0] };
        // cell centers never sit on +-1 here, so the raster is [-1,1]^2 exactly
        let e = sq.rasterize(&g).unwrap();
        let l1 = Anisotropy::l1(2).unwrap();
        assert!((perimeter_phi(&e, &l1) - 8.0).abs() < 1e-12);
        assert!((perimeter_forward(&e, &l1) - 8.0).abs() < 1e-12);
        assert_eq!(perimeter_phi(&IndicatorField::empty(&g), &l1), 0.0);
    }

    #[test]
    fn cross_volume_and_perimeter() {
        let g = dom(512, 2.5);
        let e = Shape::Cross { l: 2.0 }.rasterize(&g).unwrap();
        let l1 = Anisotropy::l1(2).unwrap();
        let p = perimeter_phi(&e, &l1);
        let h = g.spacing()[0];
        assert!((volume(&e) - 12.0).abs() <= 4.0 * 16.0 * h);
        assert!((p - 16.0).abs() <= 8.0 * h, "{p}");
    }

    #[test]
    fn wulff_of_l1_is_square() {
        let g = dom(64, 2.0);
        let spec = AnisotropySpec::WeightedL1 { weights: None };
        let w = Shape::Wulff { phi: spec, center: None, radius: 1.0 }.rasterize(&g).unwrap();
        let linf = Anisotropy::linf(2).unwrap();
        for idx in 0..g.len() {
            let c = g.center_of(idx);
            assert_eq!(w.contains(idx), linf.eval_unchecked(&c[..2]) <= 1.0);
        }
    }

    #[test]
    fn ball_radius_zero_is_empty_and_touching_frame_fails() {
        let g = dom(64, 2.0);
        let b = Shape::Ball { center: None, radius: 0.0 }.rasterize(&g).unwrap();
        // the origin sits on a cell corner, so no center is inside
        assert!(b.is_empty());
        let big = Shape::Ball { center: None, radius: 1.99 }.rasterize(&g);
        assert!(matches!(big, Err(AtwError::FrameViolation)));
    }
}
