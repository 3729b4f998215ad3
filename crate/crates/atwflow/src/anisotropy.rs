//! Convex one-homogeneous gauges used as surface tension (phi) and mobility (psi).
//!
//! Nothing here assumes symmetry: `eval(-x)` and `eval(x)` may differ for
//! shifted bodies and for polytopes that are not centrally symmetric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AtwError, Result};

const BISECT_ITERS: usize = 200;
const DYKSTRA_TOL: f64 = 1e-10;
const DYKSTRA_MAX_SWEEPS: usize = 200_000;

#[derive(Clone, Debug)]
pub struct Anisotropy {
    kind: Kind,
    dim: usize,
}

#[derive(Clone, Debug)]
pub enum Kind {
    Euclidean,
    /// phi(x) = sum w_i |x_i|
    WeightedL1(Vec<f64>),
    /// phi(x) = max |x_i|
    LInfinity,
    PNorm(f64),
    /// phi(x) = sqrt(x^T M x)
    Ellipse(Ellipse),
    /// phi(x) = max_k c_k . x
    Polyhedral(Polytope),
    /// Gauge of `base ball + offset`.
    Shifted(Box<Anisotropy>, Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct Ellipse {
    m: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    // eigenpairs of M, reused by both ball projections
    evals: Vec<f64>,
    evecs: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Polytope {
    /// support vectors: the dual unit ball is their convex hull
    support: Vec<Vec<f64>>,
    /// vertices of the primal unit ball {x : c_k . x <= 1}
    vertices: Vec<Vec<f64>>,
}

/// Serializable description, as it appears in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnisotropySpec {
    Euclidean,
    WeightedL1 {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    LInfinity,
    PNorm {
        p: f64,
    },
    Ellipse {
        matrix: Vec<Vec<f64>>,
    },
    Polyhedral {
        directions: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Shifted {
        base: Box<AnisotropySpec>,
        offset: Vec<f64>,
    },
}

impl AnisotropySpec {
    pub fn build(&self, dim: usize) -> Result<Anisotropy> {
        match self {
            AnisotropySpec::Euclidean => Anisotropy::euclidean(dim),
            AnisotropySpec::WeightedL1 { weights } => match weights {
                Some(w) => {
                    check_dim(dim, w.len())?;
                    Anisotropy::weighted_l1(w.clone())
                }
                None => Anisotropy::l1(dim),
            },
            AnisotropySpec::LInfinity => Anisotropy::linf(dim),
            AnisotropySpec::PNorm { p } => Anisotropy::pnorm(dim, *p),
            AnisotropySpec::Ellipse { matrix } => {
                check_dim(dim, matrix.len())?;
                Anisotropy::ellipse(matrix)
            }
            AnisotropySpec::Polyhedral { directions, weights } => {
                let mut c = directions.clone();
                if let Some(w) = weights {
                    if w.len() != c.len() {
                        return Err(AtwError::InvalidAnisotropy(
                            "one weight per direction expected".into(),
                        ));
                    }
                    for (ck, wk) in c.iter_mut().zip(w) {
                        ck.iter_mut().for_each(|v| *v *= wk);
                    }
                }
                for ck in &c {
                    check_dim(dim, ck.len())?;
                }
                Anisotropy::polyhedral(c)
            }
            AnisotropySpec::Shifted { base, offset } => {
                check_dim(dim, offset.len())?;
                Anisotropy::shifted(base.build(dim)?, offset.clone())
            }
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(AtwError::Dimension { expected, got });
    }
    Ok(())
}

fn check_space(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(AtwError::InvalidAnisotropy(format!("dimension {dim} unsupported")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Anisotropy {
    pub fn euclidean(dim: usize) -> Result<Self> {
        check_space(dim)?;
        Ok(Self { kind: Kind::Euclidean, dim })
    }

    pub fn l1(dim: usize) -> Result<Self> {
        Self::weighted_l1(vec![1.0; dim])
    }

    pub fn weighted_l1(weights: Vec<f64>) -> Result<Self> {
        check_space(weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(AtwError::InvalidAnisotropy("weights must be positive".into()));
        }
        let dim = weights.len();
        Ok(Self { kind: Kind::WeightedL1(weights), dim })
    }

    pub fn linf(dim: usize) -> Result<Self> {
        check_space(dim)?;
        Ok(Self { kind: Kind::LInfinity, dim })
    }

    pub fn pnorm(dim: usize, p: f64) -> Result<Self> {
        check_space(dim)?;
        if !(p.is_finite() && p > 1.0) {
            return Err(AtwError::InvalidAnisotropy(
                "p-norm needs 1 < p < inf; use weighted-l1 or l-infinity".into(),
            ));
        }
        Ok(Self { kind: Kind::PNorm(p), dim })
    }

    pub fn ellipse(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        check_space(dim)?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(AtwError::InvalidAnisotropy("matrix must be square".into()));
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        if (&m - m.transpose()).amax() > 1e-12 * m.amax() {
            return Err(AtwError::InvalidAnisotropy("matrix must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(m.clone());
        if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(AtwError::InvalidAnisotropy("matrix must be positive definite".into()));
        }
        let evals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let evecs = eig.eigenvectors.clone();
        let inv_diag = DMatrix::from_diagonal(&DVector::from_iterator(dim, evals.iter().map(|l| 1.0 / l)));
        let m_inv = &evecs * inv_diag * evecs.transpose();
        Ok(Self { kind: Kind::Ellipse(Ellipse { m, m_inv, evals, evecs }), dim })
    }

    /// phi(x) = max_k c_k . x. The origin must lie strictly inside conv{c_k}.
    pub fn polyhedral(support: Vec<Vec<f64>>) -> Result<Self> {
        let dim = support.first().map(|c| c.len()).unwrap_or(0);
        check_space(dim)?;
        if support.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(AtwError::InvalidAnisotropy("malformed support vectors".into()));
        }
        if has_blocking_direction(&support, dim) {
            return Err(AtwError::InvalidAnisotropy(
                "origin is not interior to the hull of the support vectors".into(),
            ));
        }
        let vertices = enumerate_vertices(&support, dim);
        Ok(Self { kind: Kind::Polyhedral(Polytope { support, vertices }), dim })
    }

    /// Gauge whose unit ball is `{base <= 1} + offset`. Needs base(-offset) < 1.
    pub fn shifted(base: Anisotropy, offset: Vec<f64>) -> Result<Self> {
        let dim = base.dim;
        check_dim(dim, offset.len())?;
        if matches!(base.kind, Kind::Shifted(..)) {
            return Err(AtwError::InvalidAnisotropy("nested shifts are not supported".into()));
        }
        let neg: Vec<f64> = offset.iter().map(|v| -v).collect();
        if !(base.eval_unchecked(&neg) < 1.0) {
            return Err(AtwError::InvalidAnisotropy("offset leaves the origin outside the ball".into()));
        }
        Ok(Self { kind: Kind::Shifted(Box::new(base), offset), dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.kind {
            Kind::Shifted(..) => false,
            Kind::Polyhedral(p) => p.support.iter().all(|c| {
                p.support
                    .iter()
                    .any(|d| c.iter().zip(d).all(|(a, b)| (a + b).abs() <= 1e-12 * (1.0 + a.abs())))
            }),
            _ => true,
        }
    }

    /// True for the axis-weighted l1 gauge, whose facets are grid aligned.
    pub fn axis_weights(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::WeightedL1(w) => Some(w),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub fn dual_eval(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.dual_unchecked(y))
    }

    /// Gauge value without the length check; callers guarantee `x.len() == dim`.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Euclidean => norm2(x),
            Kind::WeightedL1(w) => x.iter().zip(w).map(|(v, w)| w * v.abs()).sum(),
            Kind::LInfinity => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            Kind::PNorm(p) => lp_norm(x, *p),
            Kind::Ellipse(e) => quad_form(&e.m, x).max(0.0).sqrt(),
            Kind::Polyhedral(p) => p.support.iter().map(|c| dot(c, x)).fold(f64::NEG_INFINITY, f64::max).max(0.0),
            Kind::Shifted(base, c) => shifted_eval(base, c, x),
        }
    }

    pub fn dual_unchecked(&self, y: &[f64]) -> f64 {
        match &self.kind {
            Kind::Euclidean => norm2(y),
            Kind::WeightedL1(w) => y.iter().zip(w).fold(0.0, |m, (v, w)| m.max(v.abs() / w)),
            Kind::LInfinity => y.iter().map(|v| v.abs()).sum(),
            Kind::PNorm(p) => lp_norm(y, p / (p - 1.0)),
            Kind::Ellipse(e) => quad_form(&e.m_inv, y).max(0.0).sqrt(),
            Kind::Polyhedral(p) => p.vertices.iter().map(|v| dot(v, y)).fold(f64::NEG_INFINITY, f64::max).max(0.0),
            Kind::Shifted(base, c) => base.dual_unchecked(y) + dot(c, y),
        }
    }

    /// Minimal-norm element of the subdifferential (for the built-in kinds;
    /// shifted gauges use the base's selection pushed through the shift).
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        if x.iter().all(|v| *v == 0.0) {
            return Err(AtwError::ZeroInput);
        }
        Ok(match &self.kind {
            Kind::Euclidean => {
                let n = norm2(x);
                x.iter().map(|v| v / n).collect()
            }
            Kind::WeightedL1(w) => x
                .iter()
                .zip(w)
                .map(|(v, w)| if *v > 0.0 { *w } else if *v < 0.0 { -*w } else { 0.0 })
                .collect(),
            Kind::LInfinity => {
                let m = x.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
                let active = x.iter().filter(|v| v.abs() == m).count() as f64;
                x.iter()
                    .map(|v| if v.abs() == m { v.signum() / active } else { 0.0 })
                    .collect()
            }
            Kind::PNorm(p) => {
                let scale = x.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
                let xs: Vec<f64> = x.iter().map(|v| v / scale).collect();
                let n = lp_norm(&xs, *p);
                xs.iter().map(|v| v.signum() * (v.abs() / n).powf(p - 1.0)).collect()
            }
            Kind::Ellipse(e) => {
                let mx = &e.m * DVector::from_column_slice(x);
                let phi = quad_form(&e.m, x).sqrt();
                mx.iter().map(|v| v / phi).collect()
            }
            Kind::Polyhedral(p) => {
                let phi = self.eval_unchecked(x);
                let scale = norm2(x) * p.support.iter().map(|c| norm2(c)).fold(0.0, f64::max);
                let active: Vec<&Vec<f64>> =
                    p.support.iter().filter(|c| dot(c, x) >= phi - 1e-12 * scale).collect();
                min_norm_in_hull(&active, self.dim)
            }
            Kind::Shifted(base, c) => {
                let phi = self.eval_unchecked(x);
                let pt: Vec<f64> = x.iter().map(|v| v / phi).collect();
                let q: Vec<f64> = pt.iter().zip(c).map(|(a, b)| a - b).collect();
                let n = base.subgradient(&q)?;
                let np = dot(&n, &pt);
                n.iter().map(|v| v / np).collect()
            }
        })
    }

    /// Euclidean projection onto {dual_eval <= 1}.
    pub fn project_dual_ball(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        if self.dual_unchecked(y) <= 1.0 {
            return Ok(y.to_vec());
        }
        match &self.kind {
            Kind::Euclidean => Ok(radial(y)),
            Kind::WeightedL1(w) => Ok(y.iter().zip(w).map(|(v, w)| v.clamp(-w, *w)).collect()),
            Kind::LInfinity => Ok(project_l1_ball(y)),
            Kind::PNorm(p) => Ok(project_lp_ball(y, p / (p - 1.0))),
            Kind::Ellipse(e) => Ok(project_ellipsoid(e, y, true)),
            Kind::Polyhedral(p) => dykstra(y, &p.vertices),
            Kind::Shifted(base, c) => project_shifted_dual(base, c, y),
        }
    }

    /// Euclidean projection onto {eval <= 1}.
    pub fn project_primal_ball(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        if self.eval_unchecked(x) <= 1.0 {
            return Ok(x.to_vec());
        }
        match &self.kind {
            Kind::Euclidean => Ok(radial(x)),
            Kind::WeightedL1(w) => Ok(project_weighted_l1_ball(x, w)),
            Kind::LInfinity => Ok(x.iter().map(|v| v.clamp(-1.0, 1.0)).collect()),
            Kind::PNorm(p) => Ok(project_lp_ball(x, *p)),
            Kind::Ellipse(e) => Ok(project_ellipsoid(e, x, false)),
            Kind::Polyhedral(p) => dykstra(x, &p.support),
            Kind::Shifted(base, c) => {
                let q: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
                let pb = base.project_primal_ball(&q)?;
                Ok(pb.iter().zip(c).map(|(a, b)| a + b).collect())
            }
        }
    }
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * m[(i, j)] * x[j];
        }
    }
    s
}

fn lp_norm(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn radial(y: &[f64]) -> Vec<f64> {
    let n = norm2(y);
    y.iter().map(|v| v / n).collect()
}

fn shifted_eval(base: &Anisotropy, c: &[f64], x: &[f64]) -> f64 {
    if x.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    if let Kind::Euclidean = base.kind {
        // |x - l c| = l, positive root
        let cc = dot(c, c);
        let xc = dot(x, c);
        let xx = dot(x, x);
        return (-xc + (xc * xc + (1.0 - cc) * xx).sqrt()) / (1.0 - cc);
    }
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let bx = base.eval_unchecked(x);
    let mut lo = 0.0;
    let mut hi = bx / (1.0 - base.eval_unchecked(&neg));
    let mut tmp = vec![0.0; x.len()];
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        for i in 0..x.len() {
            tmp[i] = x[i] - mid * c[i];
        }
        if base.eval_unchecked(&tmp) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn project_l1_ball(y: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    a.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, v) in a.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if *v > t {
            theta = t;
        }
    }
    y.iter().map(|v| v.signum() * (v.abs() - theta).max(0.0)).collect()
}

fn project_weighted_l1_ball(y: &[f64], w: &[f64]) -> Vec<f64> {
    let shrink = |mu: f64| -> Vec<f64> {
        y.iter().zip(w).map(|(v, w)| v.signum() * (v.abs() - mu * w).max(0.0)).collect()
    };
    let mass = |z: &[f64]| -> f64 { z.iter().zip(w).map(|(v, w)| w * v.abs()).sum() };
    let mut lo = 0.0;
    let mut hi = y.iter().zip(w).fold(0.0, |m: f64, (v, w)| m.max(v.abs() / w));
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(&shrink(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shrink(hi)
}

/// Projection onto the unit r-norm ball, 1 < r < inf.
fn project_lp_ball(y: &[f64], r: f64) -> Vec<f64> {
    // per coordinate: t + mu r t^(r-1) = |y_i|, t in [0, |y_i|]
    let solve = |a: f64, mu: f64| -> f64 {
        let (mut lo, mut hi) = (0.0, a);
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mid + mu * r * mid.powf(r - 1.0) > a {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    };
    let point = |mu: f64| -> Vec<f64> { y.iter().map(|v| v.signum() * solve(v.abs(), mu)).collect() };
    let mut hi = 1.0;
    while lp_norm(&point(hi), r) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lp_norm(&point(mid), r) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    point(hi)
}

/// Projection onto {z^T Q z <= 1} with Q = M^-1 (dual) or Q = M (primal).
fn project_ellipsoid(e: &Ellipse, y: &[f64], dual: bool) -> Vec<f64> {
    let dim = y.len();
    let q: Vec<f64> = e.evals.iter().map(|l| if dual { 1.0 / l } else { *l }).collect();
    let yt = e.evecs.transpose() * DVector::from_column_slice(y);
    let g = |mu: f64| -> f64 { (0..dim).map(|i| q[i] * (yt[i] / (1.0 + mu * q[i])).powi(2)).sum() };
    let mut lo = 0.0;
    let mut hi = (0..dim).map(|i| yt[i] * yt[i] / q[i]).sum::<f64>().sqrt();
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let zt = DVector::from_iterator(dim, (0..dim).map(|i| yt[i] / (1.0 + hi * q[i])));
    let z = &e.evecs * zt;
    z.iter().copied().collect()
}

fn project_shifted_dual(base: &Anisotropy, c: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    // prox of mu (base_dual + c.) at y, with mu chosen so the result lands on the boundary
    let prox = |mu: f64| -> Result<Vec<f64>> {
        let v: Vec<f64> = y.iter().zip(c).map(|(a, b)| a - mu * b).collect();
        let scaled: Vec<f64> = v.iter().map(|a| a / mu).collect();
        let pb = base.project_primal_ball(&scaled)?;
        Ok(v.iter().zip(&pb).map(|(a, b)| a - mu * b).collect())
    };
    let f = |z: &[f64]| base.dual_unchecked(z) + dot(c, z);
    let mut hi = 1.0;
    let mut guard = 0;
    while f(&prox(hi)?) > 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(AtwError::NoConvergence(guard));
        }
    }
    let mut lo = 0.0;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(&prox(mid)?) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    prox(hi)
}

/// Dykstra's alternating projections onto {x : a_k . x <= 1}.
fn dykstra(y: &[f64], normals: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = y.len();
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; dim]; normals.len()];
    let norms: Vec<f64> = normals.iter().map(|a| dot(a, a)).collect();
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let mut moved = 0.0f64;
        for (k, a) in normals.iter().enumerate() {
            let z: Vec<f64> = (0..dim).map(|i| x[i] + incr[k][i]).collect();
            let excess = dot(a, &z) - 1.0;
            let step = if excess > 0.0 { excess / norms[k] } else { 0.0 };
            for i in 0..dim {
                let nx = z[i] - step * a[i];
                incr[k][i] = z[i] - nx;
                moved = moved.max((nx - x[i]).abs());
                x[i] = nx;
            }
        }
        let viol = normals.iter().map(|a| dot(a, &x) - 1.0).fold(f64::NEG_INFINITY, f64::max);
        if viol <= DYKSTRA_TOL && moved <= 1e-13 {
            // land exactly inside so a second projection is the identity
            if viol > 0.0 {
                let s = 1.0 / (1.0 + viol);
                x.iter_mut().for_each(|v| *v *= s);
            }
            return Ok(x);
        }
    }
    Err(AtwError::NoConvergence(DYKSTRA_MAX_SWEEPS))
}

/// Is there u != 0 with c_k . u <= 0 for all k? Extreme rays of that cone lie
/// on intersections of the hyperplanes c_k . u = 0, so those are the only
/// candidates worth testing.
fn has_blocking_direction(c: &[Vec<f64>], dim: usize) -> bool {
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if dim == 2 {
        for ck in c {
            candidates.push(vec![-ck[1], ck[0]]);
        }
    } else {
        for i in 0..c.len() {
            for j in (i + 1)..c.len() {
                candidates.push(cross(&c[i], &c[j]));
            }
        }
        if c.len() < 2 {
            return true;
        }
    }
    if c.len() < dim + 1 {
        return true;
    }
    let scale = c.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    for u in candidates {
        let n = norm2(&u);
        if n <= 1e-14 * scale {
            continue;
        }
        for s in [1.0, -1.0] {
            if c.iter().all(|ck| s * dot(ck, &u) <= 1e-12 * n * scale) {
                return true;
            }
        }
    }
    false
}

fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn enumerate_vertices(c: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut push = |v: Vec<f64>| {
        if c.iter().all(|ck| dot(ck, &v) <= 1.0 + 1e-9) && !out.iter().any(|w| {
            w.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
        }) {
            out.push(v);
        }
    };
    let n = c.len();
    if dim == 2 {
        for i in 0..n {
            for j in (i + 1)..n {
                let a = nalgebra::Matrix2::new(c[i][0], c[i][1], c[j][0], c[j][1]);
                if let Some(inv) = a.try_inverse() {
                    let v = inv * nalgebra::Vector2::new(1.0, 1.0);
                    push(vec![v[0], v[1]]);
                }
            }
        }
    } else {
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let a = nalgebra::Matrix3::new(
                        c[i][0], c[i][1], c[i][2], c[j][0], c[j][1], c[j][2], c[k][0], c[k][1], c[k][2],
                    );
                    if a.determinant().abs() < 1e-14 {
                        continue;
                    }
                    if let Some(inv) = a.try_inverse() {
                        let v = inv * nalgebra::Vector3::new(1.0, 1.0, 1.0);
                        push(vec![v[0], v[1], v[2]]);
                    }
                }
            }
        }
    }
    out
}

/// Minimal-norm point of conv(points), by enumerating faces of at most `dim` points.
fn min_norm_in_hull(points: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let n = points.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |z: Vec<f64>| {
        let nz = dot(&z, &z);
        if best.as_ref().map_or(true, |(b, _)| nz < *b - 1e-15) {
            best = Some((nz, z));
        }
    };
    for mask in 1u32..(1u32 << n.min(16)) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.len() > dim {
            continue;
        }
        let p0 = points[idx[0]];
        if idx.len() == 1 {
            consider(p0.clone());
            continue;
        }
        let k = idx.len() - 1;
        let q = DMatrix::from_fn(dim, k, |r, cidx| points[idx[cidx + 1]][r] - p0[r]);
        let gram = q.transpose() * &q;
        let rhs = -(q.transpose() * DVector::from_column_slice(p0));
        let Some(mu) = gram.lu().solve(&rhs) else { continue };
        let lam0 = 1.0 - mu.sum();
        if lam0 < -1e-12 || mu.iter().any(|m| *m < -1e-12) {
            continue;
        }
        let z = DVector::from_column_slice(p0) + q * mu;
        consider(z.iter().copied().collect());
    }
    best.map(|(_, z)| z).unwrap_or_else(|| points[0].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn eval_examples() {
        let l1 = Anisotropy::l1(2).unwrap();
        assert_eq!(l1.eval(&[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(l1.eval(&[0.0, 0.0]).unwrap(), 0.0);
        let eu = Anisotropy::euclidean(2).unwrap();
        assert_eq!(eu.eval(&[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(eu.eval(&[1.0, 2.0, 3.0]), Err(AtwError::Dimension { .. })));
    }

    #[test]
    fn dual_examples() {
        let l1 = Anisotropy::l1(2).unwrap();
        assert_eq!(l1.dual_eval(&[1.0, 2.0]).unwrap(), 2.0);
        let eu = Anisotropy::euclidean(2).unwrap();
        assert_eq!(eu.dual_eval(&[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn subgradient_examples() {
        let eu = Anisotropy::euclidean(2).unwrap();
        assert_eq!(eu.subgradient(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        let l1 = Anisotropy::l1(2).unwrap();
        assert_eq!(l1.subgradient(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(l1.subgradient(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(l1.subgradient(&[0.0, 0.0]), Err(AtwError::ZeroInput));
        let linf = Anisotropy::linf(2).unwrap();
        assert_eq!(linf.subgradient(&[1.0, -1.0]).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn projection_examples() {
        let l1 = Anisotropy::l1(2).unwrap();
        assert_eq!(l1.project_dual_ball(&[2.0, -0.5]).unwrap(), vec![1.0, -0.5]);
        let eu = Anisotropy::euclidean(2).unwrap();
        assert!(close(&eu.project_dual_ball(&[3.0, 4.0]).unwrap(), &[0.6, 0.8], 1e-15));
    }

    #[test]
    fn square_polytope_matches_linf() {
        // support vectors (+-1, 0), (0, +-1) give max |x_i|
        let p = Anisotropy::polyhedral(vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let linf = Anisotropy::linf(2).unwrap();
        for y in [[0.3, -2.0], [1.0, 1.0], [-0.7, 0.1]] {
            assert!((p.eval(&y).unwrap() - linf.eval(&y).unwrap()).abs() < 1e-14);
            assert!((p.dual_eval(&y).unwrap() - linf.dual_eval(&y).unwrap()).abs() < 1e-12);
        }
        assert!(p.is_symmetric());
    }

    #[test]
    fn polytope_rejects_origin_outside() {
        let r = Anisotropy::polyhedral(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert!(r.is_err());
        let r3 = Anisotropy::polyhedral(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, -1.0, 0.0],
        ]);
        assert!(r3.is_err());
    }

    #[test]
    fn shifted_euclidean_closed_form_matches_bisection() {
        let c = vec![0.3, -0.2];
        let a = Anisotropy::shifted(Anisotropy::euclidean(2).unwrap(), c.clone()).unwrap();
        let b = Anisotropy::shifted(Anisotropy::pnorm(2, 2.0).unwrap(), c).unwrap();
        for x in [[1.0, 0.0], [-0.4, 2.0], [0.1, -0.1]] {
            let (va, vb) = (a.eval(&x).unwrap(), b.eval(&x).unwrap());
            assert!((va - vb).abs() < 1e-12 * va, "{va} {vb}");
        }
        assert!(!a.is_symmetric());
    }

    #[test]
    fn ellipse_rejects_indefinite() {
        assert!(Anisotropy::ellipse(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(Anisotropy::ellipse(&[vec![1.0, 0.1], vec![0.0, 1.0]]).is_err());
    }
}
