//! Closed-form reference evolutions. Nothing here touches a grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anisotropy::Anisotropy;
use crate::error::{AtwError, Result};

/// Closed polygon, counter-clockwise, last vertex not repeated.
pub type Polygon = Vec<[f64; 2]>;

pub fn polygon_area(p: &Polygon) -> f64 {
    let n = p.len();
    (0..n).map(|i| {
        let (a, b) = (p[i], p[(i + 1) % n]);
        a[0] * b[1] - a[1] * b[0]
    })
    .sum::<f64>()
        / 2.0
}

/// Crystalline flow of the cross `([-1,1]x[-L,L]) U ([-L,L]x[-1,1])` with
/// `phi = psi = l1`: the arms retract at unit speed until `t = L - 1`, then
/// the unit square shrinks with `s^2 = 1 - 2(t - (L - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossFlow {
    pub l: f64,
}

impl Default for CrossFlow {
    fn default() -> Self {
        CrossFlow { l: 2.0 }
    }
}

impl CrossFlow {
    pub fn new(l: f64) -> Result<Self> {
        if !(l >= 1.0) {
            return Err(AtwError::Invalid(format!("cross needs L >= 1, got {l}")));
        }
        Ok(CrossFlow { l })
    }

    pub fn square_phase_start(&self) -> f64 {
        self.l - 1.0
    }

    pub fn extinction_time(&self) -> f64 {
        self.l - 0.5
    }

    /// Arm half-length at time t (the arms meet the square when it reaches 1).
    pub fn arm(&self, t: f64) -> f64 {
        (self.l - t.max(0.0)).max(1.0)
    }

    /// Half-side of the square phase, 1 before it starts.
    pub fn half_side(&self, t: f64) -> f64 {
        let s = t - self.square_phase_start();
        if s <= 0.0 {
            1.0
        } else {
            (1.0 - 2.0 * s).max(0.0).sqrt()
        }
    }

    pub fn set(&self, t: f64) -> Polygon {
        if t > self.extinction_time() {
            return Vec::new();
        }
        if t >= self.square_phase_start() {
            let s = self.half_side(t);
            if s == 0.0 {
                return Vec::new();
            }
            return vec![[-s, -s], [s, -s], [s, s], [-s, s]];
        }
        let a = self.arm(t);
        vec![
            [1.0, -a],
            [1.0, -1.0],
            [a, -1.0],
            [a, 1.0],
            [1.0, 1.0],
            [1.0, a],
            [-1.0, a],
            [-1.0, 1.0],
            [-a, 1.0],
            [-a, -1.0],
            [-1.0, -1.0],
            [-1.0, -a],
        ]
    }

    pub fn contains(&self, t: f64, x: [f64; 2]) -> bool {
        if t > self.extinction_time() {
            return false;
        }
        let (ax, ay) = (x[0].abs(), x[1].abs());
        if t >= self.square_phase_start() {
            let s = self.half_side(t);
            return s > 0.0 && ax <= s && ay <= s;
        }
        let a = self.arm(t);
        (ax <= 1.0 && ay <= a) || (ax <= a && ay <= 1.0)
    }

    /// `sup{t : x in E(t)}`, zero off the initial cross.
    pub fn arrival(&self, x: [f64; 2]) -> f64 {
        let (ax, ay) = (x[0].abs(), x[1].abs());
        let (lo, hi) = if ax <= ay { (ax, ay) } else { (ay, ax) };
        if lo > 1.0 || hi > self.l {
            0.0
        } else if hi > 1.0 {
            self.l - hi
        } else {
            self.square_phase_start() + (1.0 - hi * hi) / 2.0
        }
    }

    pub fn volume(&self, t: f64) -> f64 {
        polygon_area(&self.set(t))
    }

    /// l1 perimeter (equal to the euclidean one for axis-aligned polygons).
    pub fn perimeter(&self, t: f64) -> f64 {
        let p = self.set(t);
        let n = p.len();
        (0..n)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % n]);
                (b[0] - a[0]).abs() + (b[1] - a[1]).abs()
            })
            .sum()
    }
}

/// Branch of the cross calibration field containing a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationBranch {
    Center,
    VerticalArm,
    HorizontalArm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CalibrationSample {
    pub x: [f64; 2],
    pub branch: CalibrationBranch,
    pub z: [f64; 2],
    pub div: f64,
    pub expected_div: f64,
    pub dual_norm: f64,
}

/// `z = (x, y)` in `[-1,1]^2`, `(x, sgn y)` in the vertical arms and
/// `(sgn x, y)` in the horizontal ones. The divergence is read off the
/// branch's Jacobian, which is the identity or a single unit entry.
pub fn calibration_field(x: [f64; 2]) -> (CalibrationBranch, [f64; 2], f64) {
    let (px, py) = (x[0], x[1]);
    if px.abs() <= 1.0 && py.abs() <= 1.0 {
        (CalibrationBranch::Center, [px, py], 2.0)
    } else if px.abs() <= 1.0 {
        (CalibrationBranch::VerticalArm, [px, py.signum()], 1.0)
    } else {
        (CalibrationBranch::HorizontalArm, [px.signum(), py], 1.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub max_dual_norm: f64,
    pub max_div_error: f64,
    pub feasible: bool,
    pub divergence_exact: bool,
    pub worst: Option<CalibrationSample>,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.feasible && self.divergence_exact
    }
}

/// Evaluate the field at each point of the cross and compare with
/// `1 + chi_{[-1,1]^2}`; feasibility is `psi_dual(z) <= 1` for `psi = l1`.
pub fn calibration_check(points: &[[f64; 2]], flow: &CrossFlow) -> Result<CalibrationReport> {
    let psi = Anisotropy::l1(2)?;
    let mut rep = CalibrationReport {
        samples: 0,
        max_dual_norm: 0.0,
        max_div_error: 0.0,
        feasible: true,
        divergence_exact: true,
        worst: None,
    };
    for &x in points {
        if !flow.contains(0.0, x) {
            return Err(AtwError::Invalid(format!("({}, {}) is not in the cross", x[0], x[1])));
        }
        let (branch, z, div) = calibration_field(x);
        let expected = if x[0].abs() <= 1.0 && x[1].abs() <= 1.0 { 2.0 } else { 1.0 };
        let dual_norm = psi.dual_eval(&z)?;
        let s = CalibrationSample { x, branch, z, div, expected_div: expected, dual_norm };
        rep.samples += 1;
        rep.max_div_error = rep.max_div_error.max((div - expected).abs());
        if dual_norm > rep.max_dual_norm || rep.worst.is_none() {
            rep.max_dual_norm = rep.max_dual_norm.max(dual_norm);
            rep.worst = Some(s);
        }
    }
    rep.feasible = rep.max_dual_norm <= 1.0 + 1e-12;
    rep.divergence_exact = rep.max_div_error == 0.0;
    Ok(rep)
}

/// Uniform samples in the cross, by rejection from its bounding box.
pub fn sample_cross(flow: &CrossFlow, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = [rng.gen_range(-flow.l..=flow.l), rng.gen_range(-flow.l..=flow.l)];
        if flow.contains(0.0, x) {
            out.push(x);
        }
    }
    out
}

/// Euclidean mean curvature flow of a ball: `R(t)^2 = R0^2 - 2(d-1)t`.
pub fn shrinking_ball(r0: f64, t: f64, dim: usize) -> f64 {
    let k = 2.0 * (dim.max(2) - 1) as f64;
    (r0 * r0 - k * t).max(0.0).sqrt()
}

pub fn shrinking_ball_extinction(r0: f64, dim: usize) -> f64 {
    r0 * r0 / (2.0 * (dim.max(2) - 1) as f64)
}

/// Half-side of a square under `phi = psi = l1`: `s^2 = s0^2 - 2t`.
pub fn shrinking_square_l1(s0: f64, t: f64) -> f64 {
    (s0 * s0 - 2.0 * t).max(0.0).sqrt()
}

/// `int_0^T P(B_{r(t)}) dt` for the euclidean disk, i.e. `(2 pi / 3) R^3`.
pub fn disk_bv_energy(r0: f64) -> f64 {
    2.0 * std::f64::consts::PI / 3.0 * r0.powi(3)
}

/// Disjoint disks in the plane and their arrival time
/// `u(x) = sum_n (r_n^2 - |x - x_n|^2)^+ / 2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiskFamily {
    pub centers: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    /// strength for which every partial union is (MC_delta) in the unit disk
    pub delta: Option<f64>,
}

impl DiskFamily {
    pub fn new(centers: Vec<[f64; 2]>, radii: Vec<f64>) -> Result<Self> {
        if centers.len() != radii.len() {
            return Err(AtwError::Invalid("one radius per center".into()));
        }
        if radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(AtwError::Invalid("radii must be nonnegative".into()));
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if radii[i] > 0.0 && radii[j] > 0.0 && dist(centers[i], centers[j]) <= radii[i] + radii[j] {
                    return Err(AtwError::Overlap);
                }
            }
        }
        Ok(DiskFamily { centers, radii, delta: None })
    }

    pub fn arrival(&self, x: [f64; 2]) -> f64 {
        self.centers
            .iter()
            .zip(&self.radii)
            .map(|(c, r)| {
                let q = dist(x, *c);
                (r * r - q * q).max(0.0) / 2.0
            })
            .sum()
    }

    pub fn contains(&self, t: f64, x: [f64; 2]) -> bool {
        let u = self.arrival(x);
        u > 0.0 && u >= t
    }

    pub fn extinction_time(&self) -> f64 {
        self.radii.iter().map(|r| r * r / 2.0).fold(0.0, f64::max)
    }
}

pub fn disk_family_arrival(x: [f64; 2], centers: &[[f64; 2]], radii: &[f64]) -> Result<f64> {
    Ok(DiskFamily::new(centers.to_vec(), radii.to_vec())?.arrival(x))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Every ball in `B(0,1)` is (MC_{1/2}): the field `(x-c)/r` inside and
/// `(x-c)/|x-c|` outside has divergence at least `1/|x-c| > 1/2`. So the
/// construction runs with `2 delta = 1/2`.
pub const DISK_FAMILY_DELTA: f64 = 0.25;

pub fn disk_family_constant(delta: f64) -> f64 {
    (18.0 / (std::f64::consts::PI - 2.0)).max(3.0 * (2.0 * delta + 9.0) / 2.0)
}

/// Largest `r_{n+1}` allowed after `n` disks when the new center is at
/// distance `d_n` from the current union.
pub fn disk_family_radius_bound(n: usize, d_n: f64, delta: f64) -> f64 {
    if d_n <= 0.0 {
        return 0.0;
    }
    let n = n as f64;
    let c = disk_family_constant(delta);
    let a = 0.5 * (1.0 / n - 1.0 / (n + 1.0)) * delta * d_n * d_n / (2.0 * std::f64::consts::PI * c);
    a.min(d_n / 6.0).min(0.99 * 0.5f64.powi(n as i32))
}

/// Greedy finite realization of the disk construction in `B(0,1)`. Centers
/// are fixed-seed dyadic rationals; a center already covered gets radius 0.
/// Radii are also kept at most half the distance to the unit circle.
pub fn disk_family_generate(n_disks: usize, seed: u64) -> DiskFamily {
    let delta = DISK_FAMILY_DELTA;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n_disks);
    let mut radii: Vec<f64> = Vec::with_capacity(n_disks);
    while centers.len() < n_disks {
        let x = [rng.gen_range(-1024i32..=1024) as f64 / 1024.0, rng.gen_range(-1024i32..=1024) as f64 / 1024.0];
        let rim = 1.0 - x[0].hypot(x[1]);
        if rim <= 0.0 {
            continue;
        }
        let r = if centers.is_empty() {
            rim / 2.0
        } else {
            let d_n = centers
                .iter()
                .zip(&radii)
                .filter(|(_, r)| **r > 0.0)
                .map(|(c, r)| (dist(x, *c) - r).max(0.0))
                .fold(f64::INFINITY, f64::min);
            disk_family_radius_bound(centers.len(), d_n, delta).min(rim / 2.0)
        };
        centers.push(x);
        radii.push(r);
    }
    DiskFamily { centers, radii, delta: Some(delta) }
}

/// Which closed-form evolution an oracle refers to.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSolution {
    Cross { l: f64 },
    ShrinkingBall { r0: f64, dim: usize },
    ShrinkingSquareL1 { s0: f64 },
    DiskFamily { centers: Vec<[f64; 2]>, radii: Vec<f64> },
}

impl OracleSolution {
    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        match self {
            OracleSolution::Cross { l } => CrossFlow { l: *l }.contains(t, [x[0], x[1]]),
            OracleSolution::ShrinkingBall { r0, dim } => {
                let r = shrinking_ball(*r0, t, *dim);
                r > 0.0 && x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r
            }
            OracleSolution::ShrinkingSquareL1 { s0 } => {
                let s = shrinking_square_l1(*s0, t);
                s > 0.0 && x.iter().all(|v| v.abs() <= s)
            }
            OracleSolution::DiskFamily { centers, radii } => {
                DiskFamily { centers: centers.clone(), radii: radii.clone(), delta: None }.contains(t, [x[0], x[1]])
            }
        }
    }

    pub fn arrival(&self, x: &[f64]) -> f64 {
        match self {
            OracleSolution::Cross { l } => CrossFlow { l: *l }.arrival([x[0], x[1]]),
            OracleSolution::ShrinkingBall { r0, dim } => {
                let q2: f64 = x.iter().map(|v| v * v).sum();
                (r0 * r0 - q2).max(0.0) / (2.0 * (*dim.max(&2) - 1) as f64)
            }
            OracleSolution::ShrinkingSquareL1 { s0 } => {
                let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if m > *s0 {
                    0.0
                } else {
                    (s0 * s0 - m * m) / 2.0
                }
            }
            OracleSolution::DiskFamily { centers, radii } => {
                DiskFamily { centers: centers.clone(), radii: radii.clone(), delta: None }.arrival([x[0], x[1]])
            }
        }
    }

    pub fn extinction_time(&self) -> f64 {
        match self {
            OracleSolution::Cross { l } => CrossFlow { l: *l }.extinction_time(),
            OracleSolution::ShrinkingBall { r0, dim } => shrinking_ball_extinction(*r0, *dim),
            OracleSolution::ShrinkingSquareL1 { s0 } => s0 * s0 / 2.0,
            OracleSolution::DiskFamily { radii, .. } => radii.iter().map(|r| r * r / 2.0).fold(0.0, f64::max),
        }
    }

    /// Boundary polygons of the 2D set at time `t`; disks become regular
    /// `segments`-gons.
    pub fn outline(&self, t: f64, segments: usize) -> Vec<Polygon> {
        let circle = |c: [f64; 2], r: f64| -> Polygon {
            (0..segments)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
                    [c[0] + r * a.cos(), c[1] + r * a.sin()]
                })
                .collect()
        };
        let square = |s: f64| vec![[-s, -s], [s, -s], [s, s], [-s, s]];
        let polys = match self {
            OracleSolution::Cross { l } => vec![CrossFlow { l: *l }.set(t)],
            OracleSolution::ShrinkingBall { r0, dim } => vec![circle([0.0, 0.0], shrinking_ball(*r0, t, *dim))],
            OracleSolution::ShrinkingSquareL1 { s0 } => vec![square(shrinking_square_l1(*s0, t))],
            OracleSolution::DiskFamily { centers, radii } => {
                centers.iter().zip(radii).map(|(c, r)| circle(*c, (r * r - 2.0 * t).max(0.0).sqrt())).collect()
            }
        };
        polys.into_iter().filter(|p| p.len() > 2 && polygon_area(p) > 0.0).collect()
    }

    /// Euclidean perimeter of the 2D set at time t (l1 for the crystalline cases).
    pub fn perimeter(&self, t: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            OracleSolution::Cross { l } => CrossFlow { l: *l }.perimeter(t),
            OracleSolution::ShrinkingBall { r0, .. } => 2.0 * PI * shrinking_ball(*r0, t, 2),
            OracleSolution::ShrinkingSquareL1 { s0 } => 8.0 * shrinking_square_l1(*s0, t),
            OracleSolution::DiskFamily { radii, .. } => {
                radii.iter().map(|r| 2.0 * PI * (r * r - 2.0 * t).max(0.0).sqrt()).sum()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_at_key_times() {
        let c = CrossFlow::default();
        assert_eq!(c.set(0.0).len(), 12);
        assert_eq!(c.volume(0.0), 12.0);
        assert_eq!(c.set(1.0), vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]);
        assert!(c.set(2.0).is_empty());
        assert_eq!(c.arrival([0.0, 0.0]), 1.5);
        assert_eq!(c.arrival([0.0, 1.5]), 0.5);
        assert_eq!(c.arrival([1.9, 1.9]), 0.0);
    }

    #[test]
    fn calibration_at_documented_points() {
        assert_eq!(calibration_field([0.5, 0.5]), (CalibrationBranch::Center, [0.5, 0.5], 2.0));
        assert_eq!(calibration_field([0.5, 1.5]), (CalibrationBranch::VerticalArm, [0.5, 1.0], 1.0));
        assert_eq!(calibration_field([1.5, 0.5]), (CalibrationBranch::HorizontalArm, [1.0, 0.5], 1.0));
    }

    #[test]
    fn calibration_divergence_matches_central_differences() {
        // independent of the branch Jacobians: difference the field itself
        let eps = 1e-6;
        for x in sample_cross(&CrossFlow::default(), 200, 3) {
            let inside = |p: [f64; 2]| calibration_field(p).0 == calibration_field(x).0;
            let (px, mx) = ([x[0] + eps, x[1]], [x[0] - eps, x[1]]);
            let (py, my) = ([x[0], x[1] + eps], [x[0], x[1] - eps]);
            if ![px, mx, py, my].iter().all(|p| inside(*p)) {
                continue;
            }
            let fd = (calibration_field(px).1[0] - calibration_field(mx).1[0]) / (2.0 * eps)
                + (calibration_field(py).1[1] - calibration_field(my).1[1]) / (2.0 * eps);
            assert!((fd - calibration_field(x).2).abs() < 1e-6);
        }
    }

    #[test]
    fn shrinking_ball_matches_its_ode() {
        assert!((shrinking_ball(1.0, 0.375, 2) - 0.5).abs() < 1e-15);
        assert_eq!(shrinking_ball(1.0, 0.5, 2), 0.0);
        assert_eq!(shrinking_ball(1.3, 0.0, 3), 1.3);
        let (t, e) = (0.2, 1e-6);
        let rdot = (shrinking_ball(1.0, t + e, 2) - shrinking_ball(1.0, t - e, 2)) / (2.0 * e);
        assert!((rdot + 1.0 / shrinking_ball(1.0, t, 2)).abs() < 1e-6);
    }

    #[test]
    fn disk_family_formula() {
        let f = DiskFamily::new(vec![[0.0, 0.0], [0.5, 0.0]], vec![0.2, 0.1]).unwrap();
        assert!((f.arrival([0.5, 0.0]) - 0.1 * 0.1 / 2.0).abs() < 1e-18);
        assert!((f.arrival([0.1, 0.0]) - 3.0 * 0.04 / 8.0).abs() < 1e-15);
        assert_eq!(f.arrival([0.0, 0.9]), 0.0);
        assert_eq!(
            disk_family_arrival([0.0, 0.0], &[[0.0, 0.0], [0.3, 0.0]], &[0.2, 0.2]),
            Err(AtwError::Overlap)
        );
    }

    #[test]
    fn second_radius_follows_the_bound() {
        let f = disk_family_generate(2, 11);
        let d1 = dist(f.centers[1], f.centers[0]) - f.radii[0];
        let delta = DISK_FAMILY_DELTA;
        let c: f64 = 18.0 / (std::f64::consts::PI - 2.0);
        let bound = (0.25 * delta * d1 * d1 / (2.0 * std::f64::consts::PI * c)).min(d1 / 6.0);
        let rim = 1.0 - f.centers[1][0].hypot(f.centers[1][1]);
        assert!((f.radii[1] - bound.min(rim / 2.0)).abs() < 1e-15);
    }
}
