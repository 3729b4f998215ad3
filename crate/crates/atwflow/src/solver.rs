//! One minimizing-movements step.
//!
//! The set problem `min P(F) + (1/h) int_F d` is solved through its convex
//! relaxation `w = argmin h TV(w) + 1/2 |w - d|^2` with `w = d` on the frame;
//! `T_h E = {w <= 0}`. TV is the stencil total variation of [`crate::stencil`],
//! so thresholding is exact by the coarea formula.
//!
//! The default solver is exact block-coordinate ascent on the dual: each
//! block is one stencil direction, which splits into independent 1-D chains
//! solved in linear time by dynamic programming. A Chambolle-Pock iteration on
//! the same functional (and one on the plain forward-difference functional)
//! are kept for cross-checks.

use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::distance::{signed_distance_level, signed_distance_sweep_with, Interface, SignedDistance};
use crate::error::{AtwError, Result};
use crate::grid::{GridDomain, IndicatorField, ScalarField, VectorField, FRAME};
use crate::stencil::{for_each_edge, Chain, Stencil};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// exact line-wise dual block coordinate ascent on the stencil TV
    BlockDual,
    /// accelerated primal-dual on the stencil TV
    PrimalDual,
    /// accelerated primal-dual on `sum phi(grad w)` with forward differences
    PrimalDualForward,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// relative duality gap
    pub tol_gap: f64,
    pub max_iters: usize,
    pub level_tol: f64,
    /// primal-dual step sizes; `None` picks `1/L` with `L` the operator norm bound
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    /// iterations between gap evaluations
    pub check_every: usize,
    /// threshold `{w < -level_tol}` instead of `{w <= level_tol}`
    pub smallest_minimizer: bool,
    pub interface: Interface,
    /// solve on the bounding box of the set grown by this many cells
    pub window_margin: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::BlockDual,
            tol_gap: 1e-7,
            max_iters: 20_000,
            level_tol: 1e-9,
            tau: None,
            sigma: None,
            check_every: 4,
            smallest_minimizer: false,
            interface: Interface::Subcell,
            window_margin: Some(12),
        }
    }
}

/// Solution of the relaxed problem.
#[derive(Clone, Debug)]
pub struct RofSolution {
    pub w: Vec<f64>,
    /// edge duals `zeta[k][x]` on the edge `x -> x + o_k` (forward variant: per-cell faces)
    pub zeta: Vec<Vec<f64>>,
    /// `div zeta`, i.e. `(w - d)/h` at optimality
    pub div: Vec<f64>,
    pub gap: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub certified: bool,
}

#[derive(Clone, Debug)]
pub struct AtwStepResult {
    pub next_set: IndicatorField,
    pub w: ScalarField,
    /// cell vector `sum_k zeta_k e_k`
    pub z: VectorField,
    pub residual: f64,
    pub iterations: usize,
    pub certified: bool,
    /// `max(0, min div z)` over cells at least two cells inside `next_set`
    pub delta_certificate: f64,
    /// the raw minimum (may be slightly negative); both are `+inf` without interior cells
    pub delta_raw: f64,
    /// largest normalized edge dual, `<= 1` means dual feasible
    pub dual_max: f64,
    /// step objective `P(T_h E) + (1/h) int_{T_h E} d`
    pub energy: f64,
    pub distance: SignedDistance,
    pub rof: RofSolution,
}

/// Precomputed stencil and chains for one grid and one surface tension.
#[derive(Clone, Debug)]
pub struct Scheme {
    dom: GridDomain,
    phi: Anisotropy,
    psi: Anisotropy,
    pub stencil: Stencil,
    chains: Vec<Vec<Chain>>,
    lin: Vec<isize>,
    free: Vec<bool>,
    pub h: f64,
    pub cfg: SolverConfig,
}

impl Scheme {
    pub fn new(dom: &GridDomain, phi: &Anisotropy, psi: &Anisotropy, h: f64, cfg: SolverConfig) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(AtwError::Invalid("time step must be positive".into()));
        }
        for g in [phi, psi] {
            if g.dim() != dom.dim() {
                return Err(AtwError::Dimension { expected: dom.dim(), got: g.dim() });
            }
        }
        let stencil = Stencil::for_gauge(phi, dom.spacing());
        let chains = stencil.chains(dom);
        let lin = stencil.linear_offsets(dom);
        let free = (0..dom.len()).map(|i| !dom.in_frame_idx(i)).collect();
        Ok(Self { dom: dom.clone(), phi: phi.clone(), psi: psi.clone(), stencil, chains, lin, free, h, cfg })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.dom
    }

    pub fn phi(&self) -> &Anisotropy {
        &self.phi
    }

    pub fn psi(&self) -> &Anisotropy {
        &self.psi
    }

    pub fn perimeter(&self, e: &IndicatorField) -> f64 {
        self.stencil.perimeter(e)
    }

    pub fn distance(&self, e: &IndicatorField) -> Result<SignedDistance> {
        signed_distance_sweep_with(e, &self.psi, self.cfg.interface)
    }

    /// Distance to `{w <= 0}` with the interface at the zero crossings of `w`.
    pub fn level_distance(&self, w: &ScalarField) -> Result<SignedDistance> {
        signed_distance_level(w, &self.psi)
    }

    /// Solve the relaxed problem for data `d`, optionally warm-started from
    /// a previous dual.
    pub fn solve_w(&self, d: &[f64], warm: Option<&[Vec<f64>]>) -> Result<RofSolution> {
        if d.len() != self.dom.len() {
            return Err(AtwError::DomainMismatch);
        }
        match self.cfg.kind {
            SolverKind::BlockDual => Ok(self.block_dual(d, warm)),
            SolverKind::PrimalDual => {
                let op = GraphOp { scheme: self };
                Ok(primal_dual(&op, d, self.h, &self.free, &self.cfg, self.dom.cell_volume()))
            }
            SolverKind::PrimalDualForward => {
                let op = ForwardOp { dom: &self.dom, phi: &self.phi };
                Ok(primal_dual(&op, d, self.h, &self.free, &self.cfg, self.dom.cell_volume()))
            }
        }
    }

    /// Full step: distance, relaxed solve, threshold, diagnostics.
    pub fn step(&self, e: &IndicatorField, warm: Option<&[Vec<f64>]>) -> Result<AtwStepResult> {
        if e.domain() != &self.dom {
            return Err(AtwError::DomainMismatch);
        }
        let distance = self.distance(e)?;
        self.step_with_distance(distance, warm)
    }

    pub fn step_with_distance(&self, distance: SignedDistance, warm: Option<&[Vec<f64>]>) -> Result<AtwStepResult> {
        let d = &distance.field.values;
        let mut rof = None;
        if let Some(win) = self.cfg.window_margin.and_then(|m| self.window_for(&distance.source, m)) {
            let r = self.solve_windowed(d, warm, win)?;
            let w = ScalarField { domain: self.dom.clone(), values: r.w.clone() };
            if !self.reaches_window_edge(&threshold_set(&w, &self.cfg)?, win) {
                rof = Some(r);
            }
        }
        let rof = match rof {
            Some(r) => r,
            None => self.solve_w(d, warm)?,
        };
        let w = ScalarField { domain: self.dom.clone(), values: rof.w.clone() };
        let next_set = threshold_set(&w, &self.cfg)?;
        let (delta_raw, delta_certificate) = certificate(&next_set, &rof.div);
        let z = self.cell_field(&rof.zeta);
        let dual_max = self.dual_max(&rof.zeta);
        let energy = self.perimeter(&next_set) + atw_volume_term(&next_set, &distance, self.h);
        Ok(AtwStepResult {
            next_set,
            w,
            z,
            residual: rof.rel_gap,
            iterations: rof.iterations,
            certified: rof.certified,
            delta_certificate,
            delta_raw,
            dual_max,
            energy,
            distance,
            rof,
        })
    }

    /// Bounding box of `e` grown by `margin` cells and the frame, or `None`
    /// when it covers the whole grid.
    fn window_for(&self, e: &IndicatorField, margin: usize) -> Option<Window> {
        let dim = self.dom.dim();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for x in (0..self.dom.len()).filter(|x| e.contains(*x)) {
            let i = self.dom.multi(x);
            for a in 0..dim {
                lo[a] = lo[a].min(i[a]);
                hi[a] = hi[a].max(i[a]);
            }
        }
        if lo[0] == usize::MAX {
            return None;
        }
        let mut win = Window { lo: [0; 3], n: [1; 3], open: [[false; 2]; 3] };
        let grow = margin + FRAME;
        for a in 0..dim {
            let cells = self.dom.cells()[a];
            let l = lo[a].saturating_sub(grow);
            let h = (hi[a] + grow + 1).min(cells);
            win.lo[a] = l;
            win.n[a] = h - l;
            win.open[a] = [l > 0, h < cells];
        }
        if (0..dim).all(|a| win.n[a] == self.dom.cells()[a]) {
            return None;
        }
        Some(win)
    }

    fn window_cells(&self, win: Window) -> Vec<usize> {
        let st = self.dom.strides();
        let mut out = Vec::with_capacity(win.n[0] * win.n[1] * win.n[2]);
        for i in 0..win.n[0] {
            for j in 0..win.n[1] {
                for k in 0..win.n[2] {
                    out.push((win.lo[0] + i) * st[0] + (win.lo[1] + j) * st[1] + (win.lo[2] + k) * st[2]);
                }
            }
        }
        out
    }

    /// Same problem with `w = d` fixed outside the window's free cells.
    fn solve_windowed(&self, d: &[f64], warm: Option<&[Vec<f64>]>, win: Window) -> Result<RofSolution> {
        let sub_dom = self.dom.window(win.lo, win.n)?;
        let mut cfg = self.cfg.clone();
        cfg.window_margin = None;
        let mut sub = Scheme {
            chains: self.stencil.chains(&sub_dom),
            lin: self.stencil.linear_offsets(&sub_dom),
            free: (0..sub_dom.len()).map(|i| !sub_dom.in_frame_idx(i)).collect(),
            dom: sub_dom,
            phi: self.phi.clone(),
            psi: self.psi.clone(),
            stencil: self.stencil.clone(),
            h: self.h,
            cfg,
        };
        let map = self.window_cells(win);
        let d_sub: Vec<f64> = map.iter().map(|&x| d[x]).collect();
        // keep the gap relative to the energy of the whole problem, not the window's
        let scale = (self.tv(d) / sub.tv(&d_sub).max(f64::MIN_POSITIVE)).max(1.0);
        sub.cfg.tol_gap *= scale;
        let warm_sub: Option<Vec<Vec<f64>>> =
            warm.map(|z| z.iter().map(|zk| map.iter().map(|&x| zk[x]).collect()).collect());
        let r = sub.solve_w(&d_sub, warm_sub.as_deref())?;
        let n = self.dom.len();
        let mut w = d.to_vec();
        let mut div = vec![0.0; n];
        let mut zeta = vec![vec![0.0; n]; r.zeta.len()];
        for (s, &x) in map.iter().enumerate() {
            w[x] = r.w[s];
            div[x] = r.div[s];
            for (zk, sk) in zeta.iter_mut().zip(&r.zeta) {
                zk[x] = sk[s];
            }
        }
        Ok(RofSolution { w, zeta, div, rel_gap: r.rel_gap / scale, ..r })
    }

    /// Members within two cells of a window side that is not the grid's own edge.
    fn reaches_window_edge(&self, e: &IndicatorField, win: Window) -> bool {
        let guard = FRAME + 2;
        (0..self.dom.len()).filter(|x| e.contains(*x)).any(|x| {
            let i = self.dom.multi(x);
            (0..self.dom.dim()).any(|a| {
                let r = i[a] as isize - win.lo[a] as isize;
                (win.open[a][0] && r < guard as isize) || (win.open[a][1] && r >= (win.n[a] - guard) as isize)
            })
        })
    }

    fn cell_field(&self, zeta: &[Vec<f64>]) -> VectorField {
        let dim = self.dom.dim();
        let mut z = VectorField::zeros(&self.dom);
        if self.cfg.kind == SolverKind::PrimalDualForward {
            z.values.copy_from_slice(&zeta[0]);
            return z;
        }
        for (k, zk) in zeta.iter().enumerate() {
            let e = self.stencil.edge(k);
            for x in 0..self.dom.len() {
                for a in 0..dim {
                    z.values[x * dim + a] += zk[x] * e[a];
                }
            }
        }
        z
    }

    /// Dual feasibility measure: 1 on the boundary of the admissible set.
    pub fn dual_max(&self, zeta: &[Vec<f64>]) -> f64 {
        if self.cfg.kind == SolverKind::PrimalDualForward {
            let dim = self.dom.dim();
            return zeta[0].chunks(dim).map(|c| self.phi.dual_unchecked(c)).fold(0.0, f64::max);
        }
        let mut m = 0.0f64;
        for (k, zk) in zeta.iter().enumerate() {
            let (a, b) = (self.stencil.a[k], self.stencil.b[k]);
            for &v in zk {
                if v > 0.0 {
                    m = m.max(if a > 0.0 { v / a } else { f64::INFINITY });
                } else if v < 0.0 {
                    m = m.max(if b > 0.0 { -v / b } else { f64::INFINITY });
                }
            }
        }
        m
    }

    /// Cell-indexed edge duals to chain order: entry `base + t` of direction
    /// `k` is the edge from `cell(t)` to `cell(t + 1)` of a chain.
    fn to_chain_order(&self, zeta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .enumerate()
            .map(|(k, chains)| {
                let mut out = Vec::with_capacity(self.dom.len());
                for ch in chains {
                    out.extend((0..ch.len - 1).map(|t| zeta[k][ch.cell(t)]));
                    out.push(0.0);
                }
                out
            })
            .collect()
    }

    fn to_cell_order(&self, zc: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .enumerate()
            .map(|(k, chains)| {
                let mut out = vec![0.0; self.dom.len()];
                let mut base = 0;
                for ch in chains {
                    for t in 0..ch.len - 1 {
                        out[ch.cell(t)] = zc[k][base + t];
                    }
                    base += ch.len;
                }
                out
            })
            .collect()
    }

    /// `(div zeta, sum lambda(Dw))` from chain-ordered duals.
    fn chain_div_tv(&self, w: &[f64], zc: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let mut div = vec![0.0; w.len()];
        let mut tv = 0.0;
        for (k, chains) in self.chains.iter().enumerate() {
            let (a, b) = (self.stencil.a[k], self.stencil.b[k]);
            let mut base = 0;
            for ch in chains {
                let z = &zc[k][base..base + ch.len];
                let mut prev = ch.cell(0);
                for &zt in &z[..ch.len - 1] {
                    let next = (prev as isize + ch.stride) as usize;
                    let t = w[next] - w[prev];
                    tv += if t > 0.0 { a * t } else { -b * t };
                    div[prev] += zt;
                    div[next] -= zt;
                    prev = next;
                }
                base += ch.len;
            }
        }
        (div, tv)
    }

    fn tv(&self, w: &[f64]) -> f64 {
        let zero = vec![vec![0.0; w.len()]; self.stencil.len()];
        self.chain_div_tv(w, &zero).1
    }

    fn block_dual(&self, d: &[f64], warm: Option<&[Vec<f64>]>) -> RofSolution {
        let n = self.dom.len();
        let nk = self.stencil.len();
        let h = self.h;
        let mut zc = match warm {
            Some(z) if z.len() == nk && z.iter().all(|v| v.len() == n) => self.to_chain_order(z),
            _ => vec![vec![0.0; n]; nk],
        };
        let mut w = d.to_vec();
        for (k, chains) in self.chains.iter().enumerate() {
            let (a, b) = (self.stencil.a[k], self.stencil.b[k]);
            let mut base = 0;
            for ch in chains {
                let z = &mut zc[k][base..base + ch.len];
                z.iter_mut().for_each(|v| *v = v.clamp(-b, a));
                z[ch.len - 1] = 0.0;
                // edges between two fixed cells never change: the subgradient at d
                for t in 0..ch.len - 1 {
                    let inside = ch.free_hi > 0 && t + 1 >= ch.free_lo && t < ch.free_hi;
                    if !inside {
                        let dt = d[ch.cell(t + 1)] - d[ch.cell(t)];
                        z[t] = if dt > 0.0 { a } else if dt < 0.0 { -b } else { 0.0 };
                    }
                }
                // w = d - sum_k u_k with u_k = -h div_k zeta_k on free cells
                for t in ch.free_lo..ch.free_hi {
                    w[ch.cell(t)] += h * (z[t] - z[t - 1]);
                }
                base += ch.len;
            }
        }
        let mut dp = ChainDp::default();
        let mut iterations = 0;
        let mut gap = f64::INFINITY;
        let mut rel_gap = f64::INFINITY;
        let check = self.cfg.check_every.max(1);
        while iterations < self.cfg.max_iters {
            iterations += 1;
            for (k, chains) in self.chains.iter().enumerate() {
                let (a, b) = (self.stencil.a[k], self.stencil.b[k]);
                let mut base = 0;
                for ch in chains {
                    let z = &mut zc[k][base..base + ch.len];
                    base += ch.len;
                    if ch.free_hi == 0 {
                        continue;
                    }
                    dp.r.clear();
                    let mut x = ch.cell(ch.free_lo);
                    for t in ch.free_lo..ch.free_hi {
                        dp.r.push(w[x] - h * (z[t] - z[t - 1]));
                        x = (x as isize + ch.stride) as usize;
                    }
                    let f_l = w[ch.cell(ch.free_lo - 1)];
                    let f_r = w[ch.cell(ch.free_hi)];
                    dp.solve(f_l, f_r, h * a, h * b);
                    dp.duals(f_l, f_r, h, a, b, z[ch.free_lo - 1]);
                    let mut x = ch.cell(ch.free_lo);
                    for &wi in &dp.w {
                        w[x] = wi;
                        x = (x as isize + ch.stride) as usize;
                    }
                    z[ch.free_lo - 1..=ch.free_hi - 1].copy_from_slice(&dp.z);
                }
            }
            if iterations % check == 0 || iterations == self.cfg.max_iters {
                let (div, tv) = self.chain_div_tv(&w, &zc);
                (gap, rel_gap) = gap_terms(&w, d, &div, tv, h, &self.free, self.dom.cell_volume());
                if rel_gap <= self.cfg.tol_gap {
                    break;
                }
            }
        }
        let (div, _) = self.chain_div_tv(&w, &zc);
        let zeta = self.to_cell_order(&zc);
        RofSolution { w, zeta, div, gap, rel_gap, iterations, certified: rel_gap <= self.cfg.tol_gap }
    }
}

#[derive(Clone, Copy, Debug)]
struct Window {
    lo: [usize; 3],
    n: [usize; 3],
    /// whether each side lies inside the grid rather than on its edge
    open: [[bool; 2]; 3],
}

/// Linear-time solver for
/// `min sum_i 1/2 (w_i - r_i)^2 + sum_{i=-1}^{m-1} g(w_{i+1} - w_i)`,
/// `w_{-1} = f_l`, `w_m = f_r`, `g(t) = A t^+ + B t^-`.
///
/// The derivative of the forward value function is piecewise linear and
/// increasing; it is kept as a deque of knots plus the outermost pieces.
#[derive(Default, Debug)]
struct ChainDp {
    r: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    // knots live in knots[head..tail]; each cell pushes at most one knot per side
    knots: Vec<Knot>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Knot {
    pos: f64,
    ds: f64,
    dc: f64,
}

impl ChainDp {
    fn solve(&mut self, f_l: f64, f_r: f64, big_a: f64, big_b: f64) {
        let m = self.r.len();
        self.lo.resize(m, 0.0);
        self.hi.resize(m, 0.0);
        self.knots.resize(2 * m + 3, Knot::default());
        let kn = &mut self.knots[..];
        let mut head = m + 1;
        let mut tail = m + 1;
        let (lower, upper) = (-big_b, big_a);
        // F_0'(x) = (x - r_0) + (-B below f_l, +A above)
        let (mut sl, mut cl) = (1.0, -self.r[0] - big_b);
        let (mut sr, mut cr) = (1.0, -self.r[0] + big_a);
        if big_a + big_b > 0.0 {
            kn[tail] = Knot { pos: f_l, ds: 0.0, dc: big_a + big_b };
            tail += 1;
        }
        for i in 0..m {
            if i > 0 {
                let ri = self.r[i];
                sl += 1.0;
                cl -= ri;
                sr += 1.0;
                cr -= ri;
            }
            // clip below at -B
            let (mut s, mut c) = (sl, cl);
            let xm;
            loop {
                if head == tail {
                    xm = (lower - c) / s;
                    break;
                }
                let k = kn[head];
                if s * k.pos + c >= lower {
                    xm = (lower - c) / s;
                    break;
                }
                s += k.ds;
                c += k.dc;
                head += 1;
                if s * k.pos + c >= lower {
                    xm = k.pos;
                    break;
                }
            }
            if head == tail {
                sr = s;
                cr = c;
            }
            head -= 1;
            kn[head] = Knot { pos: xm, ds: s, dc: c - lower };
            sl = 0.0;
            cl = lower;
            // clip above at +A
            let (mut s, mut c) = (sr, cr);
            let xp;
            loop {
                let k = kn[tail - 1];
                if s * k.pos + c <= upper {
                    xp = if s > 0.0 { (upper - c) / s } else { k.pos };
                    break;
                }
                s -= k.ds;
                c -= k.dc;
                tail -= 1;
                if s * k.pos + c <= upper {
                    xp = k.pos;
                    break;
                }
                if head == tail {
                    xp = if s > 0.0 { (upper - c) / s } else { k.pos };
                    break;
                }
            }
            if head == tail {
                sl = s;
                cl = c;
            }
            kn[tail] = Knot { pos: xp, ds: -s, dc: upper - c };
            tail += 1;
            sr = 0.0;
            cr = upper;
            self.lo[i] = xm;
            self.hi[i] = xp.max(xm);
        }
        self.w.resize(m, 0.0);
        let mut next = f_r;
        for i in (0..m).rev() {
            next = next.clamp(self.lo[i], self.hi[i]);
            self.w[i] = next;
        }
    }

    /// Edge duals `z[0..=m]` (edge j joins w_{j-1} and w_j, with w_{-1} = f_l
    /// and w_m = f_r) from `w_i - r_i = h (z_{i+1} - z_i)` and complementarity.
    fn duals(&mut self, f_l: f64, f_r: f64, h: f64, a: f64, b: f64, old: f64) {
        let m = self.w.len();
        self.z.clear();
        // prefix sums P_j with z_j = z_0 + P_j
        let mut p = 0.0;
        let mut lo = -b;
        let mut hi = a;
        let mut target: Option<f64> = None;
        let scale = 1e-12 * (1.0 + f_l.abs().max(f_r.abs()));
        for j in 0..=m {
            let left = if j == 0 { f_l } else { self.w[j - 1] };
            let right = if j == m { f_r } else { self.w[j] };
            let t = right - left;
            lo = lo.max(-b - p);
            hi = hi.min(a - p);
            if target.is_none() && t.abs() > scale * (1.0 + left.abs()) {
                target = Some(if t > 0.0 { a - p } else { -b - p });
            }
            self.z.push(p);
            if j < m {
                p += (self.w[j] - self.r[j]) / h;
            }
        }
        let z0 = if lo <= hi {
            target.unwrap_or(old).clamp(lo, hi)
        } else {
            0.5 * (lo + hi)
        };
        for v in self.z.iter_mut() {
            *v = (z0 + *v).clamp(-b, a);
        }
    }
}

/// Linear operator `D` with box- or ball-constrained duals.
trait DualOp {
    fn n_dual(&self) -> usize;
    /// `D w`
    fn apply(&self, w: &[f64], out: &mut [f64]);
    /// `div z = -D^T z`
    fn div(&self, z: &[f64], out: &mut [f64]);
    fn project(&self, z: &mut [f64]);
    /// `sum lambda(D w)` (unscaled by cell volume)
    fn penalty(&self, dw: &[f64]) -> f64;
    fn norm_bound(&self) -> f64;
    fn split(&self, z: Vec<f64>) -> Vec<Vec<f64>>;
}

struct GraphOp<'a> {
    scheme: &'a Scheme,
}

impl DualOp for GraphOp<'_> {
    fn n_dual(&self) -> usize {
        self.scheme.stencil.len() * self.scheme.dom.len()
    }

    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let s = self.scheme;
        let n = s.dom.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..s.stencil.len() {
            let lk = s.lin[k];
            for_each_edge(&s.dom, s.stencil.offsets[k], |x| {
                out[k * n + x] = w[(x as isize + lk) as usize] - w[x];
            });
        }
    }

    fn div(&self, z: &[f64], out: &mut [f64]) {
        let s = self.scheme;
        let n = s.dom.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..s.stencil.len() {
            let lk = s.lin[k];
            for_each_edge(&s.dom, s.stencil.offsets[k], |x| {
                let y = (x as isize + lk) as usize;
                out[x] += z[k * n + x];
                out[y] -= z[k * n + x];
            });
        }
    }

    fn project(&self, z: &mut [f64]) {
        let s = self.scheme;
        let n = s.dom.len();
        for k in 0..s.stencil.len() {
            let (a, b) = (s.stencil.a[k], s.stencil.b[k]);
            z[k * n..(k + 1) * n].iter_mut().for_each(|v| *v = v.clamp(-b, a));
        }
    }

    fn penalty(&self, dw: &[f64]) -> f64 {
        let s = self.scheme;
        let n = s.dom.len();
        (0..s.stencil.len())
            .map(|k| dw[k * n..(k + 1) * n].iter().map(|t| s.stencil.lambda(k, *t)).sum::<f64>())
            .sum()
    }

    fn norm_bound(&self) -> f64 {
        (4.0 * self.scheme.stencil.len() as f64).sqrt()
    }

    fn split(&self, z: Vec<f64>) -> Vec<Vec<f64>> {
        z.chunks(self.scheme.dom.len()).map(|c| c.to_vec()).collect()
    }
}

struct ForwardOp<'a> {
    dom: &'a GridDomain,
    phi: &'a Anisotropy,
}

impl DualOp for ForwardOp<'_> {
    fn n_dual(&self) -> usize {
        self.dom.len() * self.dom.dim()
    }

    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let f = ScalarField { domain: self.dom.clone(), values: w.to_vec() };
        out.copy_from_slice(&crate::grid::grad_forward(&f).values);
    }

    fn div(&self, z: &[f64], out: &mut [f64]) {
        let p = VectorField { domain: self.dom.clone(), values: z.to_vec() };
        out.copy_from_slice(&crate::grid::div_backward(&p).values);
    }

    fn project(&self, z: &mut [f64]) {
        let d = self.dom.dim();
        for c in z.chunks_mut(d) {
            if self.phi.dual_unchecked(c) > 1.0 {
                let p = self.phi.project_dual_ball(c).unwrap_or_else(|_| c.to_vec());
                c.copy_from_slice(&p);
            }
        }
    }

    fn penalty(&self, dw: &[f64]) -> f64 {
        dw.chunks(self.dom.dim()).map(|c| self.phi.eval_unchecked(c)).sum()
    }

    fn norm_bound(&self) -> f64 {
        self.dom.spacing().iter().map(|h| 4.0 / (h * h)).sum::<f64>().sqrt()
    }

    fn split(&self, z: Vec<f64>) -> Vec<Vec<f64>> {
        vec![z]
    }
}

/// Gap between the primal value at `w` and the dual value at `z`.
fn gap_flat<O: DualOp>(op: &O, w: &[f64], z: &[f64], d: &[f64], h: f64, free: &[bool], cellvol: f64) -> (f64, f64) {
    let mut dw = vec![0.0; op.n_dual()];
    op.apply(w, &mut dw);
    let tv = op.penalty(&dw);
    let mut div = vec![0.0; w.len()];
    op.div(z, &mut div);
    gap_terms(w, d, &div, tv, h, free, cellvol)
}

fn gap_terms(w: &[f64], d: &[f64], div: &[f64], tv: f64, h: f64, free: &[bool], cellvol: f64) -> (f64, f64) {
    let mut fid = 0.0;
    let mut dual = 0.0;
    for x in 0..w.len() {
        if free[x] {
            fid += 0.5 * (w[x] - d[x]).powi(2);
            let q = h * div[x];
            dual -= d[x] * q + 0.5 * q * q;
        } else {
            dual -= h * d[x] * div[x];
        }
    }
    let primal = h * tv + fid;
    let gap = ((primal - dual) * cellvol).max(0.0);
    let rel = if primal > 0.0 { gap / (primal * cellvol) } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
    (gap, rel)
}

fn primal_dual<O: DualOp>(op: &O, d: &[f64], h: f64, free: &[bool], cfg: &SolverConfig, cellvol: f64) -> RofSolution {
    let n = d.len();
    let l = h * op.norm_bound();
    let mut tau = cfg.tau.unwrap_or(1.0 / l);
    let mut sigma = cfg.sigma.unwrap_or(1.0 / l);
    let mut w = d.to_vec();
    let mut wbar = w.clone();
    let mut z = vec![0.0; op.n_dual()];
    let mut kw = vec![0.0; op.n_dual()];
    let mut div = vec![0.0; n];
    let mut iterations = 0;
    let (mut gap, mut rel_gap) = (f64::INFINITY, f64::INFINITY);
    let check = cfg.check_every.max(1) * 5;
    while iterations < cfg.max_iters {
        iterations += 1;
        op.apply(&wbar, &mut kw);
        for (zi, g) in z.iter_mut().zip(&kw) {
            *zi += sigma * h * g;
        }
        op.project(&mut z);
        op.div(&z, &mut div);
        let theta = 1.0 / (1.0 + 2.0 * tau).sqrt();
        for x in 0..n {
            if !free[x] {
                continue;
            }
            let old = w[x];
            let v = w[x] + tau * h * div[x];
            w[x] = (v + tau * d[x]) / (1.0 + tau);
            wbar[x] = w[x] + theta * (w[x] - old);
        }
        tau *= theta;
        sigma /= theta;
        if iterations % check == 0 || iterations == cfg.max_iters {
            let (g, rg) = gap_flat(op, &w, &z, d, h, free, cellvol);
            gap = g;
            rel_gap = rg;
            if rel_gap <= cfg.tol_gap {
                break;
            }
        }
    }
    op.div(&z, &mut div);
    RofSolution {
        w,
        zeta: op.split(z),
        div,
        gap,
        rel_gap,
        iterations,
        certified: rel_gap <= cfg.tol_gap,
    }
}

/// Largest-minimizer threshold `{w <= level_tol}` (or `{w < -level_tol}`).
pub fn threshold_set(w: &ScalarField, cfg: &SolverConfig) -> Result<IndicatorField> {
    let members = w
        .values
        .iter()
        .map(|v| if cfg.smallest_minimizer { *v < -cfg.level_tol } else { *v <= cfg.level_tol })
        .collect();
    IndicatorField::new(&w.domain, members)
}

/// `(min div z, max(0, min div z))` over cells whose 5^d neighborhood lies in
/// the set. A set without such cells gets `+inf`: like the empty set, it
/// puts no constraint on δ.
pub fn certificate(e: &IndicatorField, div: &[f64]) -> (f64, f64) {
    let core = erode(e, 2);
    let raw = (0..div.len()).filter(|x| core[*x]).map(|x| div[x]).fold(f64::INFINITY, f64::min);
    (raw, raw.max(0.0))
}

/// Cells whose Chebyshev ball of radius `r` (in cells) is inside the set.
pub fn erode(e: &IndicatorField, r: usize) -> Vec<bool> {
    let dom = e.domain();
    let m = e.members();
    let mut cur = m.to_vec();
    let st = dom.strides();
    for a in 0..dom.dim() {
        let mut next = cur.clone();
        for x in 0..dom.len() {
            if !cur[x] {
                continue;
            }
            let i = dom.multi(x);
            for s in 1..=r {
                let lo = i[a] >= s && cur[x - s * st[a]];
                let hi = i[a] + s < dom.cells()[a] && cur[x + s * st[a]];
                if !(lo && hi) {
                    next[x] = false;
                    break;
                }
            }
        }
        cur = next;
    }
    cur
}

fn atw_volume_term(f: &IndicatorField, d: &SignedDistance, h: f64) -> f64 {
    let s: f64 = (0..f.domain().len()).filter(|x| f.contains(*x)).map(|x| d.field.values[x]).sum();
    s * f.domain().cell_volume() / h
}

/// Step objective for any competitor set.
pub fn atw_energy(f: &IndicatorField, d: &SignedDistance, h: f64, phi: &Anisotropy) -> f64 {
    crate::grid::perimeter_phi(f, phi) + atw_volume_term(f, d, h)
}

/// One step from scratch. Prefer [`Scheme`] when stepping repeatedly.
pub fn atw_step(
    e: &IndicatorField,
    h: f64,
    phi: &Anisotropy,
    psi: &Anisotropy,
    cfg: &SolverConfig,
) -> Result<AtwStepResult> {
    let scheme = Scheme::new(e.domain(), phi, psi, h, cfg.clone())?;
    scheme.step(e, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// brute-force minimizer of the 1-D problem by dense coordinate search
    fn chain_objective(w: &[f64], r: &[f64], fl: f64, fr: f64, a: f64, b: f64) -> f64 {
        let g = |t: f64| if t > 0.0 { a * t } else { -b * t };
        let mut s: f64 = w.iter().zip(r).map(|(x, y)| 0.5 * (x - y).powi(2)).sum();
        s += g(w[0] - fl) + g(fr - w[w.len() - 1]);
        for i in 1..w.len() {
            s += g(w[i] - w[i - 1]);
        }
        s
    }

    #[test]
    fn chain_dp_is_optimal_against_perturbations() {
        let r = vec![0.3, -0.2, 0.9, 1.4, 1.3, -0.5, 0.0, 2.0];
        for (a, b) in [(0.2, 0.2), (0.5, 0.1), (0.0, 0.4), (1.5, 1.5)] {
            let mut dp = ChainDp { r: r.clone(), ..Default::default() };
            dp.solve(-0.1, 0.7, a, b);
            let best = chain_objective(&dp.w, &r, -0.1, 0.7, a, b);
            for i in 0..r.len() {
                for eps in [1e-4, -1e-4, 1e-2, -1e-2] {
                    let mut w = dp.w.clone();
                    w[i] += eps;
                    assert!(chain_objective(&w, &r, -0.1, 0.7, a, b) >= best - 1e-12);
                }
            }
            // duals reproduce the residual and stay in the box
            dp.duals(-0.1, 0.7, 1.0, a, b, 0.0);
            for i in 0..r.len() {
                let lhs = dp.w[i] - r[i];
                assert!((lhs - (dp.z[i + 1] - dp.z[i])).abs() < 1e-12, "{a} {b} {i}");
            }
            assert!(dp.z.iter().all(|z| *z <= a + 1e-15 && *z >= -b - 1e-15));
        }
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let dom = GridDomain::centered(2, 1.0, 24).unwrap();
        let eu = Anisotropy::euclidean(2).unwrap();
        let s = Scheme::new(&dom, &eu, &eu, 0.01, SolverConfig::default()).unwrap();
        let d = vec![0.7; dom.len()];
        let sol = s.solve_w(&d, None).unwrap();
        assert!(sol.w.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let w = ScalarField { domain: dom.clone(), values: vec![1.0; dom.len()] };
        assert!(threshold_set(&w, &SolverConfig::default()).unwrap().is_empty());
        let w = ScalarField { domain: dom.clone(), values: vec![-1.0; dom.len()] };
        assert!(matches!(threshold_set(&w, &SolverConfig::default()), Err(AtwError::FrameViolation)));
    }

    #[test]
    fn solvers_agree_on_a_ramp() {
        let dom = GridDomain::centered(2, 1.0, 20).unwrap();
        let eu = Anisotropy::euclidean(2).unwrap();
        let d: Vec<f64> = (0..dom.len()).map(|i| {
            let c = dom.center_of(i);
            c[0] + 0.3 * (c[1] * 3.0).sin()
        }).collect();
        let mut cfg = SolverConfig { tol_gap: 1e-10, max_iters: 200_000, ..Default::default() };
        let a = Scheme::new(&dom, &eu, &eu, 0.05, cfg.clone()).unwrap().solve_w(&d, None).unwrap();
        assert!(a.certified, "{}", a.rel_gap);
        cfg.kind = SolverKind::PrimalDual;
        let b = Scheme::new(&dom, &eu, &eu, 0.05, cfg).unwrap().solve_w(&d, None).unwrap();
        assert!(b.certified, "{}", b.rel_gap);
        let diff = a.w.iter().zip(&b.w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }
}
