//! Naive reference implementations used as test oracles.
//!
//! Everything here is recomputed from cell rectangles and point evaluations
//! of fields: faces come from pairwise intersection of cell sides, the union
//! mesh from the explicit leaf sets, projections from an orthonormal
//! Legendre basis, and the fitting from closed forms. Nothing here calls the
//! library's fitting, face or estimator code.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use dgfit::fem::{DgField, Pointwise};
use dgfit::mesh::{CellKey, Domain, Mesh};

// ---------------------------------------------------------------- quadrature

/// Gauss–Legendre points and weights on [0, 1] by Newton iteration from
/// Chebyshev guesses on the three-term recurrence.
pub fn gauss(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pts = Vec::with_capacity(n);
    let mut wts = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = -(PI * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        let mut dp = 0.0;
        for _ in 0..200 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (pm - x * p) / (1.0 - x * x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-17 {
                break;
            }
        }
        pts.push(0.5 * (x + 1.0));
        wts.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (pts, wts)
}

/// Tensor Gauss points on a box as physical points with weights (area
/// included).
pub fn box_points(b: &Bx, n: usize) -> Vec<([f64; 2], f64)> {
    let (p, w) = gauss(n);
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            out.push(([b.x0 + b.w() * p[i], b.y0 + b.h() * p[j]], w[i] * w[j] * b.w() * b.h()));
        }
    }
    out
}

// ---------------------------------------------------------------- geometry

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bx {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Bx {
    pub fn of_key(d: &Domain, k: &CellKey) -> Bx {
        let n = (1u64 << k.level) as f64;
        let (w, h) = ((d.x1 - d.x0) / n, (d.y1 - d.y0) / n);
        Bx {
            x0: d.x0 + k.i as f64 * w,
            x1: d.x0 + (k.i + 1) as f64 * w,
            y0: d.y0 + k.j as f64 * h,
            y1: d.y0 + (k.j + 1) as f64 * h,
        }
    }
    pub fn w(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn h(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn diam(&self) -> f64 {
        self.w().hypot(self.h())
    }
    pub fn area(&self) -> f64 {
        self.w() * self.h()
    }
    pub fn local(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.x0) / self.w(), (x[1] - self.y0) / self.h()]
    }
    pub fn contains_box(&self, o: &Bx) -> bool {
        let t = 1e-12;
        o.x0 >= self.x0 - t && o.x1 <= self.x1 + t && o.y0 >= self.y0 - t && o.y1 <= self.y1 + t
    }
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [[self.x0, self.y0], [self.x1, self.y0], [self.x0, self.y1], [self.x1, self.y1]]
    }
}

pub fn boxes(mesh: &Mesh) -> Vec<Bx> {
    mesh.cells().iter().map(|k| Bx::of_key(mesh.domain(), k)).collect()
}

/// A face segment `a -> b` with unit normal from `left` to `right`.
#[derive(Clone, Debug)]
pub struct OFace {
    pub left: usize,
    pub right: Option<usize>,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub normal: [f64; 2],
}

impl OFace {
    pub fn len(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }
    pub fn at(&self, s: f64) -> [f64; 2] {
        [self.a[0] + s * (self.b[0] - self.a[0]), self.a[1] + s * (self.b[1] - self.a[1])]
    }
    pub fn cells(&self) -> Vec<usize> {
        std::iter::once(self.left).chain(self.right).collect()
    }
}

/// All faces by pairwise intersection of cell sides; boundary faces are the
/// cell sides on the domain boundary (all treated as Dirichlet).
pub fn faces(bx: &[Bx], d: &Domain) -> Vec<OFace> {
    let t = 1e-12;
    let mut out = Vec::new();
    for i in 0..bx.len() {
        for j in (i + 1)..bx.len() {
            let (p, q) = (&bx[i], &bx[j]);
            for (touch, sign) in [((p.x1 - q.x0).abs() < t, 1.0), ((q.x1 - p.x0).abs() < t, -1.0)] {
                if touch {
                    let (lo, hi) = (p.y0.max(q.y0), p.y1.min(q.y1));
                    if hi - lo > t {
                        let x = if sign > 0.0 { p.x1 } else { p.x0 };
                        out.push(OFace { left: i, right: Some(j), a: [x, lo], b: [x, hi], normal: [sign, 0.0] });
                    }
                }
            }
            for (touch, sign) in [((p.y1 - q.y0).abs() < t, 1.0), ((q.y1 - p.y0).abs() < t, -1.0)] {
                if touch {
                    let (lo, hi) = (p.x0.max(q.x0), p.x1.min(q.x1));
                    if hi - lo > t {
                        let y = if sign > 0.0 { p.y1 } else { p.y0 };
                        out.push(OFace { left: i, right: Some(j), a: [lo, y], b: [hi, y], normal: [0.0, sign] });
                    }
                }
            }
        }
        let p = &bx[i];
        if (p.x0 - d.x0).abs() < t {
            out.push(OFace { left: i, right: None, a: [p.x0, p.y0], b: [p.x0, p.y1], normal: [-1.0, 0.0] });
        }
        if (p.x1 - d.x1).abs() < t {
            out.push(OFace { left: i, right: None, a: [p.x1, p.y0], b: [p.x1, p.y1], normal: [1.0, 0.0] });
        }
        if (p.y0 - d.y0).abs() < t {
            out.push(OFace { left: i, right: None, a: [p.x0, p.y0], b: [p.x1, p.y0], normal: [0.0, -1.0] });
        }
        if (p.y1 - d.y1).abs() < t {
            out.push(OFace { left: i, right: None, a: [p.x0, p.y1], b: [p.x1, p.y1], normal: [0.0, 1.0] });
        }
    }
    out
}

fn key_contains(a: &CellKey, b: &CellKey) -> bool {
    b.level >= a.level && (b.i >> (b.level - a.level)) == a.i && (b.j >> (b.level - a.level)) == a.j
}

/// Leaves of the union of two leaf sets: keys that contain no other key.
pub fn union_leaves(a: &Mesh, b: &Mesh) -> BTreeSet<CellKey> {
    let all: BTreeSet<CellKey> = a.cells().iter().chain(b.cells()).copied().collect();
    all.iter()
        .filter(|k| !all.iter().any(|o| o != *k && key_contains(k, o)))
        .copied()
        .collect()
}

/// Index of the box containing `inner`.
pub fn host(bx: &[Bx], inner: &Bx) -> usize {
    bx.iter().position(|b| b.contains_box(inner)).expect("host cell")
}

/// Field evaluated at a physical point of a cell (given by its box).
pub fn eval(u: &DgField, cell: usize, b: &Bx, x: [f64; 2]) -> Pointwise {
    u.at(cell, b.local(x))
}

// ---------------------------------------------------------------- coefficients

pub type VecFn = Arc<dyn Fn([f64; 2]) -> ([f64; 2], f64) + Send + Sync>;
pub type EtaFn = Arc<dyn Fn([f64; 2]) -> (f64, [f64; 2], f64) + Send + Sync>;
pub type TimeFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ODelta {
    Auto,
    Fixed(f64),
    Zero,
}

/// Closed-form fitting data: `b`, `div b`, `eta`, `grad eta`, `lap eta`.
#[derive(Clone)]
pub struct OFit {
    pub alpha: f64,
    pub eps: f64,
    pub delta: ODelta,
    pub b: VecFn,
    pub eta: EtaFn,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OPt {
    pub omega: f64,
    pub gomega: [f64; 2],
    pub geta: [f64; 2],
    pub b: [f64; 2],
    pub bt: [f64; 2],
    pub x: f64,
    pub delta: f64,
    pub l: f64,
}

fn nrm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn dotp(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl OFit {
    fn combine(&self, b: [f64; 2], divb: f64, eta: f64, ge: [f64; 2], le: f64) -> OPt {
        let (a, e) = (self.alpha, self.eps);
        let omega = (-a * eta).exp();
        let bt = [b[0] - a * e * ge[0], b[1] - a * e * ge[1]];
        // (alpha grad eta - grad) . btilde
        let x = a * dotp(ge, bt) - (divb - a * e * le);
        let delta = match self.delta {
            ODelta::Auto => {
                if x < 0.0 {
                    -2.0 * x
                } else {
                    0.0
                }
            }
            ODelta::Fixed(d) => d,
            ODelta::Zero => 0.0,
        };
        OPt {
            omega,
            gomega: [-a * omega * ge[0], -a * omega * ge[1]],
            geta: ge,
            b,
            bt,
            x,
            delta,
            l: delta + x / 2.0,
        }
    }

    pub fn at(&self, x: [f64; 2]) -> OPt {
        let (b, divb) = (self.b)(x);
        let (eta, ge, le) = (self.eta)(x);
        self.combine(b, divb, eta, ge, le)
    }

    /// Fitting of the coefficients interpolated linearly in time.
    pub fn lerp(prev: &OFit, next: &OFit, th: f64, x: [f64; 2]) -> OPt {
        let (bp, dp) = (prev.b)(x);
        let (bn, dn) = (next.b)(x);
        let (ep, gp, lp) = (prev.eta)(x);
        let (en, gn, ln) = (next.eta)(x);
        let m = |a: f64, b: f64| (1.0 - th) * a + th * b;
        next.combine(
            [m(bp[0], bn[0]), m(bp[1], bn[1])],
            m(dp, dn),
            m(ep, en),
            [m(gp[0], gn[0]), m(gp[1], gn[1])],
            m(lp, ln),
        )
    }
}

// ---------------------------------------------------------------- weights

const LTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default)]
pub struct OCell {
    pub h: f64,
    pub wmax: f64,
    pub wmin: f64,
    pub gwmax: f64,
    pub lmin: f64,
    pub lwmax: f64,
    pub wlmax: f64,
    pub btmax: f64,
    pub rate: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn cell_weights(fit: &OFit, b: &Bx, nq: usize) -> OCell {
    let pts: Vec<[f64; 2]> = box_points(b, nq).into_iter().map(|p| p.0).chain(b.corners()).collect();
    let mut c = OCell {
        h: b.diam(),
        wmin: f64::INFINITY,
        lmin: f64::INFINITY,
        ..Default::default()
    };
    for x in pts {
        let p = fit.at(x);
        let l = p.l.max(0.0);
        c.wmax = c.wmax.max(p.omega);
        c.wmin = c.wmin.min(p.omega);
        c.gwmax = c.gwmax.max(nrm(p.gomega));
        c.lmin = c.lmin.min(l);
        c.lwmax = c.lwmax.max(p.omega.sqrt() * l);
        c.wlmax = c.wlmax.max(if l > LTOL { p.omega / l } else { f64::INFINITY });
        c.btmax = c.btmax.max(nrm(p.bt));
        let r = if p.delta == 0.0 { 0.0 } else { p.delta * p.delta / p.l };
        c.rate = c.rate.max(r);
    }
    let e = fit.eps;
    let unweighted = (c.wmin - 1.0).abs() <= 1e-12 && (c.wmax - 1.0).abs() <= 1e-12;
    c.lambda = if unweighted {
        1.0 / e.sqrt()
    } else if c.lmin <= LTOL {
        c.wmax / e.sqrt()
    } else {
        f64::max(c.gwmax / c.lmin.sqrt(), c.wmax / e.sqrt())
    };
    let first = if c.lmin <= LTOL { f64::INFINITY } else { c.wmax / c.lmin.sqrt() };
    c.beta = first.min(c.h * c.lambda) / c.wmin.sqrt();
    c.gamma = c.lambda * c.lambda / c.wmin;
    c
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OFaceW {
    pub beta_p: f64,
    pub gamma_p: f64,
    pub wmax_p: f64,
    pub betamax_p: f64,
    pub lw_p: f64,
    pub lmin_p: f64,
    pub wl_p: f64,
    pub bt_p: f64,
    pub wmax_f: f64,
    pub ge_f: f64,
    pub b_f: f64,
}

pub fn face_weights(fit: &OFit, f: &OFace, cells: &[OCell], nq: usize) -> OFaceW {
    let mut w = OFaceW {
        beta_p: f64::INFINITY,
        lmin_p: f64::INFINITY,
        ..Default::default()
    };
    for k in f.cells() {
        let c = &cells[k];
        w.beta_p = w.beta_p.min(c.h * c.lambda * c.lambda / c.wmin);
        w.gamma_p = w.gamma_p.max(c.gamma);
        w.wmax_p = w.wmax_p.max(c.wmax);
        w.betamax_p = w.betamax_p.max(c.beta);
        w.lw_p = w.lw_p.max(c.lwmax);
        w.lmin_p = w.lmin_p.min(c.lmin);
        w.wl_p = w.wl_p.max(c.wlmax);
        w.bt_p = w.bt_p.max(c.btmax);
    }
    let (ps, _) = gauss(nq);
    for s in ps.into_iter().chain([0.0, 1.0]) {
        let p = fit.at(f.at(s));
        w.wmax_f = w.wmax_f.max(p.omega);
        w.ge_f = w.ge_f.max(nrm(p.geta));
        w.b_f = w.b_f.max(nrm(p.b));
    }
    w
}

/// Coefficient of `||[u]||^2_F`; `indicator` selects the marking variant.
pub fn jump_coef(w: &OFaceW, h: f64, eps: f64, sigma: f64, alpha: f64, indicator: bool) -> f64 {
    let g2 = w.ge_f * w.ge_f;
    let bound_part = alpha * alpha * eps * g2 * w.betamax_p * w.betamax_p / w.wmax_f;
    let third = if indicator && w.lmin_p > LTOL {
        w.wmax_f * alpha * alpha * eps * g2 / w.lmin_p
    } else {
        bound_part
    };
    (sigma * eps / h) * (w.wmax_p + w.gamma_p * sigma * eps + third)
        + w.beta_p * w.b_f * w.b_f
        + h * w.lw_p
        + w.wmax_p * h / eps * w.bt_p * w.bt_p
}

// ---------------------------------------------------------------- projections

fn leg(n: usize, t: f64) -> f64 {
    // orthonormal Legendre on [0, 1]
    let x = 2.0 * t - 1.0;
    let (mut p0, mut p1) = (1.0, x);
    let p = match n {
        0 => 1.0,
        1 => x,
        _ => {
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    };
    p * ((2 * n + 1) as f64).sqrt()
}

/// Q_k projection on a box from quadrature on sub-boxes it is tiled by.
#[derive(Clone, Debug)]
pub struct LegendreProj {
    pub bx: Bx,
    pub k: usize,
    pub c: Vec<f64>,
}

impl LegendreProj {
    pub fn new(bx: Bx, k: usize, subs: &[Bx], nq: usize, g: &dyn Fn(usize, [f64; 2]) -> f64) -> Self {
        let mut c = vec![0.0; (k + 1) * (k + 1)];
        for (si, s) in subs.iter().enumerate() {
            for (x, w) in box_points(s, nq) {
                let r = bx.local(x);
                let gv = g(si, x);
                for j in 0..=k {
                    for i in 0..=k {
                        c[j * (k + 1) + i] += w * gv * leg(i, r[0]) * leg(j, r[1]);
                    }
                }
            }
        }
        for v in &mut c {
            *v /= bx.area();
        }
        LegendreProj { bx, k, c }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let r = self.bx.local(x);
        let k = self.k;
        let mut s = 0.0;
        for j in 0..=k {
            for i in 0..=k {
                s += self.c[j * (k + 1) + i] * leg(i, r[0]) * leg(j, r[1]);
            }
        }
        s
    }
}

/// Gauss–Lobatto nodes on [0, 1] for degree 1 to 3.
pub fn lobatto(k: usize) -> Vec<f64> {
    match k {
        1 => vec![0.0, 1.0],
        2 => vec![0.0, 0.5, 1.0],
        3 => {
            let a = 0.5 * (1.0 - 1.0 / 5f64.sqrt());
            vec![0.0, a, 1.0 - a, 1.0]
        }
        _ => panic!("oracle supports degrees 1 to 3"),
    }
}

fn lagrange(nodes: &[f64], i: usize, t: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, n)| (t - n) / (nodes[i] - n))
        .product()
}

/// Tensor Lagrange interpolant of `g` at Lobatto nodes of a box.
pub fn interpolate_at(bx: &Bx, k: usize, g: &dyn Fn([f64; 2]) -> f64, x: [f64; 2]) -> f64 {
    let nodes = lobatto(k);
    let r = bx.local(x);
    let mut s = 0.0;
    for (j, nj) in nodes.iter().enumerate() {
        for (i, ni) in nodes.iter().enumerate() {
            let p = [bx.x0 + bx.w() * ni, bx.y0 + bx.h() * nj];
            s += g(p) * lagrange(&nodes, i, r[0]) * lagrange(&nodes, j, r[1]);
        }
    }
    s
}

// ---------------------------------------------------------------- estimators

/// Squared per-cell groups (residual, flux, jump).
#[derive(Clone, Debug)]
pub struct OInd {
    pub res: Vec<f64>,
    pub flux: Vec<f64>,
    pub jump: Vec<f64>,
}

impl OInd {
    pub fn total_sq(&self) -> f64 {
        self.res.iter().chain(&self.flux).chain(&self.jump).sum()
    }
}

pub struct Problem {
    pub eps: f64,
    pub sigma: f64,
    pub source: TimeFn,
    pub dirichlet: TimeFn,
}

/// Stationary-type indicator on `mesh` with residual operand `operand(c, x)`.
#[allow(clippy::too_many_arguments)]
pub fn residual_indicator(
    u: &DgField,
    fit: &OFit,
    pb: &Problem,
    operand: &dyn Fn(usize, [f64; 2]) -> f64,
    t: f64,
    nq: usize,
    indicator: bool,
) -> OInd {
    let mesh = u.mesh();
    let bx = boxes(mesh);
    let fcs = faces(&bx, mesh.domain());
    let cw: Vec<OCell> = bx.iter().map(|b| cell_weights(fit, b, nq)).collect();
    let n = bx.len();
    let mut out = OInd { res: vec![0.0; n], flux: vec![0.0; n], jump: vec![0.0; n] };
    for c in 0..n {
        let mut s = 0.0;
        for (x, w) in box_points(&bx[c], nq) {
            let p = fit.at(x);
            let v = eval(u, c, &bx[c], x);
            let r = operand(c, x) + pb.eps * v.lap - dotp(p.b, v.grad) - p.delta * v.value;
            s += w * r * r;
        }
        out.res[c] = cw[c].beta * cw[c].beta * s;
    }
    let (gp, gw) = gauss(nq);
    for f in &fcs {
        let fw = face_weights(fit, f, &cw, nq);
        let len = f.len();
        let (mut j2, mut q2) = (0.0, 0.0);
        for (s, w) in gp.iter().zip(&gw) {
            let x = f.at(*s);
            let lv = eval(u, f.left, &bx[f.left], x);
            match f.right {
                Some(r) => {
                    let rv = eval(u, r, &bx[r], x);
                    let j = lv.value - rv.value;
                    let q = pb.eps * (dotp(lv.grad, f.normal) - dotp(rv.grad, f.normal));
                    j2 += w * len * j * j;
                    q2 += w * len * q * q;
                }
                None => {
                    let j = lv.value - (pb.dirichlet)(x, t);
                    j2 += w * len * j * j;
                }
            }
        }
        let cj = jump_coef(&fw, len, fit.eps, pb.sigma, fit.alpha, indicator) * j2;
        match f.right {
            Some(r) => {
                out.flux[f.left] += 0.5 * fw.beta_p * q2;
                out.flux[r] += 0.5 * fw.beta_p * q2;
                let share = if indicator { cj } else { 0.5 * cj };
                out.jump[f.left] += share;
                out.jump[r] += share;
            }
            None => out.jump[f.left] += cj,
        }
    }
    out
}

pub fn stationary(u: &DgField, fit: &OFit, pb: &Problem, t: f64, nq: usize) -> OInd {
    let src = pb.source.clone();
    residual_indicator(u, fit, pb, &move |_, x| src(x, t), t, nq, false)
}

pub fn kelly(u: &DgField, eps: f64, nq: usize) -> Vec<f64> {
    let mesh = u.mesh();
    let bx = boxes(mesh);
    let mut out = vec![0.0; bx.len()];
    let (gp, gw) = gauss(nq);
    for f in faces(&bx, mesh.domain()) {
        let Some(r) = f.right else { continue };
        let len = f.len();
        let mut q2 = 0.0;
        for (s, w) in gp.iter().zip(&gw) {
            let x = f.at(*s);
            let a = eval(u, f.left, &bx[f.left], x).grad;
            let b = eval(u, r, &bx[r], x).grad;
            let q = eps * (dotp(a, f.normal) - dotp(b, f.normal));
            q2 += w * len * q * q;
        }
        out[f.left] += 0.5 * len * q2;
        out[r] += 0.5 * len * q2;
    }
    out.into_iter().map(f64::sqrt).collect()
}

pub fn weighted_jump(u: &DgField, fit: &OFit, pb: &Problem, t: f64, nq: usize) -> f64 {
    let mesh = u.mesh();
    let bx = boxes(mesh);
    let cw: Vec<OCell> = bx.iter().map(|b| cell_weights(fit, b, nq)).collect();
    let (gp, gw) = gauss(nq);
    let mut total = 0.0;
    for f in faces(&bx, mesh.domain()) {
        let wmax = f.cells().iter().map(|c| cw[*c].wmax).fold(0.0, f64::max);
        let len = f.len();
        let mut j2 = 0.0;
        for (s, w) in gp.iter().zip(&gw) {
            let x = f.at(*s);
            let l = eval(u, f.left, &bx[f.left], x).value;
            let r = match f.right {
                Some(r) => eval(u, r, &bx[r], x).value,
                None => (pb.dirichlet)(x, t),
            };
            j2 += w * len * (l - r) * (l - r);
        }
        total += wmax * len * j2;
    }
    total
}

/// Marking indicator with the nodal interpolant of `f + delta u` in the
/// residual operand.
pub fn local(u: &DgField, u_prev: &DgField, dt: f64, fit: &OFit, pb: &Problem, t: f64, nq: usize) -> Vec<f64> {
    let mesh = u.mesh();
    let bx = boxes(mesh);
    let k = u.degree();
    let op = |c: usize, x: [f64; 2]| {
        let b = &bx[c];
        let g = |y: [f64; 2]| (pb.source)(y, t) + fit.at(y).delta * eval(u, c, b, y).value;
        interpolate_at(b, k, &g, x) - (eval(u, c, b, x).value - eval(u_prev, c, b, x).value) / dt
    };
    let ind = residual_indicator(u, fit, pb, &op, t, nq, true);
    (0..bx.len()).map(|c| (ind.res[c] + ind.flux[c] + ind.jump[c]).sqrt()).collect()
}

/// Squared per-step terms and the Gronwall rate.
#[derive(Clone, Debug)]
pub struct OStep {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub t1: f64,
    pub t2: f64,
    pub rate: f64,
}

pub struct StepData<'a> {
    pub u_prev: &'a DgField,
    pub u_prev_proj: &'a DgField,
    pub u_next: &'a DgField,
    pub a_prev: &'a DgField,
    pub fit_prev: &'a OFit,
    pub fit_next: &'a OFit,
    /// the two fittings are the same time-independent object
    pub same: bool,
    pub pb: &'a Problem,
    pub tp: f64,
    pub tn: f64,
    pub nq: usize,
}

pub fn step(d: &StepData) -> OStep {
    let (tp, tn, nq) = (d.tp, d.tn, d.nq);
    let dt = tn - tp;
    let mn = d.u_next.mesh();
    let mp = d.u_prev.mesh();
    let bn = boxes(mn);
    let bp = boxes(mp);
    let union: Vec<Bx> = union_leaves(mp, mn).iter().map(|k| Bx::of_key(mn.domain(), k)).collect();
    let hn: Vec<usize> = union.iter().map(|u| host(&bn, u)).collect();
    let hp: Vec<usize> = union.iter().map(|u| host(&bp, u)).collect();
    let k = d.u_next.degree();
    let un = |c: usize, x: [f64; 2]| eval(d.u_next, hn[c], &bn[hn[c]], x);
    let up = |c: usize, x: [f64; 2]| eval(d.u_prev, hp[c], &bp[hp[c]], x);

    // residual operand on mesh n
    let proj_fd: Vec<LegendreProj> = (0..bn.len())
        .map(|c| {
            let g = |_: usize, x: [f64; 2]| {
                (d.pb.source)(x, tn) + d.fit_next.at(x).delta * eval(d.u_next, c, &bn[c], x).value
            };
            LegendreProj::new(bn[c], k, &[bn[c]], nq, &g)
        })
        .collect();
    let a_n = |c: usize, x: [f64; 2]| {
        proj_fd[c].eval(x)
            - (eval(d.u_next, c, &bn[c], x).value - eval(d.u_prev_proj, c, &bn[c], x).value) / dt
    };
    let s1 = residual_indicator(d.u_next, d.fit_next, d.pb, &a_n, tn, nq, false).total_sq();
    let s3 = weighted_jump(d.u_next, d.fit_next, d.pb, tn, nq);

    let cw_p: Vec<OCell> = union.iter().map(|b| cell_weights(d.fit_prev, b, nq)).collect();
    let cw_n: Vec<OCell> = union.iter().map(|b| cell_weights(d.fit_next, b, nq)).collect();
    let eps = d.fit_next.eps;

    // S2
    let g = |c: usize, x: [f64; 2]| (d.pb.source)(x, tn) + d.fit_next.at(x).delta * un(c, x).value + up(c, x).value / dt;
    let proj_g: Vec<LegendreProj> = (0..bn.len())
        .map(|kc| {
            let subs: Vec<usize> = (0..union.len()).filter(|u| hn[*u] == kc).collect();
            let sb: Vec<Bx> = subs.iter().map(|u| union[*u]).collect();
            let gg = |si: usize, x: [f64; 2]| g(subs[si], x);
            LegendreProj::new(bn[kc], k, &sb, nq, &gg)
        })
        .collect();
    let mut s2 = 0.0;
    for c in 0..union.len() {
        let mut e = 0.0;
        for (x, w) in box_points(&union[c], nq) {
            let v = g(c, x) - proj_g[hn[c]].eval(x);
            e += w * v * v;
        }
        s2 += cw_p[c].beta.powi(2).max(cw_n[c].beta.powi(2)) * e;
    }

    // S4
    let (gp, gw) = gauss(nq);
    let mut s4 = 0.0;
    for f in faces(&union, mn.domain()) {
        let len = f.len();
        let mut j2 = 0.0;
        for (s, w) in gp.iter().zip(&gw) {
            let x = f.at(*s);
            let diff = |c: usize| un(c, x).value - up(c, x).value;
            let j = match f.right {
                Some(r) => diff(f.left) - diff(r),
                None => diff(f.left) - ((d.pb.dirichlet)(x, tn) - (d.pb.dirichlet)(x, tp)),
            } / dt;
            j2 += w * len * j * j;
        }
        let cells = f.cells();
        let wl = cells
            .iter()
            .map(|c| cw_p[*c].wlmax.max(cw_n[*c].wlmax))
            .fold(0.0, f64::max);
        let wm = cells
            .iter()
            .map(|c| cw_p[*c].wmax.max(cw_n[*c].wmax))
            .fold(0.0, f64::max);
        s4 += wl.min(wm / eps) * len * j2;
    }

    // T1, T2 with three Gauss points in time
    let (tq, tw) = gauss(3);
    let (mut t1, mut t2) = (0.0, 0.0);
    let ap = |c: usize, x: [f64; 2]| eval(d.a_prev, hp[c], &bp[hp[c]], x).value;
    for c in 0..union.len() {
        for (x, w) in box_points(&union[c], nq) {
            let pn = d.fit_next.at(x);
            let pp = d.fit_prev.at(x);
            let om = pn.omega.max(pp.omega);
            let inv = |p: &OPt| p.omega * if p.l > 0.0 { (1.0 / p.l).min(1.0 / eps) } else { 1.0 / eps };
            let cf = inv(&pn).max(inv(&pp));
            let (vn, vp) = (un(c, x).value, up(c, x).value);
            let an = a_n(hn[c], x);
            let apv = ap(c, x);
            for (th, wt) in tq.iter().zip(&tw) {
                let s = tp + th * dt;
                let (ln, lp) = (*th, 1.0 - th);
                let ps = if d.same { d.fit_next.at(x) } else { OFit::lerp(d.fit_prev, d.fit_next, *th, x) };
                let m = [
                    ln * (pn.b[0] - ps.b[0]) * vn + lp * (pp.b[0] - ps.b[0]) * vp,
                    ln * (pn.b[1] - ps.b[1]) * vn + lp * (pp.b[1] - ps.b[1]) * vp,
                ];
                t1 += wt * w * om * (m[0] * m[0] + m[1] * m[1]) / eps;
                let a = d.fit_next.alpha;
                let th_n = pn.delta - ps.delta + 0.5 * a * (dotp(pn.geta, pn.bt) - dotp(ps.geta, ps.bt));
                let th_p = pp.delta - ps.delta + 0.5 * a * (dotp(pp.geta, pp.bt) - dotp(ps.geta, ps.bt));
                let r = (d.pb.source)(x, s) - (d.pb.source)(x, tn) + ps.delta * (ln * vn + lp * vp) - pn.delta * vn
                    + lp * (an - apv)
                    + ln * th_n * vn
                    + lp * th_p * vp;
                t2 += wt * w * cf * r * r;
            }
        }
    }
    let rate = cw_p.iter().chain(&cw_n).map(|c| c.rate).fold(0.0, f64::max);
    OStep { s1, s2, s3, s4, t1, t2, rate }
}

/// Relative agreement `|a - b| <= tol max(|a|, |b|)`, with an absolute floor
/// for values at rounding level of a reference scale.
pub fn close(a: f64, b: f64, tol: f64, scale: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-14 * scale
}
