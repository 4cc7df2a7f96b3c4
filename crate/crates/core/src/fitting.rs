//! Exponential fitting: the potential, the weight `omega = exp(-alpha eta)`,
//! the reaction-like quantities `L`, `M`, the artificial reaction `delta`,
//! and the cell and face weights used by the estimator.
//!
//! With `bt = b - alpha eps grad eta` and
//! `X = alpha grad eta . bt - div bt` we use `L = delta + X / 2`,
//! `M = delta + X` and, by default, `delta = max(0, -2 X)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cg::{solve_poisson_dirichlet0, CgField, CgSpace};
use crate::coef::{Convection, Point, Potential};
use crate::error::{Error, Result};
use crate::ipdg::Weight;
use crate::mesh::{Face, Mesh};
use crate::quadrature::{gauss_legendre, Rule1d, Rule2d};

/// Cell infima of `L` at or below this are treated as a vanishing `L`.
pub const L_ZERO_TOL: f64 = 1e-12;

/// How the artificial reaction is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum DeltaPolicy {
    /// pointwise minimum keeping `L >= 0`
    Auto,
    Fixed(f64),
    Zero,
}

/// Sign convention of the discrete potential problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialSign {
    /// `(grad eta, grad v) = (div b, v)`
    #[default]
    Standard,
    /// `(grad eta, grad v) = -(div b, v)`
    Flipped,
}

/// All pointwise fitting quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FitPoint {
    pub omega: f64,
    pub grad_omega: [f64; 2],
    pub grad_eta: [f64; 2],
    pub lap_eta: f64,
    pub b: [f64; 2],
    pub div_b: f64,
    pub btilde: [f64; 2],
    pub x: f64,
    pub delta: f64,
    pub l: f64,
    pub m: f64,
}

impl FitPoint {
    /// `delta^2 / L`, zero where `delta` vanishes.
    pub fn gronwall_rate(&self) -> f64 {
        if self.delta == 0.0 {
            0.0
        } else if self.l > 0.0 {
            self.delta * self.delta / self.l
        } else {
            f64::INFINITY
        }
    }
}

/// Pointwise description of the fitting for one convection field.
#[derive(Clone, Debug)]
pub struct Fitting {
    pub alpha: f64,
    /// diffusivity seen by the fitting and the estimator
    pub epsilon: f64,
    pub convection: Convection,
    pub potential: Potential,
    pub delta: DeltaPolicy,
}

pub fn combine_pointwise(
    alpha: f64,
    eps: f64,
    policy: DeltaPolicy,
    eta: crate::coef::PotentialValue,
    b: [f64; 2],
    div_b: f64,
) -> FitPoint {
    let omega = (-alpha * eta.eta).exp();
    let grad_omega = [-alpha * omega * eta.grad[0], -alpha * omega * eta.grad[1]];
    let btilde = [b[0] - alpha * eps * eta.grad[0], b[1] - alpha * eps * eta.grad[1]];
    let div_bt = div_b - alpha * eps * eta.lap;
    let x = alpha * (eta.grad[0] * btilde[0] + eta.grad[1] * btilde[1]) - div_bt;
    let delta = match policy {
        DeltaPolicy::Auto => (-2.0 * x).max(0.0),
        DeltaPolicy::Fixed(d) => d,
        DeltaPolicy::Zero => 0.0,
    };
    FitPoint {
        omega,
        grad_omega,
        grad_eta: eta.grad,
        lap_eta: eta.lap,
        b,
        div_b,
        btilde,
        x,
        delta,
        l: delta + 0.5 * x,
        m: delta + x,
    }
}

impl Fitting {
    pub fn new(alpha: f64, epsilon: f64, convection: Convection, potential: Potential, delta: DeltaPolicy) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidCoefficients(format!("fitting strength must be >= 0, got {alpha}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidCoefficients(format!(
                "estimator diffusivity must be positive, got {epsilon}"
            )));
        }
        if let DeltaPolicy::Fixed(d) = delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidCoefficients(format!("artificial reaction must be >= 0, got {d}")));
            }
        }
        Ok(Fitting {
            alpha,
            epsilon,
            convection,
            potential,
            delta,
        })
    }

    pub fn at(&self, p: &Point) -> FitPoint {
        let cv = self.convection.eval(p);
        let eta = self.potential.eval(p);
        combine_pointwise(self.alpha, self.epsilon, self.delta, eta, cv.b, cv.div)
    }

    /// Pointwise fitting of the linear-in-time interpolant between `prev`
    /// (at `lp = 1 - theta`) and `next` (at `theta`).
    pub fn interpolated(prev: &Fitting, next: &Fitting, theta: f64, p: &Point) -> FitPoint {
        let a = prev.at(p);
        let b = next.at(p);
        let lerp = |x: f64, y: f64| (1.0 - theta) * x + theta * y;
        let eta_prev = prev.potential.eval(p);
        let eta_next = next.potential.eval(p);
        let eta = crate::coef::PotentialValue {
            eta: lerp(eta_prev.eta, eta_next.eta),
            grad: [lerp(a.grad_eta[0], b.grad_eta[0]), lerp(a.grad_eta[1], b.grad_eta[1])],
            lap: lerp(a.lap_eta, b.lap_eta),
        };
        combine_pointwise(
            next.alpha,
            next.epsilon,
            next.delta,
            eta,
            [lerp(a.b[0], b.b[0]), lerp(a.b[1], b.b[1])],
            lerp(a.div_b, b.div_b),
        )
    }
}

impl Weight for Fitting {
    fn weight(&self, p: &Point) -> (f64, [f64; 2]) {
        let f = self.at(p);
        (f.omega, f.grad_omega)
    }
}

/// Sup/inf data of one cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellWeights {
    pub h: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub grad_omega_max: f64,
    pub l_min: f64,
    /// sup of `sqrt(omega) |L|`
    pub l_weighted_max: f64,
    /// sup of `omega / L`, infinite where `L` vanishes
    pub omega_over_l_max: f64,
    pub btilde_max: f64,
    pub b_max: f64,
    pub gronwall_max: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Patch data of one face (patch = the cells sharing it).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FaceWeights {
    pub beta_patch: f64,
    pub gamma_patch: f64,
    pub omega_max_patch: f64,
    pub beta_max_patch: f64,
    pub l_weighted_max_patch: f64,
    pub l_min_patch: f64,
    pub omega_over_l_patch: f64,
    pub btilde_max_patch: f64,
    pub omega_max_face: f64,
    pub grad_eta_max_face: f64,
    pub b_max_face: f64,
    pub peclet: f64,
}

/// Fitting evaluated on a mesh at one time.
#[derive(Clone, Debug)]
pub struct FittingData {
    pub fitting: Arc<Fitting>,
    pub mesh: Arc<Mesh>,
    pub t: f64,
    pub cells: Vec<CellWeights>,
    pub faces: Vec<FaceWeights>,
}

/// Sample points of a cell: Gauss points of the given rule and the corners.
pub fn cell_samples(rule: &Rule2d) -> Vec<[f64; 2]> {
    let mut pts = rule.points.clone();
    pts.extend([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    pts
}

/// Sample parameters of a face: Gauss points and the two endpoints.
pub fn face_samples(rule: &Rule1d) -> Vec<f64> {
    let mut s = rule.points.clone();
    s.extend([0.0, 1.0]);
    s
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// `lambda_K` from the cell extrema.
pub fn lambda_from(omega_min: f64, omega_max: f64, grad_omega_max: f64, l_min: f64, eps: f64) -> f64 {
    if (omega_min - 1.0).abs() <= 1e-12 && (omega_max - 1.0).abs() <= 1e-12 {
        eps.powf(-0.5)
    } else if l_min <= L_ZERO_TOL {
        omega_max / eps.sqrt()
    } else {
        (grad_omega_max / l_min.sqrt()).max(omega_max / eps.sqrt())
    }
}

/// `beta_K` from the cell extrema and `lambda_K`.
pub fn beta_from(omega_min: f64, omega_max: f64, l_min: f64, h: f64, lambda: f64) -> f64 {
    let first = if l_min <= L_ZERO_TOL {
        f64::INFINITY
    } else {
        omega_max / l_min.sqrt()
    };
    first.min(h * lambda) / omega_min.sqrt()
}

impl FittingData {
    pub fn new(fitting: Arc<Fitting>, mesh: Arc<Mesh>, t: f64, nq: usize) -> Result<Self> {
        let rule = Rule2d::tensor(&gauss_legendre(nq));
        let samples = cell_samples(&rule);
        let eps = fitting.epsilon;
        let mut cells = Vec::with_capacity(mesh.n_cells());
        for c in 0..mesh.n_cells() {
            let mut w = CellWeights {
                h: mesh.h(c),
                omega_min: f64::INFINITY,
                l_min: f64::INFINITY,
                ..Default::default()
            };
            for r in &samples {
                let fp = fitting.at(&Point::new(&mesh, c, *r, t));
                if !(fp.omega.is_finite() && fp.l.is_finite()) {
                    return Err(Error::NonFinite(format!("fitting at {:?}", mesh.rect(c).map(*r))));
                }
                if fp.l < -1e-10 * (1.0 + fp.x.abs() + fp.delta) {
                    return Err(Error::InvalidCoefficients(format!(
                        "L = {} < 0 at {:?}; increase the artificial reaction",
                        fp.l,
                        mesh.rect(c).map(*r)
                    )));
                }
                let l = fp.l.max(0.0);
                w.omega_max = w.omega_max.max(fp.omega);
                w.omega_min = w.omega_min.min(fp.omega);
                w.grad_omega_max = w.grad_omega_max.max(norm2(fp.grad_omega));
                w.l_min = w.l_min.min(l);
                w.l_weighted_max = w.l_weighted_max.max(fp.omega.sqrt() * l);
                w.omega_over_l_max = w.omega_over_l_max.max(if l > L_ZERO_TOL {
                    fp.omega / l
                } else {
                    f64::INFINITY
                });
                w.btilde_max = w.btilde_max.max(norm2(fp.btilde));
                w.b_max = w.b_max.max(norm2(fp.b));
                w.gronwall_max = w.gronwall_max.max(fp.gronwall_rate());
            }
            w.lambda = lambda_from(w.omega_min, w.omega_max, w.grad_omega_max, w.l_min, eps);
            w.beta = beta_from(w.omega_min, w.omega_max, w.l_min, w.h, w.lambda);
            w.gamma = w.lambda * w.lambda / w.omega_min;
            cells.push(w);
        }
        let frule = gauss_legendre(nq);
        let fs = face_samples(&frule);
        let faces = mesh
            .faces()
            .iter()
            .map(|f| face_weights(&fitting, &mesh, f, &cells, &fs, t))
            .collect();
        Ok(FittingData {
            fitting,
            mesh,
            t,
            cells,
            faces,
        })
    }

    /// `max over cells of sup delta^2 / L`.
    pub fn gronwall_rate(&self) -> f64 {
        self.cells.iter().map(|c| c.gronwall_max).fold(0.0, f64::max)
    }

    pub fn epsilon(&self) -> f64 {
        self.fitting.epsilon
    }
}

fn face_weights(
    fitting: &Fitting,
    mesh: &Mesh,
    f: &Face,
    cells: &[CellWeights],
    samples: &[f64],
    t: f64,
) -> FaceWeights {
    let patch: Vec<&CellWeights> = f.cells().map(|c| &cells[c]).collect();
    let mut fw = FaceWeights {
        beta_patch: f64::INFINITY,
        l_min_patch: f64::INFINITY,
        ..Default::default()
    };
    for w in &patch {
        fw.beta_patch = fw.beta_patch.min(w.h / w.omega_min * w.lambda * w.lambda);
        fw.gamma_patch = fw.gamma_patch.max(w.gamma);
        fw.omega_max_patch = fw.omega_max_patch.max(w.omega_max);
        fw.beta_max_patch = fw.beta_max_patch.max(w.beta);
        fw.l_weighted_max_patch = fw.l_weighted_max_patch.max(w.l_weighted_max);
        fw.l_min_patch = fw.l_min_patch.min(w.l_min);
        fw.omega_over_l_patch = fw.omega_over_l_patch.max(w.omega_over_l_max);
        fw.btilde_max_patch = fw.btilde_max_patch.max(w.btilde_max);
    }
    let mut bt_face: f64 = 0.0;
    let sides: Vec<(usize, crate::mesh::EdgeMap)> = std::iter::once((f.minus, f.minus_map))
        .chain(f.plus.zip(f.plus_map))
        .collect();
    for (c, map) in sides {
        for s in samples {
            let fp = fitting.at(&Point::new(mesh, c, map.ref_point(*s), t));
            fw.omega_max_face = fw.omega_max_face.max(fp.omega);
            fw.grad_eta_max_face = fw.grad_eta_max_face.max(norm2(fp.grad_eta));
            fw.b_max_face = fw.b_max_face.max(norm2(fp.b));
            bt_face = bt_face.max(norm2(fp.btilde));
        }
    }
    fw.peclet = f.length * bt_face / fitting.epsilon.sqrt();
    fw
}

/// Discrete potential: `(grad eta, grad v) = (div b, v)` (or its negative),
/// `eta = 0` on the boundary, continuous Q^k.
pub fn solve_potential(
    mesh: Arc<Mesh>,
    convection: &Convection,
    degree: usize,
    sign: PotentialSign,
) -> Result<CgField> {
    let space = CgSpace::new(mesh.clone(), degree)?;
    let s = match sign {
        PotentialSign::Standard => 1.0,
        PotentialSign::Flipped => -1.0,
    };
    let m = mesh.clone();
    solve_poisson_dirichlet0(space, degree + 2, move |c, x| {
        let r = m.rect(c).to_ref(x);
        s * convection.eval(&Point::new(&m, c, r, 0.0)).div
    })
}

/// Builds the fitting data for a mesh.
pub fn build_fitting(fitting: Fitting, mesh: Arc<Mesh>, t: f64, degree: usize) -> Result<FittingData> {
    FittingData::new(Arc::new(fitting), mesh, t, degree + 2)
}

/// `int_{t0}^{t1} max delta^2 / L` for time-independent fitting data.
pub fn gronwall_exponent(data: &FittingData, t0: f64, t1: f64) -> f64 {
    (t1 - t0) * data.gronwall_rate()
}

impl Fitting {
    /// The artificial reaction as a coefficient.
    pub fn delta_coef(self: &Arc<Self>) -> crate::coef::Coef {
        let f = self.clone();
        crate::coef::Coef::pointwise(move |p| f.at(p).delta)
    }
}

/// Weighted dG norm
/// `(sum_K eps |grad v|^2_w + |sqrt(L) v|^2_w + sum_F sigma eps / h_F |[v]|^2_w)^(1/2)`
/// over interior and Dirichlet faces (zero outer trace), `nq` points per
/// direction.
pub fn weighted_dg_norm(
    v: &crate::fem::DgField,
    fit: &Fitting,
    eps: f64,
    penalty: f64,
    t: f64,
    nq: usize,
) -> Result<f64> {
    weighted_dg_error(v, None, fit, eps, penalty, t, nq)
}

/// Value and gradient of a smooth function.
pub type ExactFn<'a> = &'a dyn Fn([f64; 2]) -> (f64, [f64; 2]);

/// Weighted dG norm of `v - exact`; the exact function is continuous, so it
/// only enters the jumps through the Dirichlet faces.
pub fn weighted_dg_error(
    v: &crate::fem::DgField,
    exact: Option<ExactFn>,
    fit: &Fitting,
    eps: f64,
    penalty: f64,
    t: f64,
    nq: usize,
) -> Result<f64> {
    let mesh = v.mesh().clone();
    let line = gauss_legendre(nq);
    let rule = Rule2d::tensor(&line);
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let area = mesh.rect(c).area();
        for (q, r) in rule.points.iter().enumerate() {
            let fp = fit.at(&Point::new(&mesh, c, *r, t));
            if fp.l < -1e-10 * (1.0 + fp.x.abs() + fp.delta) {
                return Err(Error::InvalidCoefficients(format!(
                    "L = {} < 0 at {:?}",
                    fp.l,
                    mesh.rect(c).map(*r)
                )));
            }
            let pv = v.at(c, *r);
            let (mut e, mut g) = (pv.value, pv.grad);
            if let Some(ex) = exact {
                let (ev, eg) = ex(mesh.rect(c).map(*r));
                e -= ev;
                g = [g[0] - eg[0], g[1] - eg[1]];
            }
            let g2 = g[0] * g[0] + g[1] * g[1];
            total += rule.weights[q] * area * fp.omega * (eps * g2 + fp.l.max(0.0) * e * e);
        }
    }
    for f in mesh.faces() {
        if !(f.is_interior() || f.is_dirichlet()) {
            continue;
        }
        let pen = penalty * eps / f.length;
        for (w, s) in f.face_points(&line) {
            let rm = f.minus_map.ref_point(s);
            let om = fit.at(&Point::new(&mesh, f.minus, rm, t)).omega;
            let mut jump = v.value(f.minus, rm);
            match (f.plus, f.plus_map, exact) {
                (Some(p), Some(pm), _) => jump -= v.value(p, pm.ref_point(s)),
                (_, _, Some(ex)) => jump -= ex(f.point(s)).0,
                _ => {}
            }
            total += w * f.length * pen * om * jump * jump;
        }
    }
    Ok(total.sqrt())
}
