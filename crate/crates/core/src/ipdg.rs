//! Symmetric interior-penalty dG discretisation with upwind convection.
//!
//! `B(u, v) = sum_K (eps grad u, grad v) + (b . grad u, v) + (delta u, v)
//!  + sum_F [-(eps {grad u}, [v]) - (eps {grad v}, [u]) + sigma eps / h_F ([u], [v])]
//!  - sum_K (b . n_K (u^+ - u^-), v^+) on the inflow part of each cell boundary`,
//! where on Dirichlet faces the outer trace is zero and the data moves to the
//! load functional.

use std::sync::Arc;

use crate::basis::BasisEval;
use crate::coef::{Coef, Convection, Point};
use crate::error::{Error, Result};
use crate::fem::{DgField, DgSpace};
use crate::linalg::{CsrMatrix, DirectSolver, TripletBuilder};
use crate::mesh::{BoundaryKind, Face, Mesh};
use crate::quadrature::{gauss_legendre, Rule1d, Rule2d};

/// Data of the convection-diffusion problem.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    /// diffusivity, 0 for pure transport
    pub epsilon: f64,
    pub convection: Convection,
    /// true when the convection field depends on time
    pub unsteady_convection: bool,
    /// artificial reaction (used by the stationary reaction-augmented problem)
    pub reaction: Coef,
    pub source: Coef,
    pub dirichlet: Coef,
    pub neumann: Coef,
    pub penalty: f64,
}

impl TransportProblem {
    pub fn new(epsilon: f64, convection: Convection, degree: usize) -> Self {
        TransportProblem {
            epsilon,
            convection,
            unsteady_convection: false,
            reaction: Coef::zero(),
            source: Coef::zero(),
            dirichlet: Coef::zero(),
            neumann: Coef::zero(),
            penalty: default_penalty(degree),
        }
    }

    pub fn validate(&self, mesh: &Mesh, t: f64) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidCoefficients(format!(
                "diffusivity must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(Error::InvalidCoefficients(format!(
                "penalty must be positive, got {}",
                self.penalty
            )));
        }
        let rule = gauss_legendre(3);
        for f in mesh.faces() {
            let Some(bd) = f.boundary else { continue };
            if bd.kind != BoundaryKind::Neumann {
                continue;
            }
            for s in &rule.points {
                let p = Point::new(mesh, f.minus, f.minus_map.ref_point(*s), t);
                let b = self.convection.eval(&p).b;
                let bn = b[0] * f.normal[0] + b[1] * f.normal[1];
                if bn.abs() > 1e-10 {
                    return Err(Error::InvalidCoefficients(format!(
                        "convection has normal component {bn:e} on a Neumann face at {:?}",
                        p.x
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Default interior penalty `10 k^2`.
pub fn default_penalty(degree: usize) -> f64 {
    10.0 * (degree * degree).max(1) as f64
}

/// Quadrature choices used by assembly and evaluation.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub cell: Rule2d,
    pub face: Rule1d,
}

impl Quadrature {
    /// `n` Gauss points per direction on cells and faces.
    pub fn with_points(n: usize) -> Self {
        Quadrature {
            cell: Rule2d::tensor(&gauss_legendre(n)),
            face: gauss_legendre(n),
        }
    }

    /// k + 2 points per direction.
    pub fn for_degree(degree: usize) -> Self {
        Self::with_points(degree + 2)
    }
}

/// Physical gradient of basis function `a`.
#[inline]
fn grad(ev: &BasisEval, a: usize, hx: f64, hy: f64) -> [f64; 2] {
    [ev.grad[a][0] / hx, ev.grad[a][1] / hy]
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Assembled matrix of `B` (optionally with the reaction term) and load.
pub struct Assembled {
    pub matrix: TripletBuilder,
    pub load: Vec<f64>,
}

pub fn assemble(
    mesh: &Mesh,
    space: &DgSpace,
    pb: &TransportProblem,
    t: f64,
    with_reaction: bool,
    quad: &Quadrature,
) -> Assembled {
    let el = &space.element;
    let nl = el.n_local();
    let n = mesh.n_cells() * nl;
    let mut mat = TripletBuilder::new(n);
    let mut load = vec![0.0; n];
    let eps = pb.epsilon;
    let cell_evals: Vec<BasisEval> = quad.cell.points.iter().map(|p| el.eval(*p)).collect();
    let dofs = |c: usize| -> Vec<usize> { (c * nl..(c + 1) * nl).collect() };

    for c in 0..mesh.n_cells() {
        let r = mesh.rect(c);
        let mut block = vec![0.0; nl * nl];
        let mut rhs = vec![0.0; nl];
        for (q, ev) in cell_evals.iter().enumerate() {
            let w = quad.cell.weights[q] * r.area();
            let p = Point::new(mesh, c, quad.cell.points[q], t);
            let b = pb.convection.eval(&p).b;
            let delta = if with_reaction { pb.reaction.eval(&p) } else { 0.0 };
            let f = pb.source.eval(&p);
            let g: Vec<[f64; 2]> = (0..nl).map(|a| grad(ev, a, r.hx, r.hy)).collect();
            for a in 0..nl {
                rhs[a] += w * f * ev.value[a];
                for bb in 0..nl {
                    block[a * nl + bb] += w
                        * (eps * dot(g[bb], g[a])
                            + dot(b, g[bb]) * ev.value[a]
                            + delta * ev.value[bb] * ev.value[a]);
                }
            }
        }
        mat.add_block(&dofs(c), &dofs(c), &block);
        for a in 0..nl {
            load[c * nl + a] += rhs[a];
        }
    }

    for face in mesh.faces() {
        let m = face.minus;
        let rm = mesh.rect(m);
        let len = face.length;
        let nrm = face.normal;
        let pen = pb.penalty * eps / len;
        match face.plus {
            Some(pc) => {
                let rp = mesh.rect(pc);
                let pm = face.plus_map.expect("interior face has a plus map");
                // blocks [test side][trial side]
                let mut blk = [[vec![0.0; nl * nl], vec![0.0; nl * nl]], [vec![0.0; nl * nl], vec![0.0; nl * nl]]];
                for (q, s) in face.face_points(&quad.face) {
                    let w = q * len;
                    let evm = el.eval(face.minus_map.ref_point(s));
                    let evp = el.eval(pm.ref_point(s));
                    let p = Point::new(mesh, m, face.minus_map.ref_point(s), t);
                    let b = pb.convection.eval(&p).b;
                    let bn = dot(b, nrm);
                    // per side: jump value and half normal flux of each basis function
                    let side = |ev: &BasisEval, sign: f64, hx: f64, hy: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                        let j: Vec<f64> = (0..nl).map(|a| sign * ev.value[a]).collect();
                        let gflux: Vec<f64> = (0..nl).map(|a| 0.5 * dot(grad(ev, a, hx, hy), nrm)).collect();
                        (j, gflux, ev.value.clone())
                    };
                    let sm = side(&evm, 1.0, rm.hx, rm.hy);
                    let sp = side(&evp, -1.0, rp.hx, rp.hy);
                    let sides = [&sm, &sp];
                    for ti in 0..2 {
                        for si in 0..2 {
                            let (jt, gt, vt) = sides[ti];
                            let (js, gs, vs) = sides[si];
                            let bl = &mut blk[ti][si];
                            for a in 0..nl {
                                for bb in 0..nl {
                                    let mut v = -eps * gs[bb] * jt[a] - eps * gt[a] * js[bb] + pen * js[bb] * jt[a];
                                    // upwind: test on the downstream side only
                                    if bn < 0.0 && ti == 0 {
                                        // -bn (u_m - u_p) v_m
                                        let sgn = if si == 0 { 1.0 } else { -1.0 };
                                        v += -bn * sgn * vs[bb] * vt[a];
                                    } else if bn > 0.0 && ti == 1 {
                                        // bn (u_p - u_m) v_p
                                        let sgn = if si == 1 { 1.0 } else { -1.0 };
                                        v += bn * sgn * vs[bb] * vt[a];
                                    }
                                    bl[a * nl + bb] += w * v;
                                }
                            }
                        }
                    }
                }
                let cells = [m, pc];
                for ti in 0..2 {
                    for si in 0..2 {
                        mat.add_block(&dofs(cells[ti]), &dofs(cells[si]), &blk[ti][si]);
                    }
                }
            }
            None => {
                let kind = face.boundary.expect("boundary face").kind;
                let mut block = vec![0.0; nl * nl];
                let mut rhs = vec![0.0; nl];
                for (q, s) in face.face_points(&quad.face) {
                    let w = q * len;
                    let r = face.minus_map.ref_point(s);
                    let ev = el.eval(r);
                    let p = Point::new(mesh, m, r, t);
                    match kind {
                        BoundaryKind::Dirichlet => {
                            let b = pb.convection.eval(&p).b;
                            let bn = dot(b, nrm);
                            let gd = pb.dirichlet.eval(&p);
                            let gf: Vec<f64> = (0..nl).map(|a| dot(grad(&ev, a, rm.hx, rm.hy), nrm)).collect();
                            for a in 0..nl {
                                let mut l = -eps * gf[a] * gd + pen * gd * ev.value[a];
                                if bn < 0.0 {
                                    l -= bn * gd * ev.value[a];
                                }
                                rhs[a] += w * l;
                                for bb in 0..nl {
                                    let mut v = -eps * gf[bb] * ev.value[a] - eps * gf[a] * ev.value[bb]
                                        + pen * ev.value[bb] * ev.value[a];
                                    if bn < 0.0 {
                                        v -= bn * ev.value[bb] * ev.value[a];
                                    }
                                    block[a * nl + bb] += w * v;
                                }
                            }
                        }
                        BoundaryKind::Neumann => {
                            let gn = pb.neumann.eval(&p);
                            for a in 0..nl {
                                rhs[a] += w * gn * ev.value[a];
                            }
                        }
                    }
                }
                mat.add_block(&dofs(m), &dofs(m), &block);
                for a in 0..nl {
                    load[m * nl + a] += rhs[a];
                }
            }
        }
    }
    Assembled { matrix: mat, load }
}

impl Face {
    /// `(weight, parameter)` pairs of a rule on `[0, 1]`.
    pub fn face_points<'a>(&self, rule: &'a Rule1d) -> impl Iterator<Item = (f64, f64)> + 'a {
        rule.weights.iter().copied().zip(rule.points.iter().copied())
    }
}

/// Solves `B_reac(u, v) = l(v)` for all `v` in the dG space.
pub fn solve_stationary(
    mesh: Arc<Mesh>,
    space: Arc<DgSpace>,
    pb: &TransportProblem,
) -> Result<DgField> {
    pb.validate(&mesh, 0.0)?;
    let quad = Quadrature::for_degree(space.degree());
    let sys = assemble(&mesh, &space, pb, 0.0, true, &quad);
    let a = sys.matrix.into_csr();
    let x = DirectSolver::new(a)?.solve(&sys.load)?;
    let u = DgField::from_coeffs(mesh, space, x)?;
    if !u.all_finite() {
        return Err(Error::NonFinite("stationary solve".into()));
    }
    Ok(u)
}

/// Factorisation cache for repeated steps with the same operator.
#[derive(Default)]
pub struct StepCache {
    key: Option<(u64, u64, usize, u64, u64)>,
    solver: Option<DirectSolver>,
}

impl StepCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.key = None;
        self.solver = None;
    }
}

fn convection_tag(c: &Convection) -> usize {
    match c {
        Convection::Analytic(f) => Arc::as_ptr(f) as *const () as usize,
        Convection::Discrete(v) => Arc::as_ptr(v) as *const () as usize,
    }
}

/// Block-diagonal mass matrix applied to a field.
pub fn mass_apply(u: &DgField) -> Vec<f64> {
    let sp = u.space();
    let mesh = u.mesh();
    let mut out = Vec::with_capacity(u.n_dofs());
    for c in 0..mesh.n_cells() {
        let area = mesh.rect(c).area();
        out.extend(sp.apply_mass(u.local(c)).into_iter().map(|v| v * area));
    }
    out
}

/// One implicit Euler step: `((u - u_prev) / dt, v) + B(u, v) = l(v)` at
/// time `t`. `u_prev` must already live on `mesh` (see `fem::transfer`).
pub fn implicit_euler_step(
    u_prev: &DgField,
    pb: &TransportProblem,
    t: f64,
    dt: f64,
    cache: &mut StepCache,
) -> Result<DgField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::TimeStep(format!("time step must be positive, got {dt}")));
    }
    let mesh = u_prev.mesh().clone();
    let space = u_prev.space().clone();
    pb.validate(&mesh, t)?;
    let quad = Quadrature::for_degree(space.degree());
    let sys = assemble(&mesh, &space, pb, t, false, &quad);
    let key = (
        mesh.id(),
        dt.to_bits(),
        convection_tag(&pb.convection),
        pb.epsilon.to_bits(),
        pb.penalty.to_bits(),
    );
    let reuse = !pb.unsteady_convection && cache.key == Some(key) && cache.solver.is_some();
    let mass = mass_apply(u_prev);
    if !reuse {
        let mut a = sys.matrix;
        let nl = space.n_local();
        for c in 0..mesh.n_cells() {
            let area = mesh.rect(c).area() / dt;
            for i in 0..nl {
                for j in 0..nl {
                    a.add(c * nl + i, c * nl + j, area * space.mass[i * nl + j]);
                }
            }
        }
        let csr: CsrMatrix = a.into_csr();
        cache.solver = Some(DirectSolver::new(csr)?);
        cache.key = Some(key);
    }
    let rhs: Vec<f64> = sys.load.iter().zip(&mass).map(|(l, m)| l + m / dt).collect();
    let x = cache.solver.as_ref().expect("solver present").solve(&rhs)?;
    let u = DgField::from_coeffs(mesh, space, x)?;
    if !u.all_finite() {
        return Err(Error::NonFinite(format!("implicit Euler step at t = {t}")));
    }
    Ok(u)
}

/// Pointwise weight `omega` and its gradient used in the weighted form.
pub trait Weight {
    fn weight(&self, p: &Point) -> (f64, [f64; 2]);
}

/// Direct evaluation of `B_reac(w, v)`, or of `B_reac(w, omega v)` when a
/// weight is given. Dirichlet data is not included (homogeneous traces).
pub fn bilinear_apply(
    w: &DgField,
    v: &DgField,
    pb: &TransportProblem,
    t: f64,
    weight: Option<&dyn Weight>,
    quad: &Quadrature,
) -> Result<f64> {
    let mesh = w.mesh().clone();
    if v.mesh().id() != mesh.id() && v.mesh().cells() != mesh.cells() {
        return Err(Error::IncompatibleMeshes("bilinear form arguments".into()));
    }
    let eps = pb.epsilon;
    let space = v.space();
    let el = &space.element;
    let nl = el.n_local();
    // projection of the weighted test function, for the symmetry term
    let proj: Option<DgField> = weight.map(|wt| {
        crate::fem::l2_project_cellwise(mesh.clone(), space.clone(), quad.face.len().max(space.degree() + 2), |c, x| {
            let r = mesh.rect(c).to_ref(x);
            let p = Point::new(&mesh, c, r, t);
            wt.weight(&p).0 * v.at(c, r).value
        })
    });
    // test function value and gradient at a point of cell c
    let test = |c: usize, r: [f64; 2]| -> (f64, [f64; 2]) {
        let pv = v.at(c, r);
        match weight {
            None => (pv.value, pv.grad),
            Some(wt) => {
                let (om, gom) = wt.weight(&Point::new(&mesh, c, r, t));
                (
                    om * pv.value,
                    [om * pv.grad[0] + gom[0] * pv.value, om * pv.grad[1] + gom[1] * pv.value],
                )
            }
        }
    };
    let test_proj_grad = |c: usize, r: [f64; 2]| -> [f64; 2] {
        match &proj {
            None => v.at(c, r).grad,
            Some(pf) => pf.at(c, r).grad,
        }
    };
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let rc = mesh.rect(c);
        for (q, rp) in quad.cell.points.iter().enumerate() {
            let wq = quad.cell.weights[q] * rc.area();
            let p = Point::new(&mesh, c, *rp, t);
            let b = pb.convection.eval(&p).b;
            let delta = pb.reaction.eval(&p);
            let wu = w.at(c, *rp);
            let (tv, tg) = test(c, *rp);
            total += wq * (eps * dot(wu.grad, tg) + dot(b, wu.grad) * tv + delta * wu.value * tv);
        }
    }
    let _ = nl;
    for face in mesh.faces() {
        let len = face.length;
        let n = face.normal;
        let pen = pb.penalty * eps / len;
        let m = face.minus;
        for (q, s) in face.face_points(&quad.face) {
            let wq = q * len;
            let rm = face.minus_map.ref_point(s);
            let p = Point::new(&mesh, m, rm, t);
            let bn = dot(pb.convection.eval(&p).b, n);
            let wm = w.at(m, rm);
            let (tm, _) = test(m, rm);
            let gpm = test_proj_grad(m, rm);
            match face.plus {
                Some(pc) => {
                    let rp = face.plus_map.unwrap().ref_point(s);
                    let wp = w.at(pc, rp);
                    let (tp, _) = test(pc, rp);
                    let gpp = test_proj_grad(pc, rp);
                    let jw = wm.value - wp.value;
                    let jt = tm - tp;
                    let avg_w = 0.5 * (dot(wm.grad, n) + dot(wp.grad, n));
                    let avg_t = 0.5 * (dot(gpm, n) + dot(gpp, n));
                    let mut val = -eps * avg_w * jt - eps * avg_t * jw + pen * jw * jt;
                    if bn < 0.0 {
                        val += -bn * (wm.value - wp.value) * tm;
                    } else if bn > 0.0 {
                        val += bn * (wp.value - wm.value) * tp;
                    }
                    total += wq * val;
                }
                None => {
                    if face.is_dirichlet() {
                        let mut val = -eps * dot(wm.grad, n) * tm - eps * dot(gpm, n) * wm.value
                            + pen * wm.value * tm;
                        if bn < 0.0 {
                            val -= bn * wm.value * tm;
                        }
                        total += wq * val;
                    }
                }
            }
        }
    }
    Ok(total)
}
