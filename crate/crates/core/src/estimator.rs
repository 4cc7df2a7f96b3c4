//! Weighted a posteriori error estimation.
//!
//! The stationary estimator and the first spatial term of the time-dependent
//! bound share one evaluation routine. The remaining time-step terms live on
//! the auxiliary mesh, which refines both the old and the new mesh.
//!
//! Patch maxima use the two cells sharing a face. Interior-face
//! contributions to per-cell indicators are split evenly between the two
//! cells, boundary faces go to their owner.

use std::sync::Arc;

use crate::coef::{Coef, Point};
use crate::error::{Error, Result};
use crate::fem::{host_cells, l2_project_cellwise, project_from_fine, DgField};
use crate::fitting::{FaceWeights, FitPoint, Fitting, FittingData, L_ZERO_TOL};
use crate::ipdg::TransportProblem;
use crate::mesh::{Face, Mesh};
use crate::quadrature::{gauss_legendre, time_rule, Rule1d, Rule2d};

/// Squared per-cell contributions of the three residual groups.
#[derive(Clone, Debug, PartialEq)]
pub struct CellIndicators {
    pub residual: Vec<f64>,
    pub flux: Vec<f64>,
    pub jump: Vec<f64>,
}

impl CellIndicators {
    fn new(n: usize) -> Self {
        CellIndicators {
            residual: vec![0.0; n],
            flux: vec![0.0; n],
            jump: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// `eta_K` for every cell.
    pub fn values(&self) -> Vec<f64> {
        (0..self.len())
            .map(|c| (self.residual[c] + self.flux[c] + self.jump[c]).sqrt())
            .collect()
    }

    pub fn total_sq(&self) -> f64 {
        (0..self.len())
            .map(|c| self.residual[c] + self.flux[c] + self.jump[c])
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.total_sq().sqrt()
    }
}

/// Variant of the `alpha^2 eps |grad eta|^2` part of the jump coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpGroup {
    /// as in the error bound: `/ sup_F omega * max_{omega_F} beta_K^2`
    Bound,
    /// as in the marking indicator: `sup_F omega / inf_{omega_F} L`, with the
    /// bound version where `L` vanishes on the patch
    Indicator,
}

/// Coefficient multiplying `||[u]||_F^2` in the face jump indicator.
pub fn jump_coefficient(fw: &FaceWeights, h: f64, eps: f64, sigma: f64, alpha: f64, group: JumpGroup) -> f64 {
    let g2 = fw.grad_eta_max_face * fw.grad_eta_max_face;
    let bound = alpha * alpha * eps * g2 / fw.omega_max_face * fw.beta_max_patch * fw.beta_max_patch;
    let fitted = match group {
        JumpGroup::Bound => bound,
        JumpGroup::Indicator if fw.l_min_patch > L_ZERO_TOL => {
            fw.omega_max_face * alpha * alpha * eps * g2 / fw.l_min_patch
        }
        JumpGroup::Indicator => bound,
    };
    sigma * eps / h * (fw.omega_max_patch + fw.gamma_patch * sigma * eps + fitted)
        + fw.beta_patch * fw.b_max_face * fw.b_max_face
        + h * fw.l_weighted_max_patch
        + fw.omega_max_patch * h / eps * fw.btilde_max_patch * fw.btilde_max_patch
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Jump `u^- - u^+` at a face parameter, with `g_D` as the outer trace on
/// Dirichlet faces.
fn face_jump(u: &DgField, mesh: &Mesh, f: &Face, s: f64, dirichlet: &Coef, t: f64) -> f64 {
    let rm = f.minus_map.ref_point(s);
    let um = u.value(f.minus, rm);
    match (f.plus, f.plus_map) {
        (Some(p), Some(pm)) => um - u.value(p, pm.ref_point(s)),
        _ => um - dirichlet.eval(&Point::new(mesh, f.minus, rm, t)),
    }
}

struct ResidualSpec<'a> {
    source: &'a Coef,
    eps: f64,
    dirichlet: &'a Coef,
    penalty: f64,
    t: f64,
    nq: usize,
    group: JumpGroup,
    split_jumps: bool,
}

fn residual_indicators(u: &DgField, data: &FittingData, spec: &ResidualSpec) -> Result<CellIndicators> {
    let mesh = u.mesh();
    if mesh.id() != data.mesh.id() && mesh.cells() != data.mesh.cells() {
        return Err(Error::IncompatibleMeshes("fitting data belongs to another mesh".into()));
    }
    let line = gauss_legendre(spec.nq);
    let rule = Rule2d::tensor(&line);
    let fit = &data.fitting;
    let eps_w = data.epsilon();
    let mut out = CellIndicators::new(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let area = mesh.rect(c).area();
        let mut s = 0.0;
        for (q, r) in rule.points.iter().enumerate() {
            let p = Point::new(mesh, c, *r, spec.t);
            let fp = fit.at(&p);
            let pu = u.at(c, *r);
            let res = spec.source.eval(&p) + spec.eps * pu.lap - dot(fp.b, pu.grad) - fp.delta * pu.value;
            s += rule.weights[q] * area * res * res;
        }
        let beta = data.cells[c].beta;
        out.residual[c] = beta * beta * s;
    }
    for (fi, f) in mesh.faces().iter().enumerate() {
        if !(f.is_interior() || f.is_dirichlet()) {
            continue;
        }
        let fw = &data.faces[fi];
        let mut jump2 = 0.0;
        let mut flux2 = 0.0;
        for (w, s) in f.face_points(&line) {
            let j = face_jump(u, mesh, f, s, spec.dirichlet, spec.t);
            jump2 += w * f.length * j * j;
            if let (Some(p), Some(pm)) = (f.plus, f.plus_map) {
                let gm = u.at(f.minus, f.minus_map.ref_point(s)).grad;
                let gp = u.at(p, pm.ref_point(s)).grad;
                let jf = spec.eps * (dot(gm, f.normal) - dot(gp, f.normal));
                flux2 += w * f.length * jf * jf;
            }
        }
        let cj = jump_coefficient(fw, f.length, eps_w, spec.penalty, fit.alpha, spec.group) * jump2;
        match f.plus {
            Some(p) => {
                let cf = 0.5 * fw.beta_patch * flux2;
                out.flux[f.minus] += cf;
                out.flux[p] += cf;
                let share = if spec.split_jumps { 0.5 * cj } else { cj };
                out.jump[f.minus] += share;
                out.jump[p] += share;
            }
            None => out.jump[f.minus] += cj,
        }
    }
    Ok(out)
}

/// Stationary estimator of `u` for `B_reac(u, v) = l(v)`.
pub fn stationary_estimate(u: &DgField, pb: &TransportProblem, data: &FittingData, nq: usize) -> Result<CellIndicators> {
    residual_indicators(
        u,
        data,
        &ResidualSpec {
            source: &pb.source,
            eps: pb.epsilon,
            dirichlet: &pb.dirichlet,
            penalty: pb.penalty,
            t: data.t,
            nq,
            group: JumpGroup::Bound,
            split_jumps: true,
        },
    )
}

/// Kelly indicator `(1/2 sum_{F interior} h_F ||[eps grad u]||_F^2)^(1/2)`.
pub fn kelly_indicator(u: &DgField, eps: f64, nq: usize) -> Vec<f64> {
    let mesh = u.mesh();
    let line = gauss_legendre(nq);
    let mut out = vec![0.0; mesh.n_cells()];
    for f in mesh.faces() {
        let (Some(p), Some(pm)) = (f.plus, f.plus_map) else { continue };
        let mut s2 = 0.0;
        for (w, s) in f.face_points(&line) {
            let gm = u.at(f.minus, f.minus_map.ref_point(s)).grad;
            let gp = u.at(p, pm.ref_point(s)).grad;
            let jf = eps * (dot(gm, f.normal) - dot(gp, f.normal));
            s2 += w * f.length * jf * jf;
        }
        let c = 0.5 * f.length * s2;
        out[f.minus] += c;
        out[p] += c;
    }
    out.into_iter().map(f64::sqrt).collect()
}

/// `A = Pi(f + delta u) - (u - u_prev) / dt` on the mesh of `u`; `u_prev`
/// must already live there. Without `u_prev` the difference quotient is
/// dropped (initial step).
pub fn residual_operand(
    u: &DgField,
    u_prev: Option<&DgField>,
    dt: f64,
    source: &Coef,
    fit: &Fitting,
    t: f64,
    nq: usize,
) -> Result<DgField> {
    let mesh = u.mesh().clone();
    let proj = l2_project_cellwise(mesh.clone(), u.space().clone(), nq, |c, x| {
        let r = mesh.rect(c).to_ref(x);
        let p = Point::new(&mesh, c, r, t);
        source.eval(&p) + fit.at(&p).delta * u.value(c, r)
    });
    match u_prev {
        None => Ok(proj),
        Some(up) => {
            if up.mesh().id() != mesh.id() {
                return Err(Error::IncompatibleMeshes("previous step not transferred".into()));
            }
            let coeffs = proj
                .coeffs()
                .iter()
                .zip(u.coeffs())
                .zip(up.coeffs())
                .map(|((a, un), uo)| a - (un - uo) / dt)
                .collect();
            DgField::from_coeffs(mesh, u.space().clone(), coeffs)
        }
    }
}

/// First spatial term on the mesh of `u` with a given residual operand.
pub fn spatial_residual(
    u: &DgField,
    operand: &DgField,
    pb: &TransportProblem,
    data: &FittingData,
    nq: usize,
) -> Result<CellIndicators> {
    residual_indicators(
        u,
        data,
        &ResidualSpec {
            source: &Coef::Field(Arc::new(operand.clone())),
            eps: pb.epsilon,
            dirichlet: &pb.dirichlet,
            penalty: pb.penalty,
            t: data.t,
            nq,
            group: JumpGroup::Bound,
            split_jumps: true,
        },
    )
}

/// Per-cell marking indicator with the nodal interpolant in the residual
/// operand: `A = I(f + delta u) - (u - u_prev) / dt`.
pub fn local_indicator(
    u: &DgField,
    u_prev: &DgField,
    dt: f64,
    pb: &TransportProblem,
    data: &FittingData,
    nq: usize,
) -> Result<Vec<f64>> {
    let mesh = u.mesh().clone();
    if u_prev.mesh().id() != mesh.id() {
        return Err(Error::IncompatibleMeshes("previous step not transferred".into()));
    }
    let el = &u.space().element;
    let nl = el.n_local();
    let mut coeffs = Vec::with_capacity(u.n_dofs());
    for c in 0..mesh.n_cells() {
        for a in 0..nl {
            let r = el.node(a);
            let p = Point::new(&mesh, c, r, data.t);
            let un = u.local(c)[a];
            let uo = u_prev.local(c)[a];
            coeffs.push(pb.source.eval(&p) + data.fitting.at(&p).delta * un - (un - uo) / dt);
        }
    }
    let operand = DgField::from_coeffs(mesh, u.space().clone(), coeffs)?;
    let ind = residual_indicators(
        u,
        data,
        &ResidualSpec {
            source: &Coef::Field(Arc::new(operand)),
            eps: pb.epsilon,
            dirichlet: &pb.dirichlet,
            penalty: pb.penalty,
            t: data.t,
            nq,
            group: JumpGroup::Indicator,
            split_jumps: false,
        },
    )?;
    Ok(ind.values())
}

/// `sum_F omega_max(patch) h_F ||[u]||_F^2` over interior and Dirichlet faces.
pub fn weighted_jump_sq(u: &DgField, data: &FittingData, dirichlet: &Coef, nq: usize) -> f64 {
    let mesh = u.mesh();
    let line = gauss_legendre(nq);
    let mut total = 0.0;
    for (fi, f) in mesh.faces().iter().enumerate() {
        if !(f.is_interior() || f.is_dirichlet()) {
            continue;
        }
        let mut j2 = 0.0;
        for (w, s) in f.face_points(&line) {
            let j = face_jump(u, mesh, f, s, dirichlet, data.t);
            j2 += w * f.length * j * j;
        }
        total += data.faces[fi].omega_max_patch * f.length * j2;
    }
    total
}

/// Everything one time step needs. `u_prev` and `a_prev` live on the old
/// mesh, `u_prev_proj`, `u_next` and `data_next` on the new one, and `aux`
/// refines both.
pub struct StepInput<'a> {
    pub u_prev: &'a DgField,
    pub u_prev_proj: &'a DgField,
    pub u_next: &'a DgField,
    pub a_prev: &'a DgField,
    pub aux: &'a Arc<Mesh>,
    pub pb: &'a TransportProblem,
    pub fit_prev: &'a Arc<Fitting>,
    pub fit_next: &'a Arc<Fitting>,
    pub data_next: &'a FittingData,
    pub t_prev: f64,
    pub t_next: f64,
    pub nq: usize,
}

/// Per-step values (not squared) and by-products of one step.
#[derive(Clone, Debug)]
pub struct StepTerms {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub t1: f64,
    pub t2: f64,
    /// max of `delta^2 / L` at both interval ends
    pub gronwall_rate: f64,
    pub operand: DgField,
}

fn host_value(u: &DgField, hosts: &[usize], c: usize, x: [f64; 2]) -> crate::fem::Pointwise {
    let k = hosts[c];
    u.at(k, u.mesh().rect(k).to_ref(x))
}

/// Fitting at an intermediate time `t_prev + theta dt`.
fn fitting_between(inp: &StepInput, theta: f64, aux: &Mesh, c: usize, r: [f64; 2]) -> FitPoint {
    let s = inp.t_prev + theta * (inp.t_next - inp.t_prev);
    let p = Point::new(aux, c, r, s);
    if Arc::ptr_eq(inp.fit_prev, inp.fit_next) {
        inp.fit_next.at(&p)
    } else {
        Fitting::interpolated(inp.fit_prev, inp.fit_next, theta, &p)
    }
}

/// Terms of the fully discrete bound for the step `(t_prev, t_next]`.
pub fn timestep_terms(inp: &StepInput) -> Result<StepTerms> {
    let dt = inp.t_next - inp.t_prev;
    if !(dt > 0.0) {
        return Err(Error::TimeStep(format!("nonpositive step {dt}")));
    }
    let mesh_n = inp.u_next.mesh().clone();
    let mesh_p = inp.u_prev.mesh().clone();
    if inp.u_prev_proj.mesh().id() != mesh_n.id() {
        return Err(Error::IncompatibleMeshes("projected previous step".into()));
    }
    if inp.a_prev.mesh().id() != mesh_p.id() {
        return Err(Error::IncompatibleMeshes("previous residual operand".into()));
    }
    let aux = inp.aux.clone();
    let hosts_n = host_cells(&mesh_n, &aux)?;
    let hosts_p = host_cells(&mesh_p, &aux)?;
    let nq = inp.nq;
    let pb = inp.pb;
    let (tp, tn) = (inp.t_prev, inp.t_next);

    let operand = residual_operand(inp.u_next, Some(inp.u_prev_proj), dt, &pb.source, inp.fit_next, tn, nq)?;
    let s1 = spatial_residual(inp.u_next, &operand, pb, inp.data_next, nq)?.total_sq();
    let s3 = weighted_jump_sq(inp.u_next, inp.data_next, &pb.dirichlet, nq);

    let dp = FittingData::new(inp.fit_prev.clone(), aux.clone(), tp, nq)?;
    let dn = FittingData::new(inp.fit_next.clone(), aux.clone(), tn, nq)?;
    let eps_w = dn.epsilon();

    // data oscillation on the auxiliary mesh
    let g = |c: usize, x: [f64; 2]| -> f64 {
        let p = Point::new(&aux, c, aux.rect(c).to_ref(x), tn);
        let un = host_value(inp.u_next, &hosts_n, c, x).value;
        let up = host_value(inp.u_prev, &hosts_p, c, x).value;
        pb.source.eval(&p) + inp.fit_next.at(&p).delta * un + up / dt
    };
    let pg = project_from_fine(mesh_n.clone(), inp.u_next.space().clone(), &aux, nq, g)?;
    let line = gauss_legendre(nq);
    let rule = Rule2d::tensor(&line);
    let mut s2 = 0.0;
    for c in 0..aux.n_cells() {
        let rc = aux.rect(c);
        let mut e = 0.0;
        for (q, r) in rule.points.iter().enumerate() {
            let x = rc.map(*r);
            let d = g(c, x) - host_value(&pg, &hosts_n, c, x).value;
            e += rule.weights[q] * rc.area() * d * d;
        }
        let b2 = dp.cells[c].beta.powi(2).max(dn.cells[c].beta.powi(2));
        s2 += b2 * e;
    }

    // jumps of the difference quotient on the auxiliary mesh
    let mut s4 = 0.0;
    for (fi, f) in aux.faces().iter().enumerate() {
        if !(f.is_interior() || f.is_dirichlet()) {
            continue;
        }
        let mut j2 = 0.0;
        for (w, s) in f.face_points(&line) {
            let side = |c: usize, r: [f64; 2]| {
                let x = aux.rect(c).map(r);
                host_value(inp.u_next, &hosts_n, c, x).value - host_value(inp.u_prev, &hosts_p, c, x).value
            };
            let rm = f.minus_map.ref_point(s);
            let mut j = side(f.minus, rm);
            match (f.plus, f.plus_map) {
                (Some(p), Some(pm)) => j -= side(p, pm.ref_point(s)),
                _ => {
                    j -= pb.dirichlet.eval(&Point::new(&aux, f.minus, rm, tn))
                        - pb.dirichlet.eval(&Point::new(&aux, f.minus, rm, tp))
                }
            }
            j /= dt;
            j2 += w * f.length * j * j;
        }
        let (a, b) = (&dp.faces[fi], &dn.faces[fi]);
        let coef = a
            .omega_over_l_patch
            .max(b.omega_over_l_patch)
            .min(a.omega_max_patch.max(b.omega_max_patch) / eps_w);
        s4 += coef * f.length * j2;
    }

    let (t1, t2) = time_terms(inp, &aux, &hosts_n, &hosts_p, &operand, &rule, eps_w)?;

    Ok(StepTerms {
        s1: s1.sqrt(),
        s2: s2.sqrt(),
        s3: s3.sqrt(),
        s4: s4.sqrt(),
        t1: t1.sqrt(),
        t2: t2.sqrt(),
        gronwall_rate: dp.gronwall_rate().max(dn.gronwall_rate()),
        operand,
    })
}

/// Time averages over the step of the squared convection-mismatch and
/// data-variation terms.
fn time_terms(
    inp: &StepInput,
    aux: &Arc<Mesh>,
    hosts_n: &[usize],
    hosts_p: &[usize],
    operand: &DgField,
    rule: &Rule2d,
    eps_w: f64,
) -> Result<(f64, f64)> {
    let trule: Rule1d = time_rule();
    let (tp, tn) = (inp.t_prev, inp.t_next);
    let alpha = inp.fit_next.alpha;
    let pb = inp.pb;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for c in 0..aux.n_cells() {
        let rc = aux.rect(c);
        for (q, r) in rule.points.iter().enumerate() {
            let wq = rule.weights[q] * rc.area();
            let x = rc.map(*r);
            let fpn = inp.fit_next.at(&Point::new(aux, c, *r, tn));
            let fpp = inp.fit_prev.at(&Point::new(aux, c, *r, tp));
            let omega = fpn.omega.max(fpp.omega);
            let inv = |f: &FitPoint| f.omega * if f.l > 0.0 { (1.0 / f.l).min(1.0 / eps_w) } else { 1.0 / eps_w };
            let c2 = inv(&fpn).max(inv(&fpp));
            let un = host_value(inp.u_next, hosts_n, c, x).value;
            let up = host_value(inp.u_prev, hosts_p, c, x).value;
            let an = host_value(operand, hosts_n, c, x).value;
            let ap = host_value(inp.a_prev, hosts_p, c, x).value;
            let f_n = pb.source.eval(&Point::new(aux, c, *r, tn));
            let lfit = |f: &FitPoint| dot(f.grad_eta, f.btilde);
            for (wt, th) in trule.weights.iter().zip(&trule.points) {
                let s = tp + th * (tn - tp);
                let (ln, lp) = (*th, 1.0 - th);
                let fs = fitting_between(inp, *th, aux, c, *r);
                let v = [
                    ln * (fpn.b[0] - fs.b[0]) * un + lp * (fpp.b[0] - fs.b[0]) * up,
                    ln * (fpn.b[1] - fs.b[1]) * un + lp * (fpp.b[1] - fs.b[1]) * up,
                ];
                t1 += wt * wq * omega * dot(v, v) / eps_w;
                let theta_n = (fpn.delta - fs.delta) + 0.5 * alpha * (lfit(&fpn) - lfit(&fs));
                let theta_p = (fpp.delta - fs.delta) + 0.5 * alpha * (lfit(&fpp) - lfit(&fs));
                let f_s = pb.source.eval(&Point::new(aux, c, *r, s));
                let res = f_s - f_n + fs.delta * (ln * un + lp * up) - fpn.delta * un
                    + lp * (an - ap)
                    + ln * theta_n * un
                    + lp * theta_p * up;
                t2 += wt * wq * c2 * res * res;
            }
        }
    }
    Ok((t1, t2))
}

/// One logged step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub n_cells: usize,
    pub n_dofs: usize,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub t1: f64,
    pub t2: f64,
    pub s_acc: f64,
    pub t_acc: f64,
    pub exponent: f64,
    pub full: f64,
}

/// Running accumulation of the bound.
#[derive(Clone, Debug, Default)]
pub struct EstimatorReport {
    pub records: Vec<StepRecord>,
    s_integral: f64,
    t_integral: f64,
    s3_max_sq: f64,
    exponent: f64,
    prev_s1: f64,
}

/// Geometry of one step for the log.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub n_cells: usize,
    pub n_dofs: usize,
}

impl EstimatorReport {
    /// Empty report; `s1_initial` and `s3_initial` belong to the initial data.
    pub fn new(s1_initial: f64, s3_initial: f64) -> Self {
        EstimatorReport {
            s3_max_sq: s3_initial * s3_initial,
            prev_s1: s1_initial,
            ..Default::default()
        }
    }

    pub fn accumulate(&mut self, info: StepInfo, v: &StepTerms) -> &StepRecord {
        let dt = info.dt;
        self.s_integral += dt * (v.s1 * v.s1 + self.prev_s1 * self.prev_s1 + v.s2 * v.s2 + v.s4 * v.s4);
        self.s3_max_sq = self.s3_max_sq.max(v.s3 * v.s3);
        self.t_integral += dt * (v.t1 * v.t1 + v.t2 * v.t2);
        self.exponent += dt * v.gronwall_rate;
        self.prev_s1 = v.s1;
        let rec = StepRecord {
            step: info.step,
            t: info.t,
            dt,
            n_cells: info.n_cells,
            n_dofs: info.n_dofs,
            s1: v.s1,
            s2: v.s2,
            s3: v.s3,
            s4: v.s4,
            t1: v.t1,
            t2: v.t2,
            s_acc: self.s_acc_sq().sqrt(),
            t_acc: self.t_acc_sq().sqrt(),
            exponent: self.exponent,
            full: self.full_sq().sqrt(),
        };
        self.records.push(rec);
        self.records.last().expect("just pushed")
    }

    pub fn s_acc_sq(&self) -> f64 {
        self.s_integral + self.s3_max_sq
    }

    pub fn t_acc_sq(&self) -> f64 {
        self.t_integral
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn full_sq(&self) -> f64 {
        self.exponent.exp() * (self.s_acc_sq() + self.t_acc_sq())
    }
}
