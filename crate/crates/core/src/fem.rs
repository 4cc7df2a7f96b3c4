//! Discontinuous Q^k fields, L2 projection and transfer between meshes.

use std::sync::Arc;

use crate::basis::{BasisEval, QkElement};
use crate::error::{Error, Result};
use crate::linalg::dense_inverse;
use crate::mesh::{CellRelation, Mesh, Rect, TransferMap};
use crate::quadrature::{gauss_legendre, Rule2d};

/// Reference element together with its inverse mass matrix.
#[derive(Clone, Debug)]
pub struct DgSpace {
    pub element: QkElement,
    /// reference mass matrix and its inverse, row-major
    pub mass: Vec<f64>,
    pub mass_inv: Vec<f64>,
}

impl DgSpace {
    pub fn new(degree: usize) -> Arc<Self> {
        let element = QkElement::new(degree);
        let n = element.n_line();
        let g = gauss_legendre(n + 1);
        let mut m1 = vec![0.0; n * n];
        for (x, w) in g.points.iter().zip(&g.weights) {
            for a in 0..n {
                for b in 0..n {
                    m1[a * n + b] += w * element.line.value(a, *x) * element.line.value(b, *x);
                }
            }
        }
        let m1inv = dense_inverse(n, &m1);
        let nl = n * n;
        let mut mass = vec![0.0; nl * nl];
        let mut mass_inv = vec![0.0; nl * nl];
        for a in 0..nl {
            for b in 0..nl {
                mass[a * nl + b] = m1[(a % n) * n + (b % n)] * m1[(a / n) * n + (b / n)];
                mass_inv[a * nl + b] = m1inv[(a % n) * n + (b % n)] * m1inv[(a / n) * n + (b / n)];
            }
        }
        Arc::new(DgSpace {
            element,
            mass,
            mass_inv,
        })
    }

    pub fn degree(&self) -> usize {
        self.element.degree
    }

    pub fn n_local(&self) -> usize {
        self.element.n_local()
    }

    /// Solves `M_ref c = rhs` for reference-scaled load vectors.
    pub fn apply_mass_inv(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n_local();
        (0..n)
            .map(|a| (0..n).map(|b| self.mass_inv[a * n + b] * rhs[b]).sum())
            .collect()
    }

    /// `M_ref c` for one cell.
    pub fn apply_mass(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n_local();
        (0..n)
            .map(|a| (0..n).map(|b| self.mass[a * n + b] * c[b]).sum())
            .collect()
    }

    /// Default volume rule: k + 2 Gauss points per direction.
    pub fn default_rule(&self) -> Rule2d {
        Rule2d::tensor(&gauss_legendre(self.degree() + 2))
    }
}

/// Physical value, gradient and Laplacian of a local expansion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pointwise {
    pub value: f64,
    pub grad: [f64; 2],
    pub lap: f64,
}

/// Combines basis data with local coefficients on a cell.
pub fn combine(ev: &BasisEval, coeffs: &[f64], rect: &Rect) -> Pointwise {
    let mut out = Pointwise::default();
    for (a, c) in coeffs.iter().enumerate() {
        out.value += c * ev.value[a];
        out.grad[0] += c * ev.grad[a][0];
        out.grad[1] += c * ev.grad[a][1];
        out.lap += c * (ev.hess_diag[a][0] / (rect.hx * rect.hx) + ev.hess_diag[a][1] / (rect.hy * rect.hy));
    }
    out.grad[0] /= rect.hx;
    out.grad[1] /= rect.hy;
    out
}

/// Piecewise Q^k field, one block of `(k + 1)^2` coefficients per cell.
#[derive(Clone, Debug)]
pub struct DgField {
    mesh: Arc<Mesh>,
    space: Arc<DgSpace>,
    coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(mesh: Arc<Mesh>, space: Arc<DgSpace>) -> Self {
        let n = mesh.n_cells() * space.n_local();
        DgField {
            mesh,
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coeffs(mesh: Arc<Mesh>, space: Arc<DgSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.n_cells() * space.n_local() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} cells of {} dofs",
                coeffs.len(),
                mesh.n_cells(),
                space.n_local()
            )));
        }
        Ok(DgField {
            mesh,
            space,
            coeffs,
        })
    }

    /// Nodal interpolation of `f` at each cell's Lobatto points.
    pub fn interpolate(mesh: Arc<Mesh>, space: Arc<DgSpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let nl = space.n_local();
        let mut coeffs = Vec::with_capacity(mesh.n_cells() * nl);
        for c in 0..mesh.n_cells() {
            let r = mesh.rect(c);
            for a in 0..nl {
                coeffs.push(f(r.map(space.element.node(a))));
            }
        }
        DgField {
            mesh,
            space,
            coeffs,
        }
    }

    /// Nodal interpolation of a per-cell function `f(cell, x)`.
    pub fn interpolate_cellwise(
        mesh: Arc<Mesh>,
        space: Arc<DgSpace>,
        f: impl Fn(usize, [f64; 2]) -> f64,
    ) -> Self {
        let nl = space.n_local();
        let mut coeffs = Vec::with_capacity(mesh.n_cells() * nl);
        for c in 0..mesh.n_cells() {
            let r = mesh.rect(c);
            for a in 0..nl {
                coeffs.push(f(c, r.map(space.element.node(a))));
            }
        }
        DgField {
            mesh,
            space,
            coeffs,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn degree(&self) -> usize {
        self.space.degree()
    }

    pub fn n_dofs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn local(&self, c: usize) -> &[f64] {
        let n = self.space.n_local();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, r: [f64; 2]) -> Pointwise {
        let ev = self.space.element.eval(r);
        combine(&ev, self.local(c), &self.mesh.rect(c))
    }

    pub fn at_eval(&self, c: usize, ev: &BasisEval) -> Pointwise {
        combine(ev, self.local(c), &self.mesh.rect(c))
    }

    pub fn value(&self, c: usize, r: [f64; 2]) -> f64 {
        let v = self.space.element.values(r);
        v.iter().zip(self.local(c)).map(|(a, b)| a * b).sum()
    }

    /// Value at a physical point, `None` outside the domain.
    pub fn eval(&self, p: [f64; 2]) -> Option<f64> {
        let c = self.mesh.locate(p)?;
        Some(self.value(c, self.mesh.rect(c).to_ref(p)))
    }

    /// Value at `p` of the cell reached from inside `host`.
    pub fn eval_from(&self, p: [f64; 2], host: &Rect) -> Pointwise {
        let c = self
            .mesh
            .locate_from(p, host)
            .expect("point inside the domain");
        self.at(c, self.mesh.rect(c).to_ref(p))
    }

    fn check_same(&self, other: &DgField) -> Result<()> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) && self.mesh.cells() != other.mesh.cells() {
            return Err(Error::IncompatibleMeshes("fields live on different meshes".into()));
        }
        if self.degree() != other.degree() {
            return Err(Error::DimensionMismatch("fields have different degrees".into()));
        }
        Ok(())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &DgField) -> Result<DgField> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (x, y) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> DgField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x *= a);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.coeffs.iter().all(|x| x.is_finite())
    }
}

/// L2 projection of `f` onto the discontinuous Q^k space using a
/// `nq`-point Gauss rule per direction.
pub fn l2_project(
    mesh: Arc<Mesh>,
    space: Arc<DgSpace>,
    nq: usize,
    f: impl Fn([f64; 2]) -> f64,
) -> DgField {
    l2_project_cellwise(mesh, space, nq, |_, p| f(p))
}

/// L2 projection of a per-cell function `f(cell, x)`.
pub fn l2_project_cellwise(
    mesh: Arc<Mesh>,
    space: Arc<DgSpace>,
    nq: usize,
    f: impl Fn(usize, [f64; 2]) -> f64,
) -> DgField {
    let rule = Rule2d::tensor(&gauss_legendre(nq));
    let evals: Vec<Vec<f64>> = rule.points.iter().map(|p| space.element.values(*p)).collect();
    let nl = space.n_local();
    let mut coeffs = Vec::with_capacity(mesh.n_cells() * nl);
    for c in 0..mesh.n_cells() {
        let r = mesh.rect(c);
        let mut rhs = vec![0.0; nl];
        for (q, p) in rule.points.iter().enumerate() {
            let fv = f(c, r.map(*p)) * rule.weights[q];
            for a in 0..nl {
                rhs[a] += fv * evals[q][a];
            }
        }
        coeffs.extend(space.apply_mass_inv(&rhs));
    }
    DgField {
        mesh,
        space,
        coeffs,
    }
}

/// Moves a field to another mesh of the same quadtree: exact on refined
/// cells, L2 projection on coarsened cells.
pub fn transfer(field: &DgField, target: Arc<Mesh>) -> Result<DgField> {
    let map = TransferMap::between(field.mesh(), &target)?;
    transfer_with(field, target, &map)
}

pub fn transfer_with(field: &DgField, target: Arc<Mesh>, map: &TransferMap) -> Result<DgField> {
    let space = field.space.clone();
    let nl = space.n_local();
    if map.relations.len() != target.n_cells() {
        return Err(Error::DimensionMismatch("transfer map does not match target".into()));
    }
    let src = field.mesh();
    let rule = Rule2d::tensor(&gauss_legendre(space.degree() + 1));
    let mut coeffs = Vec::with_capacity(target.n_cells() * nl);
    for (c, rel) in map.relations.iter().enumerate() {
        let tr = target.rect(c);
        match rel {
            CellRelation::Same(s) => coeffs.extend_from_slice(field.local(*s)),
            CellRelation::Inside(s) => {
                let sr = src.rect(*s);
                for a in 0..nl {
                    let p = tr.map(space.element.node(a));
                    coeffs.push(field.value(*s, sr.to_ref(p)));
                }
            }
            CellRelation::Union(list) => {
                let mut rhs = vec![0.0; nl];
                for &s in list {
                    let sr = src.rect(s);
                    let scale = sr.area() / tr.area();
                    for (q, p) in rule.points.iter().enumerate() {
                        let x = sr.map(*p);
                        let v = field.value(s, *p) * rule.weights[q] * scale;
                        let phi = space.element.values(tr.to_ref(x));
                        for a in 0..nl {
                            rhs[a] += v * phi[a];
                        }
                    }
                }
                coeffs.extend(space.apply_mass_inv(&rhs));
            }
        }
    }
    DgField::from_coeffs(target, space, coeffs)
}

/// Host cell in `coarse` of every cell of `fine`, which must refine it.
pub fn host_cells(coarse: &Mesh, fine: &Mesh) -> Result<Vec<usize>> {
    let map = TransferMap::between(coarse, fine)?;
    map.relations
        .into_iter()
        .map(|r| match r {
            CellRelation::Same(c) | CellRelation::Inside(c) => Ok(c),
            CellRelation::Union(_) => Err(Error::IncompatibleMeshes(
                "mesh does not refine the host mesh".into(),
            )),
        })
        .collect()
}

/// L2 projection onto the dG space of `target` of a function given piecewise
/// on `fine`, a refinement of `target`; `g(fine_cell, x)`.
pub fn project_from_fine(
    target: Arc<Mesh>,
    space: Arc<DgSpace>,
    fine: &Mesh,
    nq: usize,
    g: impl Fn(usize, [f64; 2]) -> f64,
) -> Result<DgField> {
    let hosts = host_cells(&target, fine)?;
    let rule = Rule2d::tensor(&gauss_legendre(nq));
    let nl = space.n_local();
    let mut rhs = vec![0.0; target.n_cells() * nl];
    for (c, &k) in hosts.iter().enumerate() {
        let fr = fine.rect(c);
        let kr = target.rect(k);
        let scale = fr.area() / kr.area();
        for (q, p) in rule.points.iter().enumerate() {
            let x = fr.map(*p);
            let v = g(c, x) * rule.weights[q] * scale;
            let phi = space.element.values(kr.to_ref(x));
            for a in 0..nl {
                rhs[k * nl + a] += v * phi[a];
            }
        }
    }
    let mut coeffs = Vec::with_capacity(rhs.len());
    for k in 0..target.n_cells() {
        coeffs.extend(space.apply_mass_inv(&rhs[k * nl..(k + 1) * nl]));
    }
    DgField::from_coeffs(target, space, coeffs)
}

/// Cell-wise L2 inner product of two fields on one mesh.
pub fn l2_inner(a: &DgField, b: &DgField) -> f64 {
    let rule = a.space.default_rule();
    let evals: Vec<Vec<f64>> = rule.points.iter().map(|p| a.space.element.values(*p)).collect();
    let mut s = 0.0;
    for c in 0..a.mesh.n_cells() {
        let area = a.mesh.rect(c).area();
        for (q, ev) in evals.iter().enumerate() {
            let va: f64 = ev.iter().zip(a.local(c)).map(|(x, y)| x * y).sum();
            let vb: f64 = ev.iter().zip(b.local(c)).map(|(x, y)| x * y).sum();
            s += rule.weights[q] * area * va * vb;
        }
    }
    s
}

/// L2 distance between a field and a function, `nq` points per direction.
pub fn l2_error(u: &DgField, nq: usize, f: impl Fn([f64; 2]) -> f64) -> f64 {
    let rule = Rule2d::tensor(&gauss_legendre(nq));
    let evals: Vec<Vec<f64>> = rule.points.iter().map(|p| u.space.element.values(*p)).collect();
    let mut s = 0.0;
    for c in 0..u.mesh.n_cells() {
        let r = u.mesh.rect(c);
        for (q, ev) in evals.iter().enumerate() {
            let v: f64 = ev.iter().zip(u.local(c)).map(|(x, y)| x * y).sum();
            let e = v - f(r.map(rule.points[q]));
            s += rule.weights[q] * r.area() * e * e;
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryLabels, Domain, Flag};

    fn unit(levels: u8) -> Arc<Mesh> {
        Arc::new(
            Mesh::create_uniform(Domain::unit_square(), levels, BoundaryLabels::all_dirichlet())
                .unwrap(),
        )
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let m = unit(1);
        let sp = DgSpace::new(2);
        let f = |p: [f64; 2]| 1.0 + p[0] - 2.0 * p[0] * p[1] + p[1] * p[1] * p[0] * p[0];
        let u = l2_project(m, sp, 4, f);
        assert!(l2_error(&u, 6, f) < 1e-13);
    }

    #[test]
    fn transfer_roundtrip_after_refine() {
        let m = unit(1);
        let sp = DgSpace::new(2);
        let u = l2_project(m.clone(), sp, 4, |p| (3.0 * p[0]).sin() * p[1]);
        let mut flags = vec![Flag::Keep; 4];
        flags[1] = Flag::Refine;
        let (fine, _) = m.execute_adaptation(&flags).unwrap();
        let v = transfer(&u, Arc::new(fine)).unwrap();
        let back = transfer(&v, m).unwrap();
        for (a, b) in u.coeffs().iter().zip(back.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
