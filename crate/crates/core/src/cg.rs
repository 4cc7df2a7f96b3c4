//! Continuous Q^k spaces on quadtree meshes, with hanging-node constraints.
//!
//! Nodes on a fine side of a hanging face are expressed through the nodes of
//! the coarse side by evaluating the coarse 1D Lagrange basis. Chains of
//! constraints are expanded before numbering, so every local node maps to a
//! short list of `(dof, weight)` pairs.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{combine, DgField, DgSpace, Pointwise};
use crate::linalg::{CsrMatrix, DirectSolver, TripletBuilder};
use crate::mesh::{CellKey, Mesh, Side, MAX_LEVEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum NodeKey {
    Vertex(u64, u64),
    /// edge with normal axis `axis` at lattice line `line`, cell-level
    /// position `along`, local index `idx`
    Edge {
        axis: u8,
        level: u8,
        line: u32,
        along: u32,
        idx: u16,
    },
    Interior(CellKey, u16),
}

fn vertex(k: &CellKey, di: u32, dj: u32) -> NodeKey {
    let s = MAX_LEVEL - k.level;
    NodeKey::Vertex(((k.i + di) as u64) << s, ((k.j + dj) as u64) << s)
}

/// Keys of the k + 1 nodes along one side of a cell, in increasing coordinate.
fn side_keys(k: &CellKey, side: Side, deg: usize) -> Vec<NodeKey> {
    let (axis, line, along, v0, v1) = match side {
        Side::Left => (0u8, k.i, k.j, vertex(k, 0, 0), vertex(k, 0, 1)),
        Side::Right => (0, k.i + 1, k.j, vertex(k, 1, 0), vertex(k, 1, 1)),
        Side::Bottom => (1, k.j, k.i, vertex(k, 0, 0), vertex(k, 1, 0)),
        Side::Top => (1, k.j + 1, k.i, vertex(k, 0, 1), vertex(k, 1, 1)),
    };
    let mut out = vec![v0];
    for m in 1..deg {
        out.push(NodeKey::Edge {
            axis,
            level: k.level,
            line,
            along,
            idx: m as u16,
        });
    }
    out.push(v1);
    out
}

fn local_key(k: &CellKey, a1: usize, a2: usize, deg: usize) -> NodeKey {
    let e1 = a1 == 0 || a1 == deg;
    let e2 = a2 == 0 || a2 == deg;
    match (e1, e2) {
        (true, true) => vertex(k, (a1 == deg) as u32, (a2 == deg) as u32),
        (true, false) => side_keys(k, if a1 == 0 { Side::Left } else { Side::Right }, deg)[a2],
        (false, true) => side_keys(k, if a2 == 0 { Side::Bottom } else { Side::Top }, deg)[a1],
        (false, false) => NodeKey::Interior(*k, (a1 + (deg + 1) * a2) as u16),
    }
}

/// Continuous Q^k space with constrained hanging nodes.
#[derive(Debug)]
pub struct CgSpace {
    mesh: Arc<Mesh>,
    dg: Arc<DgSpace>,
    cell_dofs: Vec<Vec<Vec<(usize, f64)>>>,
    positions: Vec<[f64; 2]>,
}

impl CgSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Arc<Self>> {
        if degree == 0 {
            return Err(Error::InvalidCoefficients("continuous spaces need degree >= 1".into()));
        }
        let dg = DgSpace::new(degree);
        let line = &dg.element.line;
        let deg = degree;
        let mut constraints: HashMap<NodeKey, Vec<(NodeKey, f64)>> = HashMap::new();
        for k in mesh.cells() {
            for side in Side::ALL {
                let Some(nk) = k.neighbor(side) else { continue };
                if mesh.cell_index(&nk).is_some() {
                    continue;
                }
                let Some(parent) = nk.parent() else { continue };
                let Some(cc) = mesh.cell_index(&parent) else { continue };
                let coarse = mesh.key(cc);
                let opp = match side {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                    Side::Bottom => Side::Top,
                    Side::Top => Side::Bottom,
                };
                let masters = side_keys(&coarse, opp, deg);
                let fine = side_keys(k, side, deg);
                let along = if side.normal_axis() == 0 { k.j } else { k.i };
                let offset = 0.5 * (along - 2 * if side.normal_axis() == 0 { coarse.j } else { coarse.i }) as f64;
                for (m, key) in fine.iter().enumerate() {
                    if masters.contains(key) {
                        continue;
                    }
                    let t = offset + 0.5 * line.nodes[m];
                    let combo: Vec<(NodeKey, f64)> = masters
                        .iter()
                        .enumerate()
                        .map(|(mm, mk)| (*mk, line.value(mm, t)))
                        .filter(|(_, w)| w.abs() > 1e-14)
                        .collect();
                    constraints.entry(*key).or_insert(combo);
                }
            }
        }
        fn expand(
            key: NodeKey,
            cons: &HashMap<NodeKey, Vec<(NodeKey, f64)>>,
            depth: usize,
            out: &mut Vec<(NodeKey, f64)>,
            w: f64,
        ) {
            assert!(depth < 64, "cyclic hanging-node constraints");
            match cons.get(&key) {
                None => out.push((key, w)),
                Some(list) => {
                    for (m, wm) in list {
                        expand(*m, cons, depth + 1, out, w * wm);
                    }
                }
            }
        }
        let mut numbering: HashMap<NodeKey, usize> = HashMap::new();
        let mut positions = Vec::new();
        let mut cell_dofs = Vec::with_capacity(mesh.n_cells());
        let n = deg + 1;
        // positions of unconstrained keys: take them from the cell that has them
        let mut key_pos: HashMap<NodeKey, [f64; 2]> = HashMap::new();
        for (c, k) in mesh.cells().iter().enumerate() {
            let r = mesh.rect(c);
            for a2 in 0..n {
                for a1 in 0..n {
                    let key = local_key(k, a1, a2, deg);
                    key_pos
                        .entry(key)
                        .or_insert_with(|| r.map([line.nodes[a1], line.nodes[a2]]));
                }
            }
        }
        for k in mesh.cells() {
            let mut locals = Vec::with_capacity(n * n);
            for a2 in 0..n {
                for a1 in 0..n {
                    let key = local_key(k, a1, a2, deg);
                    let mut raw = Vec::new();
                    expand(key, &constraints, 0, &mut raw, 1.0);
                    let mut merged: Vec<(usize, f64)> = Vec::new();
                    for (mk, w) in raw {
                        let next = numbering.len();
                        let d = *numbering.entry(mk).or_insert_with(|| {
                            positions.push(key_pos[&mk]);
                            next
                        });
                        if let Some(e) = merged.iter_mut().find(|e| e.0 == d) {
                            e.1 += w;
                        } else {
                            merged.push((d, w));
                        }
                    }
                    merged.retain(|e| e.1.abs() > 1e-14);
                    locals.push(merged);
                }
            }
            cell_dofs.push(locals);
        }
        Ok(Arc::new(CgSpace {
            mesh,
            dg,
            cell_dofs,
            positions,
        }))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dg(&self) -> &Arc<DgSpace> {
        &self.dg
    }

    pub fn degree(&self) -> usize {
        self.dg.degree()
    }

    pub fn n_dofs(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, d: usize) -> [f64; 2] {
        self.positions[d]
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// `(dof, weight)` expansion of local node `a` of cell `c`.
    pub fn local_dofs(&self, c: usize, a: usize) -> &[(usize, f64)] {
        &self.cell_dofs[c][a]
    }

    /// DoFs on the given domain side.
    pub fn on_side(&self, side: Side) -> Vec<bool> {
        let d = self.mesh.domain();
        let tol = 1e-12 * (d.width() + d.height());
        self.positions
            .iter()
            .map(|p| match side {
                Side::Left => (p[0] - d.x0).abs() < tol,
                Side::Right => (p[0] - d.x1).abs() < tol,
                Side::Bottom => (p[1] - d.y0).abs() < tol,
                Side::Top => (p[1] - d.y1).abs() < tol,
            })
            .collect()
    }

    pub fn on_boundary(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_dofs()];
        for s in Side::ALL {
            for (o, b) in out.iter_mut().zip(self.on_side(s)) {
                *o |= b;
            }
        }
        out
    }

    /// Scatters a local `n_local x n_local` block into global triplets with
    /// the given row/column offsets.
    pub fn scatter(
        &self,
        c: usize,
        block: &[f64],
        row_off: usize,
        col_off: usize,
        col_space: &CgSpace,
        out: &mut TripletBuilder,
    ) {
        let nr = self.dg.n_local();
        let nc = col_space.dg.n_local();
        for a in 0..nr {
            for b in 0..nc {
                let v = block[a * nc + b];
                if v == 0.0 {
                    continue;
                }
                for &(i, wi) in &self.cell_dofs[c][a] {
                    for &(j, wj) in &col_space.cell_dofs[c][b] {
                        out.add(row_off + i, col_off + j, wi * wj * v);
                    }
                }
            }
        }
    }

    pub fn scatter_vec(&self, c: usize, local: &[f64], off: usize, out: &mut [f64]) {
        for (a, v) in local.iter().enumerate() {
            for &(i, w) in &self.cell_dofs[c][a] {
                out[off + i] += w * v;
            }
        }
    }
}

/// Field in a continuous Q^k space.
#[derive(Clone, Debug)]
pub struct CgField {
    space: Arc<CgSpace>,
    coeffs: Vec<f64>,
}

impl CgField {
    pub fn zeros(space: Arc<CgSpace>) -> Self {
        let n = space.n_dofs();
        CgField {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coeffs(space: Arc<CgSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} dofs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(CgField { space, coeffs })
    }

    /// Nodal interpolation at the unconstrained nodes.
    pub fn interpolate(space: Arc<CgSpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let coeffs = space.positions.iter().map(|p| f(*p)).collect();
        CgField { space, coeffs }
    }

    pub fn space(&self) -> &Arc<CgSpace> {
        &self.space
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.space.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn local(&self, c: usize) -> Vec<f64> {
        self.space.cell_dofs[c]
            .iter()
            .map(|list| list.iter().map(|(d, w)| w * self.coeffs[*d]).sum())
            .collect()
    }

    pub fn at(&self, c: usize, r: [f64; 2]) -> Pointwise {
        let ev = self.space.dg.element.eval(r);
        combine(&ev, &self.local(c), &self.space.mesh.rect(c))
    }

    pub fn eval(&self, p: [f64; 2]) -> Option<f64> {
        let m = &self.space.mesh;
        let c = m.locate(p)?;
        Some(self.at(c, m.rect(c).to_ref(p)).value)
    }

    pub fn to_dg(&self) -> DgField {
        let mesh = self.space.mesh.clone();
        let mut coeffs = Vec::with_capacity(mesh.n_cells() * self.space.dg.n_local());
        for c in 0..mesh.n_cells() {
            coeffs.extend(self.local(c));
        }
        DgField::from_coeffs(mesh, self.space.dg.clone(), coeffs).expect("consistent sizes")
    }

    /// Nodal interpolation onto another continuous space.
    pub fn transfer(&self, target: Arc<CgSpace>) -> CgField {
        let src = &self.space.mesh;
        let coeffs = target
            .positions
            .iter()
            .map(|p| {
                let c = src.locate(*p).expect("node inside the domain");
                self.at(c, src.rect(c).to_ref(*p)).value
            })
            .collect();
        CgField {
            space: target,
            coeffs,
        }
    }
}

/// Stiffness matrix `(grad phi_i, grad phi_j)` and load `(g, phi_i)`.
pub fn assemble_laplace(
    space: &CgSpace,
    nq: usize,
    g: impl Fn(usize, [f64; 2]) -> f64,
) -> (TripletBuilder, Vec<f64>) {
    let rule = crate::quadrature::Rule2d::tensor(&crate::quadrature::gauss_legendre(nq));
    let el = &space.dg.element;
    let evals: Vec<_> = rule.points.iter().map(|p| el.eval(*p)).collect();
    let nl = el.n_local();
    let mut trips = TripletBuilder::new(space.n_dofs());
    let mut rhs = vec![0.0; space.n_dofs()];
    for c in 0..space.mesh.n_cells() {
        let r = space.mesh.rect(c);
        let mut block = vec![0.0; nl * nl];
        let mut load = vec![0.0; nl];
        for (q, ev) in evals.iter().enumerate() {
            let w = rule.weights[q] * r.area();
            let x = r.map(rule.points[q]);
            let gv = g(c, x);
            for a in 0..nl {
                let ga = [ev.grad[a][0] / r.hx, ev.grad[a][1] / r.hy];
                load[a] += w * gv * ev.value[a];
                for b in 0..nl {
                    let gb = [ev.grad[b][0] / r.hx, ev.grad[b][1] / r.hy];
                    block[a * nl + b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                }
            }
        }
        space.scatter(c, &block, 0, 0, space, &mut trips);
        space.scatter_vec(c, &load, 0, &mut rhs);
    }
    (trips, rhs)
}

/// Solves `(grad u, grad v) = (g, v)` with `u = 0` on the boundary.
pub fn solve_poisson_dirichlet0(
    space: Arc<CgSpace>,
    nq: usize,
    g: impl Fn(usize, [f64; 2]) -> f64,
) -> Result<CgField> {
    let (trips, mut rhs) = assemble_laplace(&space, nq, g);
    let fixed = space.on_boundary();
    let mut a: CsrMatrix = trips.into_csr();
    a.constrain(&fixed);
    for (r, f) in rhs.iter_mut().zip(&fixed) {
        if *f {
            *r = 0.0;
        }
    }
    let x = DirectSolver::new(a)?.solve(&rhs)?;
    CgField::from_coeffs(space, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryLabels, Domain, Flag};

    fn hanging_mesh() -> Arc<Mesh> {
        let m = Mesh::create_uniform(Domain::unit_square(), 1, BoundaryLabels::all_dirichlet()).unwrap();
        let mut flags = vec![Flag::Keep; 4];
        flags[0] = Flag::Refine;
        let (m2, _) = m.execute_adaptation(&flags).unwrap();
        let mut f2 = vec![Flag::Keep; m2.n_cells()];
        f2[m2.cell_index(&CellKey::new(2, 1, 1)).unwrap()] = Flag::Refine;
        Arc::new(m2.execute_adaptation(&f2).unwrap().0)
    }

    #[test]
    fn continuous_across_hanging_faces() {
        let m = hanging_mesh();
        for deg in 1..4 {
            let s = CgSpace::new(m.clone(), deg).unwrap();
            let coeffs: Vec<f64> = (0..s.n_dofs()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
            let u = CgField::from_coeffs(s, coeffs).unwrap();
            for f in m.faces().iter().filter(|f| f.is_interior()) {
                for s in [0.0, 0.3, 0.5, 0.77, 1.0] {
                    let a = u.at(f.minus, f.minus_map.ref_point(s)).value;
                    let b = u.at(f.plus.unwrap(), f.plus_map.unwrap().ref_point(s)).value;
                    assert!((a - b).abs() < 1e-12, "deg {deg} jump {}", a - b);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let m = hanging_mesh();
        let s = CgSpace::new(m, 2).unwrap();
        let f = |p: [f64; 2]| p[0] * p[0] - p[0] * p[1] + 2.0;
        let u = CgField::interpolate(s, f);
        for p in [[0.1, 0.2], [0.33, 0.71], [0.9, 0.05]] {
            assert!((u.eval(p).unwrap() - f(p)).abs() < 1e-13);
        }
    }

    #[test]
    fn poisson_exact_for_quadratics() {
        let m = hanging_mesh();
        drop(m);
        let s2 = CgSpace::new(hanging_mesh(), 4).unwrap();
        let g = |p: [f64; 2]| 2.0 * (p[0] * (1.0 - p[0]) + p[1] * (1.0 - p[1]));
        let u2 = solve_poisson_dirichlet0(s2, 6, |_, p| g(p)).unwrap();
        for p in [[0.1, 0.2], [0.5, 0.5], [0.8, 0.3]] {
            let e = p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
            assert!((u2.eval(p).unwrap() - e).abs() < 1e-10);
        }
    }
}
