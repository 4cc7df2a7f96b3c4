//! Taylor–Hood Q2/Q1 Stokes solver with free slip on a box.
//!
//! `(2 mu e(v), e(phi)) - (div phi, p) = (F, phi)`, `-(div v, q) = 0`,
//! `v . n = 0` on the boundary and zero tangential traction (natural). The
//! pressure mean is fixed by a Lagrange multiplier.

use std::sync::Arc;

use crate::cg::{CgField, CgSpace};
use crate::coef::Point;
use crate::error::{Error, Result};
use crate::linalg::{DirectSolver, TripletBuilder};
use crate::mesh::{Mesh, Side};
use crate::quadrature::{gauss_legendre, Rule2d};

pub const VELOCITY_DEGREE: usize = 2;
pub const PRESSURE_DEGREE: usize = 1;

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub velocity: [CgField; 2],
    pub pressure: CgField,
}

impl StokesSolution {
    pub fn mesh(&self) -> &Arc<Mesh> {
        self.pressure.mesh()
    }

    /// Largest nodal velocity magnitude.
    pub fn max_speed(&self) -> f64 {
        let [vx, vy] = &self.velocity;
        vx.coeffs()
            .iter()
            .zip(vy.coeffs())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Solves the Stokes system for viscosity `mu(p) >= mu0 > 0` and body force
/// `force(p)` (already `-rho g`).
pub fn solve_stokes(
    mesh: Arc<Mesh>,
    viscosity: &dyn Fn(&Point) -> f64,
    force: &dyn Fn(&Point) -> [f64; 2],
) -> Result<StokesSolution> {
    let vs = CgSpace::new(mesh.clone(), VELOCITY_DEGREE)?;
    let ps = CgSpace::new(mesh.clone(), PRESSURE_DEGREE)?;
    let nv = vs.n_dofs();
    let np = ps.n_dofs();
    let n = 2 * nv + np + 1;
    let lag = n - 1;
    let rule = Rule2d::tensor(&gauss_legendre(VELOCITY_DEGREE + 2));
    let vel = &vs.dg().element;
    let pre = &ps.dg().element;
    let vev: Vec<_> = rule.points.iter().map(|p| vel.eval(*p)).collect();
    let pev: Vec<_> = rule.points.iter().map(|p| pre.eval(*p)).collect();
    let (nlv, nlp) = (vel.n_local(), pre.n_local());
    let mut trips = TripletBuilder::new(n);
    let mut rhs = vec![0.0; n];
    for c in 0..mesh.n_cells() {
        let r = mesh.rect(c);
        // blocks: xx, xy, yx, yy, bx (p rows x vel cols), by
        let mut axx = vec![0.0; nlv * nlv];
        let mut axy = vec![0.0; nlv * nlv];
        let mut ayx = vec![0.0; nlv * nlv];
        let mut ayy = vec![0.0; nlv * nlv];
        let mut bx = vec![0.0; nlp * nlv];
        let mut by = vec![0.0; nlp * nlv];
        let mut fx = vec![0.0; nlv];
        let mut fy = vec![0.0; nlv];
        let mut mean = vec![0.0; nlp];
        for (q, rp) in rule.points.iter().enumerate() {
            let w = rule.weights[q] * r.area();
            let p = Point::new(&mesh, c, *rp, 0.0);
            let mu = viscosity(&p);
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::InvalidCoefficients(format!("viscosity {mu} at {:?}", p.x)));
            }
            let fv = force(&p);
            let ev = &vev[q];
            let g: Vec<[f64; 2]> = (0..nlv).map(|a| [ev.grad[a][0] / r.hx, ev.grad[a][1] / r.hy]).collect();
            for a in 0..nlv {
                fx[a] += w * fv[0] * ev.value[a];
                fy[a] += w * fv[1] * ev.value[a];
                for b in 0..nlv {
                    let (ga, gb) = (g[a], g[b]);
                    // 2 mu e(u):e(v) expanded per component pair
                    axx[a * nlv + b] += w * mu * (2.0 * ga[0] * gb[0] + ga[1] * gb[1]);
                    ayy[a * nlv + b] += w * mu * (2.0 * ga[1] * gb[1] + ga[0] * gb[0]);
                    // row x-component test a, column y-component trial b
                    axy[a * nlv + b] += w * mu * ga[1] * gb[0];
                    ayx[a * nlv + b] += w * mu * ga[0] * gb[1];
                }
            }
            let pe = &pev[q];
            for i in 0..nlp {
                mean[i] += w * pe.value[i];
                for b in 0..nlv {
                    bx[i * nlv + b] -= w * pe.value[i] * g[b][0];
                    by[i * nlv + b] -= w * pe.value[i] * g[b][1];
                }
            }
        }
        vs.scatter(c, &axx, 0, 0, &vs, &mut trips);
        vs.scatter(c, &axy, 0, nv, &vs, &mut trips);
        vs.scatter(c, &ayx, nv, 0, &vs, &mut trips);
        vs.scatter(c, &ayy, nv, nv, &vs, &mut trips);
        ps.scatter(c, &bx, 2 * nv, 0, &vs, &mut trips);
        ps.scatter(c, &by, 2 * nv, nv, &vs, &mut trips);
        let bxt = transpose(&bx, nlp, nlv);
        let byt = transpose(&by, nlp, nlv);
        vs.scatter(c, &bxt, 0, 2 * nv, &ps, &mut trips);
        vs.scatter(c, &byt, nv, 2 * nv, &ps, &mut trips);
        vs.scatter_vec(c, &fx, 0, &mut rhs);
        vs.scatter_vec(c, &fy, nv, &mut rhs);
        let mut col = vec![0.0; np];
        ps.scatter_vec(c, &mean, 0, &mut col);
        for (j, v) in col.iter().enumerate() {
            if *v != 0.0 {
                trips.add(lag, 2 * nv + j, *v);
                trips.add(2 * nv + j, lag, *v);
            }
        }
    }
    let mut fixed = vec![false; n];
    for s in [Side::Left, Side::Right] {
        for (i, b) in vs.on_side(s).into_iter().enumerate() {
            fixed[i] |= b;
        }
    }
    for s in [Side::Bottom, Side::Top] {
        for (i, b) in vs.on_side(s).into_iter().enumerate() {
            fixed[nv + i] |= b;
        }
    }
    let mut a = trips.into_csr();
    a.constrain(&fixed);
    for (v, f) in rhs.iter_mut().zip(&fixed) {
        if *f {
            *v = 0.0;
        }
    }
    let x = DirectSolver::new(a)?.solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Stokes solve".into()));
    }
    Ok(StokesSolution {
        velocity: [
            CgField::from_coeffs(vs.clone(), x[..nv].to_vec())?,
            CgField::from_coeffs(vs, x[nv..2 * nv].to_vec())?,
        ],
        pressure: CgField::from_coeffs(ps, x[2 * nv..2 * nv + np].to_vec())?,
    })
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Zero velocity and pressure on a mesh.
pub fn at_rest(mesh: Arc<Mesh>) -> Result<StokesSolution> {
    let vs = CgSpace::new(mesh.clone(), VELOCITY_DEGREE)?;
    let ps = CgSpace::new(mesh, PRESSURE_DEGREE)?;
    Ok(StokesSolution {
        velocity: [CgField::zeros(vs.clone()), CgField::zeros(vs)],
        pressure: CgField::zeros(ps),
    })
}
