//! Coefficient fields evaluated at points attached to a host cell.
//!
//! Discrete coefficients are piecewise polynomials on their own mesh. The
//! host cell decides which piece is used at points on cell boundaries.

use std::fmt;
use std::sync::Arc;

use crate::cg::CgField;
use crate::fem::DgField;
use crate::mesh::{Mesh, Rect};

/// Evaluation point: physical position, time, and the cell it belongs to.
#[derive(Clone, Copy, Debug)]
pub struct Point {
    pub x: [f64; 2],
    pub t: f64,
    pub mesh_id: u64,
    pub cell: usize,
    pub rect: Rect,
}

impl Point {
    pub fn new(mesh: &Mesh, cell: usize, r: [f64; 2], t: f64) -> Self {
        let rect = mesh.rect(cell);
        Point {
            x: rect.map(r),
            t,
            mesh_id: mesh.id(),
            cell,
            rect,
        }
    }

    /// A point on a mesh-free evaluation (host is a tiny box around `x`).
    pub fn free(x: [f64; 2], t: f64) -> Self {
        Point {
            x,
            t,
            mesh_id: 0,
            cell: usize::MAX,
            rect: Rect {
                x0: x[0],
                y0: x[1],
                hx: 0.0,
                hy: 0.0,
            },
        }
    }
}

pub type ScalarFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// Scalar coefficient.
#[derive(Clone)]
pub enum Coef {
    Const(f64),
    Analytic(ScalarFn),
    Field(Arc<DgField>),
    /// Anything that needs the host cell, e.g. a fitted reaction.
    Pointwise(PointFn),
}

pub type PointFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

impl fmt::Debug for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Const(v) => write!(f, "Const({v})"),
            Coef::Analytic(_) => write!(f, "Analytic"),
            Coef::Field(_) => write!(f, "Field"),
            Coef::Pointwise(_) => write!(f, "Pointwise"),
        }
    }
}

impl Coef {
    pub fn analytic(f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Analytic(Arc::new(f))
    }

    pub fn zero() -> Self {
        Coef::Const(0.0)
    }

    pub fn pointwise(f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Pointwise(Arc::new(f))
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Coef::Const(v) => *v,
            Coef::Analytic(f) => f(p.x, p.t),
            Coef::Field(u) => dg_at(u, p).value,
            Coef::Pointwise(f) => f(p),
        }
    }
}

pub(crate) fn dg_at(u: &DgField, p: &Point) -> crate::fem::Pointwise {
    let m = u.mesh();
    if m.id() == p.mesh_id {
        u.at(p.cell, p.rect.to_ref(p.x))
    } else if p.rect.hx > 0.0 {
        u.eval_from(p.x, &p.rect)
    } else {
        let c = m.locate(p.x).expect("point inside the domain");
        u.at(c, m.rect(c).to_ref(p.x))
    }
}

pub(crate) fn cg_at(u: &CgField, p: &Point) -> crate::fem::Pointwise {
    let m = u.mesh();
    let c = if m.id() == p.mesh_id {
        p.cell
    } else if p.rect.hx > 0.0 {
        m.locate_from(p.x, &p.rect).expect("point inside the domain")
    } else {
        m.locate(p.x).expect("point inside the domain")
    };
    u.at(c, m.rect(c).to_ref(p.x))
}

/// Value and divergence of a convection field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConvectionValue {
    pub b: [f64; 2],
    pub div: f64,
}

pub type VectorFn = Arc<dyn Fn([f64; 2], f64) -> ConvectionValue + Send + Sync>;

/// Prescribed or discrete convection field.
#[derive(Clone)]
pub enum Convection {
    Analytic(VectorFn),
    /// Continuous velocity components, e.g. from a Stokes solve.
    Discrete(Arc<[CgField; 2]>),
}

impl fmt::Debug for Convection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Convection::Analytic(_) => write!(f, "Analytic"),
            Convection::Discrete(_) => write!(f, "Discrete"),
        }
    }
}

impl Convection {
    pub fn analytic(f: impl Fn([f64; 2], f64) -> ConvectionValue + Send + Sync + 'static) -> Self {
        Convection::Analytic(Arc::new(f))
    }

    pub fn zero() -> Self {
        Convection::analytic(|_, _| ConvectionValue::default())
    }

    pub fn eval(&self, p: &Point) -> ConvectionValue {
        match self {
            Convection::Analytic(f) => f(p.x, p.t),
            Convection::Discrete(v) => {
                let a = cg_at(&v[0], p);
                let b = cg_at(&v[1], p);
                ConvectionValue {
                    b: [a.value, b.value],
                    div: a.grad[0] + b.grad[1],
                }
            }
        }
    }
}

/// Value, gradient and Laplacian of a scalar potential.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PotentialValue {
    pub eta: f64,
    pub grad: [f64; 2],
    pub lap: f64,
}

pub type PotentialFn = Arc<dyn Fn([f64; 2]) -> PotentialValue + Send + Sync>;

/// Helmholtz potential used by the exponential fitting.
#[derive(Clone)]
pub enum Potential {
    Zero,
    Analytic(PotentialFn),
    /// Elementwise gradient and Laplacian of a continuous field.
    Discrete(Arc<CgField>),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Analytic(_) => write!(f, "Analytic"),
            Potential::Discrete(_) => write!(f, "Discrete"),
        }
    }
}

impl Potential {
    pub fn analytic(f: impl Fn([f64; 2]) -> PotentialValue + Send + Sync + 'static) -> Self {
        Potential::Analytic(Arc::new(f))
    }

    pub fn eval(&self, p: &Point) -> PotentialValue {
        match self {
            Potential::Zero => PotentialValue::default(),
            Potential::Analytic(f) => f(p.x),
            Potential::Discrete(u) => {
                let v = cg_at(u, p);
                PotentialValue {
                    eta: v.value,
                    grad: v.grad,
                    lap: v.lap,
                }
            }
        }
    }
}
