//! Preset problems: the four prescribed-flow cases, the van Keken
//! Rayleigh–Taylor benchmark, manufactured stationary solutions, and a
//! user-defined linear flow.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::boussinesq::Coupling;
use crate::coef::{Coef, Convection, ConvectionValue, Potential, PotentialValue, ScalarFn};
use crate::fitting::DeltaPolicy;
use crate::mesh::{BoundaryLabels, Domain};

/// Initial field shared by the prescribed-flow cases.
pub fn cases_initial(x: [f64; 2]) -> f64 {
    x[1] - 0.15 * (4.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()
}

/// Case 1: rigid rotation, zero potential.
pub fn case1_flow() -> (Convection, Potential) {
    (
        Convection::analytic(|x, _| ConvectionValue { b: [x[1], -x[0]], div: 0.0 }),
        Potential::Zero,
    )
}

/// Case 2: gradient of `e^x sin y` plus a rotation.
pub fn case2_flow() -> (Convection, Potential) {
    (
        Convection::analytic(|x, _| {
            let e = x[0].exp();
            ConvectionValue {
                b: [e * x[1].sin() + x[1], e * x[1].cos() - x[0]],
                div: 0.0,
            }
        }),
        Potential::analytic(|x| {
            let e = x[0].exp();
            PotentialValue {
                eta: e * x[1].sin(),
                grad: [e * x[1].sin(), e * x[1].cos()],
                lap: 0.0,
            }
        }),
    )
}

/// Case 3: `b = (x, y)`, potential `(x^2 + y^2) / 2`.
pub fn case3_flow() -> (Convection, Potential) {
    (
        Convection::analytic(|x, _| ConvectionValue { b: x, div: 2.0 }),
        Potential::analytic(|x| PotentialValue {
            eta: 0.5 * (x[0] * x[0] + x[1] * x[1]),
            grad: x,
            lap: 2.0,
        }),
    )
}

/// Case 4: `b = (x, x^2 + y^2)`, potential `x^2 / 2 + x^2 y`.
pub fn case4_flow() -> (Convection, Potential) {
    (
        Convection::analytic(|x, _| ConvectionValue {
            b: [x[0], x[0] * x[0] + x[1] * x[1]],
            div: 1.0 + 2.0 * x[1],
        }),
        Potential::analytic(|x| PotentialValue {
            eta: 0.5 * x[0] * x[0] + x[0] * x[0] * x[1],
            grad: [x[0] + 2.0 * x[0] * x[1], x[0] * x[0]],
            lap: 1.0 + 2.0 * x[1],
        }),
    )
}

pub const VAN_KEKEN_WIDTH: f64 = 0.9142;

/// Step profile with a perturbed interface at `y = 0.2 (1 + 0.1 cos(pi x / 0.9142))`.
pub fn van_keken_initial(x: [f64; 2]) -> f64 {
    if x[1] < 0.2 * (1.0 + 0.1 * (PI * x[0] / VAN_KEKEN_WIDTH).cos()) {
        1.0
    } else {
        0.0
    }
}

pub fn van_keken_domain() -> Domain {
    Domain::new(0.0, VAN_KEKEN_WIDTH, 0.0, 1.0).expect("valid box")
}

pub fn van_keken_coupling() -> Coupling {
    Coupling {
        viscosity: 100.0,
        density_scale: 1e6,
        gravity: [0.0, -9.81],
    }
}

/// A prescribed-flow transient problem.
#[derive(Clone)]
pub struct CaseSetup {
    pub domain: Domain,
    pub labels: BoundaryLabels,
    pub epsilon: f64,
    pub convection: Convection,
    pub potential: Potential,
    pub alpha: f64,
    pub delta: DeltaPolicy,
    pub source: Coef,
    pub dirichlet: Coef,
    pub initial: ScalarFn,
}

/// Prescribed-flow case `n` in 1..=4 with the standard data.
pub fn case(n: u8) -> Option<CaseSetup> {
    let (convection, potential) = match n {
        1 => case1_flow(),
        2 => case2_flow(),
        3 => case3_flow(),
        4 => case4_flow(),
        _ => return None,
    };
    let delta = match n {
        1 => DeltaPolicy::Zero,
        _ => DeltaPolicy::Auto,
    };
    Some(CaseSetup {
        domain: Domain::unit_square(),
        labels: BoundaryLabels::all_dirichlet(),
        epsilon: 1e-6,
        convection,
        potential,
        alpha: 1.0,
        delta,
        source: Coef::zero(),
        dirichlet: Coef::analytic(|x, _| cases_initial(x)),
        initial: Arc::new(|x, _| cases_initial(x)),
    })
}

/// Manufactured stationary solution with value and gradient.
#[derive(Clone)]
pub struct Manufactured {
    pub epsilon: f64,
    pub convection: Convection,
    pub exact: Arc<dyn Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync>,
    pub source: Coef,
}

impl Manufactured {
    pub fn dirichlet(&self) -> Coef {
        let e = self.exact.clone();
        Coef::analytic(move |x, _| e(x).0)
    }
}

/// `u = sin(pi x) sin(pi y)`, `b = (y, -x)`.
pub fn manufactured_smooth(epsilon: f64) -> Manufactured {
    let exact = |x: [f64; 2]| {
        let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
        (sx * sy, [PI * cx * sy, PI * sx * cy])
    };
    Manufactured {
        epsilon,
        convection: Convection::analytic(|x, _| ConvectionValue { b: [x[1], -x[0]], div: 0.0 }),
        exact: Arc::new(exact),
        source: Coef::analytic(move |x, _| {
            let (u, g) = exact(x);
            2.0 * PI * PI * epsilon * u + x[1] * g[0] - x[0] * g[1]
        }),
    }
}

/// Gaussian bump `exp(-a |x - x0|^2)` with `a = 200` at `(0.3, 0.3)`,
/// `b = (y, -x)`.
pub fn manufactured_peak(epsilon: f64) -> Manufactured {
    const A: f64 = 200.0;
    const C: [f64; 2] = [0.3, 0.3];
    let exact = |x: [f64; 2]| {
        let d = [x[0] - C[0], x[1] - C[1]];
        let u = (-A * (d[0] * d[0] + d[1] * d[1])).exp();
        (u, [-2.0 * A * d[0] * u, -2.0 * A * d[1] * u])
    };
    Manufactured {
        epsilon,
        convection: Convection::analytic(|x, _| ConvectionValue { b: [x[1], -x[0]], div: 0.0 }),
        exact: Arc::new(exact),
        source: Coef::analytic(move |x, _| {
            let (u, g) = exact(x);
            let d = [x[0] - C[0], x[1] - C[1]];
            let r2 = d[0] * d[0] + d[1] * d[1];
            let lap = (4.0 * A * A * r2 - 4.0 * A) * u;
            -epsilon * lap + x[1] * g[0] - x[0] * g[1]
        }),
    }
}

/// Linear flow `b = (a11 x + a12 y + c1, a21 x + a22 y + c2)`.
pub fn linear_flow(m: [f64; 6]) -> Convection {
    Convection::analytic(move |x, _| ConvectionValue {
        b: [m[0] * x[0] + m[1] * x[1] + m[2], m[3] * x[0] + m[4] * x[1] + m[5]],
        div: m[0] + m[4],
    })
}
