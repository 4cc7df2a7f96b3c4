//! Tensor-product Lagrange bases on the reference square `[0, 1]^2`.
//!
//! Local node `i + (k + 1) * j` sits at `(x_i, x_j)` where `x` are the
//! Gauss–Lobatto points of degree `k`.

use crate::quadrature::gauss_lobatto_points;

/// A 1D polynomial stored by monomial coefficients, lowest degree first.
#[derive(Clone, Debug)]
struct Poly(Vec<f64>);

impl Poly {
    fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(p, c)| p as f64 * c)
                .collect(),
        )
    }
}

/// Lagrange basis on `[0, 1]` through a given set of nodes.
#[derive(Clone, Debug)]
pub struct Lagrange1d {
    pub nodes: Vec<f64>,
    value: Vec<Poly>,
    d1: Vec<Poly>,
    d2: Vec<Poly>,
}

impl Lagrange1d {
    pub fn new(nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        let mut value = Vec::with_capacity(n);
        for i in 0..n {
            let mut c = vec![1.0];
            let mut denom = 1.0;
            for (m, &xm) in nodes.iter().enumerate() {
                if m == i {
                    continue;
                }
                // multiply by (x - xm)
                let mut next = vec![0.0; c.len() + 1];
                for (p, &cp) in c.iter().enumerate() {
                    next[p + 1] += cp;
                    next[p] -= xm * cp;
                }
                c = next;
                denom *= nodes[i] - xm;
            }
            value.push(Poly(c.into_iter().map(|v| v / denom).collect()));
        }
        let d1: Vec<Poly> = value.iter().map(Poly::derivative).collect();
        let d2: Vec<Poly> = d1.iter().map(Poly::derivative).collect();
        Lagrange1d {
            nodes,
            value,
            d1,
            d2,
        }
    }

    pub fn gauss_lobatto(k: usize) -> Self {
        Self::new(gauss_lobatto_points(k))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, i: usize, x: f64) -> f64 {
        self.value[i].eval(x)
    }

    pub fn deriv(&self, i: usize, x: f64) -> f64 {
        self.d1[i].eval(x)
    }

    pub fn deriv2(&self, i: usize, x: f64) -> f64 {
        self.d2[i].eval(x)
    }
}

/// Values and reference derivatives of every basis function at one point.
#[derive(Clone, Debug, Default)]
pub struct BasisEval {
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    /// `(d_xx, d_yy)` in reference coordinates
    pub hess_diag: Vec<[f64; 2]>,
}

/// Q^k Lagrange element on the reference square.
#[derive(Clone, Debug)]
pub struct QkElement {
    pub degree: usize,
    pub line: Lagrange1d,
}

impl QkElement {
    pub fn new(degree: usize) -> Self {
        QkElement {
            degree,
            line: Lagrange1d::gauss_lobatto(degree),
        }
    }

    pub fn n_local(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn n_line(&self) -> usize {
        self.degree + 1
    }

    /// Reference coordinates of local node `a`.
    pub fn node(&self, a: usize) -> [f64; 2] {
        let n = self.n_line();
        [self.line.nodes[a % n], self.line.nodes[a / n]]
    }

    pub fn eval(&self, p: [f64; 2]) -> BasisEval {
        let n = self.n_line();
        let vx: Vec<f64> = (0..n).map(|i| self.line.value(i, p[0])).collect();
        let vy: Vec<f64> = (0..n).map(|i| self.line.value(i, p[1])).collect();
        let dx: Vec<f64> = (0..n).map(|i| self.line.deriv(i, p[0])).collect();
        let dy: Vec<f64> = (0..n).map(|i| self.line.deriv(i, p[1])).collect();
        let ddx: Vec<f64> = (0..n).map(|i| self.line.deriv2(i, p[0])).collect();
        let ddy: Vec<f64> = (0..n).map(|i| self.line.deriv2(i, p[1])).collect();
        let mut out = BasisEval {
            value: Vec::with_capacity(n * n),
            grad: Vec::with_capacity(n * n),
            hess_diag: Vec::with_capacity(n * n),
        };
        for j in 0..n {
            for i in 0..n {
                out.value.push(vx[i] * vy[j]);
                out.grad.push([dx[i] * vy[j], vx[i] * dy[j]]);
                out.hess_diag.push([ddx[i] * vy[j], vx[i] * ddy[j]]);
            }
        }
        out
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        let n = self.n_line();
        let vx: Vec<f64> = (0..n).map(|i| self.line.value(i, p[0])).collect();
        let vy: Vec<f64> = (0..n).map(|i| self.line.value(i, p[1])).collect();
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                out.push(vx[i] * vy[j]);
            }
        }
        out
    }
}
