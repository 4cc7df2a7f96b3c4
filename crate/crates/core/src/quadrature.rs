//! One-dimensional Gauss rules on the unit interval and their tensor products.

use std::f64::consts::PI;

/// Points and weights on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Rule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Legendre polynomial P_n and its derivative at `x` in `[-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        // endpoint derivative
        let nf = n as f64;
        x.powi(n as i32 + 1) * nf * (nf + 1.0) / 2.0
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// n-point Gauss–Legendre rule mapped to `[0, 1]`, exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "a Gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    Rule1d { points, weights }
}

/// Gauss–Lobatto points on `[0, 1]` for polynomial degree `k` (k + 1 points).
pub fn gauss_lobatto_points(k: usize) -> Vec<f64> {
    assert!(k >= 1, "Lobatto points need degree at least one");
    let n = k + 1;
    let mut pts = vec![0.0; n];
    pts[0] = 0.0;
    pts[k] = 1.0;
    // interior points are the roots of P_k'
    for i in 1..k {
        let mut x = -(PI * i as f64 / k as f64).cos();
        for _ in 0..100 {
            // Newton on P_k' using (1 - x^2) P_k'' = 2x P_k' - k(k+1) P_k
            let (p, dp) = legendre(k, x);
            let kf = k as f64;
            let ddp = (2.0 * x * dp - kf * (kf + 1.0) * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        pts[i] = 0.5 * (x + 1.0);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts
}

/// Tensor-product rule on the unit square: points `(xi, eta)` and weights.
#[derive(Clone, Debug)]
pub struct Rule2d {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl Rule2d {
    pub fn tensor(r: &Rule1d) -> Self {
        let mut points = Vec::with_capacity(r.len() * r.len());
        let mut weights = Vec::with_capacity(r.len() * r.len());
        for j in 0..r.len() {
            for i in 0..r.len() {
                points.push([r.points[i], r.points[j]]);
                weights.push(r.weights[i] * r.weights[j]);
            }
        }
        Rule2d { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Three-point Gauss rule on `[0, 1]` used for time integrals.
pub fn time_rule() -> Rule1d {
    gauss_legendre(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_monomials_exactly() {
        for n in 1..8 {
            let r = gauss_legendre(n);
            for p in 0..(2 * n) {
                let q: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(p as i32))
                    .sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn lobatto_points_are_symmetric_and_include_endpoints() {
        for k in 1..7 {
            let p = gauss_lobatto_points(k);
            assert_eq!(p.len(), k + 1);
            assert_eq!(p[0], 0.0);
            assert_eq!(p[k], 1.0);
            for i in 0..=k {
                assert!((p[i] + p[k - i] - 1.0).abs() < 1e-14);
            }
        }
        let p2 = gauss_lobatto_points(2);
        assert!((p2[1] - 0.5).abs() < 1e-15);
        let p3 = gauss_lobatto_points(3);
        assert!((p3[1] - 0.5 * (1.0 - 1.0 / 5f64.sqrt())).abs() < 1e-14);
    }
}
