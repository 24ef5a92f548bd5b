//! Gauss–Legendre rules on `[0, 1]` and tensor cell averages.

use std::f64::consts::PI;

use crate::lattice::Domain;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product rule on the unit cube `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct CubeRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl CubeRule {
    pub fn new(d: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut points = vec![Vec::with_capacity(d)];
        let mut weights = vec![1.0];
        for _ in 0..d {
            let mut next_p = Vec::with_capacity(points.len() * order);
            let mut next_w = Vec::with_capacity(points.len() * order);
            for (p, pw) in points.iter().zip(&weights) {
                for (xi, wi) in x.iter().zip(&w) {
                    let mut q = p.clone();
                    q.push(*xi);
                    next_p.push(q);
                    next_w.push(pw * wi);
                }
            }
            points = next_p;
            weights = next_w;
        }
        Self { points, weights }
    }

    /// `∫_{[0,1]^d} f((z + y) / alpha) dy`.
    pub fn cell_average(&self, z: &[i64], alpha: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut y = vec![0.0; z.len()];
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                for i in 0..z.len() {
                    y[i] = (z[i] as f64 + p[i]) / alpha;
                }
                w * f(&y)
            })
            .sum()
    }
}

/// Composite tensor Gauss–Legendre integral of `f` over a box domain.
pub fn integrate_domain(domain: &Domain, panels: usize, order: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let d = domain.dim();
    let rule = CubeRule::new(d, order);
    let widths: Vec<f64> = domain.bounds().iter().map(|[lo, hi]| (hi - lo) / panels as f64).collect();
    let cell_volume: f64 = widths.iter().product();
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    loop {
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            for i in 0..d {
                y[i] = domain.bounds()[i][0] + (idx[i] as f64 + p[i]) * widths[i];
            }
            total += w * cell_volume * f(&y);
        }
        let mut axis = 0;
        loop {
            if axis == d {
                return total;
            }
            idx[axis] += 1;
            if idx[axis] < panels {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
