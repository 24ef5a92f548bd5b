//! Dirichlet operators `-s Δ^a + V` on a box, their low eigenpairs and semigroups.
//!
//! The operator is stored in compressed rows: a diagonal `s pi_z + V(z)` and
//! the in-box couplings `s a(z, w)`. Bonds leaving the box only enter through
//! the diagonal, which is the zero boundary (killing) convention.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conductance::{sample_field, unscaled_profile, ConductanceField, ConductanceModel, TailModel};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Direction, LatticeBox};
use crate::quadrature::CubeRule;
use crate::rng;
use crate::varprob::{solve_chi_d, SolverConfig};

#[derive(Debug, Clone)]
pub struct DirichletOperator {
    lattice: Arc<LatticeBox>,
    laplace_scale: f64,
    potential: Vec<f64>,
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    couplings: Vec<f64>,
}

/// `h(g)(z) = s * sum_e a(z, z+e) (g(z) - g(z+e)) + V(z) g(z)` with `g = 0` off the box.
pub fn assemble(field: &ConductanceField, potential: Option<&[f64]>, laplace_scale: f64) -> Result<DirichletOperator> {
    let lattice = Arc::clone(field.lattice());
    let n = lattice.len();
    if !(laplace_scale.is_finite() && laplace_scale > 0.0) {
        return Err(invalid("laplace_scale", "must be positive"));
    }
    let potential = match potential {
        Some(v) if v.len() != n => return Err(Error::DimensionMismatch { expected: n, got: v.len() }),
        Some(v) if v.iter().any(|x| !x.is_finite()) => return Err(invalid("V", "potential must be finite")),
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let d = lattice.dim();
    let mut diag = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(2 * d * n);
    let mut couplings = Vec::with_capacity(2 * d * n);
    offsets.push(0);
    for s in 0..n {
        let mut pi = 0.0;
        for dir in Direction::all(d) {
            let a = field.weight_at(s, dir);
            pi += a;
            if let Some(w) = lattice.neighbor_index(s, dir) {
                cols.push(w);
                couplings.push(laplace_scale * a);
            }
        }
        diag.push(laplace_scale * pi + potential[s]);
        offsets.push(cols.len());
    }
    Ok(DirichletOperator {
        lattice,
        laplace_scale,
        potential,
        diag,
        offsets,
        cols,
        couplings,
    })
}

impl DirichletOperator {
    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn laplace_scale(&self) -> f64 {
        self.laplace_scale
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn apply_into(&self, g: &[f64], out: &mut [f64]) {
        for s in 0..self.diag.len() {
            let mut acc = self.diag[s] * g[s];
            for k in self.offsets[s]..self.offsets[s + 1] {
                acc -= self.couplings[k] * g[self.cols[k]];
            }
            out[s] = acc;
        }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        self.apply_into(g, &mut out);
        out
    }

    /// `<h(g), g>`.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        dot(&self.apply(g), g)
    }

    /// Gershgorin lower bound on the spectrum.
    pub fn lower_bound(&self) -> f64 {
        (0..self.len())
            .map(|s| self.diag[s] - self.row_coupling(s))
            .fold(f64::INFINITY, f64::min)
    }

    /// Gershgorin upper bound on the spectrum.
    pub fn upper_bound(&self) -> f64 {
        (0..self.len())
            .map(|s| self.diag[s] + self.row_coupling(s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn row_coupling(&self, s: usize) -> f64 {
        self.couplings[self.offsets[s]..self.offsets[s + 1]].iter().sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            m[(s, s)] = self.diag[s];
            for k in self.offsets[s]..self.offsets[s + 1] {
                m[(s, self.cols[k])] = -self.couplings[k];
            }
        }
        m
    }

    /// Absolute residual tolerance `rel * max(1, ‖h‖)` suited to this operator's scale.
    pub fn tolerance(&self, rel: f64) -> f64 {
        rel * self.upper_bound().abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub eigenvalue: f64,
    pub eigenvector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const MAX_OUTER_ITERATIONS: usize = 20_000;

/// Lowest eigenpair by shifted inverse iteration from the normalised all-ones vector.
pub fn principal_eigen(op: &DirichletOperator, tol: f64) -> Result<SpectralResult> {
    let n = op.len();
    let start = vec![1.0 / (n as f64).sqrt(); n];
    let mut r = inverse_iteration(op, tol, start)?;
    if r.eigenvector.iter().sum::<f64>() < 0.0 {
        r.eigenvector.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(r)
}

/// The `count` lowest eigenpairs, each found by inverse iteration on the
/// orthogonal complement of the ones already converged.
pub fn lowest_eigenpairs(op: &DirichletOperator, count: usize, tol: f64) -> Result<Vec<SpectralResult>> {
    let count = count.min(op.len());
    match count {
        0 => Ok(Vec::new()),
        1 => Ok(vec![principal_eigen(op, tol)?]),
        _ => subspace_iteration(op, count, tol),
    }
}

/// Guard vectors carried beyond `count`; they keep clustered eigenvalues from stalling the block.
const GUARD_VECTORS: usize = 4;

/// Block inverse iteration with Rayleigh-Ritz on the iterated subspace.
fn subspace_iteration(op: &DirichletOperator, count: usize, tol: f64) -> Result<Vec<SpectralResult>> {
    let n = op.len();
    let m = (count + GUARD_VECTORS).min(n);
    let upper = op.upper_bound();
    let shift = op.lower_bound() - 1e-12 * upper.abs().max(1.0);
    let precond: Vec<f64> = op.diag.iter().map(|d| 1.0 / (d - shift)).collect();
    let cg_tol = (0.01 * tol / upper.abs().max(1.0)).max(1e-15);

    let mut rng = rng::stream(0x5EED, m as u64);
    let mut block: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    orthonormalize(&mut block, &mut rng);
    let mut ritz = vec![0.0; m];
    let mut best: Option<(f64, Vec<SpectralResult>)> = None;
    let mut last_improvement = 0;
    for it in 1..=MAX_OUTER_ITERATIONS {
        let mut next: Vec<Vec<f64>> = block
            .par_iter()
            .zip(&ritz)
            .map(|(x, &theta)| {
                // Warm start from the scaled Ritz vector.
                let scale = if it == 1 { 0.0 } else { 1.0 / (theta - shift).max(f64::MIN_POSITIVE) };
                let mut y: Vec<f64> = x.iter().map(|xi| xi * scale).collect();
                shifted_cg(op, shift, &precond, x, &mut y, cg_tol);
                y
            })
            .collect();
        orthonormalize(&mut next, &mut rng);
        let images: Vec<Vec<f64>> = next.par_iter().map(|y| op.apply(y)).collect();
        let gram = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&next[i], &images[j]) + dot(&next[j], &images[i])));
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let combine = |vectors: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (k, v) in vectors.iter().enumerate() {
                let c = eig.eigenvectors[(k, col)];
                out.iter_mut().zip(v).for_each(|(o, vi)| *o += c * vi);
            }
            out
        };
        block = order.iter().map(|&col| combine(&next, col)).collect();
        let hx: Vec<Vec<f64>> = order.iter().map(|&col| combine(&images, col)).collect();
        ritz = order.iter().map(|&col| eig.eigenvalues[col]).collect();
        let pairs: Vec<SpectralResult> = (0..count)
            .map(|j| {
                let mut x = block[j].clone();
                normalize(&mut x);
                let residual = hx[j].iter().zip(&block[j]).map(|(h, xi)| (h - ritz[j] * xi).powi(2)).sum::<f64>().sqrt();
                SpectralResult {
                    eigenvalue: ritz[j],
                    eigenvector: x,
                    residual,
                    iterations: it,
                }
            })
            .collect();
        let worst = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
        if worst <= tol {
            return Ok(pairs);
        }
        if best.as_ref().is_none_or(|(r, _)| worst < 0.9 * r) {
            last_improvement = it;
        }
        if best.as_ref().is_none_or(|(r, _)| worst < *r) {
            best = Some((worst, pairs));
        }
        if it - last_improvement > 200 {
            break;
        }
    }
    let (residual, pairs) = best.expect("at least one iteration ran");
    let worst = pairs
        .into_iter()
        .max_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("count >= 2");
    Err(Error::NotConverged {
        iterations: worst.iterations,
        residual,
        best: Box::new(worst),
    })
}

/// Gram-Schmidt against the earlier vectors; collapsed vectors are replaced by random ones.
fn orthonormalize<R: Rng>(vectors: &mut [Vec<f64>], rng: &mut R) {
    for i in 0..vectors.len() {
        let mut attempts = 0;
        loop {
            let before = norm(&vectors[i]);
            let (done, rest) = vectors.split_at_mut(i);
            project_out(&mut rest[0], done);
            let after = norm(&vectors[i]);
            if after > 1e-10 * before && after.is_finite() {
                normalize(&mut vectors[i]);
                break;
            }
            attempts += 1;
            assert!(attempts < 16, "could not extend an orthonormal block");
            vectors[i].iter_mut().for_each(|v| *v = rng.gen::<f64>() - 0.5);
        }
    }
}

fn inverse_iteration(op: &DirichletOperator, tol: f64, start: Vec<f64>) -> Result<SpectralResult> {
    let n = op.len();
    let upper = op.upper_bound();
    let shift = op.lower_bound() - 1e-12 * upper.abs().max(1.0);
    let precond: Vec<f64> = op.diag.iter().map(|d| 1.0 / (d - shift)).collect();
    let cg_tol = (0.01 * tol / upper.abs().max(1.0)).max(1e-15);

    let mut x = start;
    normalize(&mut x);
    let mut hx = vec![0.0; n];
    let mut y = x.clone();
    let mut best: Option<SpectralResult> = None;
    let mut last_improvement = 0;
    for it in 1..=MAX_OUTER_ITERATIONS {
        shifted_cg(op, shift, &precond, &x, &mut y, cg_tol);
        let norm = norm(&y);
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
        op.apply_into(&x, &mut hx);
        let lambda = dot(&x, &hx);
        let residual = hx.iter().zip(&x).map(|(h, xi)| (h - lambda * xi).powi(2)).sum::<f64>().sqrt();
        let candidate = SpectralResult {
            eigenvalue: lambda,
            eigenvector: x.clone(),
            residual,
            iterations: it,
        };
        if best.as_ref().is_none_or(|b| residual < 0.9 * b.residual) {
            last_improvement = it;
        }
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(candidate);
        }
        if residual <= tol {
            return Ok(best.expect("just set"));
        }
        if it - last_improvement > 200 {
            break;
        }
        // Warm start the next solve from the scaled current iterate.
        let scale = 1.0 / (lambda - shift).max(f64::MIN_POSITIVE);
        y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi = xi * scale);
    }
    let best = best.unwrap_or(SpectralResult {
        eigenvalue: f64::NAN,
        eigenvector: x,
        residual: f64::INFINITY,
        iterations: 0,
    });
    Err(Error::NotConverged {
        iterations: best.iterations,
        residual: best.residual,
        best: Box::new(best),
    })
}

/// Jacobi-preconditioned CG for `(h - shift) y = b`, starting from the contents of `y`.
fn shifted_cg(op: &DirichletOperator, shift: f64, precond: &[f64], b: &[f64], y: &mut [f64], rel_tol: f64) {
    let n = b.len();
    let mut ay = vec![0.0; n];
    op.apply_into(y, &mut ay);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - (ay[i] - shift * y[i])).collect();
    let b_norm = norm(b).max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(ri, m)| ri * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = 20 * n + 200;
    for _ in 0..max_iter {
        if norm(&r) <= rel_tol * b_norm {
            return;
        }
        op.apply_into(&p, &mut ap);
        for i in 0..n {
            ap[i] -= shift * p[i];
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return;
        }
        let step = rz / pap;
        for i in 0..n {
            y[i] += step * p[i];
            r[i] -= step * ap[i];
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

/// `sum_e sum_z a(z, e) (g(z + e) - g(z))^2` over every bond touching the box, `g = 0` off the box.
pub fn dirichlet_form(field: &ConductanceField, g: &[f64]) -> Result<f64> {
    let lattice = field.lattice();
    if g.len() != lattice.len() {
        return Err(Error::DimensionMismatch {
            expected: lattice.len(),
            got: g.len(),
        });
    }
    let value = |z: &[i64]| lattice.index_of(z).map_or(0.0, |s| g[s]);
    Ok(lattice
        .edges()
        .iter()
        .zip(field.weights())
        .map(|(e, a)| a * (value(&e.head()) - value(&e.tail)).powi(2))
        .sum())
}

/// `exp(-t h) g`: dense Padé scaling and squaring for small boxes, Lanczos otherwise.
pub fn semigroup_apply(op: &DirichletOperator, t: f64, g: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("t", "time must be finite and nonnegative"));
    }
    if g.len() != op.len() {
        return Err(Error::DimensionMismatch {
            expected: op.len(),
            got: g.len(),
        });
    }
    if t == 0.0 {
        return Ok(g.to_vec());
    }
    if op.len() <= DENSE_LIMIT {
        let e = (op.to_dense() * (-t)).exp();
        return Ok((e * DVector::from_column_slice(g)).as_slice().to_vec());
    }
    Ok(krylov_expv(op, t, g))
}

const DENSE_LIMIT: usize = 64;
const KRYLOV_DIM: usize = 48;

fn krylov_expv(op: &DirichletOperator, t: f64, g: &[f64]) -> Vec<f64> {
    let mut v = g.to_vec();
    let mut remaining = t;
    let mut tau = t;
    while remaining > 0.0 {
        tau = tau.min(remaining);
        match lanczos_step(op, tau, &v) {
            Some(next) => {
                v = next;
                remaining -= tau;
                tau *= 2.0;
            }
            None => tau *= 0.5,
        }
    }
    v
}

/// One Krylov step `exp(-tau h) v`, or `None` if the a posteriori error estimate is too large.
fn lanczos_step(op: &DirichletOperator, tau: f64, v: &[f64]) -> Option<Vec<f64>> {
    let n = op.len();
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Some(v.to_vec());
    }
    let m_max = KRYLOV_DIM.min(n);
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..m_max {
        op.apply_into(&basis[j], &mut w);
        let a = dot(&w, &basis[j]);
        alphas.push(a);
        for q in &basis {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        let b = norm(&w);
        let m = j + 1;
        let small = tridiagonal_exp_first_column(&alphas, &betas, tau);
        let breakdown = b <= 1e-14 * beta0.max(1.0) * alphas.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
        let err = beta0 * b * small[m - 1].abs();
        let result_norm = beta0 * small.iter().map(|x| x * x).sum::<f64>().sqrt();
        if breakdown || m == n || err <= 1e-13 * result_norm.max(f64::MIN_POSITIVE) {
            let mut out = vec![0.0; n];
            for (q, c) in basis.iter().zip(&small) {
                out.iter_mut().zip(q).for_each(|(o, qi)| *o += beta0 * c * qi);
            }
            return Some(out);
        }
        betas.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    None
}

fn tridiagonal_exp_first_column(alphas: &[f64], betas: &[f64], tau: f64) -> Vec<f64> {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| eig.eigenvectors[(i, k)] * (-tau * eig.eigenvalues[k]).exp() * eig.eigenvectors[(0, k)])
                .sum()
        })
        .collect()
}

/// Cell averages `V_t(z) = ∫_{[0,1]^d} V((z + y) / alpha) dy` on the sites of the box.
pub fn discretize_potential(potential: impl Fn(&[f64]) -> f64, lattice: &LatticeBox) -> Vec<f64> {
    let rule = CubeRule::new(lattice.dim(), 4);
    lattice
        .sites()
        .map(|z| rule.cell_average(&z, lattice.alpha(), &potential))
        .collect()
}

/// Principal eigenpair of `-alpha^2 Δ^{phi_t} + V_t`.
pub fn rescaled_eigen(
    phi: impl Fn(&[f64], usize) -> f64,
    potential: impl Fn(&[f64]) -> f64,
    lattice: &Arc<LatticeBox>,
) -> Result<SpectralResult> {
    let profile = unscaled_profile(phi, lattice)?;
    let v = discretize_potential(potential, lattice);
    let alpha = lattice.alpha();
    let op = assemble(&profile, Some(&v), alpha * alpha)?;
    principal_eigen(&op, op.tolerance(1e-12))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzRow {
    pub eps: f64,
    pub count: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `-D chi^d(B)^(eta+1) eps^(-eta)`.
    pub predicted_log_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzTable {
    pub n_env: usize,
    pub chi_d: f64,
    pub rows: Vec<LifshitzRow>,
}

const LIFSHITZ_TAG: u64 = 0x11F5;

/// Principal eigenvalues of `-Δ^a` for `n_env` independent fields.
pub fn eigenvalue_ensemble(model: &TailModel, lattice: &Arc<LatticeBox>, n_env: usize, seed: u64) -> Result<Vec<f64>> {
    let model = ConductanceModel::Tail(*model);
    (0..n_env)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(lattice, &model, rng::child_seed(seed, LIFSHITZ_TAG, i as u64));
            let op = assemble(&field, None, 1.0)?;
            Ok(principal_eigen(&op, DEFAULT_TOLERANCE)?.eigenvalue)
        })
        .collect()
}

/// Empirical `P(lambda^a(B) <= eps)` on a grid, with 95% Wilson intervals.
pub fn lifshitz_mc(model: &TailModel, lattice: &Arc<LatticeBox>, eps_grid: &[f64], n_env: usize, seed: u64) -> Result<LifshitzTable> {
    model.validate()?;
    if eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("eps", "grid values must be positive"));
    }
    if n_env == 0 {
        return Err(invalid("n_env", "need at least one environment"));
    }
    let eigenvalues = eigenvalue_ensemble(model, lattice, n_env, seed)?;
    let chi_d = solve_chi_d(lattice, model.p(), &SolverConfig::default())?.value;
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let count = eigenvalues.iter().filter(|&&l| l <= eps).count();
            let (ci_low, ci_high) = crate::stats::wilson_interval(count, n_env);
            LifshitzRow {
                eps,
                count,
                frequency: count as f64 / n_env as f64,
                ci_low,
                ci_high,
                predicted_log_probability: -model.constant * chi_d.powf(model.exponent + 1.0) * eps.powf(-model.exponent),
            }
        })
        .collect();
    Ok(LifshitzTable { n_env, chi_d, rows })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    // Twice, for numerical orthogonality.
    for _ in 0..2 {
        for q in basis {
            let c = dot(x, q);
            x.iter_mut().zip(q).for_each(|(xi, qi)| *xi -= c * qi);
        }
    }
}
