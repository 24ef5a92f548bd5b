//! Kuhn-simplex interpolation of lattice functions and spectral homogenisation
//! experiments for uniformly elliptic conductances.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conductance::{sample_field, ConductanceField, ConductanceModel, EllipticModel};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Domain, LatticeBox, Site};
use crate::rng;
use crate::spectrum::{assemble, discretize_potential, dirichlet_form, dot, lowest_eigenpairs, principal_eigen, SpectralResult};
use crate::stats::{line_fit, mean_estimate, weighted_line_fit, Z95};
use crate::varprob::{rate_i_c_phi, GridFunction};

/// Continuous piecewise-linear extension of `alpha^(d/2) v` on the Kuhn triangulation.
#[derive(Debug, Clone)]
pub struct InterpolatedFunction {
    lattice: Arc<LatticeBox>,
    values: Vec<f64>,
    scale: f64,
}

/// Vertices `w_0 = z, w_k = w_(k-1) + e_(sigma(k))` of the simplex containing a point,
/// with the permutation and the barycentric weights.
struct Simplex {
    vertices: Vec<Site>,
    order: Vec<usize>,
}

/// Axes sorted by decreasing fractional part; ties go to the lower axis.
fn kuhn_order(frac: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frac.len()).collect();
    order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]));
    order
}

fn simplex_path(corner: &[i64], order: &[usize]) -> Vec<Site> {
    let mut w = corner.to_vec();
    let mut out = vec![w.clone()];
    for &axis in order {
        w[axis] += 1;
        out.push(w.clone());
    }
    out
}

impl InterpolatedFunction {
    pub fn alpha(&self) -> f64 {
        self.lattice.alpha()
    }

    fn value(&self, z: &[i64]) -> f64 {
        self.lattice.index_of(z).map_or(0.0, |s| self.values[s])
    }

    fn locate(&self, y: &[f64]) -> (Simplex, Vec<f64>) {
        let alpha = self.alpha();
        let corner = self.lattice.cell_of(y);
        let frac: Vec<f64> = y.iter().zip(&corner).map(|(yi, zi)| (alpha * yi - *zi as f64).clamp(0.0, 1.0)).collect();
        let order = kuhn_order(&frac);
        (
            Simplex {
                vertices: simplex_path(&corner, &order),
                order,
            },
            frac,
        )
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let (simplex, frac) = self.locate(y);
        let d = frac.len();
        let sorted: Vec<f64> = simplex.order.iter().map(|&a| frac[a]).collect();
        let mut total = (1.0 - sorted.first().copied().unwrap_or(0.0)) * self.value(&simplex.vertices[0]);
        for k in 1..=d {
            let next = if k < d { sorted[k] } else { 0.0 };
            total += (sorted[k - 1] - next) * self.value(&simplex.vertices[k]);
        }
        self.scale * total
    }

    /// Gradient on the simplex containing `y`: `alpha^(1+d/2) (v(w_k) - v(w_(k-1)))` along `e_(sigma(k))`.
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let (simplex, _) = self.locate(y);
        let mut g = vec![0.0; y.len()];
        for (k, &axis) in simplex.order.iter().enumerate() {
            g[axis] = self.alpha() * self.scale * (self.value(&simplex.vertices[k + 1]) - self.value(&simplex.vertices[k]));
        }
        g
    }
}

pub fn kuhn_interpolate(v: &[f64], lattice: &Arc<LatticeBox>) -> Result<InterpolatedFunction> {
    if v.len() != lattice.len() {
        return Err(Error::DimensionMismatch {
            expected: lattice.len(),
            got: v.len(),
        });
    }
    Ok(InterpolatedFunction {
        lattice: Arc::clone(lattice),
        values: v.to_vec(),
        scale: lattice.alpha().powf(lattice.dim() as f64 / 2.0),
    })
}

/// Every cell `z + [0,1)^d` with at least one corner in the box.
fn touching_cells(lattice: &LatticeBox) -> Vec<Site> {
    let lo: Vec<i64> = lattice.lower_corner().iter().map(|c| c - 1).collect();
    let shape: Vec<usize> = lattice.shape().iter().map(|n| n + 1).collect();
    let count: usize = shape.iter().product();
    (0..count)
        .map(|mut k| {
            let mut z = vec![0; shape.len()];
            for i in (0..shape.len()).rev() {
                z[i] = lo[i] + (k % shape[i]) as i64;
                k /= shape[i];
            }
            z
        })
        .collect()
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..d).collect(), &mut out);
    out
}

fn factorial(d: usize) -> f64 {
    (1..=d).map(|k| k as f64).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMatch {
    /// `alpha^2 sum_e phi_e (v(head) - v(tail))^2`.
    pub discrete: f64,
    /// `∫ sum_i phi (∂_i f)^2` over the interpolant.
    pub continuum: f64,
    pub residual: f64,
}

/// Compares the scaled discrete Dirichlet energy with the continuum energy of
/// the Kuhn interpolant. On each simplex the derivative along `e_(sigma(k))` is
/// weighted by `phi` on the lattice bond `(w_(k-1), w_k)` it differentiates.
pub fn energy_match_check(v: &[f64], phi: &ConductanceField) -> Result<EnergyMatch> {
    let lattice = phi.lattice();
    let f = kuhn_interpolate(v, lattice)?;
    let alpha = lattice.alpha();
    let d = lattice.dim();
    let discrete = alpha * alpha * dirichlet_form(phi, v)?;
    let volume = alpha.powi(-(d as i32)) / factorial(d);
    let perms = permutations(d);
    let mut continuum = 0.0;
    for cell in touching_cells(lattice) {
        for order in &perms {
            let path = simplex_path(&cell, order);
            for (k, &axis) in order.iter().enumerate() {
                let slope = alpha * f.scale * (f.value(&path[k + 1]) - f.value(&path[k]));
                if slope == 0.0 {
                    continue;
                }
                let weight = phi.weight_of(&path[k], axis).unwrap_or(0.0);
                continuum += volume * weight * slope * slope;
            }
        }
    }
    let scale = discrete.abs().max(continuum.abs());
    Ok(EnergyMatch {
        discrete,
        continuum,
        residual: if scale == 0.0 { 0.0 } else { (discrete - continuum).abs() / scale },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationResidual {
    /// `‖f - alpha^(d/2) v(⌊alpha ·⌋)‖₂²`.
    pub lhs: f64,
    /// `m^(-1) sum_e phi_e (v(head) - v(tail))^2`.
    pub bound: f64,
    /// `lhs / (alpha^2 sum_e phi_e (Δv)^2)`.
    pub energy_ratio: f64,
}

impl InterpolationResidual {
    pub fn margin(&self) -> f64 {
        self.bound - self.lhs
    }
}

/// Exact `L²` norm of the difference between the interpolant and the step function.
pub fn interpolation_residual(v: &[f64], field: &ConductanceField, m: f64) -> Result<InterpolationResidual> {
    if !(m > 0.0 && m <= field.min() * (1.0 + 1e-15)) {
        return Err(invalid("m", "must be positive and at most the smallest conductance"));
    }
    let lattice = field.lattice();
    let f = kuhn_interpolate(v, lattice)?;
    let d = lattice.dim();
    let volume = lattice.alpha().powi(-(d as i32)) / factorial(d);
    let norm = ((d + 1) * (d + 2)) as f64;
    let perms = permutations(d);
    let mut lhs = 0.0;
    for cell in touching_cells(lattice) {
        let base = f.value(&cell);
        for order in &perms {
            let path = simplex_path(&cell, order);
            let u: Vec<f64> = path.iter().map(|w| f.scale * (f.value(w) - base)).collect();
            let sq: f64 = u.iter().map(|x| x * x).sum();
            let s: f64 = u.iter().sum();
            lhs += volume * (sq + s * s) / norm;
        }
    }
    let energy = dirichlet_form(field, v)?;
    let alpha = lattice.alpha();
    Ok(InterpolationResidual {
        lhs,
        bound: energy / m,
        energy_ratio: if energy == 0.0 { 0.0 } else { lhs / (alpha * alpha * energy) },
    })
}

/// Lowest Dirichlet eigenvalue of `-Δ` (unit conductances) on the box, in closed form.
pub fn unit_ground_state(lattice: &LatticeBox) -> f64 {
    lattice
        .shape()
        .iter()
        .map(|&n| 2.0 * (1.0 - (std::f64::consts::PI / (n as f64 + 1.0)).cos()))
        .sum()
}

const ENV_TAG: u64 = 0xC0EF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEffRow {
    pub alpha: f64,
    /// Environment mean of `lambda_1^a / lambda_1^(a≡1)`.
    pub ratio: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEffEstimate {
    pub c_eff: f64,
    pub ci: (f64, f64),
    pub rows: Vec<CEffRow>,
}

fn unit_box(d: usize, alpha: f64) -> Result<Arc<LatticeBox>> {
    Ok(Arc::new(LatticeBox::build(d, alpha, Domain::unit_cube(d))?))
}

fn env_field(model: &EllipticModel, lattice: &Arc<LatticeBox>, seed: u64, size: usize, env: usize) -> ConductanceField {
    let key = rng::key([size as u64, env as u64]);
    sample_field(lattice, &ConductanceModel::Elliptic(model.clone()), rng::child_seed(seed, ENV_TAG, key))
}

fn eigen_or_best(r: Result<SpectralResult>) -> Result<SpectralResult> {
    match r {
        Err(Error::NotConverged { best, .. }) => Ok(*best),
        other => other,
    }
}

/// `c_eff = 2 lambda_1^a / lambda_1^(a≡1)`, calibrated so that `a ≡ 1` gives 2.
/// With several sizes the ratio is extrapolated linearly in `1/alpha`.
pub fn estimate_c_eff(model: &EllipticModel, d: usize, sizes: &[f64], n_env: usize, seed: u64) -> Result<CEffEstimate> {
    model.validate()?;
    if sizes.is_empty() {
        return Err(invalid("sizes", "need at least one size"));
    }
    if n_env == 0 {
        return Err(invalid("n_env", "need at least one environment"));
    }
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let lattice = unit_box(d, alpha)?;
            let unit = unit_ground_state(&lattice);
            let ratios: Vec<f64> = (0..n_env)
                .into_par_iter()
                .map(|e| {
                    let field = env_field(model, &lattice, seed, k, e);
                    let op = assemble(&field, None, 1.0)?;
                    Ok(eigen_or_best(principal_eigen(&op, op.tolerance(1e-12)))?.eigenvalue / unit)
                })
                .collect::<Result<_>>()?;
            let m = mean_estimate(&ratios);
            Ok(CEffRow {
                alpha,
                ratio: m.mean,
                std_error: m.std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (ratio, se) = if rows.len() == 1 {
        (rows[0].ratio, rows[0].std_error)
    } else {
        let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.alpha).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let fit = if rows.iter().all(|r| r.std_error > 0.0) {
            let w: Vec<f64> = rows.iter().map(|r| r.std_error.powi(-2)).collect();
            weighted_line_fit(&x, &y, &w)
        } else {
            line_fit(&x, &y)
        }
        .ok_or_else(|| invalid("sizes", "sizes must be distinct"))?;
        (fit.intercept, fit.intercept_std_error)
    };
    Ok(CEffEstimate {
        c_eff: 2.0 * ratio,
        ci: (2.0 * (ratio - Z95 * se), 2.0 * (ratio + Z95 * se)),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub alpha: f64,
    /// Environment means of the lowest eigenvalues of `-alpha^2 Δ^a + V_t`, ascending.
    pub eigenvalues: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Environment mean of `‖v_1 - sine product‖₂`, only without a potential.
    pub eigenfunction_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenisationResult {
    pub d: usize,
    pub rows: Vec<SizeRow>,
    /// Per-index extrapolation linear in `1/alpha` (the last value when only one size is run).
    pub limits: Vec<f64>,
    pub c_eff: CEffEstimate,
    /// Eigenvalues of `-(c_eff/2) Δ + V` on the unit cube.
    pub continuum: Vec<f64>,
}

fn sine_product(lattice: &LatticeBox) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let mut r: Vec<f64> = lattice
        .sites()
        .map(|z| {
            z.iter()
                .zip(lattice.lower_corner())
                .zip(lattice.shape())
                .map(|((zi, lo), &n)| (pi * (zi - lo + 1) as f64 / (n as f64 + 1.0)).sin())
                .product()
        })
        .collect();
    let n = dot(&r, &r).sqrt();
    r.iter_mut().for_each(|x| *x /= n);
    r
}

fn distance_to(v: &[f64], reference: &[f64]) -> f64 {
    let sign = if dot(v, reference) < 0.0 { -1.0 } else { 1.0 };
    v.iter().zip(reference).map(|(a, b)| (sign * a - b).powi(2)).sum::<f64>().sqrt()
}

/// Continuum reference by Richardson extrapolation of two constant-coefficient grids.
fn continuum_eigenvalues(d: usize, c_eff: f64, potential: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>, count: usize) -> Result<Vec<f64>> {
    let coarse = match d {
        1 => 512.0,
        2 => 48.0,
        _ => 12.0,
    };
    let level = |alpha: f64| -> Result<Vec<f64>> {
        let lattice = unit_box(d, alpha)?;
        let field = ConductanceField::constant(&lattice, 0.5 * c_eff)?;
        let v = potential.map(|p| discretize_potential(p, &lattice));
        let op = assemble(&field, v.as_deref(), alpha * alpha)?;
        Ok(lowest_eigenpairs(&op, count, op.tolerance(1e-10))?.into_iter().map(|r| r.eigenvalue).collect())
    };
    let a = level(coarse)?;
    let b = level(2.0 * coarse)?;
    Ok(a.iter().zip(&b).map(|(x, y)| y + (y - x) / 3.0).collect())
}

/// Lowest eigenvalues of `-alpha^2 Δ^a + V_t` across sizes and environments,
/// their extrapolated limits and the continuum comparison.
pub fn spectral_convergence_experiment(
    model: &EllipticModel,
    d: usize,
    potential: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
    j_max: usize,
    sizes: &[f64],
    n_env: usize,
    seed: u64,
) -> Result<HomogenisationResult> {
    model.validate()?;
    if j_max == 0 || sizes.is_empty() || n_env == 0 {
        return Err(invalid("sizes", "need j_max, sizes and n_env all nonzero"));
    }
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let lattice = unit_box(d, alpha)?;
            let v = potential.map(|p| discretize_potential(p, &lattice));
            let reference = sine_product(&lattice);
            let per_env: Vec<(Vec<f64>, f64)> = (0..n_env)
                .into_par_iter()
                .map(|e| {
                    let field = env_field(model, &lattice, seed, k, e);
                    let op = assemble(&field, v.as_deref(), alpha * alpha)?;
                    let pairs = lowest_eigenpairs(&op, j_max.min(lattice.len()), op.tolerance(1e-10))?;
                    let dist = distance_to(&pairs[0].eigenvector, &reference);
                    Ok((pairs.into_iter().map(|r| r.eigenvalue).collect(), dist))
                })
                .collect::<Result<_>>()?;
            let count = per_env[0].0.len();
            let stats: Vec<_> = (0..count)
                .map(|j| mean_estimate(&per_env.iter().map(|(l, _)| l[j]).collect::<Vec<_>>()))
                .collect();
            let dist = mean_estimate(&per_env.iter().map(|(_, x)| *x).collect::<Vec<_>>()).mean;
            Ok(SizeRow {
                alpha,
                eigenvalues: stats.iter().map(|m| m.mean).collect(),
                std_errors: stats.iter().map(|m| m.std_error).collect(),
                eigenfunction_distance: potential.is_none().then_some(dist),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = rows.iter().map(|r| r.eigenvalues.len()).min().unwrap_or(0);
    let limits = (0..count)
        .map(|j| {
            if rows.len() == 1 {
                return rows[0].eigenvalues[j];
            }
            let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.alpha).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.eigenvalues[j]).collect();
            line_fit(&x, &y).map_or(y[y.len() - 1], |f| f.intercept)
        })
        .collect();
    let c_eff = estimate_c_eff(model, d, sizes, n_env, seed)?;
    let continuum = continuum_eigenvalues(d, c_eff.c_eff, potential, count)?;
    Ok(HomogenisationResult {
        d,
        rows,
        limits,
        c_eff,
        continuum,
    })
}

/// `c_eff (‖∇f‖² - min)`, with the minimum over normalised grid functions.
pub fn quenched_rate(f: &GridFunction, c_eff: f64) -> Result<f64> {
    if !(c_eff > 0.0) {
        return Err(invalid("c_eff", "must be positive"));
    }
    let norm = f.l2_norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(invalid("f", format!("must be normalised in L2, got norm {norm}")));
    }
    let energy = rate_i_c_phi(f, |_, _| 1.0);
    let lattice = Arc::new(f.lattice()?);
    let op = assemble(&ConductanceField::constant(&lattice, 1.0)?, None, f.spacing().powi(-2))?;
    let floor = eigen_or_best(principal_eigen(&op, op.tolerance(1e-13)))?.eigenvalue;
    Ok(c_eff * (energy - floor))
}
