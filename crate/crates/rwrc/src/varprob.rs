//! p-energies, their constrained minima and the related rate functions.
//!
//! The central object is
//! `chi(B) = inf { sum_e sum_z |g(z+e) - g(z)|^p : supp g ⊂ B, ‖g‖₂ = 1 }`
//! with `p = 2 eta / (1 + eta)`. For `p < 2` the problem is non-convex and,
//! for `p <= 1`, non-smooth, so the solver only ever claims an upper bound: the
//! returned value is the exact energy of the returned unit vector.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::conductance::{ConductanceField, TailModel};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Domain, LatticeBox, Site};
use crate::quadrature::gauss_legendre;
use crate::rng;
use crate::scaling::{classify_regime_p, Regime};
use crate::spectrum::{assemble, dot, norm, normalize, principal_eigen};

/// Tail parameters `(eta, D)` with the derived energy exponent and rate constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub eta: f64,
    #[serde(rename = "D")]
    pub tail_constant: f64,
}

impl RegimeParams {
    pub fn new(eta: f64, tail_constant: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(tail_constant.is_finite() && tail_constant > 0.0) {
            return Err(invalid("D", "must be positive"));
        }
        Ok(Self { eta, tail_constant })
    }

    /// `p = 2 eta / (1 + eta)`.
    pub fn p(&self) -> f64 {
        2.0 * self.eta / (1.0 + self.eta)
    }

    /// `K = (1 + 1/eta) (D eta)^(1/(1+eta))`.
    pub fn rate_constant(&self) -> f64 {
        (1.0 + 1.0 / self.eta) * (self.tail_constant * self.eta).powf(1.0 / (1.0 + self.eta))
    }
}

impl From<&TailModel> for RegimeParams {
    fn from(m: &TailModel) -> Self {
        Self {
            eta: m.exponent,
            tail_constant: m.constant,
        }
    }
}

/// Site indices of both ends of every bond (`None` off the box).
fn bond_ends(lattice: &LatticeBox) -> Vec<(Option<usize>, Option<usize>)> {
    lattice
        .edges()
        .iter()
        .map(|e| (lattice.index_of(&e.tail), lattice.index_of(&e.head())))
        .collect()
}

fn at(g: &[f64], s: Option<usize>) -> f64 {
    s.map_or(0.0, |s| g[s])
}

/// `sum_e sum_z |g(z+e) - g(z)|^p` with `g = 0` off the box.
pub fn p_energy(lattice: &LatticeBox, g: &[f64], p: f64) -> Result<f64> {
    if g.len() != lattice.len() {
        return Err(Error::DimensionMismatch {
            expected: lattice.len(),
            got: g.len(),
        });
    }
    if !(p > 0.0) {
        return Err(invalid("p", "exponent must be positive"));
    }
    Ok(bond_ends(lattice)
        .into_iter()
        .map(|(t, h)| (at(g, h) - at(g, t)).abs().powf(p))
        .sum())
}

/// `K * p_energy(g)`.
pub fn rate_j_d(lattice: &LatticeBox, g: &[f64], params: &RegimeParams) -> Result<f64> {
    Ok(params.rate_constant() * p_energy(lattice, g, params.p())?)
}

/// Finitely supported function on `Z^d`.
pub type LatticeFunction = BTreeMap<Site, f64>;

fn sparse_bonds(g: &LatticeFunction) -> BTreeSet<(Site, usize)> {
    let mut bonds = BTreeSet::new();
    for z in g.keys() {
        for axis in 0..z.len() {
            bonds.insert((z.clone(), axis));
            let mut below = z.clone();
            below[axis] -= 1;
            bonds.insert((below, axis));
        }
    }
    bonds
}

/// p-energy of a finitely supported function on the whole lattice.
pub fn p_energy_sparse(g: &LatticeFunction, p: f64) -> f64 {
    sparse_bonds(g)
        .into_iter()
        .map(|(tail, axis)| {
            let mut head = tail.clone();
            head[axis] += 1;
            let v = |z: &Site| g.get(z).copied().unwrap_or(0.0);
            (v(&head) - v(&tail)).abs().powf(p)
        })
        .sum()
}

/// Uniform grid with spacing `h` on the interior of a box domain, zero on its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    domain: Domain,
    spacing: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(domain: Domain, spacing: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let shape = grid_shape(&domain, spacing)?;
        let mut grid = Self {
            domain,
            spacing,
            values: vec![0.0; shape.iter().product()],
            shape,
        };
        for k in 0..grid.values.len() {
            grid.values[k] = f(&grid.point(k));
        }
        Ok(grid)
    }

    pub fn from_values(domain: Domain, spacing: f64, values: Vec<f64>) -> Result<Self> {
        let shape = grid_shape(&domain, spacing)?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::DimensionMismatch {
                expected: shape.iter().product(),
                got: values.len(),
            });
        }
        Ok(Self {
            domain,
            spacing,
            shape,
            values,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = k % self.shape[i];
            k /= self.shape[i];
        }
        idx
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    /// Position of the `k`-th grid point.
    pub fn point(&self, k: usize) -> Vec<f64> {
        self.multi_index(k)
            .iter()
            .zip(self.domain.bounds())
            .map(|(&i, [lo, _])| lo + (i + 1) as f64 * self.spacing)
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.spacing.powi(self.dim() as i32) * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// The same grid, viewed as the lattice box `(1/h) G ∩ Z^d`.
    pub fn lattice(&self) -> Result<LatticeBox> {
        let b = LatticeBox::build(self.dim(), 1.0 / self.spacing, self.domain.clone())?;
        if b.shape() != self.shape.as_slice() {
            return Err(invalid("h", "grid is not aligned with the lattice of spacing h"));
        }
        Ok(b)
    }

    /// Forward differences `(f(y + h e) - f(y)) / h` along `axis`, including the
    /// boundary cells where one endpoint is the zero extension. Each entry is
    /// paired with the midpoint of its cell.
    pub fn forward_differences(&self, axis: usize) -> Vec<(Vec<f64>, f64)> {
        let h = self.spacing;
        let n = self.shape[axis];
        let mut out = Vec::with_capacity(self.values.len() + self.values.len() / n.max(1));
        for k in 0..self.values.len() {
            let idx = self.multi_index(k);
            if idx[axis] != 0 {
                continue;
            }
            // Walk the line through `idx` along `axis`, from the boundary point below to the one above.
            let mut prev = 0.0;
            let mut line = idx.clone();
            for j in 0..=n {
                let cur = if j < n {
                    line[axis] = j;
                    self.values[self.flat(&line)]
                } else {
                    0.0
                };
                let mut mid: Vec<f64> = idx
                    .iter()
                    .zip(self.domain.bounds())
                    .map(|(&i, [lo, _])| lo + (i + 1) as f64 * h)
                    .collect();
                mid[axis] = self.domain.bounds()[axis][0] + (j as f64 + 0.5) * h;
                out.push((mid, (cur - prev) / h));
                prev = cur;
            }
        }
        out
    }
}

fn grid_shape(domain: &Domain, h: f64) -> Result<Vec<usize>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", "grid spacing must be positive"));
    }
    domain
        .bounds()
        .iter()
        .map(|[lo, hi]| {
            let cells = (hi - lo) / h;
            let r = cells.round();
            if (cells - r).abs() > 1e-8 * r.max(1.0) || r < 2.0 {
                Err(invalid("h", format!("spacing must divide the side length {} into at least two cells", hi - lo)))
            } else {
                Ok(r as usize - 1)
            }
        })
        .collect()
}

/// `K sum_i ∫_G |∂_i f|^p` with forward differences.
pub fn rate_j_c(f: &GridFunction, params: &RegimeParams) -> f64 {
    let p = params.p();
    let cell = f.spacing().powi(f.dim() as i32);
    let total: f64 = (0..f.dim())
        .map(|axis| f.forward_differences(axis).iter().map(|(_, df)| df.abs().powf(p)).sum::<f64>())
        .sum();
    params.rate_constant() * cell * total
}

/// `sum_e ∫_G phi(y, e) (∂_e f)^2 dy` with `phi` sampled at cell midpoints.
pub fn rate_i_c_phi(f: &GridFunction, phi: impl Fn(&[f64], usize) -> f64) -> f64 {
    let cell = f.spacing().powi(f.dim() as i32);
    (0..f.dim())
        .map(|axis| {
            f.forward_differences(axis)
                .iter()
                .map(|(mid, df)| phi(mid, axis) * df * df)
                .sum::<f64>()
        })
        .sum::<f64>()
        * cell
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Steepest descent with Armijo backtracking.
    Armijo,
    /// Polak–Ribière conjugate directions with Armijo backtracking.
    ConjugateArmijo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of starting points: all-ones, the p = 2 ground state, then pseudo-random vectors.
    pub restarts: usize,
    /// Iteration cap per smoothing level.
    pub max_iter: usize,
    pub smoothing_levels: usize,
    pub step_rule: StepRule,
    /// Stationarity tolerance on the Riemannian gradient norm, relative to `max(1, energy)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iter: 20_000,
            smoothing_levels: 8,
            step_rule: StepRule::ConjugateArmijo,
            tol: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub restarts: usize,
    pub restart_values: Vec<f64>,
    pub best_restart: usize,
    /// Smoothing parameter of the last level run (0 when the final level was unsmoothed).
    pub final_smoothing: f64,
    /// Riemannian gradient norm of the (unsmoothed for p > 1) energy at the minimiser.
    /// For `p <= 1` the energy has kinks and `converged` only means the last level settled.
    pub stationarity_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Energy {
    ends: Vec<(Option<usize>, Option<usize>)>,
    n: usize,
    p: f64,
}

impl Energy {
    /// Smoothed energy `sum (|Δg|^2 + mu^2)^(p/2)` and, optionally, its gradient.
    fn eval(&self, g: &[f64], mu: f64, grad: Option<&mut [f64]>) -> f64 {
        let p = self.p;
        let mu2 = mu * mu;
        let mut total = 0.0;
        match grad {
            Some(grad) => {
                grad.iter_mut().for_each(|x| *x = 0.0);
                for &(t, h) in &self.ends {
                    let diff = at(g, h) - at(g, t);
                    let (value, slope) = if p == 2.0 {
                        (diff * diff + mu2, 2.0 * diff)
                    } else if mu == 0.0 {
                        let a = diff.abs();
                        if a == 0.0 {
                            (0.0, 0.0)
                        } else {
                            (a.powf(p), p * a.powf(p - 1.0) * diff.signum())
                        }
                    } else {
                        let q = diff * diff + mu2;
                        let v = q.powf(0.5 * p);
                        (v, p * v / q * diff)
                    };
                    total += value;
                    if let Some(h) = h {
                        grad[h] += slope;
                    }
                    if let Some(t) = t {
                        grad[t] -= slope;
                    }
                }
            }
            None => {
                for &(t, h) in &self.ends {
                    let diff = at(g, h) - at(g, t);
                    total += if mu == 0.0 {
                        diff.abs().powf(p)
                    } else {
                        (diff * diff + mu2).powf(0.5 * p)
                    };
                }
            }
        }
        total
    }

    /// Unsmoothed energy.
    fn exact(&self, g: &[f64]) -> f64 {
        self.ends.iter().map(|&(t, h)| (at(g, h) - at(g, t)).abs().powf(self.p)).sum()
    }

    fn riemannian_gradient(&self, g: &[f64], mu: f64, grad: &mut [f64]) -> f64 {
        let e = self.eval(g, mu, Some(grad));
        let c = dot(grad, g);
        grad.iter_mut().zip(g).for_each(|(r, x)| *r -= c * x);
        e
    }
}

struct Best {
    value: f64,
    vector: Vec<f64>,
}

impl Best {
    fn offer(&mut self, value: f64, g: &[f64]) {
        if value < self.value {
            self.value = value;
            self.vector.copy_from_slice(g);
        }
    }
}

struct LevelOutcome {
    iterations: usize,
    /// Ended by the stationarity test or by a line search that could not decrease the energy.
    settled: bool,
}

/// Riemannian descent on the unit sphere for one smoothing level.
fn descend(energy: &Energy, g: &mut Vec<f64>, mu: f64, cfg: &SolverConfig, best: &mut Best) -> LevelOutcome {
    let n = energy.n;
    let mut rg = vec![0.0; n];
    let mut rg_new = vec![0.0; n];
    let mut e = energy.riemannian_gradient(g, mu, &mut rg);
    let mut dir: Vec<f64> = rg.iter().map(|x| -x).collect();
    let mut step = 1.0 / norm(&rg).max(1.0);
    let mut trial = vec![0.0; n];
    let mut iterations = 0;
    let mut settled = false;
    for _ in 0..cfg.max_iter {
        let gnorm = norm(&rg);
        if gnorm <= cfg.tol * e.max(1.0) {
            settled = true;
            break;
        }
        iterations += 1;
        let mut slope = dot(&rg, &dir);
        if !(slope < 0.0) {
            dir.iter_mut().zip(&rg).for_each(|(d, r)| *d = -r);
            slope = -gnorm * gnorm;
        }
        let mut tau = step;
        let mut accepted = None;
        for attempt in 0..60 {
            trial.iter_mut().zip(g.iter().zip(&dir)).for_each(|(t, (x, d))| *t = x + tau * d);
            normalize(&mut trial);
            let e_trial = energy.eval(&trial, mu, None);
            if e_trial < e && e_trial <= e + 1e-4 * tau * slope {
                accepted = Some(attempt);
                break;
            }
            tau *= 0.5;
        }
        let Some(attempt) = accepted else {
            // No representable decrease left along the descent direction.
            if dot(&rg, &dir) < -0.999 * gnorm * norm(&dir) {
                settled = true;
                break;
            }
            dir.iter_mut().zip(&rg).for_each(|(d, r)| *d = -r);
            continue;
        };
        step = if attempt == 0 { 2.0 * tau } else { tau };
        std::mem::swap(g, &mut trial);
        let e_new = energy.riemannian_gradient(g, mu, &mut rg_new);
        best.offer(if mu == 0.0 { e_new } else { energy.exact(g) }, g);
        let beta = match cfg.step_rule {
            StepRule::Armijo => 0.0,
            StepRule::ConjugateArmijo => {
                // Polak–Ribière+, with the old gradient transported by projection.
                let c = dot(&rg, g);
                let num: f64 = rg_new.iter().zip(rg.iter().zip(g.iter())).map(|(rn, (r, x))| rn * (rn - (r - c * x))).sum();
                (num / (gnorm * gnorm)).max(0.0)
            }
        };
        let c = dot(&dir, g);
        for i in 0..n {
            dir[i] = -rg_new[i] + beta * (dir[i] - c * g[i]);
        }
        std::mem::swap(&mut rg, &mut rg_new);
        e = e_new;
    }
    LevelOutcome { iterations, settled }
}

struct RestartOutcome {
    value: f64,
    vector: Vec<f64>,
    iterations: usize,
    final_smoothing: f64,
    settled: bool,
}

fn run_restart(energy: &Energy, start: Vec<f64>, cfg: &SolverConfig) -> RestartOutcome {
    let mut g = start;
    normalize(&mut g);
    let mut best = Best {
        value: energy.exact(&g),
        vector: g.clone(),
    };
    let p = energy.p;
    let mut schedule = Vec::new();
    if p == 2.0 {
        schedule.push(0.0);
    } else {
        let mu0 = 0.1 * energy.exact(&g).powf(1.0 / p);
        schedule.extend((0..cfg.smoothing_levels).map(|k| mu0 * 0.5f64.powi(k as i32)));
        if p > 1.0 {
            schedule.push(0.0);
        }
    }
    let mut iterations = 0;
    let mut final_smoothing = 0.0;
    let mut settled = false;
    for &mu in &schedule {
        let level = descend(energy, &mut g, mu, cfg, &mut best);
        iterations += level.iterations;
        settled = level.settled;
        final_smoothing = mu;
    }
    RestartOutcome {
        value: best.value,
        vector: best.vector,
        iterations,
        final_smoothing,
        settled,
    }
}

/// Upper bound for `chi(B)` by multi-start smoothed Riemannian descent.
pub fn solve_chi_d(lattice: &LatticeBox, p: f64, cfg: &SolverConfig) -> Result<VariationalResult> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(invalid("p", "energy exponent must lie in (0, 2]"));
    }
    if cfg.restarts == 0 {
        return Err(invalid("restarts", "need at least one start"));
    }
    let n = lattice.len();
    let energy = Energy {
        ends: bond_ends(lattice),
        n,
        p,
    };
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|k| match k {
            0 => Ok(vec![1.0; n]),
            1 => quadratic_ground_state(lattice),
            _ => {
                let mut r = rng::stream(cfg.seed, k as u64);
                Ok((0..n).map(|_| r.gen::<f64>()).collect())
            }
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<RestartOutcome> = starts.into_par_iter().map(|s| run_restart(&energy, s, cfg)).collect();

    let mut best_restart = 0;
    for (k, o) in outcomes.iter().enumerate() {
        // Exact ties go to the earliest start.
        if o.value < outcomes[best_restart].value {
            best_restart = k;
        }
    }
    let winner = &outcomes[best_restart];
    let minimizer = winner.vector.clone();
    let value = energy.exact(&minimizer);
    let mut grad = vec![0.0; n];
    let residual_mu = if p > 1.0 { 0.0 } else { winner.final_smoothing };
    energy.riemannian_gradient(&minimizer, residual_mu, &mut grad);
    let stationarity_residual = norm(&grad);
    Ok(VariationalResult {
        value,
        minimizer,
        restarts: cfg.restarts,
        restart_values: outcomes.iter().map(|o| o.value).collect(),
        best_restart,
        final_smoothing: winner.final_smoothing,
        stationarity_residual,
        iterations: outcomes.iter().map(|o| o.iterations).sum(),
        converged: if p > 1.0 {
            stationarity_residual <= cfg.tol * value.max(1.0)
        } else {
            winner.settled
        },
    })
}

fn quadratic_ground_state(lattice: &LatticeBox) -> Result<Vec<f64>> {
    let lattice = Arc::new(lattice.clone());
    let field = ConductanceField::constant(&lattice, 1.0)?;
    let op = assemble(&field, None, 1.0)?;
    match principal_eigen(&op, op.tolerance(1e-13)) {
        Ok(r) => Ok(r.eigenvector),
        Err(Error::NotConverged { best, .. }) => Ok(best.eigenvector),
        Err(e) => Err(e),
    }
}

/// Exponent of the scale function `s(alpha) = alpha^((2 eta - d)/(eta + 1))`,
/// written in terms of `p` so that `p = 2` gives the diffusive `alpha^2`.
pub fn scale_exponent(p: f64, d: usize) -> f64 {
    p * (d as f64 + 2.0) / 2.0 - d as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiCLevel {
    pub alpha: f64,
    pub sites: usize,
    pub chi_d: f64,
    /// `alpha^exponent * chi_d`.
    pub scaled: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Mixed,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    /// `r` in one dimension, the support radius in higher dimensions.
    pub parameter: f64,
    pub norm: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum ChiCOutcome {
    /// `eta > d/2`: scaled discrete values converge to a positive limit.
    Limit {
        exponent: f64,
        levels: Vec<ChiCLevel>,
        extrapolated: Option<f64>,
        last_relative_change: Option<f64>,
        trend: Trend,
    },
    /// `eta < d/2`: the continuum infimum is zero; the witness energies show the decay.
    ZeroInfimum { witness: Vec<WitnessPoint> },
    /// `eta = d/2`: the scale exponent vanishes; both the discrete values and the
    /// witness energies are reported and neither is interpreted as a limit.
    Critical {
        levels: Vec<ChiCLevel>,
        witness: Vec<WitnessPoint>,
    },
}

fn trend(values: &[f64]) -> Trend {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    if diffs.iter().all(|d| d.abs() <= 1e-12 * scale) {
        Trend::Flat
    } else if diffs.iter().all(|&d| d >= 0.0) {
        Trend::Increasing
    } else if diffs.iter().all(|&d| d <= 0.0) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    }
}

fn chi_levels(domain: &Domain, p: f64, alphas: &[f64], cfg: &SolverConfig) -> Result<Vec<ChiCLevel>> {
    let d = domain.dim();
    let exponent = scale_exponent(p, d);
    alphas
        .iter()
        .map(|&alpha| {
            let lattice = LatticeBox::build(d, alpha, domain.clone())?;
            let r = solve_chi_d(&lattice, p, cfg)?;
            Ok(ChiCLevel {
                alpha,
                sites: lattice.len(),
                chi_d: r.value,
                scaled: alpha.powf(exponent) * r.value,
                converged: r.converged,
            })
        })
        .collect()
}

fn witness_curve(domain: &Domain, p: f64) -> Result<Vec<WitnessPoint>> {
    let d = domain.dim();
    let half = domain.bounds().iter().map(|[lo, hi]| 0.5 * (hi - lo)).fold(f64::INFINITY, f64::min);
    let eps0 = 0.5 * half;
    if d == 1 {
        [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0]
            .iter()
            .map(|&r| {
                let w = witness_d1(r, eps0, eps0 * 1e-4, p)?;
                Ok(WitnessPoint {
                    parameter: r,
                    norm: w.norm,
                    energy: w.energy,
                })
            })
            .collect()
    } else {
        let gamma = 3.0 * d as f64 / 8.0;
        (0..6)
            .map(|k| {
                let eps = eps0 * 0.5f64.powi(k);
                let w = witness_dge2(eps, gamma, d, p, 40)?;
                Ok(WitnessPoint {
                    parameter: eps,
                    norm: w.norm,
                    energy: w.energy,
                })
            })
            .collect()
    }
}

/// Scaled discrete minima `alpha^exponent chi(alpha G ∩ Z^d)` on a sequence of
/// scales, or the witness evidence when the continuum problem degenerates.
pub fn solve_chi_c(domain: &Domain, p: f64, alphas: &[f64], cfg: &SolverConfig) -> Result<ChiCOutcome> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(invalid("p", "energy exponent must lie in (0, 2]"));
    }
    let d = domain.dim();
    match classify_regime_p(p, d) {
        Regime::Confined => Ok(ChiCOutcome::ZeroInfimum {
            witness: witness_curve(domain, p)?,
        }),
        Regime::Critical => Ok(ChiCOutcome::Critical {
            levels: chi_levels(domain, p, alphas, cfg)?,
            witness: witness_curve(domain, p)?,
        }),
        Regime::SpreadOut => {
            if alphas.is_empty() {
                return Err(invalid("levels", "need at least one scale"));
            }
            let levels = chi_levels(domain, p, alphas, cfg)?;
            let scaled: Vec<f64> = levels.iter().map(|l| l.scaled).collect();
            let (extrapolated, last_relative_change) = match levels.len() {
                0 | 1 => (None, None),
                k => {
                    let (a, b) = (&levels[k - 2], &levels[k - 1]);
                    let ratio = (b.alpha / a.alpha).powi(2);
                    (
                        Some(b.scaled + (b.scaled - a.scaled) / (ratio - 1.0)),
                        Some(((b.scaled - a.scaled) / b.scaled).abs()),
                    )
                }
            };
            Ok(ChiCOutcome::Limit {
                exponent: scale_exponent(p, d),
                trend: trend(&scaled),
                levels,
                extrapolated,
                last_relative_change,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessValue {
    pub norm: f64,
    pub energy: f64,
}

/// `f_r(x) = A_r (eps0 - |x|)^r` on `(-eps0, eps0)`, normalised in `L^2`,
/// evaluated by the midpoint rule on a grid of spacing `h`.
pub fn witness_d1(r: f64, eps0: f64, h: f64, p: f64) -> Result<WitnessValue> {
    if !(r > 0.5) {
        return Err(invalid("r", "witness exponent must exceed 1/2"));
    }
    if !(eps0 > 0.0 && h > 0.0 && h < eps0 && p > 0.0) {
        return Err(invalid("h", "need 0 < h < eps0 and p > 0"));
    }
    // Work with logarithms: the amplitude overflows for large `r`.
    let log_amp = 0.5 * ((2.0 * r + 1.0) / 2.0).ln() - (r + 0.5) * eps0.ln();
    let cells = (2.0 * eps0 / h).round() as usize;
    let h = 2.0 * eps0 / cells as f64;
    let (mut norm2, mut energy) = (0.0, 0.0);
    for k in 0..cells {
        let x = -eps0 + (k as f64 + 0.5) * h;
        let log_gap = (eps0 - x.abs()).ln();
        norm2 += (2.0 * (log_amp + r * log_gap)).exp();
        energy += (p * (r.ln() + log_amp + (r - 1.0) * log_gap)).exp();
    }
    Ok(WitnessValue {
        norm: (norm2 * h).sqrt(),
        energy: energy * h,
    })
}

/// `f(x) = A (|x|^(-2 gamma) - eps^(-2 gamma))^(1/2)` on the ball of radius `eps`,
/// normalised in `L^2`, with both norm and `sum_i ∫ |∂_i f|^p` reduced to radial
/// integrals and evaluated on geometrically graded panels (`levels` per end, at most 40).
pub fn witness_dge2(eps: f64, gamma: f64, d: usize, p: f64, levels: usize) -> Result<WitnessValue> {
    if d < 2 {
        return Err(invalid("d", "radial witnesses need d >= 2"));
    }
    let df = d as f64;
    if !(gamma > df / 4.0 && gamma < df / 2.0) {
        return Err(invalid("gamma", format!("must lie in ({}, {})", df / 4.0, df / 2.0)));
    }
    if !(p > 0.0 && p <= 2.0 * df / (df + 2.0) + 1e-12) {
        return Err(invalid("p", "witnesses are only meaningful for p <= 2d/(d+2)"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps", "radius must be positive"));
    }
    let sphere = 2.0 * PI.powf(df / 2.0) / gamma_fn(df / 2.0);
    // ∫_{S^{d-1}} sum_i |θ_i|^p dθ.
    let angular = df * 2.0 * PI.powf((df - 1.0) / 2.0) * gamma_fn((p + 1.0) / 2.0) / gamma_fn((df + p) / 2.0);
    let amp2 = 1.0 / (sphere * eps.powf(df - 2.0 * gamma) * (1.0 / (df - 2.0 * gamma) - 1.0 / df));
    let amp = amp2.sqrt();
    let levels = levels.min(40);
    // r^(-2 gamma) - eps^(-2 gamma), without cancellation near the rim.
    let excess = |s: f64| eps.powf(-2.0 * gamma) * (-2.0 * gamma * s.ln()).exp_m1();
    let near_zero = |q: f64| q + df - 1.0;
    let norm2 = sphere
        * graded_integral(levels, near_zero(-2.0 * gamma), 1.0, |s| {
            let r = eps * s;
            amp2 * excess(s) * r.powf(df - 1.0) * eps
        });
    let energy = angular
        * graded_integral(levels, near_zero(-(gamma + 1.0) * p), -0.5 * p, |s| {
            let r = eps * s;
            let slope = amp * gamma * r.powf(-2.0 * gamma - 1.0) / excess(s).sqrt();
            slope.powf(p) * r.powf(df - 1.0) * eps
        });
    Ok(WitnessValue {
        norm: norm2.sqrt(),
        energy,
    })
}

fn gamma_fn(x: f64) -> f64 {
    gamma(x)
}

/// `∫_0^1 f` on panels refined geometrically towards both endpoints. The two
/// innermost pieces use the local behaviour `f(s) ~ s^a` near 0 and `f(s) ~ (1-s)^b`
/// near 1 (`a, b > -1`).
fn graded_integral(levels: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(12);
    let delta = 0.5 * 0.5f64.powi(levels as i32);
    let mut breaks = vec![delta];
    for k in (1..levels).rev() {
        breaks.push(0.5 * 0.5f64.powi(k as i32));
    }
    breaks.push(0.5);
    for k in 1..levels {
        breaks.push(1.0 - 0.5 * 0.5f64.powi(k as i32));
    }
    breaks.push(1.0 - delta);
    let body: f64 = breaks
        .windows(2)
        .map(|ab| {
            let (lo, hi) = (ab[0], ab[1]);
            x.iter().zip(&w).map(|(xi, wi)| wi * f(lo + (hi - lo) * xi)).sum::<f64>() * (hi - lo)
        })
        .sum();
    body + f(delta) * delta / (a + 1.0) + f(1.0 - delta) * delta / (b + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `sum g^(d/(d-1)) <= (sum_{z,e} |g(z+e) - g(z)|)^(d/(d-1))` for nonnegative `g`.
pub fn discrete_sobolev_check(g: &LatticeFunction) -> Result<SobolevCheck> {
    let d = g.keys().next().map_or(2, |z| z.len());
    if d < 2 {
        return Err(invalid("d", "the inequality needs d >= 2"));
    }
    if g.keys().any(|z| z.len() != d) {
        return Err(invalid("g", "mixed dimensions in support"));
    }
    if g.values().any(|&v| !(v >= 0.0)) {
        return Err(invalid("g", "values must be nonnegative"));
    }
    let q = d as f64 / (d as f64 - 1.0);
    let lhs = g.values().map(|v| v.powf(q)).sum();
    let rhs = p_energy_sparse(g, 1.0).powf(q);
    Ok(SobolevCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// Radial cutoff: 1 on the unit ball, linear down to 0 at radius 2.
pub fn cutoff(x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r <= 1.0 {
        1.0
    } else if r < 2.0 {
        2.0 - r
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub n: usize,
    /// `‖g_n‖₂` before renormalisation.
    pub normalization: f64,
    /// p-energy of `g_n / ‖g_n‖₂`.
    pub energy: f64,
}

/// Energies of the cut-off and renormalised functions `g(z) cutoff(z / n)`.
pub fn cutoff_convergence(g: &LatticeFunction, ns: &[usize], p: f64) -> Result<Vec<CutoffRow>> {
    ns.iter()
        .map(|&n| {
            if n == 0 {
                return Err(invalid("n", "cutoff radius must be positive"));
            }
            let mut gn: LatticeFunction = g
                .iter()
                .map(|(z, v)| {
                    let y: Vec<f64> = z.iter().map(|&c| c as f64 / n as f64).collect();
                    (z.clone(), v * cutoff(&y))
                })
                .filter(|(_, v)| *v != 0.0)
                .collect();
            let normalization = gn.values().map(|v| v * v).sum::<f64>().sqrt();
            if normalization > 0.0 {
                gn.values_mut().for_each(|v| *v /= normalization);
            }
            Ok(CutoffRow {
                n,
                normalization,
                energy: p_energy_sparse(&gn, p),
            })
        })
        .collect()
}

/// `r s^2 + D r^(-eta)`: cost of depressing a bond to conductance `r` under gradient `s`.
pub fn profile_objective(r: f64, slope: f64, params: &RegimeParams) -> f64 {
    r * slope * slope + params.tail_constant * r.powf(-params.eta)
}

/// Minimiser `(D eta)^(1/(eta+1)) |s|^(-2/(eta+1))` of [`profile_objective`].
pub fn optimal_conductance(slope: f64, params: &RegimeParams) -> f64 {
    (params.tail_constant * params.eta).powf(1.0 / (params.eta + 1.0)) * slope.abs().powf(-2.0 / (params.eta + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalProfile {
    /// Per axis, the profile on each forward-difference cell.
    pub values: Vec<Vec<f64>>,
    pub capped_cells: usize,
    /// Largest `|phi s^2 + D phi^(-eta) - K |s|^p|` over uncapped cells.
    pub residual: f64,
}

/// Optimal conductance profile of `f`, clamped to `[1/cap, cap]`.
pub fn optimal_profile(f: &GridFunction, params: &RegimeParams, cap: f64) -> Result<OptimalProfile> {
    if !(cap >= 1.0) {
        return Err(invalid("cap", "cap must be at least 1"));
    }
    let k = params.rate_constant();
    let p = params.p();
    let mut capped_cells = 0;
    let mut residual: f64 = 0.0;
    let values = (0..f.dim())
        .map(|axis| {
            f.forward_differences(axis)
                .into_iter()
                .map(|(_, s)| {
                    let raw = if s == 0.0 { f64::INFINITY } else { optimal_conductance(s, params) };
                    let phi = raw.clamp(1.0 / cap, cap);
                    if phi != raw {
                        capped_cells += 1;
                    } else {
                        residual = residual.max((profile_objective(phi, s, params) - k * s.abs().powf(p)).abs());
                    }
                    phi
                })
                .collect()
        })
        .collect();
    Ok(OptimalProfile {
        values,
        capped_cells,
        residual,
    })
}
