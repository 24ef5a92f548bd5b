//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails for a reason other than a documented unattainable
//! literal bound (those are printed as FAIL and listed, but do not abort).

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rwrc::conductance::{sample_field, ConductanceField, ConductanceModel, EllipticModel, TailModel};
use rwrc::homogenise::{energy_match_check, estimate_c_eff, kuhn_interpolate, spectral_convergence_experiment};
use rwrc::lattice::{Domain, LatticeBox};
use rwrc::spectrum::{assemble, lifshitz_mc, lowest_eigenpairs, principal_eigen, DEFAULT_TOLERANCE};
use rwrc::stats::line_fit;
use rwrc::varprob::{
    discrete_sobolev_check, optimal_conductance, profile_objective, solve_chi_c, solve_chi_d, ChiCOutcome, LatticeFunction,
    RegimeParams, SolverConfig,
};
use rwrc::walker::{feynman_kac_mc, nonexit_exact};
use rwrc::{rng, Result};
use rwrc_cli::{compare_slopes, SlopePoint};

#[derive(Default)]
struct Verdict {
    pass: bool,
    detail: String,
    /// Literal sub-checks that fail for reasons recorded in the decisions notes.
    unattainable: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            unattainable: Vec::new(),
        }
    }
}

struct Criterion {
    id: usize,
    title: &'static str,
    budget: Duration,
    run: fn() -> Result<Verdict>,
}

fn unit_box(d: usize, alpha: f64) -> Arc<LatticeBox> {
    Arc::new(LatticeBox::build(d, alpha, Domain::unit_cube(d)).unwrap())
}

fn dense_lowest(op: &rwrc::spectrum::DirichletOperator) -> f64 {
    SymmetricEigen::new(op.to_dense()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn tail_law() -> Result<Verdict> {
    let mut cases = Vec::new();
    for eta in [0.5, 1.0, 2.0] {
        for d in [0.5, 1.0] {
            // Probabilities 1e-3, 0.05, and whatever eps = 0.9 gives; all below the cap M = 1.
            for target in [Some(1e-3), Some(0.05), None] {
                let eps = match target {
                    Some(q) => (d / -f64::ln(q)).powf(1.0 / eta),
                    None => 0.9,
                };
                cases.push((eta, d, eps));
            }
        }
    }
    const N: usize = 1_000_000;
    let results: Vec<(f64, f64, f64, f64, usize)> = cases
        .par_iter()
        .enumerate()
        .map(|(k, &(eta, d, eps))| {
            let model = TailModel::new(eta, d, 1.0).unwrap();
            let mut r = rng::stream(0xACCE, k as u64);
            let hits = (0..N).filter(|_| model.sample(&mut r) <= eps).count();
            (eta, d, eps, (-d * eps.powf(-eta)).exp(), hits)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for &(_, _, eps, p, hits) in &results {
        assert!(eps < 1.0 && p >= 1e-3 * (1.0 - 1e-12));
        let se = (N as f64 * p * (1.0 - p)).sqrt();
        worst = worst.max((hits as f64 - N as f64 * p).abs() / se);
    }
    Ok(Verdict::new(
        worst <= 3.0,
        format!("{} (eta, D, eps) cases at 1e6 samples, worst deviation {worst:.2} binomial SE", results.len()),
    ))
}

fn eigen_oracle() -> Result<Verdict> {
    let mut worst_path: f64 = 0.0;
    for n in [3usize, 10, 50] {
        let b = Arc::new(LatticeBox::path(n)?);
        let op = assemble(&ConductanceField::constant(&b, 1.0)?, None, 1.0)?;
        let exact = 2.0 * (1.0 - (PI / (n as f64 + 1.0)).cos());
        worst_path = worst_path.max((principal_eigen(&op, DEFAULT_TOLERANCE)?.eigenvalue - exact).abs());
    }
    let mut worst_dense: f64 = 0.0;
    let model = ConductanceModel::Elliptic(EllipticModel::new(0.25, rwrc::conductance::EllipticLaw::Uniform)?);
    for k in 0..20u64 {
        let (d, alpha) = match k % 4 {
            0 => (1, 40.0 + k as f64),
            1 => (2, 6.0 + (k % 5) as f64),
            2 => (2, 11.0),
            _ => (3, 4.0 + (k % 2) as f64),
        };
        let b = unit_box(d, alpha);
        assert!(b.len() <= 100);
        let op = assemble(&sample_field(&b, &model, k), None, 1.0)?;
        worst_dense = worst_dense.max((principal_eigen(&op, DEFAULT_TOLERANCE)?.eigenvalue - dense_lowest(&op)).abs());
    }
    Ok(Verdict::new(
        worst_path <= 1e-10 && worst_dense <= 1e-8,
        format!("paths max error {worst_path:.1e}; 20 elliptic fields vs dense max error {worst_dense:.1e}"),
    ))
}

fn chi_d_quadratic() -> Result<Verdict> {
    let mut boxes: Vec<LatticeBox> = [4usize, 8, 16].iter().map(|&n| LatticeBox::centered_cube(1, n)).collect();
    for alpha in [4.0, 6.0, 8.0, 11.0] {
        boxes.push(LatticeBox::build(2, alpha, Domain::unit_cube(2))?);
    }
    let mut worst: f64 = 0.0;
    for b in &boxes {
        let chi = solve_chi_d(b, 2.0, &SolverConfig::default())?.value;
        let field = ConductanceField::constant(&Arc::new(b.clone()), 1.0)?;
        let op = assemble(&field, None, 1.0)?;
        let lambda = principal_eigen(&op, DEFAULT_TOLERANCE)?.eigenvalue;
        worst = worst.max((chi - lambda).abs() / lambda);
    }
    Ok(Verdict::new(
        worst <= 1e-6,
        format!("{} boxes up to 10x10, worst relative gap {worst:.1e}", boxes.len()),
    ))
}

fn chi_d_decay() -> Result<Verdict> {
    let p = RegimeParams::new(1.0, 1.0)?.p();
    let ns = [4usize, 8, 16, 32];
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut below = true;
    for &n in &ns {
        let v = solve_chi_d(&LatticeBox::centered_cube(1, n), p, &SolverConfig::default())?.value;
        below &= v <= 2.0 * (n as f64).powf(-0.5);
        x.push((n as f64).ln());
        y.push(v.ln());
    }
    let slope = line_fit(&x, &y).expect("distinct sizes").slope;
    let rel = (slope + 0.5).abs() / 0.5;
    Ok(Verdict::new(
        below && rel <= 0.15,
        format!("all below 2n^(-1/2): {below}; log-log slope {slope:.4} ({:.1}% from -1/2)", 100.0 * rel),
    ))
}

fn sobolev() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let mut checked = 0;
    for d in [2usize, 3] {
        for _ in 0..10_000 {
            let support = rng.gen_range(1..=40);
            let mut g = LatticeFunction::new();
            for _ in 0..support {
                let z: Vec<i64> = (0..d).map(|_| rng.gen_range(-4..=4)).collect();
                let v = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) };
                g.insert(z, v);
            }
            checked += 1;
            if !discrete_sobolev_check(&g)?.holds {
                failures += 1;
            }
        }
    }
    let boxes = [
        LatticeBox::centered_cube(2, 1),
        LatticeBox::centered_cube(2, 2),
        LatticeBox::centered_cube(2, 4),
        LatticeBox::build(2, 9.0, Domain::unit_cube(2))?,
        LatticeBox::build(2, 3.0, Domain::new(vec![[0.0, 4.0], [0.0, 1.0]])?)?,
    ];
    let mut min_value = f64::INFINITY;
    for b in &boxes {
        min_value = min_value.min(solve_chi_d(b, 1.0, &SolverConfig::default())?.value);
    }
    Ok(Verdict::new(
        failures == 0 && min_value >= 1.0 - 1e-6,
        format!("{checked} random vectors, {failures} violations; min chi^d at d=2, p=1 over {} boxes {min_value:.8}", boxes.len()),
    ))
}

fn continuum_limit() -> Result<Verdict> {
    let outcome = solve_chi_c(&Domain::unit_cube(1), 2.0, &[64.0, 128.0, 256.0, 512.0], &SolverConfig::default())?;
    let ChiCOutcome::Limit { exponent, levels, extrapolated, .. } = outcome else {
        return Ok(Verdict::new(false, "p = 2 in d = 1 was not classified as a positive limit"));
    };
    let last = levels.last().expect("four levels");
    let rel = (last.scaled - PI * PI).abs() / (PI * PI);
    Ok(Verdict::new(
        (exponent - 2.0).abs() < 1e-15 && last.alpha == 512.0 && rel <= 0.01,
        format!(
            "scale exponent {exponent}; alpha=512 scaled value {:.6} ({rel:.1e} from pi^2); extrapolated {:.7}",
            last.scaled,
            extrapolated.unwrap_or(f64::NAN)
        ),
    ))
}

/// Golden-section search for the minimum of a unimodal function on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn optimal_profile() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_value: f64 = 0.0;
    let mut worst_stationarity: f64 = 0.0;
    for eta in [0.5, 1.0, 2.0] {
        for _ in 0..10_000 {
            let tail = rng.gen_range(0.1..3.0);
            let params = RegimeParams::new(eta, tail)?;
            let s = rng.gen_range(-3.0..3.0f64).exp() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let r = optimal_conductance(s, &params);
            // The objective is convex in log r.
            let u = golden_section(|u| profile_objective(u.exp(), s, &params), -60.0, 60.0);
            let oracle = profile_objective(u.exp(), s, &params);
            worst_value = worst_value.max((profile_objective(r, s, &params) - oracle) / oracle);
            // First-order condition s^2 = eta D r^(-eta-1).
            worst_stationarity = worst_stationarity.max((s * s - eta * tail * r.powf(-eta - 1.0)).abs() / (s * s));
        }
    }
    Ok(Verdict::new(
        worst_value <= 1e-12 && worst_stationarity <= 1e-12,
        format!("3 x 1e4 gradients; objective excess over golden section {worst_value:.1e}, stationarity residual {worst_stationarity:.1e}"),
    ))
}

/// `E_start[exp(-alpha^-2 sum_z ℓ_t(z) V_t(z)); stay]` from the dense matrix exponential.
fn feynman_kac_dense(field: &ConductanceField, v: impl Fn(f64) -> f64, start: usize, t: f64) -> f64 {
    let b = field.lattice();
    let n = b.len();
    let alpha = b.alpha();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (id, e) in b.edges().iter().enumerate() {
        let w = field.weight(id);
        let (x, y) = (b.index_of(&e.tail), b.index_of(&e.head()));
        for s in [x, y].into_iter().flatten() {
            q[(s, s)] -= w;
        }
        if let (Some(x), Some(y)) = (x, y) {
            q[(x, y)] += w;
            q[(y, x)] += w;
        }
    }
    for (s, z) in b.sites().enumerate() {
        // Linear V: the cell average is the value at the cell midpoint.
        q[(s, s)] -= v((z[0] as f64 + 0.5) / alpha) / (alpha * alpha);
    }
    (q * t).exp().row(start).sum()
}

fn semigroup_agreement() -> Result<Verdict> {
    let b = Arc::new(LatticeBox::path(5)?);
    let v = |y: f64| 4.0 * y;
    let mut worst_sigma: f64 = 0.0;
    let fields = [
        ConductanceField::constant(&b, 1.0)?,
        sample_field(&b, &ConductanceModel::Tail(TailModel::new(1.0, 0.5, 1.0)?), 11),
        sample_field(&b, &ConductanceModel::Elliptic(EllipticModel::equiprobable(0.5, vec![0.5, 1.5])?), 12),
    ];
    for (k, f) in fields.iter().enumerate() {
        let exact = feynman_kac_dense(f, v, 2, 1.0);
        let mc = feynman_kac_mc(f, |y: &[f64]| v(y[0]), &[3], 1.0, 100_000, 40 + k as u64)?;
        worst_sigma = worst_sigma.max((mc.mean - exact).abs() / mc.std_error);
    }

    // Quenched decay on a fixed field.
    let f = &fields[1];
    let op = assemble(f, None, 1.0)?;
    let pairs = lowest_eigenpairs(&op, 2, op.tolerance(DEFAULT_TOLERANCE))?;
    let (l1, l2) = (pairs[0].eigenvalue, pairs[1].eigenvalue);
    let t0 = 10.0 / (l2 - l1);
    let log_p = |t: f64| nonexit_exact(f, &[3], t).map(f64::ln);
    let mut worst_increment: f64 = 0.0;
    for k in 0..8 {
        let (t, s) = (t0 * (1.0 + 0.5 * k as f64), t0 * (1.5 + 0.5 * k as f64));
        let rate = -(log_p(s)? - log_p(t)?) / (s - t);
        worst_increment = worst_increment.max((rate - l1).abs() / l1);
    }
    let literal = (-log_p(t0)? / t0 - l1).abs() / l1;
    let mut verdict = Verdict::new(
        worst_sigma <= 3.0 && worst_increment <= 0.01,
        format!(
            "FK vs dense expm: worst {worst_sigma:.2} sigma at 1e5 walks; decay increments on t*gap >= 10 within {:.1e} of lambda_1; \
             literal -(1/t)log P at t*gap = 10 off by {:.2}%",
            worst_increment,
            100.0 * literal
        ),
    );
    if literal > 0.01 {
        verdict.unattainable.push(format!(
            "-(1/t)log P within 1% at t*gap = 10 (prefactor log(v_1(0) <v_1, 1>)/t gives {:.2}%)",
            100.0 * literal
        ));
    }
    Ok(verdict)
}

fn perturbation() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.gen_range(1..=9usize);
        let b = Arc::new(LatticeBox::path(n)?);
        let eps = rng.gen_range(0.01..0.5);
        let m = b.edges().len();
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(eps + 0.05..2.5)).collect();
        let phi: Vec<f64> = psi.iter().map(|p| p + eps * rng.gen_range(-1.0..=1.0)).collect();
        let lowered: Vec<f64> = psi.iter().map(|p| p - eps).collect();
        let start = [rng.gen_range(1..=n as i64)];
        let phi = ConductanceField::from_weights(&b, phi)?;
        let lowered = ConductanceField::from_weights(&b, lowered)?;
        for t in [1.0, 5.0] {
            let lhs = nonexit_exact(&phi, &start, t)?;
            let rhs = (-4.0 * eps * t).exp() * nonexit_exact(&lowered, &start, t)?;
            worst_margin = worst_margin.min(lhs / rhs);
        }
    }
    Ok(Verdict::new(
        worst_margin >= 1.0 - 1e-10,
        format!("100 pairs x t in {{1, 5}}; smallest ratio lhs/rhs {worst_margin:.6}"),
    ))
}

/// `Pr(a_1 + a_2 <= eps)` for two capped tail weights, by quadrature.
fn singleton_oracle(eta: f64, tail: f64, eps: f64) -> f64 {
    let cdf = |x: f64| if x <= 0.0 { 0.0 } else if x >= 1.0 { 1.0 } else { (-tail * x.powf(-eta)).exp() };
    let density = |x: f64| if x <= 0.0 { 0.0 } else { tail * eta * x.powf(-eta - 1.0) * (-tail * x.powf(-eta)).exp() };
    let simpson = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let top = eps.min(1.0);
    let kink = (eps - 1.0).clamp(0.0, top);
    let g = |x: f64| density(x) * cdf(eps - x);
    let continuous = simpson(0.0, kink, &g) + simpson(kink, top, &g);
    let atom = if eps > 1.0 { (1.0 - (-tail).exp()) * cdf(eps - 1.0) } else { 0.0 };
    continuous + atom
}

fn lifshitz() -> Result<Verdict> {
    let (eta, tail) = (1.0, 0.25);
    let eps = [0.8, 1.0, 1.25];
    let b = Arc::new(LatticeBox::build(1, 1.0, Domain::centered(1, 0.5))?);
    let table = lifshitz_mc(&TailModel::new(eta, tail, 1.0)?, &b, &eps, 100_000, 2024)?;
    let x: Vec<f64> = eps.iter().map(|e| e.powf(-eta)).collect();
    let points: Vec<SlopePoint> = table
        .rows
        .iter()
        .zip(&x)
        .map(|(r, &x)| SlopePoint {
            x,
            estimate: r.frequency,
            lo: r.ci_low,
            hi: r.ci_high,
        })
        .collect();
    // The curve is not exactly linear on three points, so fit the oracle with the same weights.
    let oracle_points: Vec<SlopePoint> = points
        .iter()
        .zip(&eps)
        .map(|(p, &e)| {
            let q = singleton_oracle(eta, tail, e);
            SlopePoint {
                x: p.x,
                estimate: q,
                lo: q * p.lo / p.estimate,
                hi: q * p.hi / p.estimate,
            }
        })
        .collect();
    let oracle_slope = compare_slopes(&oracle_points, 1.0)
        .map_err(|e| rwrc::Error::RegimeMismatch(e.to_string()))?
        .slope;
    let report = compare_slopes(&points, oracle_slope).map_err(|e| rwrc::Error::RegimeMismatch(e.to_string()))?;
    let asymptotic = -tail * table.chi_d.powf(eta + 1.0);
    let asymptotic_ratio = report.slope / asymptotic;
    Ok(Verdict::new(
        (report.ratio - 1.0).abs() <= 0.15 && report.slope < 0.0 && asymptotic < 0.0,
        format!(
            "MC slope {:.4} vs quadrature {oracle_slope:.4}: ratio {:.3} [{:.3}, {:.3}]; asymptotic -D chi^(eta+1) = {asymptotic} gives ratio {asymptotic_ratio:.3}",
            report.slope, report.ratio, report.ratio_ci.0, report.ratio_ci.1
        ),
    ))
}

fn energy_match() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_residual: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for d in [1usize, 2] {
        for _ in 0..100 {
            let alpha = rng.gen_range(3..=if d == 1 { 30 } else { 9 }) as f64;
            let b = unit_box(d, alpha);
            let v: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let phi = ConductanceField::from_fn(&b, |_| rng.gen_range(0.1..4.0))?;
            let m = energy_match_check(&v, &phi)?;
            worst_residual = worst_residual.max(m.residual);

            // Independent evaluation of both sides.
            let mut discrete = 0.0;
            for (id, e) in b.edges().iter().enumerate() {
                let at = |z: &[i64]| b.index_of(z).map_or(0.0, |s| v[s]);
                discrete += phi.weight(id) * (at(&e.head()) - at(&e.tail)).powi(2);
            }
            discrete *= alpha * alpha;
            let continuum = kuhn_energy(&v, &b, &phi)?;
            worst_oracle = worst_oracle
                .max((m.discrete - discrete).abs() / discrete)
                .max((m.continuum - continuum).abs() / continuum);
        }
    }
    Ok(Verdict::new(
        worst_residual <= 1e-10 && worst_oracle <= 1e-10,
        format!("200 random (v, phi): worst residual {worst_residual:.1e}; independent side evaluation within {worst_oracle:.1e}"),
    ))
}

/// `∫ sum_k phi(bond along e_sigma(k)) (∂_sigma(k) f)^2` over every Kuhn simplex, with the
/// derivatives taken by central differences of the interpolant inside each simplex.
fn kuhn_energy(v: &[f64], b: &Arc<LatticeBox>, phi: &ConductanceField) -> Result<f64> {
    let f = kuhn_interpolate(v, b)?;
    let d = b.dim();
    let alpha = b.alpha();
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for k in 0..d {
        perms = perms
            .into_iter()
            .flat_map(|p| (0..=k).map(move |i| {
                let mut q = p.clone();
                q.insert(i, k);
                q
            }))
            .collect();
    }
    let factorial: f64 = (1..=d).map(|k| k as f64).product();
    let volume = alpha.powi(-(d as i32)) / factorial;
    let h = 0.25 / ((d as f64 + 1.0) * alpha);
    let lo: Vec<i64> = b.lower_corner().iter().map(|c| c - 1).collect();
    let mut total = 0.0;
    let mut cell = lo.clone();
    'cells: loop {
        for order in &perms {
            // Barycentre: the k-th axis of the order has fractional part (d - k) / (d + 1).
            let mut y = vec![0.0; d];
            for (k, &axis) in order.iter().enumerate() {
                y[axis] = (cell[axis] as f64 + (d - k) as f64 / (d as f64 + 1.0)) / alpha;
            }
            let mut w = cell.clone();
            for &axis in order {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[axis] += h;
                minus[axis] -= h;
                let slope = (f.eval(&plus) - f.eval(&minus)) / (2.0 * h);
                let weight = phi.weight_of(&w, axis).unwrap_or(0.0);
                total += volume * weight * slope * slope;
                w[axis] += 1;
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                break 'cells;
            }
            cell[i] += 1;
            if cell[i] <= lo[i] + b.shape()[i] as i64 {
                break;
            }
            cell[i] = lo[i];
            i += 1;
        }
    }
    Ok(total)
}

fn homogenisation() -> Result<Verdict> {
    let values = vec![0.5, 1.5];
    let model = EllipticModel::equiprobable(0.5, values.clone())?;
    let harmonic = values.len() as f64 / values.iter().map(|a| 1.0 / a).sum::<f64>();
    // Calibrated units: a ≡ 1 gives 2.
    let oracle = 2.0 * harmonic;
    let c = estimate_c_eff(&model, 1, &[512.0], 32, 77)?;
    let rel = (c.c_eff - oracle).abs() / oracle;
    let exp = spectral_convergence_experiment(&model, 1, None, 1, &[32.0, 64.0, 128.0], 32, 78)?;
    let dist: Vec<f64> = exp.rows.iter().map(|r| r.eigenfunction_distance.unwrap_or(f64::NAN)).collect();
    let decreasing = dist.windows(2).all(|w| w[1] < w[0]);
    Ok(Verdict::new(
        rel <= 0.02 && decreasing,
        format!(
            "c_eff {:.4} (CI {:.4}-{:.4}) vs {oracle} ({:.2}%); sine distance at alpha 32/64/128: {:.4} {:.4} {:.4}",
            c.c_eff,
            c.ci.0,
            c.ci.1,
            100.0 * rel,
            dist[0],
            dist[1],
            dist[2]
        ),
    ))
}

fn cli_run(args: &[&str], out: &Path) -> std::result::Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_rwrc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Result<Verdict> {
    let runs: [(&str, Vec<&str>); 7] = [
        ("sample", vec!["sample", "--eta", "1", "--D", "1", "--d", "2", "--alpha", "4", "--G", "-1,1;-1,1", "--seed", "3"]),
        ("simulate", vec!["simulate", "--eta", "0.5", "--D", "1", "--alpha", "5", "--G", "-1,1", "--horizon", "4", "--seed", "4"]),
        ("nonexit", vec!["nonexit", "--eta", "1", "--D", "1", "--alpha", "4", "--G", "-1,1", "--t", "2", "--n-env", "24", "--n-walks", "200", "--seed", "5"]),
        ("lifshitz", vec!["lifshitz", "--eta", "1", "--D", "0.25", "--G", "-0.5,0.5", "--eps-grid", "0.8,1,1.25", "--n-env", "5000", "--seed", "6"]),
        ("homog", vec!["homog", "--lambda", "0.5", "--values", "0.5,1.5", "--d", "1", "--sizes", "16,32", "--jmax", "2", "--n-env", "8", "--seed", "7"]),
        ("chi-d", vec!["chi-d", "--n", "6", "--p", "0.8", "--seed", "8"]),
        ("chi-c", vec!["chi-c", "--G", "0,1", "--eta", "2", "--levels", "16,32", "--seed", "9"]),
    ];
    let root = tempfile::tempdir().map_err(|e| rwrc::Error::RegimeMismatch(e.to_string()))?;
    let mut mismatched = Vec::new();
    let mut count = 0;
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let dir = root.path().join(format!("{name}-{rep}"));
            std::fs::create_dir_all(&dir).unwrap();
            let threads = if rep == 0 { "1" } else { "4" };
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().copied());
            if let Err(e) = cli_run(&full, &dir.join("out.json")) {
                return Ok(Verdict::new(false, format!("{name} failed: {e}")));
            }
            outputs.push(files_of(&dir));
        }
        count += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatched.push(*name);
        }
    }
    Ok(Verdict::new(
        mismatched.is_empty(),
        format!("{} experiments, {count} files compared across reruns (1 vs 4 threads); mismatches: {mismatched:?}", runs.len()),
    ))
}

fn main() {
    let criteria = [
        Criterion { id: 1, title: "tail-law exactness", budget: Duration::from_secs(10), run: tail_law },
        Criterion { id: 2, title: "eigen oracle", budget: Duration::from_secs(5), run: eigen_oracle },
        Criterion { id: 3, title: "chi^d p=2 equivalence", budget: Duration::from_secs(60), run: chi_d_quadratic },
        Criterion { id: 4, title: "chi^d decay rate", budget: Duration::from_secs(120), run: chi_d_decay },
        Criterion { id: 5, title: "discrete Sobolev property", budget: Duration::from_secs(60), run: sobolev },
        Criterion { id: 6, title: "continuum limit at p=2", budget: Duration::from_secs(120), run: continuum_limit },
        Criterion { id: 7, title: "optimal profile identity", budget: Duration::from_secs(5), run: optimal_profile },
        Criterion { id: 8, title: "semigroup/Feynman-Kac agreement", budget: Duration::from_secs(120), run: semigroup_agreement },
        Criterion { id: 9, title: "perturbation comparison", budget: Duration::from_secs(30), run: perturbation },
        Criterion { id: 10, title: "singleton Lifshitz tail", budget: Duration::from_secs(120), run: lifshitz },
        Criterion { id: 11, title: "energy-match exactness", budget: Duration::from_secs(30), run: energy_match },
        Criterion { id: 12, title: "homogenisation d=1 oracle", budget: Duration::from_secs(600), run: homogenisation },
        Criterion { id: 13, title: "determinism", budget: Duration::from_secs(120), run: determinism },
    ];
    let mut hard_failures = 0;
    let mut known = Vec::new();
    println!("acceptance: {} criteria", criteria.len());
    for c in &criteria {
        let start = Instant::now();
        let verdict = match (c.run)() {
            Ok(v) => v,
            Err(e) => Verdict::new(false, format!("error: {e}")),
        };
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = verdict.pass && in_time;
        let status = if pass && verdict.unattainable.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "criterion {:>2} {:<34} {status}  [{:.2}s / {}s] {}",
            c.id,
            c.title,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            verdict.detail
        );
        if !in_time {
            line.push_str(" (over time budget)");
        }
        if pass && !verdict.unattainable.is_empty() {
            line.push_str(&format!(" | unattainable as stated: {}", verdict.unattainable.join("; ")));
            known.push(c.id);
        }
        if !pass {
            hard_failures += 1;
        }
        println!("{line}");
    }
    let passed = criteria.len() - hard_failures - known.len();
    println!(
        "acceptance summary: {passed} PASS, {} FAIL ({} documented unattainable literal bound{}: criteria {known:?})",
        hard_failures + known.len(),
        known.len(),
        if known.len() == 1 { "" } else { "s" }
    );
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
