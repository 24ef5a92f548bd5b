//! Continuous-time random walk among conductances: exact (Gillespie) paths,
//! local times and Monte Carlo estimators for non-exit and Feynman–Kac quantities.

use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conductance::{sample_field, ConductanceField, ConductanceModel};
use crate::error::{invalid, Result};
use crate::lattice::{Direction, LatticeBox, Site};
use crate::rng;
use crate::spectrum::{assemble, discretize_potential, semigroup_apply};
use crate::stats::{mean_estimate, MeanEstimate, Z95};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    /// Destination, possibly outside the box for the final (killing) jump.
    pub site: Site,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub start: Site,
    pub jumps: Vec<Jump>,
    pub horizon: f64,
    /// Time of the jump out of the box, if the walk was killed.
    pub exit_time: Option<f64>,
}

impl TrajectorySample {
    pub fn exited(&self) -> bool {
        self.exit_time.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct LocalTimeRecord {
    lattice: Arc<LatticeBox>,
    horizon: f64,
    times: Vec<f64>,
}

impl LocalTimeRecord {
    pub fn new(lattice: Arc<LatticeBox>, horizon: f64, times: Vec<f64>) -> Result<Self> {
        if times.len() != lattice.len() {
            return Err(crate::Error::DimensionMismatch {
                expected: lattice.len(),
                got: times.len(),
            });
        }
        if times.iter().any(|&x| !(x >= 0.0)) {
            return Err(invalid("local time", "must be nonnegative"));
        }
        Ok(Self { lattice, horizon, times })
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lattice
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Occupation times indexed like the sites of the box.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn get(&self, z: &[i64]) -> f64 {
        self.lattice.index_of(z).map_or(0.0, |s| self.times[s])
    }

    pub fn total(&self) -> f64 {
        self.times.iter().sum()
    }
}

/// Piecewise-constant density `L_t(x) = (alpha^d / t) ℓ_t(⌊alpha x⌋)`.
#[derive(Debug, Clone)]
pub struct StepDensity {
    lattice: Arc<LatticeBox>,
    values: Vec<f64>,
}

impl StepDensity {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.lattice.index_of(&self.lattice.cell_of(y)).map_or(0.0, |s| self.values[s])
    }

    /// Cell sum `alpha^(-d) sum_z L(z)`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.alpha().powi(-(self.lattice.dim() as i32))
    }
}

pub fn rescale_local_times(rec: &LocalTimeRecord) -> StepDensity {
    let scale = rec.lattice.alpha().powi(rec.lattice.dim() as i32) / rec.horizon;
    StepDensity {
        lattice: Arc::clone(&rec.lattice),
        values: rec.times.iter().map(|l| l * scale).collect(),
    }
}

/// Jump rates out of every site, flattened for the inner simulation loop.
struct JumpTable {
    /// `(destination, rate)` per site; `None` leaves the box.
    moves: Vec<Vec<(Option<usize>, f64)>>,
    killing: Vec<f64>,
    reflecting: Vec<f64>,
}

impl JumpTable {
    fn new(field: &ConductanceField) -> Self {
        let lattice = field.lattice();
        let d = lattice.dim();
        let mut moves = Vec::with_capacity(lattice.len());
        let mut killing = Vec::with_capacity(lattice.len());
        let mut reflecting = Vec::with_capacity(lattice.len());
        for s in 0..lattice.len() {
            let m: Vec<(Option<usize>, f64)> = Direction::all(d)
                .map(|dir| (lattice.neighbor_index(s, dir), field.weight_at(s, dir)))
                .collect();
            killing.push(m.iter().map(|x| x.1).sum());
            reflecting.push(m.iter().filter(|x| x.0.is_some()).map(|x| x.1).sum());
            moves.push(m);
        }
        Self {
            moves,
            killing,
            reflecting,
        }
    }

    fn choose<R: Rng>(&self, s: usize, total: f64, stop_on_exit: bool, rng: &mut R) -> usize {
        let mut u = rng.gen::<f64>() * total;
        let options = &self.moves[s];
        let mut last = 0;
        for (k, &(dest, rate)) in options.iter().enumerate() {
            if !stop_on_exit && dest.is_none() {
                continue;
            }
            last = k;
            if u < rate {
                return k;
            }
            u -= rate;
        }
        last
    }
}

/// Outcome of one path: exit flag and the local times.
struct Path {
    exited: bool,
    jumps: Vec<(f64, usize, Option<usize>)>,
}

fn run_path<R: Rng>(table: &JumpTable, start: usize, horizon: f64, stop_on_exit: bool, rng: &mut R, times: &mut [f64], keep: bool) -> Path {
    let mut s = start;
    let mut now = 0.0;
    let mut jumps = Vec::new();
    loop {
        let total = if stop_on_exit { table.killing[s] } else { table.reflecting[s] };
        let hold = if total > 0.0 {
            rng.sample::<f64, _>(Exp1) / total
        } else {
            f64::INFINITY
        };
        if now + hold >= horizon {
            times[s] += horizon - now;
            return Path { exited: false, jumps };
        }
        times[s] += hold;
        now += hold;
        let k = table.choose(s, total, stop_on_exit, rng);
        let dest = table.moves[s][k].0;
        if keep {
            jumps.push((now, k, dest));
        }
        match dest {
            Some(w) => s = w,
            None => return Path { exited: true, jumps },
        }
    }
}

/// Simulates one path up to `horizon`. With `stop_on_exit` the walk is killed on
/// its first jump out of the box and the holding rate includes the outgoing
/// bonds; otherwise those bonds are suppressed and the walk stays in the box.
pub fn simulate(field: &ConductanceField, start: &[i64], horizon: f64, stop_on_exit: bool, seed: u64) -> Result<(TrajectorySample, LocalTimeRecord)> {
    let lattice = field.lattice();
    let s0 = lattice.require(start)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    let table = JumpTable::new(field);
    let mut rng = rng::stream(seed, 0);
    let mut times = vec![0.0; lattice.len()];
    let path = run_path(&table, s0, horizon, stop_on_exit, &mut rng, &mut times, true);
    let d = lattice.dim();
    let mut here = lattice.site(s0);
    let jumps = path
        .jumps
        .iter()
        .map(|&(time, k, _)| {
            let dir = Direction::all(d).nth(k).expect("slot within 2d");
            here = dir.apply(&here);
            Jump { time, site: here.clone() }
        })
        .collect::<Vec<_>>();
    let exit_time = if path.exited { jumps.last().map(|j| j.time) } else { None };
    Ok((
        TrajectorySample {
            start: start.to_vec(),
            jumps,
            horizon,
            exit_time,
        },
        LocalTimeRecord {
            lattice: Arc::clone(lattice),
            horizon,
            times,
        },
    ))
}

const ENV_TAG: u64 = 0xE7;
const WALK_TAG: u64 = 0x3A1C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonExitEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    /// The interval is the one-sided rule-of-three bound because nothing survived.
    pub one_sided: bool,
    pub n_env: usize,
    pub n_walks: usize,
    pub n_exit: usize,
    /// Survival frequency per environment.
    pub per_env: Vec<f64>,
}

fn survival_frequency(table: &JumpTable, start: usize, horizon: f64, n_walks: usize, seed: u64) -> usize {
    let mut times = vec![0.0; table.killing.len()];
    (0..n_walks)
        .filter(|&j| {
            let mut rng = rng::stream(seed, j as u64);
            !run_path(table, start, horizon, true, &mut rng, &mut times, false).exited
        })
        .count()
}

/// Two-level estimate of the annealed non-exit probability `<P_start^a(supp ℓ_t ⊂ B)>`.
pub fn nonexit_mc(
    model: &ConductanceModel,
    lattice: &Arc<LatticeBox>,
    start: &[i64],
    horizon: f64,
    n_env: usize,
    n_walks: usize,
    seed: u64,
) -> Result<NonExitEstimate> {
    model.validate()?;
    let s0 = lattice.require(start)?;
    if n_env == 0 || n_walks == 0 {
        return Err(invalid("n_env", "need at least one environment and one walk"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be nonnegative and finite"));
    }
    let survivors: Vec<usize> = (0..n_env)
        .into_par_iter()
        .map(|i| {
            if horizon == 0.0 {
                return n_walks;
            }
            let field = sample_field(lattice, model, rng::child_seed(seed, ENV_TAG, i as u64));
            let table = JumpTable::new(&field);
            survival_frequency(&table, s0, horizon, n_walks, rng::child_seed(seed, WALK_TAG, i as u64))
        })
        .collect();
    let per_env: Vec<f64> = survivors.iter().map(|&k| k as f64 / n_walks as f64).collect();
    let total: usize = survivors.iter().sum();
    let n_exit = n_env * n_walks - total;
    if total == 0 {
        return Ok(NonExitEstimate {
            estimate: 0.0,
            std_error: 0.0,
            ci: (0.0, 3.0 / (n_env * n_walks) as f64),
            one_sided: true,
            n_env,
            n_walks,
            n_exit,
            per_env,
        });
    }
    let m = if n_env >= 2 {
        mean_estimate(&per_env)
    } else {
        let p = per_env[0];
        MeanEstimate {
            mean: p,
            std_error: (p * (1.0 - p) / n_walks as f64).sqrt(),
            n: n_walks,
        }
    };
    Ok(NonExitEstimate {
        estimate: m.mean,
        std_error: m.std_error,
        ci: (m.mean - Z95 * m.std_error, m.mean + Z95 * m.std_error),
        one_sided: false,
        n_env,
        n_walks,
        n_exit,
        per_env,
    })
}

/// Monte Carlo `E_start[exp(-alpha^(-2) sum_z ℓ_t(z) V_t(z)); no exit]` with `V_t` the cell average of `V`.
pub fn feynman_kac_mc(
    field: &ConductanceField,
    potential: impl Fn(&[f64]) -> f64,
    start: &[i64],
    horizon: f64,
    n_walks: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    let lattice = field.lattice();
    let s0 = lattice.require(start)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be nonnegative and finite"));
    }
    if n_walks == 0 {
        return Err(invalid("n_walks", "need at least one walk"));
    }
    let alpha = lattice.alpha();
    let v: Vec<f64> = discretize_potential(potential, lattice).iter().map(|x| x / (alpha * alpha)).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("V", "potential must be bounded on the box"));
    }
    let table = JumpTable::new(field);
    let weights: Vec<f64> = (0..n_walks)
        .into_par_iter()
        .map_init(
            || vec![0.0; lattice.len()],
            |times, j| {
                if horizon == 0.0 {
                    return 1.0;
                }
                times.iter_mut().for_each(|x| *x = 0.0);
                let mut rng = rng::stream(seed, j as u64);
                if run_path(&table, s0, horizon, true, &mut rng, times, false).exited {
                    0.0
                } else {
                    (-times.iter().zip(&v).map(|(l, w)| l * w).sum::<f64>()).exp()
                }
            },
        )
        .collect();
    Ok(mean_estimate(&weights))
}

/// `(exp(t (Δ^a - alpha^(-2) V_t)) 1)(start)`, the exact counterpart of [`feynman_kac_mc`].
pub fn feynman_kac_exact(field: &ConductanceField, potential: impl Fn(&[f64]) -> f64, start: &[i64], horizon: f64) -> Result<f64> {
    let lattice = field.lattice();
    let s0 = lattice.require(start)?;
    let alpha = lattice.alpha();
    let v: Vec<f64> = discretize_potential(potential, lattice).iter().map(|x| x / (alpha * alpha)).collect();
    let op = assemble(field, Some(&v), 1.0)?;
    Ok(semigroup_apply(&op, horizon, &vec![1.0; lattice.len()])?[s0])
}

/// Quenched non-exit probability `P_start^a(supp ℓ_t ⊂ B) = (exp(t Δ^a) 1)(start)`.
pub fn nonexit_exact(field: &ConductanceField, start: &[i64], horizon: f64) -> Result<f64> {
    feynman_kac_exact(field, |_| 0.0, start, horizon)
}
