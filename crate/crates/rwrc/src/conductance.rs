//! Random conductance fields on the bonds of a box.
//!
//! Two laws are available. The heavy lower tail law draws `E ~ Exp(1)` and
//! sets `a = min((D / E)^(1/eta), M)`, which makes `P(a <= eps) = exp(-D eps^-eta)`
//! an identity for `eps < M`. The elliptic law draws from a configurable
//! distribution supported in `[lambda, 1/lambda]`.
//!
//! Each bond owns its own random stream keyed by its coordinates, so the value
//! on a bond does not depend on which box it was sampled in.

use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{cell_of, BoxSpec, Direction, Domain, Edge, LatticeBox, Site};
use crate::quadrature::{integrate_domain, CubeRule};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    /// Tail exponent `eta`.
    #[serde(rename = "eta")]
    pub exponent: f64,
    /// Tail constant `D`.
    #[serde(rename = "D")]
    pub constant: f64,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_cap() -> f64 {
    1.0
}

impl TailModel {
    pub fn new(exponent: f64, constant: f64, cap: f64) -> Result<Self> {
        let m = Self {
            exponent,
            constant,
            cap,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(invalid("eta", "tail exponent must be positive"));
        }
        if !(self.constant.is_finite() && self.constant > 0.0) {
            return Err(invalid("D", "tail constant must be positive"));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return Err(invalid("cap", "cap must be positive and finite"));
        }
        Ok(())
    }

    /// Energy exponent `p = 2 eta / (1 + eta)`.
    pub fn p(&self) -> f64 {
        2.0 * self.exponent / (1.0 + self.exponent)
    }

    /// `P(a <= eps)`.
    pub fn cdf(&self, eps: f64) -> f64 {
        if eps <= 0.0 {
            0.0
        } else if eps >= self.cap {
            1.0
        } else {
            (-self.constant * eps.powf(-self.exponent)).exp()
        }
    }

    /// Deterministic part of the sampler: the weight produced by an exponential draw `e`.
    pub fn weight_from_exponential(&self, e: f64) -> f64 {
        (self.constant / e).powf(1.0 / self.exponent).min(self.cap)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(Exp1);
        self.weight_from_exponential(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EllipticLaw {
    Constant { value: f64 },
    /// Uniform on `[lambda, 1/lambda]`.
    Uniform,
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticModel {
    pub lambda: f64,
    #[serde(flatten)]
    pub law: EllipticLaw,
}

impl EllipticModel {
    pub fn new(lambda: f64, law: EllipticLaw) -> Result<Self> {
        let m = Self { lambda, law };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(value: f64) -> Self {
        let lambda = value.min(1.0 / value);
        Self {
            lambda,
            law: EllipticLaw::Constant { value },
        }
    }

    /// Equiprobable choice among `values`.
    pub fn equiprobable(lambda: f64, values: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; values.len()];
        Self::new(lambda, EllipticLaw::Discrete { values, weights })
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda;
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(invalid("lambda", "ellipticity must lie in (0, 1]"));
        }
        let inside = |v: f64| v.is_finite() && v >= lambda * (1.0 - 1e-12) && v <= (1.0 + 1e-12) / lambda;
        match &self.law {
            EllipticLaw::Constant { value } => {
                if !inside(*value) {
                    return Err(invalid("value", "constant outside [lambda, 1/lambda]"));
                }
            }
            EllipticLaw::Uniform => {}
            EllipticLaw::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(invalid("values", "need as many weights as values, at least one"));
                }
                if !values.iter().all(|&v| inside(v)) {
                    return Err(invalid("values", "support must lie in [lambda, 1/lambda]"));
                }
                if !weights.iter().all(|&w| w.is_finite() && w >= 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(invalid("weights", "weights must be nonnegative with positive sum"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.law {
            EllipticLaw::Constant { value } => *value,
            EllipticLaw::Uniform => {
                let u: f64 = rng.gen();
                self.lambda + u * (1.0 / self.lambda - self.lambda)
            }
            EllipticLaw::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().expect("validated nonempty")
            }
        }
    }

    /// Harmonic mean `1 / E[1/a]` of the law.
    pub fn harmonic_mean(&self) -> f64 {
        match &self.law {
            EllipticLaw::Constant { value } => *value,
            EllipticLaw::Uniform => {
                let (a, b) = (self.lambda, 1.0 / self.lambda);
                if (b - a).abs() < 1e-15 {
                    a
                } else {
                    (b - a) / (b / a).ln()
                }
            }
            EllipticLaw::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let inv: f64 = values.iter().zip(weights).map(|(v, w)| w / v).sum::<f64>() / total;
                1.0 / inv
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match &self.law {
            EllipticLaw::Constant { value } => (*value, *value),
            EllipticLaw::Uniform => (self.lambda, 1.0 / self.lambda),
            EllipticLaw::Discrete { values, weights } => {
                let live = values.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(v, _)| *v);
                live.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ConductanceModel {
    Tail(TailModel),
    Elliptic(EllipticModel),
}

impl ConductanceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Tail(m) => m.validate(),
            Self::Elliptic(m) => m.validate(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Tail(m) => m.sample(rng),
            Self::Elliptic(m) => m.sample(rng),
        }
    }
}

impl From<TailModel> for ConductanceModel {
    fn from(m: TailModel) -> Self {
        Self::Tail(m)
    }
}

impl From<EllipticModel> for ConductanceModel {
    fn from(m: EllipticModel) -> Self {
        Self::Elliptic(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: Option<ConductanceModel>,
    pub seed: Option<u64>,
}

/// Positive weights on every bond of a box that touches the box.
#[derive(Debug, Clone)]
pub struct ConductanceField {
    lattice: Arc<LatticeBox>,
    weights: Vec<f64>,
    provenance: Provenance,
}

const EDGE_STREAM_TAG: u64 = 0xED6E;

fn edge_key(edge: &Edge) -> u64 {
    rng::key(
        std::iter::once(EDGE_STREAM_TAG)
            .chain(edge.tail.iter().map(|&c| c as u64))
            .chain(std::iter::once(edge.axis as u64)),
    )
}

/// Independent weights, one stream per bond.
pub fn sample_field(lattice: &Arc<LatticeBox>, model: &ConductanceModel, seed: u64) -> ConductanceField {
    let weights = lattice
        .edges()
        .iter()
        .map(|e| model.sample(&mut rng::stream(seed, edge_key(e))))
        .collect();
    ConductanceField {
        lattice: Arc::clone(lattice),
        weights,
        provenance: Provenance {
            model: Some(model.clone()),
            seed: Some(seed),
        },
    }
}

impl ConductanceField {
    pub fn constant(lattice: &Arc<LatticeBox>, value: f64) -> Result<Self> {
        Self::from_weights(lattice, vec![value; lattice.edges().len()])
    }

    pub fn from_weights(lattice: &Arc<LatticeBox>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != lattice.edges().len() {
            return Err(Error::DimensionMismatch {
                expected: lattice.edges().len(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(invalid("weights", format!("conductances must be positive, got {w}")));
        }
        Ok(Self {
            lattice: Arc::clone(lattice),
            weights,
            provenance: Provenance { model: None, seed: None },
        })
    }

    pub fn from_fn(lattice: &Arc<LatticeBox>, mut f: impl FnMut(&Edge) -> f64) -> Result<Self> {
        let w = lattice.edges().iter().map(&mut f).collect();
        Self::from_weights(lattice, w)
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lattice
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn weight(&self, edge_id: usize) -> f64 {
        self.weights[edge_id]
    }

    /// Weight of the bond from site index `s` along `dir`.
    pub fn weight_at(&self, s: usize, dir: Direction) -> f64 {
        self.weights[self.lattice.incident_edge(s, dir)]
    }

    /// Weight of bond `(tail, tail + e_axis)`, if stored.
    pub fn weight_of(&self, tail: &[i64], axis: usize) -> Option<f64> {
        let edge = Edge {
            tail: tail.to_vec(),
            axis,
        };
        self.lattice.edge_id(&edge).map(|id| self.weights[id])
    }

    /// Total jump rate `pi_s`, bonds leaving the box included.
    pub fn total_rate(&self, s: usize) -> f64 {
        Direction::all(self.lattice.dim()).map(|dir| self.weight_at(s, dir)).sum()
    }

    pub fn min(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_weights(&self.lattice, self.weights.iter().map(|w| w * c).collect())
    }

    pub fn to_record(&self) -> FieldRecord {
        FieldRecord {
            header: FieldHeader {
                box_spec: self.lattice.spec(),
                model: self.provenance.model.clone(),
                seed: self.provenance.seed,
            },
            edges: self
                .lattice
                .edges()
                .iter()
                .zip(&self.weights)
                .map(|(e, &weight)| EdgeRecord {
                    z: e.tail.clone(),
                    e: e.axis,
                    weight,
                })
                .collect(),
        }
    }

    pub fn from_record(record: &FieldRecord) -> Result<Self> {
        let lattice = Arc::new(LatticeBox::from_spec(&record.header.box_spec)?);
        let mut weights = vec![f64::NAN; lattice.edges().len()];
        for r in &record.edges {
            let id = lattice
                .edge_id(&Edge {
                    tail: r.z.clone(),
                    axis: r.e,
                })
                .ok_or_else(|| invalid("edges", format!("bond ({:?}, {}) does not touch the box", r.z, r.e)))?;
            weights[id] = r.weight;
        }
        if weights.iter().any(|w| w.is_nan()) {
            return Err(invalid("edges", "some bonds touching the box have no weight"));
        }
        let mut field = Self::from_weights(&lattice, weights)?;
        field.provenance = Provenance {
            model: record.header.model.clone(),
            seed: record.header.seed,
        };
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    pub model: Option<ConductanceModel>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub z: Site,
    pub e: usize,
    pub weight: f64,
}

/// Edge-list serialization of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub header: FieldHeader,
    pub edges: Vec<EdgeRecord>,
}

/// A function on `G x N` that is constant on each lattice cell `z / alpha + [0, 1/alpha)^d`.
pub trait CellField {
    fn alpha(&self) -> f64;
    fn dim(&self) -> usize;
    /// Value on the cell with lower corner `cell`, or `None` where the field is not defined.
    fn cell_value(&self, cell: &[i64], axis: usize) -> Option<f64>;
}

/// `a_t(y, e) = beta * a(⌊alpha y⌋, e)`.
#[derive(Debug, Clone, Copy)]
pub struct RescaledField<'a> {
    field: &'a ConductanceField,
    beta: f64,
}

pub fn rescaled_field(field: &ConductanceField, beta: f64) -> Result<RescaledField<'_>> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid("beta", "rescaling factor must be positive"));
    }
    Ok(RescaledField { field, beta })
}

impl RescaledField<'_> {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, y: &[f64], axis: usize) -> Result<f64> {
        let lattice = self.field.lattice();
        if !lattice.domain().contains(y) {
            return Err(Error::OutsideDomain(y.to_vec()));
        }
        let cell = cell_of(lattice.alpha(), y);
        self.cell_value(&cell, axis).ok_or(Error::NotInBox(cell))
    }
}

impl CellField for RescaledField<'_> {
    fn alpha(&self) -> f64 {
        self.field.lattice().alpha()
    }

    fn dim(&self) -> usize {
        self.field.lattice().dim()
    }

    fn cell_value(&self, cell: &[i64], axis: usize) -> Option<f64> {
        self.field.weight_of(cell, axis).map(|a| self.beta * a)
    }
}

/// The same value on every cell and direction.
#[derive(Debug, Clone, Copy)]
pub struct UniformCellField {
    pub alpha: f64,
    pub dim: usize,
    pub value: f64,
}

impl CellField for UniformCellField {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn cell_value(&self, _: &[i64], _: usize) -> Option<f64> {
        Some(self.value)
    }
}

/// `sum_e ∫_G a_t(y, e)^(-eta) dy`, integrated exactly cell by cell.
///
/// Cells on which the field is undefined (bonds with no endpoint in the box,
/// which the walk never sees) contribute nothing.
pub fn tail_functional(field: &impl CellField, domain: &Domain, eta: f64) -> f64 {
    let alpha = field.alpha();
    let d = field.dim();
    // Per axis: (cell index, overlap length with G).
    let axes: Vec<Vec<(i64, f64)>> = domain
        .bounds()
        .iter()
        .map(|&[lo, hi]| {
            let first = (alpha * lo).floor() as i64;
            let last = (alpha * hi).ceil() as i64 - 1;
            (first..=last)
                .filter_map(|k| {
                    let a = (k as f64 / alpha).max(lo);
                    let b = ((k + 1) as f64 / alpha).min(hi);
                    (b > a).then_some((k, b - a))
                })
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; d];
    let mut cell = vec![0i64; d];
    let mut total = 0.0;
    if axes.iter().any(|a| a.is_empty()) {
        return 0.0;
    }
    loop {
        let mut vol = 1.0;
        for i in 0..d {
            let (k, len) = axes[i][idx[i]];
            cell[i] = k;
            vol *= len;
        }
        for axis in 0..d {
            if let Some(v) = field.cell_value(&cell, axis) {
                total += vol * v.powf(-eta);
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return total;
            }
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Cell averages `phi_t(z, e) = ∫_{[0,1]^d} phi((z + y) / alpha, e) dy` on every
/// bond of the box, by order-4 tensor Gauss–Legendre quadrature.
pub fn unscaled_profile(phi: impl Fn(&[f64], usize) -> f64, lattice: &Arc<LatticeBox>) -> Result<ConductanceField> {
    let rule = CubeRule::new(lattice.dim(), 4);
    let alpha = lattice.alpha();
    let mut bad = None;
    let weights = lattice
        .edges()
        .iter()
        .map(|edge| {
            rule.cell_average(&edge.tail, alpha, |y| {
                let v = phi(y, edge.axis);
                if !(v.is_finite() && v > 0.0) && bad.is_none() {
                    bad = Some((v, y.to_vec()));
                }
                v
            })
        })
        .collect();
    if let Some((value, at)) = bad {
        return Err(Error::NonPositiveProfile { value, at });
    }
    ConductanceField::from_weights(lattice, weights)
}

/// Whether `phi_t - delta <= beta * a <= phi_t` holds on every bond.
pub fn profile_event_check(field: &ConductanceField, beta: f64, profile: &ConductanceField, delta: f64) -> Result<bool> {
    if field.weights().len() != profile.weights().len() {
        return Err(Error::DimensionMismatch {
            expected: field.weights().len(),
            got: profile.weights().len(),
        });
    }
    if !(delta >= 0.0 && delta < profile.min()) {
        return Err(invalid("delta", format!("must lie in [0, min profile = {})", profile.min())));
    }
    Ok(field
        .weights()
        .iter()
        .zip(profile.weights())
        .all(|(&a, &p)| p - delta <= beta * a && beta * a <= p))
}

/// `-D sum_e ∫_G phi(y, e)^(-eta) dy`, the large deviation lower bound for the
/// profile event on the scale `beta^eta alpha^d`.
pub fn profile_event_logprob_bound(phi: impl Fn(&[f64], usize) -> f64, eta: f64, constant: f64, domain: &Domain) -> f64 {
    let d = domain.dim();
    let integral = integrate_domain(domain, 16, 4, |y| (0..d).map(|axis| phi(y, axis).powf(-eta)).sum());
    -constant * integral
}
