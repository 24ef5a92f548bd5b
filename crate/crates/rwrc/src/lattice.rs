//! Finite lattice boxes `B = alpha * G ∩ Z^d` for an open axis-aligned box `G`.
//!
//! Sites are enumerated lexicographically (first coordinate most significant),
//! so the dense index of a site is a mixed-radix number and no hash map is
//! needed. Every box also carries its edge set: all nearest-neighbour bonds
//! with at least one endpoint inside, each stored once at its smaller endpoint.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Site = Vec<i64>;

/// Open axis-aligned box `(lo_1, hi_1) x ... x (lo_d, hi_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Domain {
    bounds: Vec<[f64; 2]>,
}

impl Domain {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(invalid("G", "domain needs at least one axis"));
        }
        for [lo, hi] in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("G", format!("empty or unbounded interval ({lo}, {hi})")));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit_cube(d: usize) -> Self {
        Self {
            bounds: vec![[0.0, 1.0]; d],
        }
    }

    /// `(-h, h)^d`.
    pub fn centered(d: usize, half_width: f64) -> Self {
        Self {
            bounds: vec![[-half_width, half_width]; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && self.bounds.iter().zip(y).all(|([lo, hi], &v)| *lo < v && v < *hi)
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|[lo, hi]| hi - lo).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }
}

impl TryFrom<Vec<[f64; 2]>> for Domain {
    type Error = Error;
    fn try_from(bounds: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(bounds)
    }
}

impl From<Domain> for Vec<[f64; 2]> {
    fn from(d: Domain) -> Self {
        d.bounds
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if i > 0 {
                write!(f, " x ")?;
            }
            write!(f, "({lo}, {hi})")?;
        }
        Ok(())
    }
}

/// Serialized form of a box: `{"d": 2, "alpha": 8.0, "G": [[0,1],[0,1]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "G")]
    pub domain: Domain,
}

/// One of the `2d` unit steps `±e_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub axis: usize,
    pub forward: bool,
}

impl Direction {
    /// All `2d` directions, ordered `+e_1, -e_1, +e_2, -e_2, ...`.
    pub fn all(d: usize) -> impl Iterator<Item = Direction> {
        (0..d).flat_map(|axis| {
            [true, false]
                .into_iter()
                .map(move |forward| Direction { axis, forward })
        })
    }

    pub fn step(self) -> i64 {
        if self.forward {
            1
        } else {
            -1
        }
    }

    pub fn apply(self, z: &[i64]) -> Site {
        let mut w = z.to_vec();
        w[self.axis] += self.step();
        w
    }

    /// Position of this direction in [`Direction::all`].
    pub fn slot(self) -> usize {
        2 * self.axis + usize::from(!self.forward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub direction: Direction,
    pub site: Site,
    pub in_box: bool,
}

/// Undirected bond `{tail, tail + e_axis}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub tail: Site,
    pub axis: usize,
}

impl Edge {
    pub fn head(&self) -> Site {
        let mut h = self.tail.clone();
        h[self.axis] += 1;
        h
    }
}

#[derive(Debug, Clone)]
pub struct LatticeBox {
    alpha: f64,
    domain: Domain,
    lo: Vec<i64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    edges: Vec<Edge>,
    /// `incident[s * 2d + dir.slot()]` is the id of the edge leaving site `s` along `dir`.
    incident: Vec<usize>,
}

impl LatticeBox {
    pub fn build(d: usize, alpha: f64, domain: Domain) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if domain.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: domain.dim(),
            });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", format!("scale must be positive, got {alpha}")));
        }
        let mut lo = Vec::with_capacity(d);
        let mut shape = Vec::with_capacity(d);
        for &[g_lo, g_hi] in domain.bounds() {
            let inside = |z: i64| {
                let y = z as f64 / alpha;
                g_lo < y && y < g_hi
            };
            let mut first = (alpha * g_lo).floor() as i64;
            while !inside(first) && (first as f64) <= alpha * g_hi {
                first += 1;
            }
            while inside(first - 1) {
                first -= 1;
            }
            let mut last = first - 1;
            while inside(last + 1) {
                last += 1;
            }
            if last < first {
                return Err(Error::DegenerateBox {
                    domain: domain.to_string(),
                    alpha,
                });
            }
            lo.push(first);
            shape.push((last - first + 1) as usize);
        }
        Ok(Self::from_ranges(alpha, domain, lo, shape))
    }

    pub fn from_spec(spec: &BoxSpec) -> Result<Self> {
        Self::build(spec.d, spec.alpha, spec.domain.clone())
    }

    /// `Q_n = [-n, n]^d ∩ Z^d` at unit scale.
    pub fn centered_cube(d: usize, n: usize) -> Self {
        let h = n as f64 + 0.5;
        Self::build(d, 1.0, Domain::centered(d, h)).expect("a centered cube always contains the origin")
    }

    /// The path `{1, ..., n}`, realised as `(n + 1) * (0, 1) ∩ Z`.
    pub fn path(n: usize) -> Result<Self> {
        Self::build(1, (n + 1) as f64, Domain::unit_cube(1))
    }

    fn from_ranges(alpha: f64, domain: Domain, lo: Vec<i64>, shape: Vec<usize>) -> Self {
        let d = shape.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let len = shape.iter().product();
        let mut lattice = Self {
            alpha,
            domain,
            lo,
            shape,
            strides,
            len,
            edges: Vec::new(),
            incident: Vec::new(),
        };
        lattice.index_edges();
        lattice
    }

    fn index_edges(&mut self) {
        let d = self.dim();
        let mut edges = Vec::with_capacity(self.len * d + self.len);
        for s in 0..self.len {
            let z = self.site(s);
            for axis in 0..d {
                edges.push(Edge {
                    tail: z.clone(),
                    axis,
                });
                let mut below = z.clone();
                below[axis] -= 1;
                if self.index_of(&below).is_none() {
                    edges.push(Edge { tail: below, axis });
                }
            }
        }
        edges.sort();
        let mut incident = vec![usize::MAX; self.len * 2 * d];
        for (id, edge) in edges.iter().enumerate() {
            if let Some(s) = self.index_of(&edge.tail) {
                incident[s * 2 * d + 2 * edge.axis] = id;
            }
            if let Some(s) = self.index_of(&edge.head()) {
                incident[s * 2 * d + 2 * edge.axis + 1] = id;
            }
        }
        self.edges = edges;
        self.incident = incident;
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of sites along each axis.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Smallest coordinate along each axis.
    pub fn lower_corner(&self) -> &[i64] {
        &self.lo
    }

    pub fn spec(&self) -> BoxSpec {
        BoxSpec {
            d: self.dim(),
            alpha: self.alpha,
            domain: self.domain.clone(),
        }
    }

    pub fn site(&self, index: usize) -> Site {
        let mut rest = index;
        self.lo
            .iter()
            .zip(&self.strides)
            .map(|(&lo, &stride)| {
                let k = rest / stride;
                rest %= stride;
                lo + k as i64
            })
            .collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len).map(|s| self.site(s))
    }

    pub fn index_of(&self, z: &[i64]) -> Option<usize> {
        if z.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for i in 0..z.len() {
            let k = z[i] - self.lo[i];
            if k < 0 || k as usize >= self.shape[i] {
                return None;
            }
            index += k as usize * self.strides[i];
        }
        Some(index)
    }

    pub fn contains(&self, z: &[i64]) -> bool {
        self.index_of(z).is_some()
    }

    pub fn require(&self, z: &[i64]) -> Result<usize> {
        self.index_of(z).ok_or_else(|| Error::NotInBox(z.to_vec()))
    }

    pub fn neighbors(&self, z: &[i64]) -> Result<Vec<Neighbor>> {
        self.require(z)?;
        Ok(Direction::all(self.dim())
            .map(|direction| {
                let site = direction.apply(z);
                let in_box = self.contains(&site);
                Neighbor {
                    direction,
                    site,
                    in_box,
                }
            })
            .collect())
    }

    /// Dense index of the neighbour of site `s` along `dir`, if it is in the box.
    pub fn neighbor_index(&self, s: usize, dir: Direction) -> Option<usize> {
        let k = (s / self.strides[dir.axis]) % self.shape[dir.axis];
        if dir.forward {
            (k + 1 < self.shape[dir.axis]).then(|| s + self.strides[dir.axis])
        } else {
            (k > 0).then(|| s - self.strides[dir.axis])
        }
    }

    /// Continuum position `z / alpha`.
    pub fn embed(&self, z: &[i64]) -> Result<Vec<f64>> {
        self.require(z)?;
        Ok(z.iter().map(|&c| c as f64 / self.alpha).collect())
    }

    /// Lattice cell `⌊alpha y⌋` containing `y`.
    pub fn cell_of(&self, y: &[f64]) -> Site {
        cell_of(self.alpha, y)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_id(&self, edge: &Edge) -> Option<usize> {
        self.edges.binary_search(edge).ok()
    }

    /// Id of the edge joining site `s` to its neighbour along `dir`.
    pub fn incident_edge(&self, s: usize, dir: Direction) -> usize {
        self.incident[s * 2 * self.dim() + dir.slot()]
    }
}

/// `⌊alpha y⌋` componentwise, snapping values within rounding error of an
/// integer onto that integer so that `cell_of(z / alpha) == z`.
pub fn cell_of(alpha: f64, y: &[f64]) -> Site {
    y.iter()
        .map(|&v| {
            let x = alpha * v;
            let r = x.round();
            if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
                r as i64
            } else {
                x.floor() as i64
            }
        })
        .collect()
}
