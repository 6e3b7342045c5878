//! Finite configurations in R^d, persistent particle labels, the bounded
//! matching metric `dist`, and the compactness diagnostics used to reason
//! about relatively compact families of configurations.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};

/// A point of R^d with finite coordinates.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidPoint("zero-dimensional point".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint(format!("non-finite coordinate {c}")));
        }
        Ok(Point(coords))
    }

    /// Builds a point whose coordinates are already known to be finite.
    pub(crate) fn from_finite(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Point(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_squared(other).sqrt()
    }

    fn key(&self) -> PosKey {
        PosKey(self.key_bits())
    }

    /// Coordinate bit patterns, with -0.0 folded into 0.0; equal iff the
    /// locations are equal.
    pub(crate) fn key_bits(&self) -> Vec<u64> {
        self.0
            .iter()
            .map(|c| if *c == 0.0 { 0u64 } else { c.to_bits() })
            .collect()
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct PosKey(Vec<u64>);

/// Lexicographic comparison of two points of equal dimension.
pub fn lex_compare(a: &Point, b: &Point) -> Result<Ordering> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(lex_cmp_unchecked(a, b))
}

fn lex_cmp_unchecked(a: &Point, b: &Point) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match x.partial_cmp(y).expect("finite coordinates") {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// A labelled particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub index: i64,
    pub position: Point,
}

/// A finite simple configuration: distinct points, each carrying a distinct
/// persistent index.
///
/// Storage order is deterministic and is part of the simulation contract:
/// paired runs that apply the same operations see the same slot layout.
#[derive(Clone)]
pub struct Configuration {
    dim: usize,
    particles: Vec<Particle>,
    slot_of: HashMap<i64, usize>,
    occupied: HashSet<PosKey>,
}

impl Configuration {
    pub fn empty(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        Ok(Configuration {
            dim,
            particles: Vec::new(),
            slot_of: HashMap::new(),
            occupied: HashSet::new(),
        })
    }

    /// Labels `points` with the initial-particle convention: the
    /// lexicographically smallest point gets index 0, the next -1, and so on.
    pub fn from_points(dim: usize, mut points: Vec<Point>) -> Result<Self> {
        for p in &points {
            check_dim(dim, p)?;
        }
        points.sort_by(lex_cmp_unchecked);
        let labelled = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| (-(i as i64), p))
            .collect();
        Self::with_indices(dim, labelled)
    }

    /// Builds a configuration with explicit labels, kept in the given order.
    pub fn with_indices(dim: usize, particles: Vec<(i64, Point)>) -> Result<Self> {
        let mut c = Self::empty(dim)?;
        for (index, position) in particles {
            c.insert(index, position)?;
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.particles.iter()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Point> {
        self.particles.iter().map(|p| &p.position)
    }

    pub fn get(&self, index: i64) -> Option<&Particle> {
        self.slot_of.get(&index).map(|&s| &self.particles[s])
    }

    pub fn contains_index(&self, index: i64) -> bool {
        self.slot_of.contains_key(&index)
    }

    pub fn contains_position(&self, x: &Point) -> bool {
        x.dim() == self.dim && self.occupied.contains(&x.key())
    }

    pub fn max_index(&self) -> Option<i64> {
        self.particles.iter().map(|p| p.index).max()
    }

    /// Adds a particle, rejecting duplicate indices or positions.
    pub fn insert(&mut self, index: i64, position: Point) -> Result<()> {
        check_dim(self.dim, &position)?;
        if self.slot_of.contains_key(&index) {
            return Err(Error::DuplicateIndex(index));
        }
        if !self.occupied.insert(position.key()) {
            return Err(Error::DuplicatePosition(position.0));
        }
        self.slot_of.insert(index, self.particles.len());
        self.particles.push(Particle { index, position });
        Ok(())
    }

    /// Removes the particle with `index`; the last particle takes its slot.
    pub fn remove(&mut self, index: i64) -> Result<Particle> {
        let slot = self
            .slot_of
            .remove(&index)
            .ok_or(Error::UnknownParticle(index))?;
        let removed = self.particles.swap_remove(slot);
        if let Some(moved) = self.particles.get(slot) {
            self.slot_of.insert(moved.index, slot);
        }
        self.occupied.remove(&removed.position.key());
        Ok(removed)
    }

    /// Copy with `x` added under a fresh index (larger than any present).
    pub fn with_point(&self, x: &Point) -> Result<Configuration> {
        let mut c = self.clone();
        let idx = self.max_index().map_or(1, |m| m.max(0) + 1);
        c.insert(idx, x.clone())?;
        Ok(c)
    }

    /// Copy with the particle at `index` removed.
    pub fn without(&self, index: i64) -> Result<Configuration> {
        let mut c = self.clone();
        c.remove(index)?;
        Ok(c)
    }

    /// Index of the particle at position `x`.
    pub fn index_at(&self, x: &Point) -> Option<i64> {
        if !self.contains_position(x) {
            return None;
        }
        self.particles
            .iter()
            .find(|p| p.position == *x)
            .map(|p| p.index)
    }

    /// `self ⊂ other`, matching both indices and positions.
    pub fn is_subset_of(&self, other: &Configuration) -> bool {
        self.len() <= other.len()
            && self
                .particles
                .iter()
                .all(|p| other.get(p.index).is_some_and(|q| q.position == p.position))
    }

    /// Equality as labelled sets, ignoring storage order.
    pub fn same_labelled_set(&self, other: &Configuration) -> bool {
        self.len() == other.len() && self.is_subset_of(other)
    }

    /// Equality as unlabelled point sets.
    pub fn same_points(&self, other: &Configuration) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.positions().all(|p| other.contains_position(p))
    }
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.same_labelled_set(other)
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Configuration")
            .field("dim", &self.dim)
            .field("particles", &self.particles)
            .finish()
    }
}

fn check_dim(dim: usize, p: &Point) -> Result<()> {
    if p.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.dim(),
        });
    }
    Ok(())
}

fn check_same_dim(a: &Configuration, b: &Configuration) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

/// Issues persistent particle indices: initial particles keep their
/// non-positive labels, births get 1, 2, 3, ... in order of appearance and
/// indices are never reused.
#[derive(Clone, Debug)]
pub struct ParticleRegistry {
    next_birth_index: i64,
    initial_assignment: Vec<(Point, i64)>,
}

impl ParticleRegistry {
    pub fn for_initial(initial: &Configuration) -> Self {
        let next = initial.max_index().map_or(1, |m| m.max(0) + 1);
        ParticleRegistry {
            next_birth_index: next,
            initial_assignment: initial
                .iter()
                .map(|p| (p.position.clone(), p.index))
                .collect(),
        }
    }

    pub fn next_birth_index(&self) -> i64 {
        self.next_birth_index
    }

    pub fn issue(&mut self) -> i64 {
        let i = self.next_birth_index;
        self.next_birth_index += 1;
        i
    }

    pub fn initial_index(&self, x: &Point) -> Option<i64> {
        self.initial_assignment
            .iter()
            .find(|(p, _)| p == x)
            .map(|(_, i)| *i)
    }
}

/// An optimal pairing of two equal-size configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// `(i, j)`: the i-th particle of the left configuration (storage order)
    /// is matched to the j-th particle of the right.
    pub pairs: Vec<(usize, usize)>,
    pub distance: f64,
}

/// Minimum-cost pairing under squared Euclidean costs.
pub fn optimal_matching(zeta: &Configuration, eta: &Configuration) -> Result<Matching> {
    check_same_dim(zeta, eta)?;
    if zeta.len() != eta.len() {
        return Err(Error::CardinalityMismatch {
            left: zeta.len(),
            right: eta.len(),
        });
    }
    let n = zeta.len();
    let cost: Vec<Vec<f64>> = zeta
        .positions()
        .map(|x| eta.positions().map(|y| x.distance_squared(y)).collect())
        .collect();
    let perm = assignment::solve(&cost);
    let total: f64 = (0..n).map(|i| cost[i][perm[i]]).sum();
    Ok(Matching {
        pairs: perm.into_iter().enumerate().collect(),
        distance: total.sqrt(),
    })
}

/// `min_σ sqrt(Σ_i |x_i - y_σ(i)|²)` over all pairings of equal-size
/// configurations.
pub fn euclidean_matching_distance(zeta: &Configuration, eta: &Configuration) -> Result<f64> {
    optimal_matching(zeta, eta).map(|m| m.distance)
}

/// `1 ∧ d_Eucl` for equal cardinalities, 1 otherwise.
pub fn dist(zeta: &Configuration, eta: &Configuration) -> Result<f64> {
    check_same_dim(zeta, eta)?;
    if zeta.len() != eta.len() {
        return Ok(1.0);
    }
    Ok(euclidean_matching_distance(zeta, eta)?.min(1.0))
}

/// Smallest distance between two distinct points of `gamma` inside the closed
/// ball of the given radius about the origin; `+inf` with fewer than two.
pub fn min_pair_separation(gamma: &Configuration, radius: f64) -> f64 {
    let inside: Vec<&Point> = gamma.positions().filter(|p| p.norm() <= radius).collect();
    let mut best = f64::INFINITY;
    for (i, a) in inside.iter().enumerate() {
        for b in &inside[i + 1..] {
            best = best.min(a.distance(b));
        }
    }
    best
}

/// `γ(B_n(0)) + 1/δ(γ, B_n(0))`, with `1/∞ = 0`.
pub fn compactness_statistic(gamma: &Configuration, n: u32) -> f64 {
    let r = f64::from(n);
    let count = gamma.positions().filter(|p| p.norm() <= r).count() as f64;
    let sep = min_pair_separation(gamma, r);
    count + if sep.is_finite() { 1.0 / sep } else { 0.0 }
}

/// Default radial weight `φ(x) = exp(-|x|)`.
pub fn exp_weight(r: f64) -> f64 {
    (-r).exp()
}

/// Sum over ordered pairs `x ≠ y` of `φ(x)φ(y)(|x-y|+1)/|x-y|`, where `phi`
/// is given as a function of `|x|`.
pub fn psi_functional(gamma: &Configuration, phi: impl Fn(f64) -> f64) -> f64 {
    let pts: Vec<(&Point, f64)> = gamma.positions().map(|p| (p, phi(p.norm()))).collect();
    let mut total = 0.0;
    for (i, (x, fx)) in pts.iter().enumerate() {
        for (y, fy) in &pts[i + 1..] {
            let r = x.distance(y);
            // both orders contribute the same term
            total += 2.0 * fx * fy * (r + 1.0) / r;
        }
    }
    total
}
