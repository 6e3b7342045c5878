//! Monotone coupling of two birth-and-death processes on shared randomness,
//! and the shared-noise experiment for continuity in the initial condition.
//!
//! If `η¹ ⊂ η²` implies `b₁(x, η¹) ≤ b₂(x, η²)` and `d₁(x, η¹) ≥ d₂(x, η²)`,
//! one joint jump chain carries a lower process with the law of model 1
//! inside an upper process with the law of model 2:
//!
//! * birth candidates arrive at rate `B₂(ξ)` with density `b₂(·, ξ)/B₂(ξ)`;
//!   each enters the upper state and, with probability `b₁(x, η)/b₂(x, ξ)`,
//!   the lower state too;
//! * every lower particle carries a death clock of rate `d₁(x, η)`; it always
//!   kills the lower copy and kills the upper copy with probability
//!   `d₂(x, ξ)/d₁(x, η)`;
//! * particles only in the upper state die at rate `d₂(x, ξ)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::{dist, optimal_matching, Configuration, ParticleRegistry, Point};
use crate::error::{Error, Result};
use crate::rates::{random_configuration, RateModel};
use crate::rng::{exp_draw, Channel, RngStreamKey};
use crate::simulate::{apply, place_birth, simulate, validate_run, CapKind, Caps, Event, EventKind, Status, Trajectory};
use crate::stats::SimReport;

/// Relative slack allowed before an acceptance ratio above one counts as a
/// premise violation.
const PREMISE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PremiseKind {
    Birth,
    Death,
}

/// A configuration pair and location where a monotonicity premise fails.
#[derive(Clone, Debug)]
pub struct PremiseWitness {
    pub kind: PremiseKind,
    pub lower: Configuration,
    pub upper: Configuration,
    pub x: Point,
    /// `b₁(x, η¹)` or `d₁(x, η¹)`.
    pub rate1: f64,
    /// `b₂(x, η²)` or `d₂(x, η²)`.
    pub rate2: f64,
}

#[derive(Clone, Debug)]
pub struct PremiseReport {
    pub pass: bool,
    pub probes: usize,
    pub witness: Option<PremiseWitness>,
}

/// Searches random nested pairs `η¹ ⊂ η²` (`|η²| ≤ max_n`, points in
/// `[-2, 2]^dim`) for a violation of `b₁(x, η¹) ≤ b₂(x, η²)` or
/// `d₁(x, η¹) ≥ d₂(x, η²)`.
pub fn check_monotone_premise<R: Rng + ?Sized>(
    m1: &RateModel,
    m2: &RateModel,
    dim: usize,
    trials: usize,
    max_n: usize,
    rng: &mut R,
) -> Result<PremiseReport> {
    let mut probes = 0;
    for _ in 0..trials {
        let n = rng.random_range(0..=max_n);
        let upper = random_configuration(dim, n, 2.0, rng)?;
        let kept: Vec<(i64, Point)> = upper
            .iter()
            .filter(|_| rng.random::<bool>())
            .map(|p| (p.index, p.position.clone()))
            .collect();
        let lower = Configuration::with_indices(dim, kept)?;

        let mut birth_probes: Vec<Point> = (0..4)
            .map(|_| Point::from_finite((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()))
            .collect();
        // probes near particles hit compactly supported kernels
        for p in upper.positions() {
            let jitter: Vec<f64> = p.coords().iter().map(|c| c + rng.random_range(-0.5..0.5)).collect();
            birth_probes.push(Point::from_finite(jitter));
        }
        for x in birth_probes {
            probes += 1;
            let b1 = m1.birth_rate(&x, &lower);
            let b2 = m2.birth_rate(&x, &upper);
            if b1 > b2 * (1.0 + PREMISE_SLACK) {
                return Ok(fail(PremiseKind::Birth, lower, upper, x, b1, b2, probes));
            }
        }
        for p in lower.particles() {
            probes += 1;
            let d1 = m1.death_rate_unchecked(&p.position, &lower);
            let d2 = m2.death_rate_unchecked(&p.position, &upper);
            if d2 > d1 * (1.0 + PREMISE_SLACK) {
                let x = p.position.clone();
                return Ok(fail(PremiseKind::Death, lower, upper, x, d1, d2, probes));
            }
        }
    }
    Ok(PremiseReport {
        pass: true,
        probes,
        witness: None,
    })
}

fn fail(
    kind: PremiseKind,
    lower: Configuration,
    upper: Configuration,
    x: Point,
    rate1: f64,
    rate2: f64,
    probes: usize,
) -> PremiseReport {
    PremiseReport {
        pass: false,
        probes,
        witness: Some(PremiseWitness {
            kind,
            lower,
            upper,
            x,
            rate1,
            rate2,
        }),
    }
}

/// Whether the lower state was contained in the upper one after a joint event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub time: f64,
    pub included: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub lower: Trajectory,
    pub upper: Trajectory,
    pub shared_key: RngStreamKey,
    pub audit: Vec<AuditEntry>,
}

impl CoupledPair {
    pub fn inclusion_held(&self) -> bool {
        self.audit.iter().all(|a| a.included)
    }
}

enum Candidate {
    Birth,
    LowerDeath(usize),
    UpperOnlyDeath(i64),
}

/// Simulates the coupled pair from `lower0 ⊂ upper0`.
pub fn simulate_coupled(
    m1: &RateModel,
    m2: &RateModel,
    lower0: &Configuration,
    upper0: &Configuration,
    horizon: f64,
    caps: Caps,
    key: RngStreamKey,
) -> Result<CoupledPair> {
    if !lower0.is_subset_of(upper0) {
        return Err(Error::PremiseViolation("initial lower configuration is not contained in the upper one".into()));
    }
    validate_run(horizon, &caps, upper0)?;
    let mut lower = lower0.clone();
    let mut upper = upper0.clone();
    let mut registry = ParticleRegistry::for_initial(upper0);
    let mut lower_events = Vec::new();
    let mut upper_events = Vec::new();
    let mut audit = Vec::new();
    let mut clock = 0.0;
    let mut counter = 0u64;

    let status = loop {
        if counter >= caps.max_events {
            break Status::CapHit {
                kind: CapKind::Events,
                cap: caps.max_events,
                time: clock,
            };
        }
        let rng = key.event(counter);
        counter += 1;

        let b2_total = m2.cumulative_birth_rate(&upper)?;
        let b1_total = m1.cumulative_birth_rate(&lower)?;
        if b1_total > b2_total * (1.0 + PREMISE_SLACK) {
            return Err(Error::PremiseViolation(format!(
                "B1(lower) = {b1_total} exceeds B2(upper) = {b2_total} at t = {clock}, lower = {lower:?}"
            )));
        }
        let lower_rates: Vec<f64> = lower
            .positions()
            .map(|x| m1.death_rate_unchecked(x, &lower))
            .collect();
        let upper_only: Vec<(i64, f64)> = upper
            .particles()
            .iter()
            .filter(|p| !lower.contains_index(p.index))
            .map(|p| (p.index, m2.death_rate_unchecked(&p.position, &upper)))
            .collect();
        let lower_death_total: f64 = lower_rates.iter().sum();
        let upper_only_total: f64 = upper_only.iter().map(|(_, r)| r).sum();
        let total = b2_total + lower_death_total + upper_only_total;
        if total <= 0.0 {
            break Status::Absorbed { time: clock };
        }

        let time = clock + exp_draw(&mut rng.channel(Channel::Clock), total);
        if time > horizon {
            break Status::Completed;
        }
        let target = rng.channel(Channel::Race).random::<f64>() * total;
        let candidate = pick(target, b2_total, &lower_rates, &upper_only);
        let u: f64 = rng.channel(Channel::Acceptance).random();

        match candidate {
            Candidate::Birth => {
                let x = place_birth(m2, &upper, &mut rng.channel(Channel::Location))?;
                let b1 = m1.birth_rate(&x, &lower);
                let b2 = m2.birth_rate(&x, &upper);
                if b1 > b2 * (1.0 + PREMISE_SLACK) {
                    return Err(Error::PremiseViolation(format!(
                        "b1 = {b1} > b2 = {b2} at {x:?}, t = {time}, lower = {lower:?}"
                    )));
                }
                let event = Event {
                    time,
                    kind: EventKind::Birth,
                    particle_index: registry.issue(),
                    position: x,
                };
                apply(&mut upper, &event)?;
                if b1 >= b2 || u * b2 < b1 {
                    apply(&mut lower, &event)?;
                    lower_events.push(event.clone());
                }
                upper_events.push(event);
            }
            Candidate::LowerDeath(slot) => {
                let victim = lower.particles()[slot].clone();
                let d1 = lower_rates[slot];
                let d2 = m2.death_rate_unchecked(&victim.position, &upper);
                if d2 > d1 * (1.0 + PREMISE_SLACK) {
                    return Err(Error::PremiseViolation(format!(
                        "d2 = {d2} > d1 = {d1} at {:?}, t = {time}, lower = {lower:?}",
                        victim.position
                    )));
                }
                let event = Event {
                    time,
                    kind: EventKind::Death,
                    particle_index: victim.index,
                    position: victim.position,
                };
                apply(&mut lower, &event)?;
                if d2 >= d1 || u * d1 < d2 {
                    apply(&mut upper, &event)?;
                    upper_events.push(event.clone());
                }
                lower_events.push(event);
            }
            Candidate::UpperOnlyDeath(index) => {
                let victim = upper.get(index).expect("upper-only particle").clone();
                let event = Event {
                    time,
                    kind: EventKind::Death,
                    particle_index: victim.index,
                    position: victim.position,
                };
                apply(&mut upper, &event)?;
                upper_events.push(event);
            }
        }
        clock = time;
        audit.push(AuditEntry {
            time,
            included: lower.is_subset_of(&upper),
        });
        if upper.len() > caps.max_population {
            break Status::CapHit {
                kind: CapKind::Population,
                cap: caps.max_population as u64,
                time,
            };
        }
    };

    let marginal_status = |events: &[Event]| match status {
        Status::Absorbed { .. } => Status::Absorbed {
            time: events.last().map_or(0.0, |e| e.time),
        },
        s => s,
    };
    Ok(CoupledPair {
        lower: Trajectory {
            initial: lower0.clone(),
            status: marginal_status(&lower_events),
            events: lower_events,
            horizon,
            seed_key: key,
        },
        upper: Trajectory {
            initial: upper0.clone(),
            status: marginal_status(&upper_events),
            events: upper_events,
            horizon,
            seed_key: key,
        },
        shared_key: key,
        audit,
    })
}

fn pick(target: f64, birth_total: f64, lower_rates: &[f64], upper_only: &[(i64, f64)]) -> Candidate {
    if target < birth_total {
        return Candidate::Birth;
    }
    let mut acc = birth_total;
    let mut fallback = None;
    for (slot, r) in lower_rates.iter().enumerate() {
        if *r > 0.0 {
            fallback = Some(Candidate::LowerDeath(slot));
        }
        acc += r;
        if target < acc {
            return Candidate::LowerDeath(slot);
        }
    }
    for (index, r) in upper_only {
        if *r > 0.0 {
            fallback = Some(Candidate::UpperOnlyDeath(*index));
        }
        acc += r;
        if target < acc {
            return Candidate::UpperOnlyDeath(*index);
        }
    }
    // rounding left target at the very top of the range
    fallback.unwrap_or(Candidate::Birth)
}

/// Exceedance frequencies of `sup_{t≤T} dist(η(α, t), η(α_n, t))` for one
/// perturbation `α_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// `dist(α, α_n)`.
    pub initial_distance: f64,
    pub sup_distance: SimReport,
    /// `(ε, P{sup dist > ε})`.
    pub exceedance: Vec<(f64, f64)>,
    pub excluded: usize,
}

/// Relabels `perturbed` so that each point carries the index of its partner
/// in `alpha` under an optimal matching, stored in `alpha`'s slot order.
pub fn match_labels(alpha: &Configuration, perturbed: &Configuration) -> Result<Configuration> {
    let m = optimal_matching(alpha, perturbed)?;
    let labelled = m
        .pairs
        .iter()
        .map(|&(i, j)| (alpha.particles()[i].index, perturbed.particles()[j].position.clone()))
        .collect();
    Configuration::with_indices(alpha.dim(), labelled)
}

/// Exact `sup_{t≤T} dist` of two piecewise-constant trajectories.
pub fn sup_distance(a: &Trajectory, b: &Trajectory, horizon: f64) -> Result<f64> {
    let mut times: Vec<f64> = a
        .events
        .iter()
        .chain(&b.events)
        .map(|e| e.time)
        .filter(|t| *t <= horizon)
        .collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let sa = a.states_at(&times)?;
    let sb = b.states_at(&times)?;
    sa.iter()
        .zip(&sb)
        .try_fold(0.0f64, |acc, (x, y)| Ok(acc.max(dist(x, y)?)))
}

/// Runs `(α, α_n)` on identical stream keys for each perturbation.
#[allow(clippy::too_many_arguments)]
pub fn continuity_experiment(
    model: &RateModel,
    alpha: &Configuration,
    perturbations: &[Configuration],
    horizon: f64,
    n_runs: usize,
    master_seed: u64,
    eps_grid: &[f64],
    caps: Caps,
) -> Result<Vec<ContinuityReport>> {
    let labelled: Vec<Configuration> = perturbations
        .iter()
        .map(|p| {
            if p.len() != alpha.len() {
                return Err(Error::CardinalityMismatch {
                    left: alpha.len(),
                    right: p.len(),
                });
            }
            match_labels(alpha, p)
        })
        .collect::<Result<_>>()?;

    let per_run: Vec<Vec<Option<f64>>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let key = RngStreamKey::new(master_seed).with_trajectory(r);
            let base = simulate(model, alpha, horizon, caps, key)?;
            labelled
                .iter()
                .map(|start| {
                    let other = simulate(model, start, horizon, caps, key)?;
                    if base.status.is_cap_hit() || other.status.is_cap_hit() {
                        return Ok(None);
                    }
                    sup_distance(&base, &other, horizon).map(Some)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    labelled
        .iter()
        .enumerate()
        .map(|(k, start)| {
            let sups: Vec<f64> = per_run.iter().filter_map(|row| row[k]).collect();
            let excluded = n_runs - sups.len();
            let exceedance = eps_grid
                .iter()
                .map(|&eps| {
                    let hits = sups.iter().filter(|s| **s > eps).count();
                    (eps, hits as f64 / sups.len().max(1) as f64)
                })
                .collect();
            Ok(ContinuityReport {
                initial_distance: dist(alpha, start)?,
                sup_distance: SimReport::from_samples(&sups),
                exceedance,
                excluded,
            })
        })
        .collect()
}
