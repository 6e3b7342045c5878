//! Exact simulation of a spatial birth-and-death process through its embedded
//! jump chain.
//!
//! From state η the waiting time is `Exp(B(η) + D(η))`; the jump is a birth
//! with probability `B/(B+D)`, located by `b(·, η)/B(η)`, and otherwise the
//! death of particle `x` with probability `d(x, η)/D(η)`. When `B + D = 0`
//! the process is frozen forever.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::{Configuration, ParticleRegistry, Point};
use crate::error::{Error, Result};
use crate::rates::{GrowthCertificate, RateModel};
use crate::rng::{exp_draw, Channel, EventRng, RngStreamKey};
use rand::Rng;

/// Birth placements that collide with an existing particle are redrawn; a
/// collision has probability zero, so hitting this limit means the sampler
/// is degenerate.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Birth,
    Death,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub particle_index: i64,
    pub position: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapKind {
    /// `|η|` exceeded the population cap.
    Population,
    /// The event budget ran out.
    Events,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    /// Ran to the horizon; the last state is held up to it.
    Completed,
    /// `B + D` reached zero at `time`; the state is frozen from then on.
    Absorbed { time: f64 },
    /// Stopped early at `time` (for a population cap, `τ_n = inf{s : |η_s| > n}`).
    CapHit { kind: CapKind, cap: u64, time: f64 },
}

impl Status {
    pub fn is_cap_hit(&self) -> bool {
        matches!(self, Status::CapHit { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::Absorbed { .. } => "absorbed",
            Status::CapHit { .. } => "cap_hit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_population: usize,
    pub max_events: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_population: 100_000,
            max_events: 10_000_000,
        }
    }
}

/// Event log of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub status: Status,
    pub seed_key: RngStreamKey,
}

/// Outcome of one step of the jump chain.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Jump(Event),
    Absorbed,
}

/// Draws the next jump from state `eta` at time `clock`.
///
/// Randomness comes from the streams of `rng`: the waiting time from
/// [`Channel::Clock`], the birth/death race and victim from
/// [`Channel::Race`], the location from [`Channel::Location`].
pub fn next_event(
    model: &RateModel,
    eta: &Configuration,
    registry: &mut ParticleRegistry,
    clock: f64,
    rng: &EventRng,
) -> Result<Step> {
    let birth_total = model.cumulative_birth_rate(eta)?;
    let death_total = model.cumulative_death_rate(eta);
    let total = birth_total + death_total;
    if total <= 0.0 {
        return Ok(Step::Absorbed);
    }
    let dt = exp_draw(&mut rng.channel(Channel::Clock), total);
    let mut race = rng.channel(Channel::Race);
    let time = clock + dt;
    if race.random::<f64>() * total < birth_total {
        let position = place_birth(model, eta, &mut rng.channel(Channel::Location))?;
        Ok(Step::Jump(Event {
            time,
            kind: EventKind::Birth,
            particle_index: registry.issue(),
            position,
        }))
    } else {
        let slot = model.select_victim(eta, death_total, race.random::<f64>());
        let victim = &eta.particles()[slot];
        Ok(Step::Jump(Event {
            time,
            kind: EventKind::Death,
            particle_index: victim.index,
            position: victim.position.clone(),
        }))
    }
}

pub(crate) fn place_birth<R: Rng + ?Sized>(model: &RateModel, eta: &Configuration, rng: &mut R) -> Result<Point> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let x = model.sample_birth_location(eta, rng)?;
        if !eta.contains_position(&x) {
            return Ok(x);
        }
    }
    Err(Error::InvalidParameter(format!(
        "birth sampler produced {MAX_PLACEMENT_ATTEMPTS} colliding locations"
    )))
}

pub(crate) fn apply(state: &mut Configuration, event: &Event) -> Result<()> {
    match event.kind {
        EventKind::Birth => state.insert(event.particle_index, event.position.clone()),
        EventKind::Death => {
            let removed = state.remove(event.particle_index)?;
            if removed.position != event.position {
                return Err(Error::InvalidParameter(format!(
                    "death of {} at {:?} but particle sits at {:?}",
                    event.particle_index, event.position, removed.position
                )));
            }
            Ok(())
        }
    }
}

pub(crate) fn validate_run(horizon: f64, caps: &Caps, initial: &Configuration) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive and finite")));
    }
    if caps.max_population == 0 || caps.max_events == 0 {
        return Err(Error::InvalidParameter("caps must be positive".into()));
    }
    if caps.max_population <= initial.len() {
        return Err(Error::InvalidParameter(format!(
            "population cap {} does not exceed initial size {}",
            caps.max_population,
            initial.len()
        )));
    }
    Ok(())
}

/// Runs the jump chain from `initial` up to `horizon`, absorption or a cap.
///
/// The result is a pure function of the arguments: event `n` draws only from
/// the streams `key.event(n)`.
pub fn simulate(
    model: &RateModel,
    initial: &Configuration,
    horizon: f64,
    caps: Caps,
    key: RngStreamKey,
) -> Result<Trajectory> {
    validate_run(horizon, &caps, initial)?;
    let mut state = initial.clone();
    let mut registry = ParticleRegistry::for_initial(initial);
    let mut events = Vec::new();
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
        let step = next_event(model, &state, &mut registry, clock, &key.event(counter))?;
        counter += 1;
        let event = match step {
            Step::Absorbed => break Status::Absorbed { time: clock },
            Step::Jump(e) => e,
        };
        if event.time > horizon {
            break Status::Completed;
        }
        apply(&mut state, &event)?;
        clock = event.time;
        events.push(event);
        if state.len() > caps.max_population {
            break Status::CapHit {
                kind: CapKind::Population,
                cap: caps.max_population as u64,
                time: clock,
            };
        }
    };
    Ok(Trajectory {
        initial: initial.clone(),
        events,
        horizon,
        status,
        seed_key: key,
    })
}

impl Trajectory {
    /// Last time at which the state is defined.
    pub fn valid_until(&self) -> f64 {
        match self.status {
            Status::CapHit { time, .. } => time,
            _ => self.horizon,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let ok = match self.status {
            Status::CapHit { time, .. } => t >= 0.0 && t < time,
            _ => t >= 0.0 && t <= self.horizon,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                limit: self.valid_until(),
            })
        }
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> Result<Configuration> {
        self.check_time(t)?;
        let mut state = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            apply(&mut state, e)?;
        }
        Ok(state)
    }

    /// States at several times in one replay; `times` must be nondecreasing.
    pub fn states_at(&self, times: &[f64]) -> Result<Vec<Configuration>> {
        let mut out = Vec::with_capacity(times.len());
        let mut state = self.initial.clone();
        let mut next = 0;
        let mut prev = f64::NEG_INFINITY;
        for &t in times {
            if t < prev {
                return Err(Error::InvalidParameter("times must be nondecreasing".into()));
            }
            prev = t;
            self.check_time(t)?;
            while next < self.events.len() && self.events[next].time <= t {
                apply(&mut state, &self.events[next])?;
                next += 1;
            }
            out.push(state.clone());
        }
        Ok(out)
    }

    /// `|η_t|` without materialising the state.
    pub fn size_at(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let mut n = self.initial.len() as i64;
        for e in self.events.iter().take_while(|e| e.time <= t) {
            n += match e.kind {
                EventKind::Birth => 1,
                EventKind::Death => -1,
            };
        }
        Ok(n as usize)
    }

    pub fn final_state(&self) -> Result<Configuration> {
        let mut state = self.initial.clone();
        for e in &self.events {
            apply(&mut state, e)?;
        }
        Ok(state)
    }

    /// Calls `f(state, start, end)` for each interval of constancy that meets
    /// `[0, t]`, clipped to it.
    pub fn for_each_segment(&self, t: f64, mut f: impl FnMut(&Configuration, f64, f64) -> Result<()>) -> Result<()> {
        self.check_time(t)?;
        let mut state = self.initial.clone();
        let mut start = 0.0;
        for e in &self.events {
            if e.time > t {
                break;
            }
            f(&state, start, e.time)?;
            apply(&mut state, e)?;
            start = e.time;
        }
        f(&state, start, t)
    }

    /// Replays the log and checks its structural invariants: strictly
    /// increasing times, deaths only of live particles at their recorded
    /// positions, no duplicate positions or reused indices.
    pub fn validate(&self) -> Result<()> {
        let mut state = self.initial.clone();
        let mut seen: std::collections::HashSet<i64> = self.initial.iter().map(|p| p.index).collect();
        let mut last = 0.0;
        for e in &self.events {
            if e.time.is_nan() || e.time <= last {
                return Err(Error::InvalidParameter(format!("event time {} not after {last}", e.time)));
            }
            if e.kind == EventKind::Birth && !seen.insert(e.particle_index) {
                return Err(Error::DuplicateIndex(e.particle_index));
            }
            apply(&mut state, e)?;
            last = e.time;
        }
        Ok(())
    }
}

/// Runs `n` independent trajectories with keys `(master_seed, 0..n)` in
/// parallel and maps each through `f`. Output order follows trajectory id.
pub fn run_ensemble<T, F>(
    model: &RateModel,
    initial: &Configuration,
    horizon: f64,
    caps: Caps,
    master_seed: u64,
    n: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Trajectory) -> Result<T> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let key = RngStreamKey::new(master_seed).with_trajectory(i);
            simulate(model, initial, horizon, caps, key).and_then(&f)
        })
        .collect()
}

/// Mean of a Yule process with rate `μ` per individual: `z0 e^{μt}`.
pub fn yule_mean(z0: f64, mu: f64, t: f64) -> f64 {
    z0 * (mu * t).exp()
}

/// `(c2 t + E|η_0|) e^{c1 t}`, an upper bound on `E|η_t|`.
pub fn expectation_bound(mean0: f64, cert: GrowthCertificate, t: f64) -> f64 {
    (cert.c2 * t + mean0) * (cert.c1 * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{Kernel, Region};

    fn line(n: usize) -> Configuration {
        Configuration::from_points(1, (0..n).map(|i| Point::new(vec![i as f64]).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn frozen_model_absorbs() {
        let m = RateModel::frozen();
        let mut reg = ParticleRegistry::for_initial(&line(3));
        let step = next_event(&m, &line(3), &mut reg, 0.0, &RngStreamKey::new(1).event(0)).unwrap();
        assert_eq!(step, Step::Absorbed);

        let t = simulate(&m, &Configuration::empty(1).unwrap(), 5.0, Caps::default(), RngStreamKey::new(1))
            .unwrap();
        assert!(t.events.is_empty());
        assert_eq!(t.status, Status::Absorbed { time: 0.0 });
    }

    #[test]
    fn pure_death_kills_everyone() {
        let m = RateModel::constant_death(1.0).unwrap();
        let t = simulate(&m, &line(5), 1e6, Caps::default(), RngStreamKey::new(7)).unwrap();
        assert_eq!(t.events.len(), 5);
        assert!(t.events.iter().all(|e| e.kind == EventKind::Death));
        assert!(t.final_state().unwrap().is_empty());
        let last = t.events.last().unwrap().time;
        assert_eq!(t.status, Status::Absorbed { time: last });
        t.validate().unwrap();
    }

    #[test]
    fn births_get_fresh_indices() {
        let m = RateModel::contact(1.0, Kernel::Gaussian { sigma: 1.0 }).unwrap();
        let t = simulate(&m, &line(3), 2.0, Caps::default(), RngStreamKey::new(3)).unwrap();
        let births: Vec<i64> = t
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Birth)
            .map(|e| e.particle_index)
            .collect();
        assert_eq!(births, (1..=births.len() as i64).collect::<Vec<_>>());
        t.validate().unwrap();
    }

    #[test]
    fn state_at_is_cadlag() {
        let m = RateModel::contact(1.0, Kernel::UniformBall { radius: 1.0 })
            .unwrap()
            .plus(&RateModel::constant_death(1.0).unwrap())
            .unwrap();
        let t = simulate(&m, &line(4), 3.0, Caps::default(), RngStreamKey::new(11)).unwrap();
        assert!(t.events.len() >= 2);
        assert_eq!(t.state_at(0.0).unwrap(), t.initial);
        let t1 = t.events[0].time;
        assert_eq!(t.state_at(t1 * (1.0 - 1e-12)).unwrap(), t.initial);
        let mut after = t.initial.clone();
        apply(&mut after, &t.events[0]).unwrap();
        assert_eq!(t.state_at(t1).unwrap(), after);
        assert!(t.state_at(3.5).is_err());
        assert!(t.state_at(-0.1).is_err());
        let many = t.states_at(&[0.0, t1, 3.0]).unwrap();
        assert_eq!(many[1], after);
        assert_eq!(many[2], t.final_state().unwrap());
        assert_eq!(t.size_at(3.0).unwrap(), t.final_state().unwrap().len());
    }

    #[test]
    fn cap_hit_limits_state_at() {
        let m = RateModel::superlinear_birth(1.0, 2.0, Region::cube(1, 1.0).unwrap()).unwrap();
        let caps = Caps {
            max_population: 50,
            max_events: 1_000,
        };
        let t = simulate(&m, &line(2), 10.0, caps, RngStreamKey::new(2)).unwrap();
        let Status::CapHit { kind, cap, time } = t.status else {
            panic!("expected cap hit, got {:?}", t.status)
        };
        assert_eq!(kind, CapKind::Population);
        assert_eq!(cap, 50);
        assert_eq!(t.events.len(), 49);
        assert!(t.state_at(time).is_err());
        assert_eq!(t.state_at(time * 0.999_999).unwrap().len(), 50);
    }

    #[test]
    fn event_budget() {
        let m = RateModel::contact(1.0, Kernel::Gaussian { sigma: 1.0 }).unwrap();
        let caps = Caps {
            max_population: 1000,
            max_events: 3,
        };
        let t = simulate(&m, &line(2), 100.0, caps, RngStreamKey::new(2)).unwrap();
        assert!(matches!(t.status, Status::CapHit { kind: CapKind::Events, cap: 3, .. }));
        assert_eq!(t.events.len(), 3);
    }

    #[test]
    fn argument_validation() {
        let m = RateModel::frozen();
        let caps = Caps {
            max_population: 3,
            max_events: 10,
        };
        assert!(simulate(&m, &line(3), 1.0, caps, RngStreamKey::new(0)).is_err());
        assert!(simulate(&m, &line(1), 0.0, caps, RngStreamKey::new(0)).is_err());
        assert!(simulate(&m, &line(1), f64::NAN, caps, RngStreamKey::new(0)).is_err());
    }

    #[test]
    fn reproducible() {
        let m = RateModel::contact(1.2, Kernel::Gaussian { sigma: 0.5 })
            .unwrap()
            .plus(&RateModel::pairwise_death(0.5, 0.3, 1.0).unwrap())
            .unwrap();
        let a = simulate(&m, &line(6), 2.0, Caps::default(), RngStreamKey::new(99)).unwrap();
        let b = simulate(&m, &line(6), 2.0, Caps::default(), RngStreamKey::new(99)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, &line(6), 2.0, Caps::default(), RngStreamKey::new(100)).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(yule_mean(1.0, 1.0, 0.0), 1.0);
        assert!((yule_mean(1.0, 1.0, 1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!((yule_mean(5.0, 2.0, 0.5) - 13.591_409_142_295_225).abs() < 1e-12);
        let c = GrowthCertificate::new(1.0, 0.0);
        assert!((expectation_bound(5.0, c, 1.0) - 13.591_409_142_295_225).abs() < 1e-12);
        assert_eq!(expectation_bound(5.0, c, 0.0), 5.0);
        assert_eq!(expectation_bound(0.0, GrowthCertificate::new(0.0, 3.0), 2.0), 6.0);
    }
}
