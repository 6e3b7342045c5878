//! The backward generator, martingale residuals and Monte-Carlo estimates of
//! the transition semigroup.
//!
//! For a test function `f` the generator is
//!
//! ```text
//! Lf(η) = ∫ b(x, η) [f(η ∪ x) - f(η)] dx + Σ_{x∈η} d(x, η) [f(η ∖ x) - f(η)]
//! ```
//!
//! and `f(η_t) - f(η_0) - ∫_0^t Lf(η_s) ds` has zero mean. Trajectories are
//! piecewise constant, so the time integral is an exact sum over intervals
//! of constancy.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::{Configuration, Point};
use crate::error::{Error, Result};
use crate::quadrature::Tolerance;
use crate::rates::{IntegralCache, RateModel};
use crate::rng::{Channel, RngStreamKey};
use crate::simulate::{run_ensemble, simulate, Caps, Trajectory};
use crate::stats::{CompensatedSum, SimReport};

/// Share of excluded (cap-hit) trajectories above which a report is flagged.
pub const EXCLUSION_WARNING_FRACTION: f64 = 0.01;

pub type ConfigFn = Arc<dyn Fn(&Configuration) -> f64 + Send + Sync>;

/// A real functional of finite configurations.
#[derive(Clone)]
pub enum TestFunction {
    /// `min(|η|, K)`.
    CappedSize(usize),
    /// `|η|`.
    Size,
    /// `Σ_{x∈η} exp(-|x|²)`.
    SoftCount,
    /// `I{|η| ≤ K}`.
    IndicatorLeq(usize),
    Custom {
        name: String,
        f: ConfigFn,
        sup: Option<f64>,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn soft_weight(x: &[f64]) -> f64 {
    (-x.iter().map(|c| c * c).sum::<f64>()).exp()
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::CappedSize(k) => format!("capped_size_{k}"),
            TestFunction::Size => "size".into(),
            TestFunction::SoftCount => "soft_count".into(),
            TestFunction::IndicatorLeq(k) => format!("indicator_leq_{k}"),
            TestFunction::Custom { name, .. } => name.clone(),
        }
    }

    /// Parses `size`, `soft_count`, `capped_size_K` or `indicator_leq_K`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::config("test_function", format!("unknown test function `{s}`"));
        match s {
            "size" => Ok(TestFunction::Size),
            "soft_count" => Ok(TestFunction::SoftCount),
            _ => {
                if let Some(k) = s.strip_prefix("capped_size_") {
                    k.parse().map(TestFunction::CappedSize).map_err(|_| bad())
                } else if let Some(k) = s.strip_prefix("indicator_leq_") {
                    k.parse().map(TestFunction::IndicatorLeq).map_err(|_| bad())
                } else {
                    Err(bad())
                }
            }
        }
    }

    pub fn eval(&self, eta: &Configuration) -> f64 {
        match self {
            TestFunction::CappedSize(k) => eta.len().min(*k) as f64,
            TestFunction::Size => eta.len() as f64,
            TestFunction::SoftCount => eta.positions().map(|p| soft_weight(p.coords())).sum(),
            TestFunction::IndicatorLeq(k) => f64::from(u8::from(eta.len() <= *k)),
            TestFunction::Custom { f, .. } => f(eta),
        }
    }

    /// `sup |f|` when known.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            TestFunction::CappedSize(k) => Some(*k as f64),
            TestFunction::Size | TestFunction::SoftCount => None,
            TestFunction::IndicatorLeq(_) => Some(1.0),
            TestFunction::Custom { sup, .. } => *sup,
        }
    }

    /// `f(η) = Σ_{x∈η} φ(x)`, so `f(η ∪ x) - f(η) = φ(x)` for every `η`.
    fn is_additive(&self) -> bool {
        matches!(self, TestFunction::SoftCount | TestFunction::Size)
    }

    /// `f(η ∪ x) - f(η)` when it does not depend on `x`.
    fn constant_birth_increment(&self, n: usize) -> Option<f64> {
        match self {
            TestFunction::Size => Some(1.0),
            TestFunction::CappedSize(k) => Some(if n < *k { 1.0 } else { 0.0 }),
            TestFunction::IndicatorLeq(k) => Some(if n == *k { -1.0 } else { 0.0 }),
            _ => None,
        }
    }

    /// `f(η ∖ x) - f(η)` for the particle at `x`.
    fn death_increment(&self, eta: &Configuration, index: i64, x: &Point) -> Result<f64> {
        let n = eta.len();
        Ok(match self {
            TestFunction::Size => -1.0,
            TestFunction::CappedSize(k) => {
                if n <= *k {
                    -1.0
                } else {
                    0.0
                }
            }
            TestFunction::IndicatorLeq(k) => {
                if n == k + 1 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::SoftCount => -soft_weight(x.coords()),
            TestFunction::Custom { f, .. } => f(&eta.without(index)?) - f(eta),
        })
    }
}

/// How the birth integral of the generator is evaluated when the increment
/// of `f` varies with the birth location.
#[derive(Clone, Copy, Debug)]
pub struct QuadSpec {
    pub rel_tol: f64,
    /// Importance samples from `b(·, η)/B(η)` when no quadrature route exists.
    pub mc_samples: usize,
    pub key: RngStreamKey,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            rel_tol: 1e-6,
            mc_samples: 10_000,
            key: RngStreamKey::new(0),
        }
    }
}

/// Value of `Lf(η)`; the standard error is zero unless the birth integral
/// was estimated by Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorValue {
    pub value: f64,
    pub standard_error: f64,
}

pub fn generator_apply(
    model: &RateModel,
    f: &TestFunction,
    eta: &Configuration,
    quad: &QuadSpec,
) -> Result<GeneratorValue> {
    generator_apply_cached(model, f, eta, quad, &mut IntegralCache::default())
}

/// `cache` may be shared across states only when `f` is additive, so that
/// its birth increment does not depend on the state.
fn generator_apply_cached(
    model: &RateModel,
    f: &TestFunction,
    eta: &Configuration,
    quad: &QuadSpec,
    cache: &mut IntegralCache,
) -> Result<GeneratorValue> {
    let mut death_term = CompensatedSum::default();
    for p in eta.particles() {
        let rate = model.death_rate_unchecked(&p.position, eta);
        if rate != 0.0 {
            death_term.add(rate * f.death_increment(eta, p.index, &p.position)?);
        }
    }

    let (birth_term, se) = if let Some(inc) = f.constant_birth_increment(eta.len()) {
        let b = if inc == 0.0 { 0.0 } else { inc * model.cumulative_birth_rate(eta)? };
        (b, 0.0)
    } else {
        birth_integral(model, f, eta, quad, cache)?
    };
    let value = birth_term + death_term.value();
    if !value.is_finite() {
        return Err(Error::NotIntegrable("generator value is not finite".into()));
    }
    Ok(GeneratorValue {
        value,
        standard_error: se,
    })
}

fn birth_integral(
    model: &RateModel,
    f: &TestFunction,
    eta: &Configuration,
    quad: &QuadSpec,
    cache: &mut IntegralCache,
) -> Result<(f64, f64)> {
    let base = f.eval(eta);
    let increment = |x: &[f64]| -> f64 {
        match f {
            TestFunction::SoftCount => soft_weight(x),
            _ => {
                let p = Point::from_finite(x.to_vec());
                match eta.with_point(&p) {
                    Ok(c) => f.eval(&c) - base,
                    // x coincides with a particle: a null set
                    Err(_) => 0.0,
                }
            }
        }
    };
    if let Some(v) = model.integrate_birth_against(eta, &increment, Tolerance::relative(quad.rel_tol), cache)? {
        return Ok((v, 0.0));
    }
    let total = model.cumulative_birth_rate(eta)?;
    if total == 0.0 {
        return Ok((0.0, 0.0));
    }
    if quad.mc_samples < 2 {
        return Err(Error::InvalidParameter("Monte-Carlo birth integral needs at least 2 samples".into()));
    }
    let mut rng = quad.key.stream(Channel::Location, 0);
    let samples: Vec<f64> = (0..quad.mc_samples)
        .map(|_| model.sample_birth_location(eta, &mut rng).map(|x| increment(x.coords())))
        .collect::<Result<_>>()?;
    let r = SimReport::from_samples(&samples);
    Ok((total * r.estimate, total * r.standard_error))
}

/// `∫_0^t Lf(η_s) ds` along a trajectory, summed over intervals of constancy.
pub fn compensator(
    model: &RateModel,
    f: &TestFunction,
    traj: &Trajectory,
    t: f64,
    quad: &QuadSpec,
) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    let mut shared = IntegralCache::default();
    traj.for_each_segment(t, |state, a, b| {
        if b > a {
            let value = if f.is_additive() {
                generator_apply_cached(model, f, state, quad, &mut shared)?
            } else {
                generator_apply(model, f, state, quad)?
            };
            acc.add(value.value * (b - a));
        }
        Ok(())
    })?;
    Ok(acc.value())
}

/// Monte-Carlo estimate of `E[f(η_t) - f(η_0) - ∫_0^t Lf(η_s) ds]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleReport {
    pub residual: SimReport,
    /// Mean of `f(η_t) - f(η_0)`.
    pub increment: SimReport,
    /// Mean of the compensator.
    pub compensator: SimReport,
    pub excluded: usize,
    pub warning: bool,
}

pub fn martingale_residual(
    model: &RateModel,
    f: &TestFunction,
    initial: &Configuration,
    t: f64,
    n_traj: usize,
    master_seed: u64,
    caps: Caps,
) -> Result<MartingaleReport> {
    let quad = QuadSpec::default();
    let f0 = f.eval(initial);
    let rows = run_ensemble(model, initial, t, caps, master_seed, n_traj, |traj| {
        if traj.status.is_cap_hit() {
            return Ok(None);
        }
        let ft = f.eval(&traj.state_at(t)?);
        let comp = compensator(model, f, &traj, t, &quad)?;
        Ok(Some((ft - f0, comp)))
    })?;
    let kept: Vec<(f64, f64)> = rows.iter().flatten().copied().collect();
    let excluded = rows.len() - kept.len();
    let residuals: Vec<f64> = kept.iter().map(|(i, c)| i - c).collect();
    let increments: Vec<f64> = kept.iter().map(|(i, _)| *i).collect();
    let comps: Vec<f64> = kept.iter().map(|(_, c)| *c).collect();
    Ok(MartingaleReport {
        residual: SimReport::from_samples(&residuals).with_stat("excluded", excluded as f64),
        increment: SimReport::from_samples(&increments),
        compensator: SimReport::from_samples(&comps),
        excluded,
        warning: excluded as f64 > EXCLUSION_WARNING_FRACTION * n_traj as f64,
    })
}

/// Monte-Carlo estimate of `S_t f(α) = E f(η(α, t))`. Cap-hit runs are
/// excluded and counted under `excluded`.
pub fn semigroup_estimate(
    model: &RateModel,
    f: &TestFunction,
    alpha: &Configuration,
    t: f64,
    n_traj: usize,
    master_seed: u64,
    caps: Caps,
) -> Result<SimReport> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::TimeOutOfRange { t, limit: f64::INFINITY });
    }
    if t == 0.0 {
        let v = f.eval(alpha);
        return Ok(SimReport {
            estimate: v,
            standard_error: 0.0,
            n_samples: n_traj,
            test_statistics: Default::default(),
        }
        .with_stat("excluded", 0.0));
    }
    let vals = run_ensemble(model, alpha, t, caps, master_seed, n_traj, |traj| {
        if traj.status.is_cap_hit() {
            return Ok(None);
        }
        Ok(Some(f.eval(&traj.state_at(t)?)))
    })?;
    let kept: Vec<f64> = vals.iter().flatten().copied().collect();
    let excluded = vals.len() - kept.len();
    Ok(SimReport::from_samples(&kept).with_stat("excluded", excluded as f64))
}

/// One row of [`generator_limit_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLimitRow {
    pub t: f64,
    /// `(S_t f(α) - f(α)) / t`.
    pub quotient: f64,
    pub generator: f64,
    pub gap: f64,
    /// Standard error of the quotient.
    pub standard_error: f64,
}

/// Difference quotients `(S_t f(α) - f(α))/t` on a decreasing grid, all
/// computed from the same trajectories (common random numbers), against
/// `Lf(α)`.
pub fn generator_limit_check(
    model: &RateModel,
    f: &TestFunction,
    alpha: &Configuration,
    t_grid: &[f64],
    n_traj: usize,
    master_seed: u64,
    caps: Caps,
) -> Result<Vec<GeneratorLimitRow>> {
    if t_grid.is_empty()
        || t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite()))
        || t_grid.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidParameter("t_grid must be positive and strictly decreasing".into()));
    }
    let generator = generator_apply(model, f, alpha, &QuadSpec::default())?.value;
    let f0 = f.eval(alpha);
    let mut ascending = t_grid.to_vec();
    ascending.reverse();
    let horizon = t_grid[0];
    let per_traj: Vec<Option<Vec<f64>>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let traj = simulate(model, alpha, horizon, caps, RngStreamKey::new(master_seed).with_trajectory(i))?;
            if traj.status.is_cap_hit() {
                return Ok(None);
            }
            let states = traj.states_at(&ascending)?;
            Ok(Some(states.iter().map(|s| f.eval(s) - f0).collect()))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&Vec<f64>> = per_traj.iter().flatten().collect();
    let m = ascending.len();
    Ok(t_grid
        .iter()
        .map(|&t| {
            let col = m - 1 - t_grid.iter().position(|&s| s == t).expect("grid value");
            let diffs: Vec<f64> = kept.iter().map(|row| row[col]).collect();
            let r = SimReport::from_samples(&diffs);
            let quotient = r.estimate / t;
            GeneratorLimitRow {
                t,
                quotient,
                generator,
                gap: (quotient - generator).abs(),
                standard_error: r.standard_error / t,
            }
        })
        .collect())
}

/// One point of [`mean_size_curve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSizePoint {
    pub t: f64,
    pub report: SimReport,
    /// `(c2 t + |η_0|) e^{c1 t}`.
    pub bound: f64,
    /// `estimate - 3 SE ≤ bound`.
    pub within_bound: bool,
}

/// `E|η_t|` along a time grid from one set of trajectories, checked against
/// the linear-growth moment bound.
pub fn mean_size_curve(
    model: &RateModel,
    initial: &Configuration,
    t_grid: &[f64],
    n_traj: usize,
    master_seed: u64,
    caps: Caps,
) -> Result<Vec<MeanSizePoint>> {
    let cert = model.certificate().ok_or(Error::NoCertificate)?;
    let mut ascending = t_grid.to_vec();
    ascending.sort_by(f64::total_cmp);
    let horizon = *ascending.last().ok_or_else(|| Error::InvalidParameter("empty time grid".into()))?;
    let rows = run_ensemble(model, initial, horizon, caps, master_seed, n_traj, |traj| {
        if traj.status.is_cap_hit() {
            return Ok(None);
        }
        ascending
            .iter()
            .map(|&t| traj.size_at(t).map(|n| n as f64))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    })?;
    let kept: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let excluded = rows.len() - kept.len();
    let mean0 = initial.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let col = ascending.iter().position(|&s| s == t).expect("grid value");
            let sizes: Vec<f64> = kept.iter().map(|r| r[col]).collect();
            let report = SimReport::from_samples(&sizes).with_stat("excluded", excluded as f64);
            let bound = crate::simulate::expectation_bound(mean0, cert, t);
            MeanSizePoint {
                t,
                within_bound: report.estimate - 3.0 * report.standard_error <= bound,
                bound,
                report,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{Kernel, Region};

    fn line(n: usize) -> Configuration {
        Configuration::from_points(1, (0..n).map(|i| Point::new(vec![0.3 * i as f64]).unwrap()).collect())
            .unwrap()
    }

    fn contact_death() -> RateModel {
        RateModel::contact(1.0, Kernel::UniformBall { radius: 1.0 })
            .unwrap()
            .plus(&RateModel::constant_death(1.0).unwrap())
            .unwrap()
    }

    /// Generator by literal evaluation of `f(η∪x) - f(η)` and `f(η∖x) - f(η)`
    /// on rebuilt configurations; valid for increments constant in `x`.
    fn brute_generator(model: &RateModel, f: &TestFunction, eta: &Configuration) -> f64 {
        let probe = Point::new(vec![123.456; eta.dim()]).unwrap();
        let up = f.eval(&eta.with_point(&probe).unwrap()) - f.eval(eta);
        let mut total = up * model.cumulative_birth_rate(eta).unwrap();
        for p in eta.particles() {
            let d = model.death_rate(&p.position, eta).unwrap();
            total += d * (f.eval(&eta.without(p.index).unwrap()) - f.eval(eta));
        }
        total
    }

    #[test]
    fn size_generator_is_b_minus_d() {
        let m = RateModel::contact(2.0, Kernel::Gaussian { sigma: 1.0 })
            .unwrap()
            .plus(&RateModel::pairwise_death(0.3, 0.5, 1.0).unwrap())
            .unwrap();
        let eta = line(6);
        let v = generator_apply(&m, &TestFunction::Size, &eta, &QuadSpec::default()).unwrap();
        let expect = m.cumulative_birth_rate(&eta).unwrap() - m.cumulative_death_rate(&eta);
        assert!((v.value - expect).abs() < 1e-12);
        assert_eq!(v.standard_error, 0.0);
    }

    #[test]
    fn capped_and_indicator_match_finite_differences() {
        let m = contact_death();
        for k in [3usize, 4, 5, 6] {
            let eta = line(4);
            for f in [TestFunction::CappedSize(k), TestFunction::IndicatorLeq(k)] {
                let v = generator_apply(&m, &f, &eta, &QuadSpec::default()).unwrap().value;
                assert!((v - brute_generator(&m, &f, &eta)).abs() < 1e-12, "{f:?} k={k}");
            }
        }
    }

    #[test]
    fn frozen_generator_is_zero() {
        let m = RateModel::frozen();
        for f in [TestFunction::Size, TestFunction::SoftCount, TestFunction::CappedSize(2)] {
            assert_eq!(generator_apply(&m, &f, &line(3), &QuadSpec::default()).unwrap().value, 0.0);
        }
    }

    #[test]
    fn mc_route_for_high_dimension() {
        // uniform-ball contact in R^4 has no quadrature route
        let m = RateModel::contact(1.0, Kernel::UniformBall { radius: 1.0 }).unwrap();
        let eta = Configuration::from_points(4, vec![Point::new(vec![0.0; 4]).unwrap()]).unwrap();
        let v = generator_apply(&m, &TestFunction::SoftCount, &eta, &QuadSpec::default()).unwrap();
        assert!(v.standard_error > 0.0);
        assert!(v.value > 0.0 && v.value < 1.0);
    }

    #[test]
    fn semigroup_at_zero_is_exact() {
        let m = contact_death();
        let r = semigroup_estimate(&m, &TestFunction::SoftCount, &line(3), 0.0, 10, 1, Caps::default()).unwrap();
        assert_eq!(r.estimate, TestFunction::SoftCount.eval(&line(3)));
        assert_eq!(r.standard_error, 0.0);
    }

    #[test]
    fn semigroup_of_constant_is_constant() {
        let m = contact_death();
        let one = TestFunction::Custom {
            name: "one".into(),
            f: Arc::new(|_| 1.0),
            sup: Some(1.0),
        };
        let r = semigroup_estimate(&m, &one, &line(3), 0.7, 200, 5, Caps::default()).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.standard_error, 0.0);
    }

    #[test]
    fn frozen_residual_is_zero() {
        let r = martingale_residual(
            &RateModel::frozen(),
            &TestFunction::SoftCount,
            &line(4),
            1.0,
            50,
            3,
            Caps::default(),
        )
        .unwrap();
        assert_eq!(r.residual.estimate, 0.0);
        assert_eq!(r.residual.standard_error, 0.0);
    }

    #[test]
    fn compensator_is_resolution_independent() {
        let m = contact_death();
        let f = TestFunction::SoftCount;
        let traj = simulate(&m, &line(5), 1.0, Caps::default(), RngStreamKey::new(8)).unwrap();
        let quad = QuadSpec::default();
        let coarse = compensator(&m, &f, &traj, 1.0, &quad).unwrap();
        let mut fine = CompensatedSum::default();
        traj.for_each_segment(1.0, |state, a, b| {
            let lf = generator_apply(&m, &f, state, &quad)?.value;
            let mid = 0.5 * (a + b);
            fine.add(lf * (mid - a));
            fine.add(lf * (b - mid));
            Ok(())
        })
        .unwrap();
        assert!((coarse - fine.value()).abs() <= 1e-12 * coarse.abs().max(1.0));
    }

    #[test]
    fn test_function_parsing() {
        assert!(matches!(TestFunction::parse("capped_size_50").unwrap(), TestFunction::CappedSize(50)));
        assert!(matches!(TestFunction::parse("indicator_leq_3").unwrap(), TestFunction::IndicatorLeq(3)));
        assert!(TestFunction::parse("nope").is_err());
        assert_eq!(TestFunction::CappedSize(7).name(), "capped_size_7");
    }

    #[test]
    fn grid_validation() {
        let m = contact_death();
        assert!(generator_limit_check(&m, &TestFunction::Size, &line(2), &[0.1, 0.5], 10, 1, Caps::default()).is_err());
        assert!(generator_limit_check(&m, &TestFunction::Size, &line(2), &[], 10, 1, Caps::default()).is_err());
        let uncertified = RateModel::superlinear_birth(1.0, 2.0, Region::cube(1, 1.0).unwrap()).unwrap();
        assert!(matches!(
            mean_size_curve(&uncertified, &line(2), &[1.0], 10, 1, Caps::default()),
            Err(Error::NoCertificate)
        ));
    }
}
