//! Property and statistical check suites run by `bdsim verify`.
//!
//! Every check reports a statistic, a threshold and a verdict. Sample sizes
//! are the full sizes at `scale = 1` and shrink proportionally below it.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{generator_apply, generator_limit_check, martingale_residual, QuadSpec, TestFunction};
use crate::config_space::{dist, euclidean_matching_distance, Configuration, ParticleRegistry, Point};
use crate::coupling::{continuity_experiment, simulate_coupled};
use crate::error::{Error, Result};
use crate::rates::{Kernel, RateModel, Region};
use crate::rng::{Channel, RngStreamKey};
use crate::simulate::{expectation_bound, next_event, run_ensemble, yule_mean, Caps, EventKind, Status, Step};
use crate::stats::{ks_exponential, two_sample_ks, SimReport};

pub const SUITES: [&str; 11] = [
    "exponential-clocks",
    "birth-death-split",
    "yule",
    "moment-bounds",
    "linear-death",
    "coupling",
    "martingale",
    "generator-limit",
    "explosion",
    "metric",
    "continuity",
];

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub master_seed: u64,
    pub scale: f64,
    pub checks: Vec<Check>,
    pub failures: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifySettings {
    pub master_seed: u64,
    pub scale: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            master_seed: 20240601,
            scale: 1.0,
        }
    }
}

impl VerifySettings {
    fn n(&self, full: usize, min: usize) -> usize {
        ((full as f64 * self.scale).round() as usize).clamp(min, full.max(min))
    }

    fn seed(&self, suite: usize) -> u64 {
        self.master_seed ^ (suite as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

/// Resolves `all` and validates names.
pub fn resolve_suites(names: &[String]) -> Result<Vec<&'static str>> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return Ok(SUITES.to_vec());
    }
    names
        .iter()
        .map(|n| {
            SUITES
                .iter()
                .copied()
                .find(|s| s == n)
                .ok_or_else(|| Error::config("suite", format!("unknown suite `{n}`; expected one of {SUITES:?} or all")))
        })
        .collect()
}

pub fn run_suites(names: &[&str], settings: VerifySettings) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for name in names {
        let idx = SUITES.iter().position(|s| s == name).expect("resolved suite");
        let s = Suite {
            name,
            settings,
            seed: settings.seed(idx),
        };
        checks.extend(match *name {
            "exponential-clocks" => s.exponential_clocks()?,
            "birth-death-split" => s.birth_death_split()?,
            "yule" => s.yule()?,
            "moment-bounds" => s.moment_bounds()?,
            "linear-death" => s.linear_death()?,
            "coupling" => s.coupling()?,
            "martingale" => s.martingale()?,
            "generator-limit" => s.generator_limit()?,
            "explosion" => s.explosion()?,
            "metric" => s.metric()?,
            "continuity" => s.continuity()?,
            _ => unreachable!(),
        });
    }
    let failures = checks.iter().filter(|c| !c.pass).count();
    Ok(VerifyReport {
        schema_version: crate::io::SCHEMA_VERSION,
        master_seed: settings.master_seed,
        scale: settings.scale,
        checks,
        failures,
    })
}

/// `n` points on a grid of spacing 0.5 in the plane.
pub fn grid_configuration(n: usize) -> Configuration {
    let pts = (0..n)
        .map(|i| Point::new(vec![0.5 * (i % 4) as f64, 0.5 * (i / 4) as f64]).expect("finite"))
        .collect();
    Configuration::from_points(2, pts).expect("distinct grid points")
}

/// `λ Σ a(x - y)` with `a` uniform on the unit disc, plus death at rate 1.
pub fn contact_model(lambda: f64) -> RateModel {
    RateModel::contact(lambda, Kernel::UniformBall { radius: 1.0 })
        .and_then(|m| m.plus(&RateModel::constant_death(1.0)?))
        .expect("valid parameters")
}

fn line_configuration(n: usize) -> Configuration {
    let pts = (0..n).map(|i| Point::new(vec![i as f64]).expect("finite")).collect();
    Configuration::from_points(1, pts).expect("distinct")
}

/// Harmonic number `H_n`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

struct Suite<'a> {
    name: &'a str,
    settings: VerifySettings,
    seed: u64,
}

impl Suite<'_> {
    fn check(&self, name: &str, statistic: f64, threshold: f64, pass: bool, detail: Value) -> Check {
        Check {
            suite: self.name.to_string(),
            name: name.to_string(),
            statistic,
            threshold,
            pass,
            detail,
        }
    }

    /// `|estimate - target| / SE ≤ 3`.
    fn z_check(&self, name: &str, r: &SimReport, target: f64) -> Check {
        let z = (r.estimate - target).abs() / r.standard_error;
        self.check(
            name,
            z,
            3.0,
            z <= 3.0 || (r.estimate == target),
            json!({"estimate": r.estimate, "standard_error": r.standard_error, "target": target, "n": r.n_samples}),
        )
    }

    fn first_jumps(&self, n: usize) -> Result<Vec<(f64, EventKind)>> {
        let model = contact_model(1.0);
        let eta = grid_configuration(10);
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let key = RngStreamKey::new(self.seed).with_trajectory(i);
                let mut reg = ParticleRegistry::for_initial(&eta);
                match next_event(&model, &eta, &mut reg, 0.0, &key.event(0))? {
                    Step::Jump(e) => Ok((e.time, e.kind)),
                    Step::Absorbed => Err(Error::InvalidParameter("default model absorbed".into())),
                }
            })
            .collect()
    }

    fn exponential_clocks(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let times: Vec<f64> = self.first_jumps(n)?.into_iter().map(|(t, _)| t).collect();
        let ks = ks_exponential(&times, 20.0)?;
        Ok(vec![self.check(
            "first_jump_ks_exp20",
            ks.statistic,
            ks.threshold_0001,
            ks.passes_0001(),
            json!({"n": n, "rate": 20.0}),
        )])
    }

    fn birth_death_split(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let births = self
            .first_jumps(n)?
            .iter()
            .filter(|(_, k)| *k == EventKind::Birth)
            .count();
        let freq = births as f64 / n as f64;
        let sd = (0.25 / n as f64).sqrt();
        let z = (freq - 0.5).abs() / sd;
        Ok(vec![self.check(
            "birth_first_frequency",
            z,
            3.0,
            z <= 3.0,
            json!({"frequency": freq, "target": 0.5, "binomial_sd": sd, "n": n}),
        )])
    }

    fn yule(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let model = RateModel::yule(1.0, Region::cube(1, 1.0)?)?;
        let eta = line_configuration(5);
        let sizes = run_ensemble(&model, &eta, 1.0, Caps::default(), self.seed, n, |tr| Ok(tr.size_at(1.0)? as f64))?;
        Ok(vec![self.z_check("yule_mean_t1", &SimReport::from_samples(&sizes), yule_mean(5.0, 1.0, 1.0))])
    }

    fn moment_bounds(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let model = contact_model(1.0);
        let eta = grid_configuration(10);
        let cert = model.certificate().ok_or(Error::NoCertificate)?;
        let grid = [0.5, 1.0, 2.0];
        let rows = run_ensemble(&model, &eta, 2.0, Caps::default(), self.seed, n, |tr| {
            grid.iter().map(|&t| Ok(tr.size_at(t)? as f64)).collect::<Result<Vec<_>>>()
        })?;
        let mut checks = Vec::new();
        for (k, &t) in grid.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let rep = SimReport::from_samples(&col);
            let bound = expectation_bound(10.0, cert, t);
            let lower = rep.estimate - 3.0 * rep.standard_error;
            checks.push(self.check(
                &format!("mean_minus_3se_below_bound_t{t}"),
                lower,
                bound,
                lower <= bound,
                json!({"estimate": rep.estimate, "standard_error": rep.standard_error, "bound": bound, "margin": bound - lower}),
            ));
            checks.push(self.z_check(&format!("mean_matches_ode_t{t}"), &rep, 10.0));
        }
        Ok(checks)
    }

    fn linear_death(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let model = RateModel::constant_death(1.0)?;
        let eta = line_configuration(20);
        // the chain has at most 20 events, so a long horizon always ends absorbed
        let rows = run_ensemble(&model, &eta, 1e6, Caps::default(), self.seed, n, |tr| {
            let absorbed = match tr.status {
                Status::Absorbed { time } => time,
                s => return Err(Error::InvalidParameter(format!("pure death run ended {s:?}"))),
            };
            Ok((tr.size_at(1.0)? as f64, absorbed))
        })?;
        let sizes: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ext: Vec<f64> = rows.iter().map(|r| r.1).collect();
        Ok(vec![
            self.z_check("mean_size_t1", &SimReport::from_samples(&sizes), 20.0 * (-1.0f64).exp()),
            self.z_check("mean_extinction_time", &SimReport::from_samples(&ext), harmonic(20)),
        ])
    }

    fn coupling(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(1_000, 100);
        let (m1, m2) = (contact_model(1.0), contact_model(2.0));
        let eta = grid_configuration(10);
        let caps = Caps::default();
        let coupled = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let key = RngStreamKey::new(self.seed).with_trajectory(i);
                let pair = simulate_coupled(&m1, &m2, &eta, &eta, 1.0, caps, key)?;
                let violations = pair.audit.iter().filter(|a| !a.included).count();
                Ok((violations, pair.lower.size_at(1.0)? as f64, pair.upper.size_at(1.0)? as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        let violations: usize = coupled.iter().map(|c| c.0).sum();
        let lower: Vec<f64> = coupled.iter().map(|c| c.1).collect();
        let upper: Vec<f64> = coupled.iter().map(|c| c.2).collect();
        let standalone = |m: &RateModel, seed: u64| {
            run_ensemble(m, &eta, 1.0, caps, seed, n, |tr| Ok(tr.size_at(1.0)? as f64))
        };
        let ks_lower = two_sample_ks(&lower, &standalone(&m1, self.seed.wrapping_add(1))?)?;
        let ks_upper = two_sample_ks(&upper, &standalone(&m2, self.seed.wrapping_add(2))?)?;
        Ok(vec![
            self.check(
                "inclusion_violations",
                violations as f64,
                0.0,
                violations == 0,
                json!({"runs": n}),
            ),
            self.check("lower_marginal_ks", ks_lower.statistic, ks_lower.threshold_0001, ks_lower.passes_0001(), Value::Null),
            self.check("upper_marginal_ks", ks_upper.statistic, ks_upper.threshold_0001, ks_upper.passes_0001(), Value::Null),
        ])
    }

    fn martingale(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(10_000, 100);
        let model = contact_model(1.0);
        let eta = grid_configuration(10);
        [TestFunction::CappedSize(50), TestFunction::SoftCount]
            .iter()
            .map(|f| {
                let rep = martingale_residual(&model, f, &eta, 1.0, n, self.seed, Caps::default())?;
                let r = &rep.residual;
                let z = r.estimate.abs() / r.standard_error;
                Ok(self.check(
                    &format!("residual_{}", f.name()),
                    z,
                    3.0,
                    z <= 3.0 && !rep.warning,
                    json!({"mean": r.estimate, "standard_error": r.standard_error, "excluded": rep.excluded, "n": n}),
                ))
            })
            .collect()
    }

    fn generator_limit(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(100_000, 1_000);
        let model = contact_model(2.0);
        let alpha = grid_configuration(10);
        let grid = [0.5, 0.1, 0.05, 0.01];
        let rows = generator_limit_check(&model, &TestFunction::Size, &alpha, &grid, n, self.seed, Caps::default())?;
        let lf = generator_apply(&model, &TestFunction::Size, &alpha, &QuadSpec::default())?.value;
        let last = rows.last().expect("nonempty grid");
        let tol = (3.0 * last.standard_error).max(0.05 * lf.abs() + 0.01);
        let worst = rows
            .windows(2)
            .map(|w| w[1].gap - w[0].gap - 2.0 * w[0].standard_error.hypot(w[1].standard_error))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![
            self.check(
                "gap_at_smallest_t",
                last.gap,
                tol,
                last.gap <= tol,
                json!({"t": last.t, "generator": lf, "quotient": last.quotient, "standard_error": last.standard_error}),
            ),
            self.check(
                "gap_nonincreasing_2sigma",
                worst,
                0.0,
                worst <= 0.0,
                serde_json::to_value(&rows).map_err(|e| Error::Io(e.to_string()))?,
            ),
        ])
    }

    fn explosion(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(1_000, 100);
        let model = RateModel::superlinear_birth(1.0, 2.0, Region::cube(2, 1.0)?)?;
        let eta = Configuration::from_points(2, vec![Point::new(vec![0.25, 0.25])?, Point::new(vec![0.75, 0.75])?])?;
        let caps = Caps {
            max_population: 10_000,
            max_events: 10_000_000,
        };
        let taus: Vec<Option<f64>> = run_ensemble(&model, &eta, 10.0, caps, self.seed, n, |tr| {
            Ok(match tr.status {
                Status::CapHit { time, .. } => Some(time),
                _ => None,
            })
        })?;
        let mut hit: Vec<f64> = taus.iter().flatten().copied().collect();
        let frac = hit.len() as f64 / n as f64;
        hit.sort_by(f64::total_cmp);
        let median = if hit.is_empty() { f64::INFINITY } else { hit[hit.len() / 2] };
        Ok(vec![
            self.check("cap_hit_fraction", frac, 0.99, frac >= 0.99, json!({"runs": n})),
            self.check("median_cap_time", median, 10.0, median < 10.0, Value::Null),
        ])
    }

    fn metric(&self) -> Result<Vec<Check>> {
        let mut rng = RngStreamKey::new(self.seed).stream(Channel::Location, 0);
        let n_inst = self.settings.n(1_000, 50);
        let mut mismatches = 0usize;
        for _ in 0..n_inst {
            let n = rng.random_range(1..=7);
            let d = rng.random_range(1..=3);
            let a = random_points(&mut rng, n, d, 1.0)?;
            let b = random_points(&mut rng, n, d, 1.0)?;
            if euclidean_matching_distance(&a, &b)? != brute_force_distance(&a, &b) {
                mismatches += 1;
            }
        }
        let n_tri = self.settings.n(10_000, 100);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..n_tri {
            let n = rng.random_range(1..=8);
            let d = rng.random_range(1..=3);
            let a = random_points(&mut rng, n, d, 0.5)?;
            let b = random_points(&mut rng, n, d, 0.5)?;
            let c = random_points(&mut rng, n, d, 0.5)?;
            worst = worst.max(dist(&a, &c)? - dist(&a, &b)? - dist(&b, &c)?);
        }
        Ok(vec![
            self.check("assignment_vs_permutations", mismatches as f64, 0.0, mismatches == 0, json!({"instances": n_inst})),
            self.check("triangle_inequality_excess", worst, TRIANGLE_SLACK, worst <= TRIANGLE_SLACK, json!({"triples": n_tri})),
        ])
    }

    fn continuity(&self) -> Result<Vec<Check>> {
        let n = self.settings.n(1_000, 100);
        let model = contact_model(1.0);
        let mut rng = RngStreamKey::new(self.seed).stream(Channel::Location, 1);
        let alpha = random_points(&mut rng, 5, 2, 2.0)?;
        let displacements = [1e-2, 1e-3, 1e-4];
        let perturbed = displacements
            .iter()
            .map(|&delta| displace(&alpha, delta, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let reports = continuity_experiment(&model, &alpha, &perturbed, 1.0, n, self.seed, &[0.1], Caps::default())?;
        let p: Vec<f64> = reports.iter().map(|r| r.exceedance[0].1).collect();
        let m: Vec<f64> = reports.iter().map(|r| (n - r.excluded) as f64).collect();
        let var = |k: usize| p[k] * (1.0 - p[k]) / m[k];
        let worst = (0..p.len() - 1)
            .map(|k| p[k + 1] - p[k] - 2.0 * (var(k) + var(k + 1)).sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        let last = *p.last().expect("three displacements");
        Ok(vec![
            self.check(
                "exceedance_nonincreasing_2sigma",
                worst,
                0.0,
                worst <= 0.0,
                json!({"displacements": displacements, "exceedance_0.1": p}),
            ),
            self.check("exceedance_at_1e-4", last, 0.05, last < 0.05, Value::Null),
        ])
    }
}

/// Floating-point slack for the triangle inequality on `dist`.
pub const TRIANGLE_SLACK: f64 = 1e-12;

fn random_points<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, side: f64) -> Result<Configuration> {
    let pts = (0..n)
        .map(|_| Point::new((0..d).map(|_| rng.random_range(0.0..side)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Configuration::from_points(d, pts)
}

/// Moves every point by `delta` in an independent uniform direction.
fn displace<R: Rng + ?Sized>(alpha: &Configuration, delta: f64, rng: &mut R) -> Result<Configuration> {
    let pts = alpha
        .positions()
        .map(|p| {
            let dir = Kernel::UniformBall { radius: 1.0 }.sample(p.dim(), rng);
            let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
            Point::new(p.coords().iter().zip(&dir).map(|(c, u)| c + delta * u / norm).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Configuration::from_points(alpha.dim(), pts)
}

/// Minimum over all permutations, summing costs in row order.
fn brute_force_distance(a: &Configuration, b: &Configuration) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = (0..n)
            .map(|i| a.particles()[i].position.distance_squared(&b.particles()[p[i]].position))
            .sum();
        best = best.min(s);
    });
    if n == 0 {
        0.0
    } else {
        best.sqrt()
    }
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}
