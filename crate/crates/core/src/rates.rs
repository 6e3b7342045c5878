//! Birth and death rate coefficients.
//!
//! A [`RateModel`] is a sum of birth terms and a sum of death terms. Every
//! built-in term has a closed-form cumulative birth rate and an exact
//! location sampler; user-defined terms fall back to quadrature over a
//! declared support box and to rejection sampling under a declared constant
//! envelope.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config_space::{Configuration, Point};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::rng::open01;

/// Relative tolerance of the quadrature fallback for cumulative birth rates.
pub const CUMULATIVE_RATE_TOL: f64 = 1e-8;
/// Largest configuration on which the generic majorant enumerates subsets.
pub const MAJORANT_LIMIT: usize = 20;
const MAX_REJECTION_PROPOSALS: usize = 1_000_000;

/// Probability density used as the dispersal kernel of the contact model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    UniformBall { radius: f64 },
    Gaussian { sigma: f64 },
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        match self {
            Kernel::UniformBall { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                Err(Error::InvalidParameter(format!("kernel radius {radius}")))
            }
            Kernel::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidParameter(format!("kernel sigma {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Density at displacement `z`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let d = z.len();
        let r2: f64 = z.iter().map(|c| c * c).sum();
        match *self {
            Kernel::UniformBall { radius } => {
                if r2 <= radius * radius {
                    1.0 / ball_volume(d, radius)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (2.0 * PI * s2).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * s2)).exp()
            }
        }
    }

    /// Total mass `‖a‖₁`; kernels are probability densities.
    pub fn mass(&self) -> f64 {
        1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Kernel::UniformBall { radius } => {
                let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
                let r = radius * open01(rng).powf(1.0 / dim as f64);
                for c in &mut dir {
                    *c *= r / norm;
                }
                dir
            }
            Kernel::Gaussian { sigma } => (0..dim)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }
}

/// Volume of the Euclidean ball of radius `r` in R^d.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    // V_0 = 1, V_1 = 2, V_d = V_{d-2} · 2π / d
    let mut v = if d.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v * r.powi(d as i32)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let r = Region { lo, hi };
        r.validate()?;
        Ok(r)
    }

    /// `[0, side]^dim`.
    pub fn cube(dim: usize, side: f64) -> Result<Self> {
        Region::new(vec![0.0; dim], vec![side; dim])
    }

    fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::InvalidParameter("region bounds must have equal positive length".into()));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
        {
            return Err(Error::InvalidParameter("region needs finite lo < hi".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(c, (l, h))| *l <= *c && *c <= *h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    fn density(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0 / self.volume()
        } else {
            0.0
        }
    }
}

/// Pointwise rate function supplied by the caller.
pub type RateFn = Arc<dyn Fn(&Point, &Configuration) -> f64 + Send + Sync>;

/// A user-defined birth term.
#[derive(Clone)]
pub struct CustomBirth {
    pub name: String,
    pub rate: RateFn,
    /// Box outside which the rate vanishes; `None` means unbounded support.
    pub support: Option<Region>,
    /// Constant `M ≥ b(x, η)` on the support, used for rejection sampling.
    pub envelope: Option<f64>,
    /// Whether `ξ ⊂ η ⇒ b(x, ξ) ≤ b(x, η)`.
    pub monotone: bool,
}

/// A user-defined death term.
#[derive(Clone)]
pub struct CustomDeath {
    pub name: String,
    pub rate: RateFn,
}

impl fmt::Debug for CustomBirth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBirth")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("envelope", &self.envelope)
            .field("monotone", &self.monotone)
            .finish_non_exhaustive()
    }
}

impl fmt::Debug for CustomDeath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDeath").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BirthTerm {
    /// `λ Σ_{y∈η} a(x - y)`.
    Contact { lambda: f64, kernel: Kernel },
    /// `κ / vol(region)` on the region.
    Immigration { kappa: f64, region: Region },
    /// `θ |η|^p / vol(region)` on the region.
    Power { theta: f64, p: f64, region: Region },
    #[serde(skip)]
    Custom(CustomBirth),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeathTerm {
    /// `μ`.
    Constant { mu: f64 },
    /// `m0 + Σ_{y∈η∖x} strength · I{|x - y| ≤ radius}`.
    Pairwise { m0: f64, strength: f64, radius: f64 },
    #[serde(skip)]
    Custom(CustomDeath),
}

impl BirthTerm {
    fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        match self {
            BirthTerm::Contact { lambda, kernel } => {
                nonneg("lambda", *lambda)?;
                kernel.validate()
            }
            BirthTerm::Immigration { kappa, region } => {
                nonneg("kappa", *kappa)?;
                region.validate()
            }
            BirthTerm::Power { theta, p, region } => {
                nonneg("theta", *theta)?;
                nonneg("p", *p)?;
                region.validate()
            }
            BirthTerm::Custom(c) => {
                if let Some(s) = &c.support {
                    s.validate()?;
                }
                Ok(())
            }
        }
    }

    fn rate(&self, x: &Point, eta: &Configuration) -> f64 {
        match self {
            BirthTerm::Contact { lambda, kernel } => {
                let mut z = vec![0.0; x.dim()];
                let s: f64 = eta
                    .positions()
                    .map(|y| {
                        for (zi, (a, b)) in z.iter_mut().zip(x.coords().iter().zip(y.coords())) {
                            *zi = a - b;
                        }
                        kernel.density(&z)
                    })
                    .sum();
                lambda * s
            }
            BirthTerm::Immigration { kappa, region } => kappa * region.density(x.coords()),
            BirthTerm::Power { theta, p, region } => {
                power_total(*theta, *p, eta.len()) * region.density(x.coords())
            }
            BirthTerm::Custom(c) => (c.rate)(x, eta),
        }
    }

    fn cumulative(&self, eta: &Configuration) -> Result<f64> {
        match self {
            BirthTerm::Contact { lambda, kernel } => Ok(lambda * eta.len() as f64 * kernel.mass()),
            BirthTerm::Immigration { kappa, .. } => Ok(*kappa),
            BirthTerm::Power { theta, p, .. } => Ok(power_total(*theta, *p, eta.len())),
            BirthTerm::Custom(c) => {
                let support = c.support.as_ref().ok_or_else(|| {
                    Error::NotIntegrable(format!("`{}` declares no bounded support", c.name))
                })?;
                let f = |x: &[f64]| (c.rate)(&Point::from_finite(x.to_vec()), eta);
                let v = quadrature::integrate_box(
                    &f,
                    &support.lo,
                    &support.hi,
                    Tolerance::relative(CUMULATIVE_RATE_TOL),
                )?;
                Ok(v.max(0.0))
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, eta: &Configuration, rng: &mut R) -> Result<Point> {
        match self {
            BirthTerm::Contact { kernel, .. } => {
                let n = eta.len();
                if n == 0 {
                    return Err(Error::ZeroBirthRate);
                }
                let slot = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
                let parent = &eta.particles()[slot].position;
                let z = kernel.sample(eta.dim(), rng);
                Ok(Point::from_finite(
                    parent.coords().iter().zip(&z).map(|(a, b)| a + b).collect(),
                ))
            }
            BirthTerm::Immigration { region, .. } | BirthTerm::Power { region, .. } => {
                Ok(Point::from_finite(region.sample(rng)))
            }
            BirthTerm::Custom(c) => {
                let (support, bound) = match (&c.support, c.envelope) {
                    (Some(s), Some(m)) => (s, m),
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "`{}` needs a support box and envelope bound to be sampled",
                            c.name
                        )))
                    }
                };
                for _ in 0..MAX_REJECTION_PROPOSALS {
                    let x = Point::from_finite(support.sample(rng));
                    let b = (c.rate)(&x, eta);
                    if b > bound * (1.0 + 1e-12) {
                        return Err(Error::InvalidParameter(format!(
                            "`{}` exceeds its envelope: {b} > {bound}",
                            c.name
                        )));
                    }
                    if open01(rng) * bound < b {
                        return Ok(x);
                    }
                }
                Err(Error::RejectionExhausted(MAX_REJECTION_PROPOSALS))
            }
        }
    }

    fn is_monotone(&self) -> bool {
        match self {
            BirthTerm::Custom(c) => c.monotone,
            _ => true,
        }
    }

    fn certificate(&self) -> Option<GrowthCertificate> {
        match self {
            BirthTerm::Contact { lambda, kernel } => Some(GrowthCertificate::new(lambda * kernel.mass(), 0.0)),
            BirthTerm::Immigration { kappa, .. } => Some(GrowthCertificate::new(0.0, *kappa)),
            BirthTerm::Power { theta, p, .. } => {
                if *p == 0.0 {
                    Some(GrowthCertificate::new(0.0, *theta))
                } else if *p == 1.0 {
                    Some(GrowthCertificate::new(*theta, 0.0))
                } else if *p < 1.0 {
                    // n^p ≤ n + 1
                    Some(GrowthCertificate::new(*theta, *theta))
                } else {
                    None
                }
            }
            BirthTerm::Custom(_) => None,
        }
    }

    /// `∫ b(x, η) g(x) dx` by quadrature on the term's natural domain, or
    /// `None` when no quadrature route exists (high-dimensional balls).
    fn integrate_against(
        &self,
        term: usize,
        eta: &Configuration,
        g: &dyn Fn(&[f64]) -> f64,
        tol: Tolerance,
        cache: &mut IntegralCache,
    ) -> Result<Option<f64>> {
        let d = eta.dim();
        match self {
            BirthTerm::Contact { lambda, kernel } => {
                let mut total = 0.0;
                for y in eta.positions() {
                    let key = (term, y.key_bits());
                    let v = match cache.values.get(&key) {
                        Some(v) => *v,
                        None => {
                            let Some(v) = kernel_average(kernel, y.coords(), g, tol)? else {
                                return Ok(None);
                            };
                            cache.values.insert(key, v);
                            v
                        }
                    };
                    total += v;
                }
                Ok(Some(lambda * total))
            }
            BirthTerm::Immigration { kappa, region } => {
                cached_box_average(term, region, g, tol, cache).map(|v| v.map(|v| kappa * v))
            }
            BirthTerm::Power { theta, p, region } => cached_box_average(term, region, g, tol, cache)
                .map(|v| v.map(|v| power_total(*theta, *p, eta.len()) * v)),
            BirthTerm::Custom(c) => {
                let Some(support) = &c.support else {
                    return Err(Error::NotIntegrable(format!("`{}` declares no bounded support", c.name)));
                };
                if d > 3 {
                    return Ok(None);
                }
                let f = |x: &[f64]| (c.rate)(&Point::from_finite(x.to_vec()), eta) * g(x);
                quadrature::integrate_box(&f, &support.lo, &support.hi, tol).map(Some)
            }
        }
    }
}

/// Per-particle kernel integrals `∫ a(x - y) g(x) dx` and box averages of
/// `g`. Only valid while `g` stays the same function.
#[derive(Debug, Default)]
pub(crate) struct IntegralCache {
    values: HashMap<(usize, Vec<u64>), f64>,
}

/// `∫ a(x - y) g(x) dx`, or `None` above three dimensions.
fn kernel_average(kernel: &Kernel, y: &[f64], g: &dyn Fn(&[f64]) -> f64, tol: Tolerance) -> Result<Option<f64>> {
    match *kernel {
        Kernel::UniformBall { radius } => ball_average(y, radius, g, tol),
        Kernel::Gaussian { sigma } => {
            if y.len() > 3 {
                return Ok(None);
            }
            let half = 10.0 * sigma;
            let lo: Vec<f64> = y.iter().map(|c| c - half).collect();
            let hi: Vec<f64> = y.iter().map(|c| c + half).collect();
            let f = |x: &[f64]| {
                let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                kernel.density(&z) * g(x)
            };
            quadrature::integrate_box(&f, &lo, &hi, tol).map(Some)
        }
    }
}

fn cached_box_average(
    term: usize,
    region: &Region,
    g: &dyn Fn(&[f64]) -> f64,
    tol: Tolerance,
    cache: &mut IntegralCache,
) -> Result<Option<f64>> {
    let key = (term, Vec::new());
    if let Some(v) = cache.values.get(&key) {
        return Ok(Some(*v));
    }
    let v = box_average(region, g, tol)?;
    if let Some(v) = v {
        cache.values.insert(key, v);
    }
    Ok(v)
}

fn power_total(theta: f64, p: f64, n: usize) -> f64 {
    if n == 0 && p > 0.0 {
        0.0
    } else {
        theta * (n as f64).powf(p)
    }
}

/// Mean of `g` over the box.
fn box_average(region: &Region, g: &dyn Fn(&[f64]) -> f64, tol: Tolerance) -> Result<Option<f64>> {
    if region.dim() > 3 {
        return Ok(None);
    }
    let v = quadrature::integrate_box(g, &region.lo, &region.hi, tol)?;
    Ok(Some(v / region.volume()))
}

/// Mean of `g` over the ball `B_r(y)`, in polar/spherical coordinates so the
/// integrand stays smooth.
fn ball_average(y: &[f64], r: f64, g: &dyn Fn(&[f64]) -> f64, tol: Tolerance) -> Result<Option<f64>> {
    let d = y.len();
    let vol = ball_volume(d, r);
    let v = match d {
        1 => quadrature::integrate(|t| g(&[y[0] + t]), -r, r, tol)?,
        2 => {
            let f = |q: &[f64]| {
                let (rho, phi) = (q[0], q[1]);
                rho * g(&[y[0] + rho * phi.cos(), y[1] + rho * phi.sin()])
            };
            quadrature::integrate_box(&f, &[0.0, 0.0], &[r, 2.0 * PI], tol)?
        }
        3 => {
            let f = |q: &[f64]| {
                let (rho, th, phi) = (q[0], q[1], q[2]);
                let s = th.sin();
                rho * rho * s
                    * g(&[
                        y[0] + rho * s * phi.cos(),
                        y[1] + rho * s * phi.sin(),
                        y[2] + rho * th.cos(),
                    ])
            };
            quadrature::integrate_box(&f, &[0.0, 0.0, 0.0], &[r, PI, 2.0 * PI], tol)?
        }
        _ => return Ok(None),
    };
    Ok(Some(v / vol))
}

impl DeathTerm {
    fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        match self {
            DeathTerm::Constant { mu } => nonneg("mu", *mu),
            DeathTerm::Pairwise { m0, strength, radius } => {
                nonneg("m0", *m0)?;
                nonneg("strength", *strength)?;
                nonneg("radius", *radius)
            }
            DeathTerm::Custom(_) => Ok(()),
        }
    }

    fn rate(&self, x: &Point, eta: &Configuration) -> f64 {
        match self {
            DeathTerm::Constant { mu } => *mu,
            DeathTerm::Pairwise { m0, strength, radius } => {
                let r2 = radius * radius;
                let neighbours = eta
                    .positions()
                    .filter(|y| {
                        let d2 = x.distance_squared(y);
                        d2 > 0.0 && d2 <= r2
                    })
                    .count();
                m0 + strength * neighbours as f64
            }
            DeathTerm::Custom(c) => (c.rate)(x, eta),
        }
    }
}

/// Linear growth bound `∫ b(x, η) dx ≤ c1 |η| + c2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub c1: f64,
    pub c2: f64,
}

impl GrowthCertificate {
    pub fn new(c1: f64, c2: f64) -> Self {
        GrowthCertificate { c1, c2 }
    }

    pub fn bound(&self, n: usize) -> f64 {
        self.c1 * n as f64 + self.c2
    }
}

/// Birth and death coefficients of a spatial birth-and-death process.
#[derive(Clone, Debug)]
pub struct RateModel {
    pub name: String,
    births: Vec<BirthTerm>,
    deaths: Vec<DeathTerm>,
    certificate: Option<GrowthCertificate>,
}

impl RateModel {
    /// Sum of the given terms. The certificate is the sum of the terms'
    /// certificates, or absent if any birth term has none.
    pub fn composite(name: impl Into<String>, births: Vec<BirthTerm>, deaths: Vec<DeathTerm>) -> Result<Self> {
        for b in &births {
            b.validate()?;
        }
        for d in &deaths {
            d.validate()?;
        }
        let certificate = births.iter().try_fold(GrowthCertificate::new(0.0, 0.0), |acc, b| {
            b.certificate().map(|c| GrowthCertificate::new(acc.c1 + c.c1, acc.c2 + c.c2))
        });
        Ok(RateModel {
            name: name.into(),
            births,
            deaths,
            certificate,
        })
    }

    /// `b ≡ 0`, `d ≡ 0`.
    pub fn frozen() -> Self {
        RateModel::composite("frozen", vec![], vec![]).expect("no terms")
    }

    pub fn contact(lambda: f64, kernel: Kernel) -> Result<Self> {
        RateModel::composite("contact", vec![BirthTerm::Contact { lambda, kernel }], vec![])
    }

    pub fn immigration(kappa: f64, region: Region) -> Result<Self> {
        RateModel::composite("immigration", vec![BirthTerm::Immigration { kappa, region }], vec![])
    }

    pub fn constant_death(mu: f64) -> Result<Self> {
        RateModel::composite("constant_death", vec![], vec![DeathTerm::Constant { mu }])
    }

    pub fn pairwise_death(m0: f64, strength: f64, radius: f64) -> Result<Self> {
        RateModel::composite(
            "pairwise_death",
            vec![],
            vec![DeathTerm::Pairwise { m0, strength, radius }],
        )
    }

    /// `θ |η|^p` spread uniformly over `region`, `p ≥ 2`; explodes.
    pub fn superlinear_birth(theta: f64, p: f64, region: Region) -> Result<Self> {
        if p < 2.0 {
            return Err(Error::InvalidParameter(format!("superlinear birth needs p >= 2, got {p}")));
        }
        RateModel::composite("superlinear_birth", vec![BirthTerm::Power { theta, p, region }], vec![])
    }

    /// Pure birth at total rate `μ |η|`, locations uniform on `region`.
    pub fn yule(mu: f64, region: Region) -> Result<Self> {
        RateModel::composite("yule", vec![BirthTerm::Power { theta: mu, p: 1.0, region }], vec![])
    }

    /// Sum of two models' terms.
    pub fn plus(&self, other: &RateModel) -> Result<Self> {
        let mut births = self.births.clone();
        births.extend(other.births.iter().cloned());
        let mut deaths = self.deaths.clone();
        deaths.extend(other.deaths.iter().cloned());
        RateModel::composite(format!("{}+{}", self.name, other.name), births, deaths)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_certificate(mut self, certificate: Option<GrowthCertificate>) -> Self {
        self.certificate = certificate;
        self
    }

    pub fn births(&self) -> &[BirthTerm] {
        &self.births
    }

    pub fn deaths(&self) -> &[DeathTerm] {
        &self.deaths
    }

    pub fn certificate(&self) -> Option<GrowthCertificate> {
        self.certificate
    }

    pub fn birth_rate(&self, x: &Point, eta: &Configuration) -> f64 {
        self.births.iter().map(|b| b.rate(x, eta)).sum()
    }

    /// `d(x, η)`; defined only for `x ∈ η`.
    pub fn death_rate(&self, x: &Point, eta: &Configuration) -> Result<f64> {
        if !eta.contains_position(x) {
            return Err(Error::NotInConfiguration(x.coords().to_vec()));
        }
        Ok(self.death_rate_unchecked(x, eta))
    }

    pub(crate) fn death_rate_unchecked(&self, x: &Point, eta: &Configuration) -> f64 {
        self.deaths.iter().map(|d| d.rate(x, eta)).sum()
    }

    /// `B(η) = ∫ b(x, η) dx`.
    pub fn cumulative_birth_rate(&self, eta: &Configuration) -> Result<f64> {
        self.births.iter().map(|b| b.cumulative(eta)).sum()
    }

    /// `D(η) = Σ_{x∈η} d(x, η)`.
    pub fn cumulative_death_rate(&self, eta: &Configuration) -> f64 {
        if let Some(mu) = self.uniform_death_rate() {
            return mu * eta.len() as f64;
        }
        eta.positions().map(|x| self.death_rate_unchecked(x, eta)).sum()
    }

    /// The common death rate when every particle dies at the same constant rate.
    pub(crate) fn uniform_death_rate(&self) -> Option<f64> {
        self.deaths.iter().try_fold(0.0, |acc, d| match d {
            DeathTerm::Constant { mu } => Some(acc + mu),
            _ => None,
        })
    }

    /// Slot of the particle that dies, given `u ∈ [0, 1)` and `D(η) > 0`.
    pub(crate) fn select_victim(&self, eta: &Configuration, total_death: f64, u: f64) -> usize {
        let n = eta.len();
        if self.uniform_death_rate().is_some() {
            return ((u * n as f64) as usize).min(n - 1);
        }
        let target = u * total_death;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (slot, p) in eta.particles().iter().enumerate() {
            let r = self.death_rate_unchecked(&p.position, eta);
            if r > 0.0 {
                last_positive = slot;
            }
            acc += r;
            if target < acc {
                return slot;
            }
        }
        last_positive
    }

    /// Draws a location from the density `b(·, η) / B(η)`.
    pub fn sample_birth_location<R: Rng + ?Sized>(&self, eta: &Configuration, rng: &mut R) -> Result<Point> {
        let weights: Vec<f64> = self
            .births
            .iter()
            .map(|b| b.cumulative(eta))
            .collect::<Result<_>>()?;
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::ZeroBirthRate);
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            chosen = Some(i);
            acc += w;
            if target < acc {
                break;
            }
        }
        let term = &self.births[chosen.expect("positive total weight")];
        term.sample(eta, rng)
    }

    pub fn birth_is_monotone(&self) -> bool {
        self.births.iter().all(BirthTerm::is_monotone)
    }

    /// `sup_{ξ⊂η} b(x, ξ)`.
    pub fn majorant_birth_rate(&self, x: &Point, eta: &Configuration) -> Result<f64> {
        if self.birth_is_monotone() {
            return Ok(self.birth_rate(x, eta));
        }
        let n = eta.len();
        if n > MAJORANT_LIMIT {
            return Err(Error::MajorantIntractable(n));
        }
        let particles = eta.particles();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1u32 << n) {
            let sub: Vec<(i64, Point)> = particles
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| (p.index, p.position.clone()))
                .collect();
            let xi = Configuration::with_indices(eta.dim(), sub)?;
            best = best.max(self.birth_rate(x, &xi));
        }
        Ok(best)
    }

    /// `∫ b(x, η) g(x) dx` by quadrature where a route exists.
    pub(crate) fn integrate_birth_against(
        &self,
        eta: &Configuration,
        g: &dyn Fn(&[f64]) -> f64,
        tol: Tolerance,
        cache: &mut IntegralCache,
    ) -> Result<Option<f64>> {
        let mut total = 0.0;
        for (i, b) in self.births.iter().enumerate() {
            match b.integrate_against(i, eta, g, tol, cache)? {
                Some(v) => total += v,
                None => return Ok(None),
            }
        }
        Ok(Some(total))
    }

    /// Spot-checks `B(η) ≤ c1 |η| + c2` on random configurations of up to
    /// `max_n` points drawn uniformly from `[-5, 5]^dim`.
    pub fn growth_certificate_check<R: Rng + ?Sized>(
        &self,
        dim: usize,
        trials: usize,
        max_n: usize,
        rng: &mut R,
    ) -> Result<CertificateReport> {
        let cert = self.certificate.ok_or(Error::NoCertificate)?;
        let mut max_ratio: f64 = 0.0;
        let mut witness = None;
        for _ in 0..trials {
            let n = rng.random_range(0..=max_n);
            let eta = random_configuration(dim, n, 5.0, rng)?;
            let b = self.cumulative_birth_rate(&eta)?;
            let bound = cert.bound(n);
            let ratio = if bound > 0.0 {
                b / bound
            } else if b > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if b > bound * (1.0 + 1e-6) && witness.is_none() {
                witness = Some(eta);
            }
        }
        Ok(CertificateReport {
            max_ratio,
            pass: witness.is_none(),
            witness,
        })
    }
}

/// Outcome of [`RateModel::growth_certificate_check`].
#[derive(Clone, Debug)]
pub struct CertificateReport {
    pub max_ratio: f64,
    pub pass: bool,
    pub witness: Option<Configuration>,
}

/// `n` uniform points in `[-half, half]^dim`, labelled as an initial configuration.
pub fn random_configuration<R: Rng + ?Sized>(dim: usize, n: usize, half: f64, rng: &mut R) -> Result<Configuration> {
    let mut pts: Vec<Point> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = Point::from_finite((0..dim).map(|_| rng.random_range(-half..half)).collect());
        if !pts.contains(&p) {
            pts.push(p);
        }
    }
    Configuration::from_points(dim, pts)
}
