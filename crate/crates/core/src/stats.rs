//! Summary statistics and Kolmogorov–Smirnov tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymptotic KS critical constants for levels 0.05 and 0.001.
pub const KS_C_005: f64 = 1.358;
pub const KS_C_0001: f64 = 1.949;
/// Minimum sample size accepted by the KS tests.
pub const KS_MIN_SAMPLES: usize = 100;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub test_statistics: BTreeMap<String, f64>,
}

impl SimReport {
    /// Sample mean and `sd / √n` of `values`.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return SimReport {
                estimate: f64::NAN,
                standard_error: f64::NAN,
                n_samples: 0,
                test_statistics: BTreeMap::new(),
            };
        }
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / n as f64;
        let se = if n > 1 {
            let ss = values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .value();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        SimReport {
            estimate: mean,
            standard_error: se,
            n_samples: n,
            test_statistics: BTreeMap::new(),
        }
    }

    pub fn with_stat(mut self, name: &str, value: f64) -> Self {
        self.test_statistics.insert(name.to_string(), value);
        self
    }

    /// `|estimate - target| ≤ k · SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.standard_error
    }
}

/// A KS statistic with its critical values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold_005: f64,
    pub threshold_0001: f64,
}

impl KsResult {
    pub fn passes_005(&self) -> bool {
        self.statistic < self.threshold_005
    }

    pub fn passes_0001(&self) -> bool {
        self.statistic < self.threshold_0001
    }
}

/// One-sample KS test of `samples` against `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<KsResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate {rate}")));
    }
    if let Some(bad) = samples.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("non-positive sample {bad}")));
    }
    let cdf = |x: f64| 1.0 - (-rate * x).exp();
    Ok(ks_one_sample(samples, cdf))
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        threshold_005: KS_C_005 / n.sqrt(),
        threshold_0001: KS_C_0001 / n.sqrt(),
    }
}

/// Two-sample KS statistic `sup |F_a - F_b|`.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<KsResult> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: KS_MIN_SAMPLES,
                got: s.len(),
            });
        }
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        // advance past every copy of the smaller value so ties are handled
        let v = xa[i].min(xb[j]);
        while i < na && xa[i] <= v {
            i += 1;
        }
        while j < nb && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let scale = ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt();
    Ok(KsResult {
        statistic: d,
        threshold_005: KS_C_005 * scale,
        threshold_0001: KS_C_0001 * scale,
    })
}
