//! Experiment configuration, trajectory JSON Lines and run manifests.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config_space::{Configuration, Point};
use crate::error::{Error, Result};
use crate::rates::{BirthTerm, DeathTerm, GrowthCertificate, RateModel, Region};
use crate::rng::{Channel, RngStreamKey};
use crate::simulate::{Caps, Event, EventKind, Status, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

/// Trajectory slot whose location stream seeds Poisson initial conditions;
/// no simulated trajectory uses it.
const INITIAL_SAMPLE_TRAJECTORY: u64 = u64::MAX;

/// A rate model as written in a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub births: Vec<BirthTerm>,
    #[serde(default)]
    pub deaths: Vec<DeathTerm>,
    /// Overrides the certificate derived from the terms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<GrowthCertificate>,
}

impl ModelSpec {
    pub fn build(&self, dim: usize, field: &str) -> Result<RateModel> {
        for (i, b) in self.births.iter().enumerate() {
            let region = match b {
                BirthTerm::Immigration { region, .. } | BirthTerm::Power { region, .. } => Some(region),
                _ => None,
            };
            if let Some(r) = region {
                Region::new(r.lo.clone(), r.hi.clone())
                    .map_err(|e| Error::config(format!("{field}.births[{i}].region"), e.to_string()))?;
                if r.dim() != dim {
                    return Err(Error::config(
                        format!("{field}.births[{i}].region"),
                        format!("region has dimension {}, config has {dim}", r.dim()),
                    ));
                }
            }
        }
        let model = RateModel::composite(self.name.clone(), self.births.clone(), self.deaths.clone())
            .map_err(|e| Error::config(field, e.to_string()))?;
        Ok(match self.certificate {
            Some(c) => model.with_certificate(Some(c)),
            None => model,
        })
    }
}

/// Initial condition: explicit points or a Poisson sample in a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Points { points: Vec<Vec<f64>> },
    Poisson { intensity: f64, region: Region },
}

impl InitialSpec {
    /// Builds the configuration. A Poisson sample is drawn from a stream
    /// derived from `master_seed`, so it is reproducible.
    pub fn build(&self, dim: usize, master_seed: u64, field: &str) -> Result<Configuration> {
        let points = match self {
            InitialSpec::Points { points } => points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if p.len() != dim {
                        return Err(Error::config(
                            format!("{field}.points[{i}]"),
                            format!("point has dimension {}, config has {dim}", p.len()),
                        ));
                    }
                    Point::new(p.clone()).map_err(|e| Error::config(format!("{field}.points[{i}]"), e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?,
            InitialSpec::Poisson { intensity, region } => {
                Region::new(region.lo.clone(), region.hi.clone())
                    .map_err(|e| Error::config(format!("{field}.region"), e.to_string()))?;
                if region.dim() != dim {
                    return Err(Error::config(format!("{field}.region"), format!("region dimension must be {dim}")));
                }
                if !(*intensity >= 0.0 && intensity.is_finite()) {
                    return Err(Error::config(format!("{field}.intensity"), "must be finite and >= 0"));
                }
                let mut rng = RngStreamKey::new(master_seed)
                    .with_trajectory(INITIAL_SAMPLE_TRAJECTORY)
                    .stream(Channel::Location, 0);
                let mean = intensity * region.volume();
                let n = if mean > 0.0 {
                    let pois = Poisson::new(mean).map_err(|e| Error::config(format!("{field}.intensity"), e.to_string()))?;
                    pois.sample(&mut rng) as usize
                } else {
                    0
                };
                (0..n).map(|_| Point::new(region.sample(&mut rng))).collect::<Result<Vec<_>>>()?
            }
        };
        Configuration::from_points(dim, points).map_err(|e| Error::config(field, e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsSpec {
    #[serde(default = "default_population")]
    pub max_population: usize,
    #[serde(default = "default_events")]
    pub max_events: u64,
}

fn default_population() -> usize {
    Caps::default().max_population
}

fn default_events() -> u64 {
    Caps::default().max_events
}

impl Default for CapsSpec {
    fn default() -> Self {
        CapsSpec {
            max_population: default_population(),
            max_events: default_events(),
        }
    }
}

impl From<CapsSpec> for Caps {
    fn from(c: CapsSpec) -> Caps {
        Caps {
            max_population: c.max_population,
            max_events: c.max_events,
        }
    }
}

/// Command-specific settings.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Upper model for `couple`; `model` is the lower one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_model: Option<ModelSpec>,
    /// Upper initial condition for `couple`; defaults to `initial`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_initial: Option<InitialSpec>,
    /// Random nested pairs tried by the premise check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_trials: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dimension: usize,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub horizon: f64,
    #[serde(default)]
    pub caps: CapsSpec,
    pub n_traj: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub options: Options,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or the config embedded in a run manifest (after
    /// checking its hash).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::config("<config>", e.to_string()))?;
        if let (Some(inner), Some(hash)) = (value.get("config"), value.get("config_sha256")) {
            let cfg: ExperimentConfig =
                serde_json::from_value(inner.clone()).map_err(|e| Error::config("config", e.to_string()))?;
            cfg.validate()?;
            if Some(cfg.sha256().as_str()) != hash.as_str() {
                return Err(Error::config("config_sha256", "embedded config does not match its hash"));
            }
            return Ok(cfg);
        }
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.dimension == 0 {
            return Err(Error::config("dimension", "must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive and finite"));
        }
        if self.n_traj == 0 {
            return Err(Error::config("n_traj", "must be at least 1"));
        }
        self.model.build(self.dimension, "model")?;
        let initial = self.initial.build(self.dimension, self.master_seed, "initial")?;
        if self.caps.max_population <= initial.len() {
            return Err(Error::config("caps.max_population", "must exceed the initial population"));
        }
        if let Some(m) = &self.options.upper_model {
            m.build(self.dimension, "options.upper_model")?;
        }
        if let Some(i) = &self.options.upper_initial {
            i.build(self.dimension, self.master_seed, "options.upper_initial")?;
        }
        Ok(())
    }

    pub fn rate_model(&self) -> Result<RateModel> {
        self.model.build(self.dimension, "model")
    }

    pub fn initial_configuration(&self) -> Result<Configuration> {
        self.initial.build(self.dimension, self.master_seed, "initial")
    }

    pub fn caps(&self) -> Caps {
        self.caps.into()
    }

    /// Lower and upper models and initial states for `couple`. The lower
    /// initial particles take the indices of the upper particles at the same
    /// positions.
    pub fn coupled_setup(&self) -> Result<(RateModel, RateModel, Configuration, Configuration)> {
        let upper_spec = self
            .options
            .upper_model
            .as_ref()
            .ok_or_else(|| Error::config("options.upper_model", "required by couple"))?;
        let m1 = self.rate_model()?;
        let m2 = upper_spec.build(self.dimension, "options.upper_model")?;
        let lower_free = self.initial_configuration()?;
        let upper = match &self.options.upper_initial {
            Some(spec) => spec.build(self.dimension, self.master_seed, "options.upper_initial")?,
            None => lower_free.clone(),
        };
        let labelled = lower_free
            .positions()
            .map(|x| {
                upper
                    .index_at(x)
                    .map(|i| (i, x.clone()))
                    .ok_or_else(|| Error::config("initial", format!("point {:?} is not in the upper initial state", x.coords())))
            })
            .collect::<Result<Vec<_>>>()?;
        let lower = Configuration::with_indices(self.dimension, labelled)?;
        Ok((m1, m2, lower, upper))
    }
}

#[derive(Serialize, Deserialize)]
struct ParticleRecord {
    id: i64,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    dimension: usize,
    trajectory: u64,
    master_seed: u64,
    horizon: f64,
    initial: Vec<ParticleRecord>,
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    t: f64,
    kind: EventKind,
    id: i64,
    x: Vec<f64>,
}

/// Writes a header line, one line per event, and a final status line.
pub fn write_trajectory_jsonl<W: Write>(traj: &Trajectory, out: &mut W) -> Result<()> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        dimension: traj.initial.dim(),
        trajectory: traj.seed_key.trajectory,
        master_seed: traj.seed_key.master_seed,
        horizon: traj.horizon,
        initial: traj
            .initial
            .iter()
            .map(|p| ParticleRecord {
                id: p.index,
                x: p.position.coords().to_vec(),
            })
            .collect(),
    };
    write_line(out, &header)?;
    for e in &traj.events {
        write_line(
            out,
            &EventRecord {
                t: e.time,
                kind: e.kind,
                id: e.particle_index,
                x: e.position.coords().to_vec(),
            },
        )?;
    }
    write_line(out, &traj.status)
}

pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Inverse of [`write_trajectory_jsonl`].
pub fn read_trajectory_jsonl<R: BufRead>(input: R) -> Result<Trajectory> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let parse_err = |line: usize, e: serde_json::Error| Error::config(format!("line {}", line + 1), e.to_string());
    let (first, rest) = lines.split_first().ok_or_else(|| Error::config("line 1", "empty trajectory file"))?;
    let (last, body) = rest.split_last().ok_or_else(|| Error::config("line 2", "missing status line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(0, e))?;
    let initial = Configuration::with_indices(
        header.dimension,
        header
            .initial
            .into_iter()
            .map(|p| Ok((p.id, Point::new(p.x)?)))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let events = body
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let r: EventRecord = serde_json::from_str(l).map_err(|e| parse_err(i + 1, e))?;
            Ok(Event {
                time: r.t,
                kind: r.kind,
                particle_index: r.id,
                position: Point::new(r.x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let status: Status = serde_json::from_str(last).map_err(|e| parse_err(lines.len() - 1, e))?;
    let traj = Trajectory {
        initial,
        events,
        horizon: header.horizon,
        status,
        seed_key: RngStreamKey::new(header.master_seed).with_trajectory(header.trajectory),
    };
    traj.validate()?;
    Ok(traj)
}

/// Per-run record written next to the outputs. Wall-clock time is kept out
/// of it so that reruns are byte-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub status_counts: BTreeMap<String, usize>,
    pub files: Vec<String>,
    pub summary: Value,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            master_seed: cfg.master_seed,
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            status_counts: BTreeMap::new(),
            files: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn count(&mut self, status: &Status) {
        *self.status_counts.entry(status.label().to_string()).or_default() += 1;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Reads a point-list file: a JSON array of coordinate arrays. Particle
/// `i` carries index `i`, in file order.
pub fn read_point_list(path: &Path) -> Result<Configuration> {
    let text = std::fs::read_to_string(path)?;
    let field = path.display().to_string();
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::config(&field, e.to_string()))?;
    let dim = match raw.first() {
        Some(p) => p.len(),
        None => return Err(Error::config(&field, "empty point list has no dimension")),
    };
    let points = raw
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            Ok((i as i64, Point::new(p)?))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::config(&field, e.to_string()))?;
    Configuration::with_indices(dim, points).map_err(|e| Error::config(&field, e.to_string()))
}
