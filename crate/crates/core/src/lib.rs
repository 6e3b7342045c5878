//! Exact event-driven simulation of finite spatial birth-and-death processes
//! on R^d, with monotone coupling, explosion detection, a metric on finite
//! configurations and Monte-Carlo checks of the process's generator.

pub mod analysis;
pub mod assignment;
pub mod config_space;
pub mod coupling;
pub mod error;
pub mod io;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use config_space::{dist, Configuration, ParticleRegistry, Point};
pub use error::{Error, Result};
pub use rates::{GrowthCertificate, Kernel, RateModel, Region};
pub use rng::RngStreamKey;
pub use simulate::{simulate, Caps, Event, EventKind, Status, Trajectory};
