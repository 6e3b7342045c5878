//! Counter-based random streams.
//!
//! Every draw the simulator makes is addressed by `(master_seed, trajectory,
//! channel, counter)`. The pair `(master_seed, trajectory)` selects a ChaCha8
//! key and `(channel, counter)` selects one of its 2^64 streams, so the
//! randomness consumed by event `n` never depends on how many numbers earlier
//! events used. Two runs that address the same stream see the same numbers,
//! which is what shared-noise coupling needs.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which source of randomness an event draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// Waiting time to the next jump.
    Clock,
    /// Birth-versus-death race and the choice of victim.
    Race,
    /// Birth location.
    Location,
    /// Thinning marks (coupled acceptance, envelope rejection).
    Acceptance,
}

impl Channel {
    fn code(self) -> u64 {
        match self {
            Channel::Clock => 0,
            Channel::Race => 1,
            Channel::Location => 2,
            Channel::Acceptance => 3,
        }
    }
}

const COUNTER_BITS: u32 = 56;

/// Identifies the random streams of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStreamKey {
    pub master_seed: u64,
    pub trajectory: u64,
}

impl RngStreamKey {
    pub fn new(master_seed: u64) -> Self {
        RngStreamKey {
            master_seed,
            trajectory: 0,
        }
    }

    pub fn with_trajectory(self, trajectory: u64) -> Self {
        RngStreamKey {
            trajectory,
            ..self
        }
    }

    /// A fresh generator positioned at the start of stream `(channel, counter)`.
    pub fn stream(&self, channel: Channel, counter: u64) -> ChaCha8Rng {
        assert!(counter < (1 << COUNTER_BITS), "stream counter overflow");
        let mut rng = ChaCha8Rng::from_seed(self.seed_bytes());
        rng.set_stream((channel.code() << COUNTER_BITS) | counter);
        rng
    }

    /// Generators for every channel of event number `counter`.
    pub fn event(&self, counter: u64) -> EventRng {
        EventRng {
            key: *self,
            counter,
        }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut traj_state = self.trajectory ^ 0x5851_f42d_4c95_7f2d;
        let mut state = self.master_seed ^ splitmix64(&mut traj_state);
        let mut out = [0u8; 32];
        for chunk in out.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        out
    }
}

/// Lazily opened channel streams for one event.
#[derive(Clone, Copy, Debug)]
pub struct EventRng {
    key: RngStreamKey,
    counter: u64,
}

impl EventRng {
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn channel(&self, channel: Channel) -> ChaCha8Rng {
        self.key.stream(channel, self.counter)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw from the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// `Exp(rate)` by inversion, `-ln U / rate` with `U ∈ (0, 1)`.
pub fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -open01(rng).ln() / rate
}
