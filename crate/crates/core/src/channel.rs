//! Seeded random streams and the stochastic channel primitives.
//!
//! Every random quantity in the crate is drawn from a [`StreamKey`]: a root
//! seed refined by an ordered path of `(axis, index)` steps such as
//! `trial 3 / coordinate 17 / chip 1`. The key is folded into a 256-bit
//! ChaCha8 key, so a given `(seed, path)` always reproduces the same sample
//! sequence and sibling paths give independent streams no matter which thread
//! evaluates them or in which order.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_at_least, Error, Result};

pub type Complex = num_complex::Complex64;

/// Generator handed out by [`StreamKey::rng`].
pub type StreamRng = ChaCha8Rng;

/// One level of a stream path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Trial,
    Round,
    Coordinate,
    Chip,
    Branch,
    Client,
    Antenna,
    Epoch,
    /// A named purpose (see [`Domain`]).
    Domain,
}

impl Axis {
    fn tag(self) -> u64 {
        match self {
            Axis::Trial => 1,
            Axis::Round => 2,
            Axis::Coordinate => 3,
            Axis::Chip => 4,
            Axis::Branch => 5,
            Axis::Client => 6,
            Axis::Antenna => 7,
            Axis::Epoch => 8,
            Axis::Domain => 9,
        }
    }
}

/// Purposes that separate otherwise identical paths, e.g. the channel draws
/// of a round from the minibatch order of the same round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Fading,
    Dither,
    Noise,
    Channel,
    Minibatch,
    Init,
    Partition,
    Synth,
}

impl Domain {
    fn index(self) -> u64 {
        match self {
            Domain::Fading => 1,
            Domain::Dither => 2,
            Domain::Noise => 3,
            Domain::Channel => 4,
            Domain::Minibatch => 5,
            Domain::Init => 6,
            Domain::Partition => 7,
            Domain::Synth => 8,
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const LANE_B: u64 = 0xd1b5_4a32_d192_ed03;
const LANE_C: u64 = 0x8cb9_2ba7_2f3d_8dd7;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hierarchical key for a deterministic random substream.
///
/// Keys are cheap `Copy` values; [`StreamKey::child`] appends one path step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    lanes: [u64; 2],
    depth: u32,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey {
            seed,
            lanes: [mix64(seed ^ GOLDEN), mix64(seed.wrapping_add(LANE_B))],
            depth: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of path steps below the root.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    #[must_use]
    pub fn child(&self, axis: Axis, index: u64) -> Self {
        let tag = axis.tag();
        let a = mix64(tag.wrapping_mul(GOLDEN) ^ index);
        let b = mix64(index.wrapping_mul(LANE_C).wrapping_add(tag));
        StreamKey {
            seed: self.seed,
            lanes: [
                mix64(self.lanes[0] ^ a),
                mix64(self.lanes[1].wrapping_add(LANE_B) ^ b),
            ],
            depth: self.depth + 1,
        }
    }

    #[must_use]
    pub fn domain(&self, domain: Domain) -> Self {
        self.child(Axis::Domain, domain.index())
    }

    /// Fresh generator positioned at the start of this key's stream.
    pub fn rng(&self) -> StreamRng {
        let words = [
            self.lanes[0],
            self.lanes[1],
            mix64(self.lanes[0] ^ LANE_C),
            mix64(self.lanes[1] ^ GOLDEN),
        ];
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// A 64-bit seed derived from this key, for APIs that take plain seeds.
    pub fn derive_seed(&self) -> u64 {
        mix64(self.lanes[0] ^ self.lanes[1].rotate_left(17))
    }
}

/// Circularly symmetric complex Gaussian `CN(0, var)`.
#[inline]
pub fn draw_complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex {
    if var == 0.0 {
        return Complex::new(0.0, 0.0);
    }
    let sd = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(sd * re, sd * im)
}

/// Unit-modulus phasor with uniform phase on `[0, 2π)`.
#[inline]
pub fn draw_dither<R: Rng + ?Sized>(rng: &mut R) -> Complex {
    let phi = TAU * rng.random::<f64>();
    Complex::cis(phi)
}

/// Proper fading with `E|h|^2 = mean_power` and fourth-moment ratio `kappa`.
///
/// `kappa == 2` is Rayleigh. Any other value uses a uniform phase on an
/// on/off energy law: `|h|^2 = kappa * mean_power` with probability
/// `1 / kappa`, otherwise zero. That law has exactly the requested first and
/// second energy moments for every `kappa >= 1`.
#[inline]
pub fn draw_general_fading<R: Rng + ?Sized>(rng: &mut R, mean_power: f64, kappa: f64) -> Complex {
    if kappa == 2.0 {
        return draw_complex_gaussian(rng, mean_power);
    }
    let on = rng.random::<f64>() * kappa < 1.0;
    let phase = draw_dither(rng);
    if on {
        phase * (kappa * mean_power).sqrt()
    } else {
        Complex::new(0.0, 0.0)
    }
}

/// Rayleigh fading coefficient `h ~ CN(0, mean_power)`.
pub fn sample_fading(key: &StreamKey, mean_power: f64) -> Result<Complex> {
    ensure_at_least("mean_power", mean_power, 0.0)?;
    Ok(draw_complex_gaussian(&mut key.rng(), mean_power))
}

/// Receiver noise `z ~ CN(0, noise_var)`.
pub fn sample_noise(key: &StreamKey, noise_var: f64) -> Result<Complex> {
    ensure_at_least("noise_var", noise_var, 0.0)?;
    Ok(draw_complex_gaussian(&mut key.rng(), noise_var))
}

pub fn sample_dither(key: &StreamKey) -> Complex {
    draw_dither(&mut key.rng())
}

/// Fading with a prescribed fourth-moment ratio; see [`draw_general_fading`].
pub fn sample_general_fading(key: &StreamKey, mean_power: f64, kappa: f64) -> Result<Complex> {
    ensure_at_least("mean_power", mean_power, 0.0)?;
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    Ok(draw_general_fading(&mut key.rng(), mean_power, kappa))
}
