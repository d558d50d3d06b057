//! Seeded random streams and the sampling distributions used by the
//! simulation studies.
//!
//! A [`SeedStream`] is identified by `(master_seed, stream_id)`. The ChaCha
//! key is derived from both through a 64-bit mixing hash, so stream `r` of a
//! study produces the same sequence no matter which worker runs it or in
//! which order replications are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// Upper bound on rejection attempts for the positive-truncated normal.
pub const MAX_TRUNCATION_ATTEMPTS: usize = 10_000;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a textual purpose into a stream tag.
pub fn tag(purpose: &str) -> u64 {
    // FNV-1a, then mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

#[derive(Debug, Clone)]
pub struct SeedStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let base = mix64(master_seed ^ GOLDEN) ^ mix64(stream_id.rotate_left(17).wrapping_add(0xD1B5_4A32_D192_ED03));
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let word = mix64(base.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        SeedStream {
            master_seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Child stream for a sub-purpose; independent of how far `self` has
    /// been consumed.
    pub fn derive(&self, tag: u64) -> SeedStream {
        let id = mix64(self.stream_id ^ mix64(tag.wrapping_add(GOLDEN)));
        SeedStream::new(self.master_seed, id)
    }

    pub fn derive_named(&self, purpose: &str) -> SeedStream {
        self.derive(tag(purpose))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1); consumes one raw draw.
    pub fn open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; always consumes two raw draws.
    pub fn std_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub(crate) fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

pub fn sample_normal(mean: f64, sd: f64, stream: &mut SeedStream) -> Result<f64> {
    check_finite("mean", mean)?;
    check_positive("sd", sd)?;
    Ok(mean + sd * stream.std_normal())
}

/// Normal(loc, sd²) conditioned on (0, ∞), by rejection.
pub fn sample_truncated_normal_positive(loc: f64, sd: f64, stream: &mut SeedStream) -> Result<f64> {
    check_finite("loc", loc)?;
    check_positive("sd", sd)?;
    for _ in 0..MAX_TRUNCATION_ATTEMPTS {
        let v = loc + sd * stream.std_normal();
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::TruncationInfeasible {
        loc,
        sd,
        attempts: MAX_TRUNCATION_ATTEMPTS,
    })
}

/// Beta draw in mean/precision form: shapes `(mu·phi, (1−mu)·phi)`.
pub fn sample_beta_mean_precision(mu: f64, phi: f64, stream: &mut SeedStream) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::domain(format!("beta mean must lie in (0,1), got {mu}")));
    }
    check_positive("phi", phi)?;
    let dist = Beta::new(mu * phi, (1.0 - mu) * phi)
        .map_err(|e| Error::domain(format!("beta shapes: {e}")))?;
    loop {
        let v: f64 = dist.sample(stream.rng_mut());
        // Extreme shapes can round to the closed boundary.
        if v > 0.0 && v < 1.0 {
            return Ok(v);
        }
    }
}

pub fn sample_uniform(a: f64, b: f64, stream: &mut SeedStream) -> Result<f64> {
    check_finite("a", a)?;
    check_finite("b", b)?;
    if a >= b {
        return Err(Error::domain(format!("uniform needs a < b, got a={a}, b={b}")));
    }
    Ok(a + (b - a) * stream.open01())
}

/// `n` independent level ids, uniform over `1..=g`.
pub fn sample_group_assignment(n: usize, g: usize, stream: &mut SeedStream) -> Result<Vec<u32>> {
    if n == 0 || g == 0 {
        return Err(Error::domain(format!("group assignment needs N >= 1 and G >= 1, got N={n}, G={g}")));
    }
    Ok((0..n).map(|_| stream.index(g) as u32 + 1).collect())
}

pub fn sample_bernoulli(p: f64, stream: &mut SeedStream) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("bernoulli probability must be in [0,1], got {p}")));
    }
    Ok(stream.open01() < p)
}
