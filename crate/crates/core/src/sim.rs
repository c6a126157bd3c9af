//! Deterministic leveled-arithmetic simulator standing in for a CKKS backend.
//!
//! A [`Ciphertext`] carries the plaintext value it encrypts, the number of
//! multiplications it can still absorb (its level) and an upper bound on the
//! accumulated approximation error. Ciphertext-ciphertext multiplication
//! consumes one level; addition never does. Plaintext multiplication consumes
//! a level only when [`SimParams::plain_mul_consumes_level`] is set, which
//! mirrors rescaling after a plaintext product.
//!
//! In exact mode (`noise_per_mul == 0`) every operation is the corresponding
//! `f64` operation, so a circuit evaluated here and the same circuit evaluated
//! on plain floats agree bit for bit. Noisy mode perturbs every rescaling
//! product with zero-mean Gaussian noise, truncated at [`NOISE_TAIL`] standard
//! deviations so that `noise_bound` is a hard bound.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Truncation point of the per-multiplication Gaussian, in standard deviations.
pub const NOISE_TAIL: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub depth_budget: u32,
    pub noise_per_mul: f64,
    pub plain_mul_consumes_level: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            depth_budget: 30,
            noise_per_mul: 0.0,
            plain_mul_consumes_level: true,
        }
    }
}

impl SimParams {
    pub fn new(
        depth_budget: u32,
        noise_per_mul: f64,
        plain_mul_consumes_level: bool,
    ) -> Result<Self> {
        let params = Self {
            depth_budget,
            noise_per_mul,
            plain_mul_consumes_level,
        };
        params.validate()?;
        Ok(params)
    }

    /// Exact-mode parameters with the given budget.
    pub fn exact(depth_budget: u32) -> Self {
        Self {
            depth_budget,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_budget < 1 {
            return Err(Error::InvalidParams(
                "depth_budget must be at least 1".into(),
            ));
        }
        if !(self.noise_per_mul >= 0.0) || !self.noise_per_mul.is_finite() {
            return Err(Error::InvalidParams(
                "noise_per_mul must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.noise_per_mul == 0.0
    }
}

/// Simulated encrypted scalar.
///
/// The carried value is deliberately not exposed; it can only be read
/// through [`decrypt`], which is counted per [`Role`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ciphertext {
    pub(crate) value: f64,
    level: u32,
    noise_bound: f64,
}

impl Ciphertext {
    pub(crate) fn from_parts(value: f64, level: u32, noise_bound: f64) -> Self {
        Self {
            value,
            level,
            noise_bound,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    /// Public encoding of a known constant at full level. Anyone holding the
    /// parameters can do this; it reveals nothing the encoder did not know.
    pub fn encode(k: f64, params: &SimParams) -> Self {
        Self::from_parts(k, params.depth_budget, 0.0)
    }

    /// Re-randomization: an encryption of the same value that is a distinct
    /// ciphertext. The simulator has no randomness to refresh, so this is the
    /// identity on all observable fields.
    pub fn rerandomize(&self) -> Self {
        *self
    }
}

/// Which party is currently executing. Decryptions are counted per role so
/// that protocol runs can prove the server path never decrypts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Unattributed = 0,
    Server = 1,
    Client = 2,
}

thread_local! {
    static ROLE: Cell<Role> = const { Cell::new(Role::Unattributed) };
    static DECRYPTS: Cell<[u64; 3]> = const { Cell::new([0; 3]) };
}

/// Restores the previous role on drop.
pub struct RoleGuard {
    previous: Role,
}

impl Drop for RoleGuard {
    fn drop(&mut self) {
        ROLE.with(|r| r.set(self.previous));
    }
}

pub fn enter_role(role: Role) -> RoleGuard {
    let previous = ROLE.with(|r| r.replace(role));
    RoleGuard { previous }
}

pub fn current_role() -> Role {
    ROLE.with(|r| r.get())
}

/// Number of decryptions performed on this thread while `role` was active.
pub fn decrypt_calls(role: Role) -> u64 {
    DECRYPTS.with(|d| d.get()[role as usize])
}

pub fn encrypt(x: f64, params: &SimParams) -> Ciphertext {
    Ciphertext::from_parts(x, params.depth_budget, 0.0)
}

pub fn decrypt(ct: &Ciphertext) -> f64 {
    let role = current_role();
    DECRYPTS.with(|d| {
        let mut counts = d.get();
        counts[role as usize] += 1;
        d.set(counts);
    });
    ct.value
}

pub fn add(a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    let value = a.value + b.value;
    let noise = a.noise_bound + b.noise_bound;
    Ciphertext::from_parts(value, a.level.min(b.level), with_slack(noise, value))
}

pub fn sub(a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    let value = a.value - b.value;
    let noise = a.noise_bound + b.noise_bound;
    Ciphertext::from_parts(value, a.level.min(b.level), with_slack(noise, value))
}

pub fn neg(a: &Ciphertext) -> Ciphertext {
    Ciphertext::from_parts(-a.value, a.level, a.noise_bound)
}

/// Adds a public constant; never consumes a level.
pub fn add_plain(a: &Ciphertext, k: f64) -> Ciphertext {
    let value = a.value + k;
    Ciphertext::from_parts(value, a.level, with_slack(a.noise_bound, value))
}

// Floating-point rounding of a perturbed value can differ from rounding of
// the exact value by a few ulps; fold that into the bound once noise exists.
fn with_slack(noise: f64, value: f64) -> f64 {
    if noise == 0.0 {
        0.0
    } else {
        noise + 4.0 * f64::EPSILON * (value.abs() + noise)
    }
}

/// Evaluates level-consuming operations. Holds the seeded noise source so
/// that noisy runs are reproducible.
#[derive(Debug, Clone)]
pub struct Evaluator {
    params: SimParams,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Evaluator {
    pub fn new(params: SimParams, seed: u64) -> Self {
        let noise = (!params.is_exact()).then(|| {
            (
                Normal::new(0.0, params.noise_per_mul).expect("validated std-dev"),
                ChaCha8Rng::seed_from_u64(seed),
            )
        });
        Self { params, noise }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    fn sample_noise(&mut self) -> (f64, f64) {
        match &mut self.noise {
            None => (0.0, 0.0),
            Some((dist, rng)) => {
                let sigma = dist.std_dev();
                let e = dist
                    .sample(rng)
                    .clamp(-NOISE_TAIL * sigma, NOISE_TAIL * sigma);
                (e, NOISE_TAIL * sigma)
            }
        }
    }

    pub fn mul(&mut self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let level = a.level.min(b.level);
        if level == 0 {
            return Err(Error::DepthExhausted { stage: None });
        }
        let (e, tail) = self.sample_noise();
        let value = a.value * b.value + e;
        let propagated = a.value.abs() * b.noise_bound
            + b.value.abs() * a.noise_bound
            + a.noise_bound * b.noise_bound;
        Ok(Ciphertext::from_parts(
            value,
            level - 1,
            with_slack(propagated + tail, value),
        ))
    }

    pub fn mul_plain(&mut self, a: &Ciphertext, k: f64) -> Result<Ciphertext> {
        let consumes = self.params.plain_mul_consumes_level;
        if consumes && a.level == 0 {
            return Err(Error::DepthExhausted { stage: None });
        }
        let (e, tail) = if consumes {
            self.sample_noise()
        } else {
            (0.0, 0.0)
        };
        let value = k * a.value + e;
        let level = if consumes { a.level - 1 } else { a.level };
        Ok(Ciphertext::from_parts(
            value,
            level,
            with_slack(k.abs() * a.noise_bound + tail, value),
        ))
    }
}
