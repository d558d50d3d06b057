//! Likelihood-free rejection sampling for tiny binary datasets.

use crate::error::{Error, Result};
use crate::models::{ModelFamily, ModelSpec, ParamId};
use crate::rngdist::{sample_bernoulli, SeedStream};

/// Above this many observations exact-match acceptance becomes hopeless.
pub const MAX_REJECTION_OBSERVATIONS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOutcome {
    pub accepted: Vec<f64>,
    pub attempts: usize,
}

impl RejectionOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.len() as f64 / self.attempts as f64
    }
}

/// Draws θ from the prior, simulates a full dataset and keeps θ when the
/// simulation reproduces `y` exactly.
pub fn naive_rejection_posterior(
    spec: &ModelSpec,
    y: &[bool],
    attempts: usize,
    stream: &mut SeedStream,
) -> Result<RejectionOutcome> {
    if spec.family != ModelFamily::ToyBernoulli {
        return Err(Error::precondition("naive rejection needs the Bernoulli toy family"));
    }
    if y.len() > MAX_REJECTION_OBSERVATIONS {
        return Err(Error::precondition(format!(
            "naive rejection supports at most {MAX_REJECTION_OBSERVATIONS} observations, got {}",
            y.len()
        )));
    }
    let prior = spec.prior(ParamId::Theta);
    let mut accepted = Vec::new();
    for _ in 0..attempts {
        let theta = prior.sample(stream)?;
        let mut matched = true;
        for &obs in y {
            if sample_bernoulli(theta, stream)? != obs {
                matched = false;
                break;
            }
        }
        if matched {
            accepted.push(theta);
        }
    }
    Ok(RejectionOutcome { accepted, attempts })
}
