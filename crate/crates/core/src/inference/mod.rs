//! Posterior samplers and their diagnostics.

mod conjugate;
mod cs1;
mod cs2;
mod diagnostics;
mod mcmc;
mod rejection;
mod toy;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use conjugate::sample_posterior_conjugate;
pub use cs1::sample_posterior_cs1;
pub use cs2::{gibbs_linear_conditional, sample_posterior_cs2, LinearConditional};
pub use diagnostics::{chain_diagnostics, diagnostics, ChainSummary};
pub use rejection::{naive_rejection_posterior, RejectionOutcome, MAX_REJECTION_OBSERVATIONS};
pub use toy::sample_posterior_toy_mcmc;

use crate::error::{Error, Result};
use crate::models::{Dataset, ModelFamily, ModelSpec, ParamId, ParameterDraw};
use crate::rngdist::SeedStream;
use crate::smooth::SmoothReparam;

/// Deliberate sampler defects, used to show that the calibration checks
/// catch a broken fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    None,
    /// After warmup, random-walk proposals use half the adapted sd and are
    /// centred half a step above the current value, with no Hastings
    /// correction for the drift.
    AsymmetricProposal,
    /// Exact samplers return draws with half the posterior sd.
    HalvedPosteriorSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    /// Initial post-warmup sweeps per chain; doubled while the ESS gate fails.
    pub post_warmup: usize,
    pub target_s: usize,
    pub rw_target_acceptance: f64,
    pub ess_floor_fraction: f64,
    /// Maximum number of sampling rounds (the first plus doublings).
    pub max_attempts: usize,
    /// Use the exact conjugate sampler for the Normal toy model.
    pub toy_exact: bool,
    pub fault: FaultMode,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            warmup: 5000,
            post_warmup: 1000,
            target_s: 99,
            rw_target_acceptance: 0.44,
            ess_floor_fraction: 0.8,
            max_attempts: 4,
            toy_exact: true,
            fault: FaultMode::None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_s < 10 {
            return Err(Error::Config(format!("target_S must be >= 10, got {}", self.target_s)));
        }
        if !(self.rw_target_acceptance > 0.0 && self.rw_target_acceptance < 1.0) {
            return Err(Error::Config("rw_target_acceptance must lie in (0,1)".into()));
        }
        if self.chains == 0 || self.post_warmup == 0 || self.max_attempts == 0 {
            return Err(Error::Config("chains, post_warmup and max_attempts must be >= 1".into()));
        }
        if self.chains * self.post_warmup < self.target_s {
            return Err(Error::Config("chains × post_warmup must be at least target_S".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub param: String,
    /// `None` when the column is constant.
    pub ess: Option<f64>,
    pub split_rhat: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

/// S posterior draws of p parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub schema: Vec<ParamId>,
    pub draws: Vec<Vec<f64>>,
    /// Source chain of each row.
    pub chain: Vec<usize>,
    /// Post-warmup iteration of each row within its chain.
    pub iteration: Vec<usize>,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub thinning: usize,
}

impl PosteriorMatrix {
    pub fn new(schema: Vec<ParamId>, draws: Vec<Vec<f64>>, chain: Vec<usize>, iteration: Vec<usize>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::precondition("posterior matrix needs at least one draw"));
        }
        for row in &draws {
            if row.len() != schema.len() {
                return Err(Error::precondition("posterior row length differs from schema"));
            }
            for (id, v) in schema.iter().zip(row) {
                if !v.is_finite() || (id.is_scale() && *v <= 0.0) {
                    return Err(Error::precondition(format!("invalid posterior value {v} for {id}")));
                }
            }
        }
        if chain.len() != draws.len() || iteration.len() != draws.len() {
            return Err(Error::precondition("chain/iteration labels must match draw count"));
        }
        Ok(PosteriorMatrix { schema, draws, chain, iteration, diagnostics: Vec::new(), thinning: 1 })
    }

    pub fn s(&self) -> usize {
        self.draws.len()
    }

    pub fn column(&self, id: ParamId) -> Option<Vec<f64>> {
        let j = self.schema.iter().position(|p| *p == id)?;
        Some(self.draws.iter().map(|r| r[j]).collect())
    }

    pub fn draw(&self, s: usize) -> ParameterDraw {
        ParameterDraw::from_pairs(self.schema.iter().copied().zip(self.draws[s].iter().copied()))
    }

    /// CSV with columns `chain, iteration`, then the schema.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.schema.iter().map(|p| p.to_string()));
        out.write_record(&header)?;
        for ((row, c), it) in self.draws.iter().zip(&self.chain).zip(&self.iteration) {
            let mut rec = vec![c.to_string(), it.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Dispatches to the sampler for `spec.family`.
pub fn sample_posterior(
    spec: &ModelSpec,
    data: &Dataset,
    basis: Option<&SmoothReparam>,
    cfg: &McmcConfig,
    stream: &mut SeedStream,
) -> Result<PosteriorMatrix> {
    match spec.family {
        ModelFamily::Cs1MultilevelLoglink => sample_posterior_cs1(data, spec, cfg, stream),
        ModelFamily::Cs2SmoothJoint => {
            let basis = basis.ok_or_else(|| Error::precondition("CS2 sampling needs the smooth basis"))?;
            sample_posterior_cs2(data, spec, basis, cfg, stream)
        }
        ModelFamily::ToyNormalConjugate if cfg.toy_exact => {
            sample_posterior_conjugate(spec, data, cfg.target_s, cfg.fault, stream)
        }
        ModelFamily::ToyNormalConjugate => sample_posterior_toy_mcmc(spec, data, cfg, stream),
        ModelFamily::ToyBernoulli => Err(Error::precondition(
            "the Bernoulli toy model only has the naive rejection sampler",
        )),
    }
}
