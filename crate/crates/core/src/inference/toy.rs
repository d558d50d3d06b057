//! Random-walk Metropolis for the Normal toy model, used to exercise the
//! generic sampler against an exactly known posterior.

use super::mcmc::{run_chains, Adapter, ChainModel, Sweep};
use super::{McmcConfig, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelFamily, ModelSpec, ParamId};
use crate::rngdist::SeedStream;

struct ToyModel<'a> {
    spec: &'a ModelSpec,
    n: f64,
    sum_y: f64,
}

impl ToyModel<'_> {
    fn log_post(&self, theta: f64) -> f64 {
        self.spec.prior(ParamId::Theta).log_density(theta) + theta * self.sum_y - 0.5 * self.n * theta * theta
    }
}

impl ChainModel for ToyModel<'_> {
    type State = f64;

    fn schema(&self) -> Vec<ParamId> {
        vec![ParamId::Theta]
    }

    fn initial_steps(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn init(&self, stream: &mut SeedStream) -> Result<f64> {
        self.spec.prior(ParamId::Theta).sample(stream)
    }

    fn sweep(&self, theta: &mut f64, sw: &mut Sweep<'_>) -> Result<()> {
        let prop = sw.propose(0, *theta);
        if sw.accept(0, self.log_post(prop) - self.log_post(*theta)) {
            *theta = prop;
        }
        Ok(())
    }

    fn output(&self, theta: &f64) -> Vec<f64> {
        vec![*theta]
    }

    fn acceptance(&self, a: &Adapter) -> Vec<Option<f64>> {
        vec![a.acceptance(0)]
    }
}

pub fn sample_posterior_toy_mcmc(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &McmcConfig,
    stream: &mut SeedStream,
) -> Result<PosteriorMatrix> {
    if spec.family != ModelFamily::ToyNormalConjugate {
        return Err(Error::precondition("toy MCMC needs the Normal toy family"));
    }
    let ys = data.ys()?;
    let model = ToyModel { spec, n: ys.len() as f64, sum_y: ys.iter().sum() };
    let out = run_chains(&model, cfg, &stream.derive_named("toy-mcmc"));
    stream.next_u64();
    out
}
