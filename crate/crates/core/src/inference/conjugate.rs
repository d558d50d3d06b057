//! Exact posterior for a Normal mean with known unit variance.

use super::{FaultMode, ParamDiagnostics, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelFamily, ModelSpec, ParamId, PriorDist};
use crate::rngdist::SeedStream;

/// (mean, sd) of θ | y for a Normal(m0, s0²) prior.
fn posterior_moments(m0: f64, s0: f64, ys: &[f64]) -> (f64, f64) {
    let prec = 1.0 / (s0 * s0) + ys.len() as f64;
    let mean = (m0 / (s0 * s0) + ys.iter().sum::<f64>()) / prec;
    (mean, prec.sqrt().recip())
}

/// `s` independent posterior draws of θ. `HalvedPosteriorSd` shrinks the
/// spread to demonstrate a miscalibrated sampler.
pub fn sample_posterior_conjugate(
    spec: &ModelSpec,
    data: &Dataset,
    s: usize,
    fault: FaultMode,
    stream: &mut SeedStream,
) -> Result<PosteriorMatrix> {
    if spec.family != ModelFamily::ToyNormalConjugate {
        return Err(Error::precondition("the conjugate sampler needs the Normal toy family"));
    }
    if s == 0 {
        return Err(Error::precondition("need at least one posterior draw"));
    }
    let ys = data.ys()?;
    let draws: Vec<Vec<f64>> = match *spec.prior(ParamId::Theta) {
        PriorDist::Normal { mean, sd } => {
            let (m, mut sd) = posterior_moments(mean, sd, &ys);
            if fault == FaultMode::HalvedPosteriorSd {
                sd *= 0.5;
            }
            (0..s).map(|_| vec![m + sd * stream.std_normal()]).collect()
        }
        PriorDist::Constant { value } => vec![vec![value]; s],
        ref other => return Err(Error::Config(format!("conjugate sampler needs a Normal prior, got {other:?}"))),
    };
    let mut pm = PosteriorMatrix::new(vec![ParamId::Theta], draws, vec![0; s], (0..s).collect())?;
    pm.diagnostics = vec![ParamDiagnostics {
        param: ParamId::Theta.to_string(),
        ess: Some(s as f64),
        split_rhat: Some(1.0),
        acceptance_rate: None,
    }];
    Ok(pm)
}
