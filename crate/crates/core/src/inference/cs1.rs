//! Component-wise random-walk Metropolis for the multilevel log-link model.
//!
//! With `e_i = exp(β1 x_i)` and `a_g = exp(β0 + γ_g)` the residual sum of
//! squares is `Syy − 2 Σ_g a_g Sye_g + Σ_g a_g² See_g`, so updates of β0 and
//! γ cost O(G) and only β1 touches every row.

use super::mcmc::{log_scale_prior, run_chains, Adapter, ChainModel, Sweep};
use super::{McmcConfig, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelFamily, ModelSpec, ParamId, PriorDist};
use crate::rngdist::SeedStream;

// Adaptable coordinates.
const C_BETA0: usize = 0;
const C_BETA1: usize = 1;
const C_SIGMA_GAMMA: usize = 2;
const C_SIGMA: usize = 3;
const C_SHIFT: usize = 4;
const C_GAMMA: usize = 5;

struct Cs1Model<'a> {
    spec: &'a ModelSpec,
    x: Vec<f64>,
    y: Vec<f64>,
    /// Zero-based group index per row.
    group: Vec<usize>,
    syy: f64,
}

#[derive(Clone)]
struct Cs1State {
    beta0: f64,
    beta1: f64,
    gamma: Vec<f64>,
    sigma_gamma: f64,
    sigma: f64,
    sye: Vec<f64>,
    see: Vec<f64>,
}

impl Cs1Model<'_> {
    fn group_stats(&self, beta1: f64) -> (Vec<f64>, Vec<f64>) {
        let g = self.spec.g;
        let (mut sye, mut see) = (vec![0.0; g], vec![0.0; g]);
        for i in 0..self.x.len() {
            let e = (beta1 * self.x[i]).exp();
            sye[self.group[i]] += self.y[i] * e;
            see[self.group[i]] += e * e;
        }
        (sye, see)
    }

    /// (Σ a_g Sye_g, Σ a_g² See_g).
    fn moments(beta0: f64, gamma: &[f64], sye: &[f64], see: &[f64]) -> (f64, f64) {
        let (mut a1, mut a2) = (0.0, 0.0);
        for g in 0..gamma.len() {
            let a = (beta0 + gamma[g]).exp();
            a1 += a * sye[g];
            a2 += a * a * see[g];
        }
        (a1, a2)
    }

    fn rss(&self, a1: f64, a2: f64) -> f64 {
        (self.syy - 2.0 * a1 + a2).max(0.0)
    }

    fn log_lik(&self, rss: f64, sigma: f64) -> f64 {
        -(self.x.len() as f64) * sigma.ln() - rss / (2.0 * sigma * sigma)
    }

    fn prior(&self, id: ParamId) -> &PriorDist {
        self.spec.prior(id)
    }
}

fn gamma_log_prior(gamma: f64, sd: f64) -> f64 {
    -0.5 * (gamma / sd).powi(2)
}

impl ChainModel for Cs1Model<'_> {
    type State = Cs1State;

    fn schema(&self) -> Vec<ParamId> {
        self.spec.schema()
    }

    fn initial_steps(&self) -> Vec<f64> {
        let mut steps = vec![0.05, 0.02, 0.2, 0.05, 0.05];
        steps.extend(std::iter::repeat_n(0.1, self.spec.g));
        steps
    }

    fn init(&self, stream: &mut SeedStream) -> Result<Cs1State> {
        let beta0 = self.prior(ParamId::Beta0).sample(stream)?;
        let beta1 = self.prior(ParamId::Beta1).sample(stream)?;
        let sigma_gamma = self.prior(ParamId::SigmaGamma).sample(stream)?;
        let sigma = self.prior(ParamId::Sigma).sample(stream)?;
        let gamma = (0..self.spec.g).map(|_| sigma_gamma * stream.std_normal()).collect();
        let (sye, see) = self.group_stats(beta1);
        Ok(Cs1State { beta0, beta1, gamma, sigma_gamma, sigma, sye, see })
    }

    fn sweep(&self, st: &mut Cs1State, sw: &mut Sweep<'_>) -> Result<()> {
        let fixed = |id| matches!(self.prior(id), PriorDist::Constant { .. });
        let (mut a1, mut a2) = Self::moments(st.beta0, &st.gamma, &st.sye, &st.see);
        let mut rss = self.rss(a1, a2);
        let mut ll = self.log_lik(rss, st.sigma);

        // β0: a_g scales by c = exp(Δ).
        if !fixed(ParamId::Beta0) {
            let prop = sw.propose(C_BETA0, st.beta0);
            let c = (prop - st.beta0).exp();
            let (n1, n2) = (a1 * c, a2 * c * c);
            let new_rss = self.rss(n1, n2);
            let new_ll = self.log_lik(new_rss, st.sigma);
            let p = self.prior(ParamId::Beta0);
            if sw.accept(C_BETA0, new_ll - ll + p.log_density(prop) - p.log_density(st.beta0)) {
                st.beta0 = prop;
                (a1, a2, rss, ll) = (n1, n2, new_rss, new_ll);
            }
        }

        for g in 0..st.gamma.len() {
            let cur = st.gamma[g];
            let prop = sw.propose(C_GAMMA + g, cur);
            let a = (st.beta0 + cur).exp();
            let c = (prop - cur).exp();
            let n1 = a1 + a * (c - 1.0) * st.sye[g];
            let n2 = a2 + a * a * (c * c - 1.0) * st.see[g];
            let new_rss = self.rss(n1, n2);
            let new_ll = self.log_lik(new_rss, st.sigma);
            let lr = new_ll - ll + gamma_log_prior(prop, st.sigma_gamma) - gamma_log_prior(cur, st.sigma_gamma);
            if sw.accept(C_GAMMA + g, lr) {
                st.gamma[g] = prop;
                (a1, a2, rss, ll) = (n1, n2, new_rss, new_ll);
            }
        }

        // β0 + c with every γ_g − c leaves the likelihood unchanged and moves
        // along the ridge between intercept and group effects.
        if !fixed(ParamId::Beta0) {
            let c = sw.propose(C_SHIFT, 0.0);
            let p = self.prior(ParamId::Beta0);
            let mut lr = p.log_density(st.beta0 + c) - p.log_density(st.beta0);
            for g in &st.gamma {
                lr += gamma_log_prior(g - c, st.sigma_gamma) - gamma_log_prior(*g, st.sigma_gamma);
            }
            if sw.accept(C_SHIFT, lr) {
                st.beta0 += c;
                st.gamma.iter_mut().for_each(|g| *g -= c);
            }
        }

        if !fixed(ParamId::Beta1) {
            let prop = sw.propose(C_BETA1, st.beta1);
            let (sye, see) = self.group_stats(prop);
            let (n1, n2) = Self::moments(st.beta0, &st.gamma, &sye, &see);
            let new_rss = self.rss(n1, n2);
            let new_ll = self.log_lik(new_rss, st.sigma);
            let p = self.prior(ParamId::Beta1);
            if sw.accept(C_BETA1, new_ll - ll + p.log_density(prop) - p.log_density(st.beta1)) {
                st.beta1 = prop;
                st.sye = sye;
                st.see = see;
                (rss, ll) = (new_rss, new_ll);
            }
        }

        if !fixed(ParamId::SigmaGamma) {
            let prop = sw.propose(C_SIGMA_GAMMA, st.sigma_gamma.ln()).exp();
            let p = self.prior(ParamId::SigmaGamma);
            let group_lp = |sd: f64| -> f64 {
                st.gamma.iter().map(|g| gamma_log_prior(*g, sd) - sd.ln()).sum()
            };
            let lr = group_lp(prop) - group_lp(st.sigma_gamma) + log_scale_prior(p, prop)
                - log_scale_prior(p, st.sigma_gamma);
            if sw.accept(C_SIGMA_GAMMA, lr) {
                st.sigma_gamma = prop;
            }
        }

        if !fixed(ParamId::Sigma) {
            let prop = sw.propose(C_SIGMA, st.sigma.ln()).exp();
            let p = self.prior(ParamId::Sigma);
            let lr = self.log_lik(rss, prop) - ll + log_scale_prior(p, prop) - log_scale_prior(p, st.sigma);
            if sw.accept(C_SIGMA, lr) {
                st.sigma = prop;
            }
        }
        Ok(())
    }

    fn output(&self, st: &Cs1State) -> Vec<f64> {
        let mut v = vec![st.beta0, st.beta1, st.sigma_gamma, st.sigma];
        v.extend_from_slice(&st.gamma);
        v
    }

    fn acceptance(&self, a: &Adapter) -> Vec<Option<f64>> {
        let mut v = vec![a.acceptance(C_BETA0), a.acceptance(C_BETA1), a.acceptance(C_SIGMA_GAMMA), a.acceptance(C_SIGMA)];
        v.extend((0..self.spec.g).map(|g| a.acceptance(C_GAMMA + g)));
        v
    }
}

/// Posterior draws for the multilevel log-link model.
pub fn sample_posterior_cs1(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &McmcConfig,
    stream: &mut SeedStream,
) -> Result<PosteriorMatrix> {
    if spec.family != ModelFamily::Cs1MultilevelLoglink {
        return Err(Error::precondition("sample_posterior_cs1 needs the CS1 family"));
    }
    if data.is_empty() {
        return Err(Error::precondition("CS1 posterior needs at least one observation"));
    }
    let y = data.ys()?;
    let group = data
        .rows
        .iter()
        .map(|r| match r.group {
            Some(l) if l >= 1 && (l as usize) <= spec.g => Ok(l as usize - 1),
            other => Err(Error::precondition(format!("group level {other:?} outside 1..={}", spec.g))),
        })
        .collect::<Result<Vec<_>>>()?;
    let syy = y.iter().map(|v| v * v).sum();
    let model = Cs1Model { spec, x: data.xs(), y, group, syy };
    let out = run_chains(&model, cfg, &stream.derive_named("cs1-mcmc"));
    stream.next_u64();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{draw_prior, simulate_covariates_cs1, simulate_response};

    fn quick() -> McmcConfig {
        McmcConfig { warmup: 1500, post_warmup: 500, ..McmcConfig::default() }
    }

    #[test]
    fn recovers_parameters_of_a_large_dataset() {
        let spec = ModelSpec::cs1(2000, 10).unwrap();
        let mut s = SeedStream::new(11, 0);
        let truth = draw_prior(&spec, &mut s).unwrap();
        let cov = simulate_covariates_cs1(&spec, &mut s).unwrap();
        let data = simulate_response(&spec, &truth, &cov, None, &mut s).unwrap();
        let post = sample_posterior_cs1(&data, &spec, &quick(), &mut s).unwrap();
        assert_eq!(post.s(), 99);
        for id in [ParamId::Beta1, ParamId::Sigma] {
            let col = post.column(id).unwrap();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            assert!((m - truth.require(id).unwrap()).abs() < 0.06, "{id}: {m} vs {truth:?}");
        }
        for d in &post.diagnostics {
            assert!(d.split_rhat.unwrap() < 1.05, "{d:?}");
        }
    }

    #[test]
    fn constant_prior_is_held_fixed() {
        let spec = ModelSpec::cs1(200, 5)
            .unwrap()
            .with_prior(ParamId::Sigma, PriorDist::Constant { value: 1.0 })
            .unwrap();
        let mut s = SeedStream::new(12, 0);
        let truth = draw_prior(&spec, &mut s).unwrap();
        let cov = simulate_covariates_cs1(&spec, &mut s).unwrap();
        let data = simulate_response(&spec, &truth, &cov, None, &mut s).unwrap();
        let post = sample_posterior_cs1(&data, &spec, &quick(), &mut s).unwrap();
        assert!(post.column(ParamId::Sigma).unwrap().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn rejects_out_of_range_levels() {
        let spec = ModelSpec::cs1(3, 2).unwrap();
        let data = Dataset::new(
            vec![
                crate::models::Row { x: 0.1, z: None, group: Some(1), y: Some(1.0) },
                crate::models::Row { x: 0.2, z: None, group: Some(3), y: Some(1.0) },
            ],
            crate::models::StructureTag::Original,
            vec![1, 3],
        )
        .unwrap();
        let mut s = SeedStream::new(1, 0);
        assert!(sample_posterior_cs1(&data, &spec, &quick(), &mut s).is_err());
    }

    #[test]
    fn empty_data_is_refused() {
        let spec = ModelSpec::cs1(3, 2).unwrap();
        let data = Dataset::new(Vec::new(), crate::models::StructureTag::Original, vec![1, 2]).unwrap();
        let mut s = SeedStream::new(1, 0);
        assert!(matches!(sample_posterior_cs1(&data, &spec, &quick(), &mut s), Err(Error::Precondition(_))));
    }

    #[test]
    fn dogmatic_noise_prior_pins_sigma() {
        let spec = ModelSpec::cs1(200, 5)
            .unwrap()
            .with_prior(ParamId::Sigma, PriorDist::NormalPositive { loc: 1.0, sd: 1e-6 })
            .unwrap();
        let mut s = SeedStream::new(13, 0);
        let truth = draw_prior(&spec, &mut s).unwrap();
        let cov = simulate_covariates_cs1(&spec, &mut s).unwrap();
        let data = simulate_response(&spec, &truth, &cov, None, &mut s).unwrap();
        let post = sample_posterior_cs1(&data, &spec, &quick(), &mut s).unwrap();
        let c = post.column(ParamId::Sigma).unwrap();
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
        assert!(sd < 0.01 && (m - 1.0).abs() < 1e-4, "{m} {sd}");
    }
}
