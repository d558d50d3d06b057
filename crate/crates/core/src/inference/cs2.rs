//! Metropolis-within-Gibbs for the joint Beta/Beta/Gaussian smooth model.
//!
//! Given σ_y and σ_s the linear coefficients `(β0_y, β_s1, β_s2, b)` have a
//! Gaussian full conditional, drawn exactly from cached `XᵀX` and `Xᵀy`.
//! The scales and the two Beta covariate models are updated by random walk;
//! the Beta likelihoods only need `Σ log x` and `Σ log(1−x)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use super::mcmc::{log_scale_prior, run_chains, Adapter, ChainModel, Sweep};
use super::{McmcConfig, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::models::{logistic, Dataset, ModelFamily, ModelSpec, ParamId, PriorDist};
use crate::rngdist::SeedStream;
use crate::smooth::{design_matrix, SmoothReparam};

const C_SIGMA_Y: usize = 0;
const C_SIGMA_S: usize = 1;
const C_BETA0_X: usize = 2;
const C_PHI_X: usize = 3;
const C_BETA0_Z: usize = 4;
const C_PHI_Z: usize = 5;

/// Gaussian full conditional of linear coefficients.
pub struct LinearConditional {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl LinearConditional {
    pub fn precision(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    pub fn draw(&self, stream: &mut SeedStream) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| stream.std_normal());
        let dev = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + dev
    }
}

/// Conditional of `θ` for `y ~ N(Xθ, σ_y²)` and independent Normal priors
/// with the given means and precisions.
pub fn gibbs_linear_conditional(
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    sigma_y: f64,
    prior_mean: &[f64],
    prior_precision: &[f64],
) -> Result<LinearConditional> {
    let p = xty.len();
    if xtx.nrows() != p || xtx.ncols() != p || prior_mean.len() != p || prior_precision.len() != p {
        return Err(Error::precondition("linear conditional dimensions disagree"));
    }
    let inv_var = 1.0 / (sigma_y * sigma_y);
    let mut prec = xtx * inv_var;
    let mut rhs = xty * inv_var;
    for j in 0..p {
        prec[(j, j)] += prior_precision[j];
        rhs[j] += prior_precision[j] * prior_mean[j];
    }
    let chol = Cholesky::new(prec).ok_or_else(|| {
        Error::Conditioning(format!("conditional precision of the {p} linear coefficients is not positive definite"))
    })?;
    let mean = chol.solve(&rhs);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("non-finite conditional mean".into()));
    }
    Ok(LinearConditional { mean, chol })
}

/// Sufficient statistics of a Beta sample.
#[derive(Clone, Copy)]
struct BetaStats {
    n: f64,
    sum_log: f64,
    sum_log1m: f64,
}

impl BetaStats {
    fn new(v: &[f64]) -> Result<Self> {
        if v.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(Error::precondition("Beta-distributed covariates must lie in (0,1)"));
        }
        Ok(BetaStats {
            n: v.len() as f64,
            sum_log: v.iter().map(|x| x.ln()).sum(),
            sum_log1m: v.iter().map(|x| (-x).ln_1p()).sum(),
        })
    }

    fn log_lik(&self, beta0: f64, phi: f64) -> f64 {
        let mu = logistic(beta0);
        let (a, b) = (mu * phi, (1.0 - mu) * phi);
        self.n * (ln_gamma(phi) - ln_gamma(a) - ln_gamma(b)) + (a - 1.0) * self.sum_log + (b - 1.0) * self.sum_log1m
    }
}

struct Cs2Model<'a> {
    spec: &'a ModelSpec,
    l: usize,
    n: f64,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    x_stats: BetaStats,
    z_stats: BetaStats,
    /// Prior means and precisions of `β0_y, β_s1, β_s2`.
    fixed_mean: [f64; 3],
    fixed_prec: [f64; 3],
}

#[derive(Clone)]
struct Cs2State {
    theta: DVector<f64>,
    sigma_y: f64,
    sigma_s: f64,
    beta0_x: f64,
    phi_x: f64,
    beta0_z: f64,
    phi_z: f64,
}

impl Cs2Model<'_> {
    fn rss(&self, theta: &DVector<f64>) -> f64 {
        (self.yty - 2.0 * theta.dot(&self.xty) + (&self.xtx * theta).dot(theta)).max(0.0)
    }

    fn prior(&self, id: ParamId) -> &PriorDist {
        self.spec.prior(id)
    }

    fn is_fixed(&self, id: ParamId) -> bool {
        matches!(self.prior(id), PriorDist::Constant { .. })
    }

    fn update_beta_model(
        &self,
        stats: &BetaStats,
        (b_id, b_coord, beta0): (ParamId, usize, &mut f64),
        (p_id, p_coord, phi): (ParamId, usize, &mut f64),
        sw: &mut Sweep<'_>,
    ) {
        if !self.is_fixed(b_id) {
            let prop = sw.propose(b_coord, *beta0);
            let p = self.prior(b_id);
            let lr = stats.log_lik(prop, *phi) - stats.log_lik(*beta0, *phi) + p.log_density(prop) - p.log_density(*beta0);
            if sw.accept(b_coord, lr) {
                *beta0 = prop;
            }
        }
        if !self.is_fixed(p_id) {
            let prop = sw.propose(p_coord, phi.ln()).exp();
            let p = self.prior(p_id);
            let lr = stats.log_lik(*beta0, prop) - stats.log_lik(*beta0, *phi) + log_scale_prior(p, prop)
                - log_scale_prior(p, *phi);
            if sw.accept(p_coord, lr) {
                *phi = prop;
            }
        }
    }
}

impl ChainModel for Cs2Model<'_> {
    type State = Cs2State;

    fn schema(&self) -> Vec<ParamId> {
        self.spec.schema()
    }

    fn initial_steps(&self) -> Vec<f64> {
        vec![0.01, 0.3, 0.001, 0.01, 0.001, 0.01]
    }

    fn init(&self, stream: &mut SeedStream) -> Result<Cs2State> {
        use ParamId::*;
        let mut theta = DVector::zeros(3 + self.l);
        theta[0] = self.prior(Beta0Y).sample(stream)?;
        theta[1] = self.prior(BetaS1).sample(stream)?;
        theta[2] = self.prior(BetaS2).sample(stream)?;
        let sigma_s = self.prior(SigmaS).sample(stream)?;
        for j in 0..self.l {
            theta[3 + j] = sigma_s * stream.std_normal();
        }
        Ok(Cs2State {
            theta,
            sigma_y: self.prior(SigmaY).sample(stream)?,
            sigma_s,
            beta0_x: self.prior(Beta0X).sample(stream)?,
            phi_x: self.prior(PhiX).sample(stream)?,
            beta0_z: self.prior(Beta0Z).sample(stream)?,
            phi_z: self.prior(PhiZ).sample(stream)?,
        })
    }

    fn sweep(&self, st: &mut Cs2State, sw: &mut Sweep<'_>) -> Result<()> {
        use ParamId::*;
        let p = 3 + self.l;
        let mut mean = vec![0.0; p];
        let mut prec = vec![1.0 / (st.sigma_s * st.sigma_s); p];
        mean[..3].copy_from_slice(&self.fixed_mean);
        prec[..3].copy_from_slice(&self.fixed_prec);
        let cond = gibbs_linear_conditional(&self.xtx, &self.xty, st.sigma_y, &mean, &prec)?;
        st.theta = cond.draw(sw.stream);
        for (j, id) in [Beta0Y, BetaS1, BetaS2].into_iter().enumerate() {
            if let PriorDist::Constant { value } = self.prior(id) {
                st.theta[j] = *value;
            }
        }

        if !self.is_fixed(SigmaY) {
            let rss = self.rss(&st.theta);
            let ll = |s: f64| -self.n * s.ln() - rss / (2.0 * s * s);
            let prop = sw.propose(C_SIGMA_Y, st.sigma_y.ln()).exp();
            let pr = self.prior(SigmaY);
            let lr = ll(prop) - ll(st.sigma_y) + log_scale_prior(pr, prop) - log_scale_prior(pr, st.sigma_y);
            if sw.accept(C_SIGMA_Y, lr) {
                st.sigma_y = prop;
            }
        }

        if !self.is_fixed(SigmaS) {
            let ss: f64 = st.theta.rows(3, self.l).iter().map(|b| b * b).sum();
            let lp = |s: f64| -(self.l as f64) * s.ln() - ss / (2.0 * s * s);
            let prop = sw.propose(C_SIGMA_S, st.sigma_s.ln()).exp();
            let pr = self.prior(SigmaS);
            let lr = lp(prop) - lp(st.sigma_s) + log_scale_prior(pr, prop) - log_scale_prior(pr, st.sigma_s);
            if sw.accept(C_SIGMA_S, lr) {
                st.sigma_s = prop;
            }
        }

        let (mut b0x, mut phx) = (st.beta0_x, st.phi_x);
        self.update_beta_model(&self.x_stats, (Beta0X, C_BETA0_X, &mut b0x), (PhiX, C_PHI_X, &mut phx), sw);
        let (mut b0z, mut phz) = (st.beta0_z, st.phi_z);
        self.update_beta_model(&self.z_stats, (Beta0Z, C_BETA0_Z, &mut b0z), (PhiZ, C_PHI_Z, &mut phz), sw);
        (st.beta0_x, st.phi_x, st.beta0_z, st.phi_z) = (b0x, phx, b0z, phz);
        Ok(())
    }

    fn output(&self, st: &Cs2State) -> Vec<f64> {
        let mut v = vec![
            st.beta0_x,
            st.phi_x,
            st.beta0_z,
            st.phi_z,
            st.theta[0],
            st.sigma_y,
            st.theta[1],
            st.theta[2],
            st.sigma_s,
        ];
        v.extend(st.theta.rows(3, self.l).iter());
        v
    }

    fn acceptance(&self, a: &Adapter) -> Vec<Option<f64>> {
        let mut v = vec![
            a.acceptance(C_BETA0_X),
            a.acceptance(C_PHI_X),
            a.acceptance(C_BETA0_Z),
            a.acceptance(C_PHI_Z),
            Some(1.0),
            a.acceptance(C_SIGMA_Y),
            Some(1.0),
            Some(1.0),
            a.acceptance(C_SIGMA_S),
        ];
        v.extend(std::iter::repeat_n(Some(1.0), self.l));
        v
    }
}

fn normal_moments(p: &PriorDist, id: ParamId) -> Result<(f64, f64)> {
    match *p {
        PriorDist::Normal { mean, sd } => Ok((mean, 1.0 / (sd * sd))),
        // Pinned exactly after the Gibbs draw.
        PriorDist::Constant { value } => Ok((value, 1e12)),
        _ => Err(Error::Config(format!("{id} needs a Normal or constant prior for the Gibbs block"))),
    }
}

/// Posterior draws for the joint smooth model, with `basis` built on `data`.
pub fn sample_posterior_cs2(
    data: &Dataset,
    spec: &ModelSpec,
    basis: &SmoothReparam,
    cfg: &McmcConfig,
    stream: &mut SeedStream,
) -> Result<PosteriorMatrix> {
    use ParamId::*;
    if spec.family != ModelFamily::Cs2SmoothJoint {
        return Err(Error::precondition("sample_posterior_cs2 needs the CS2 family"));
    }
    if basis.l != spec.penalized_dim() {
        return Err(Error::precondition(format!(
            "basis has {} penalized columns, model expects {}",
            basis.l,
            spec.penalized_dim()
        )));
    }
    let y = DVector::from_vec(data.ys()?);
    let design = design_matrix(basis, data)?;
    let n = data.len();
    let l = basis.l;
    let x = DMatrix::from_fn(n, 3 + l, |i, j| match j {
        0 => 1.0,
        1 | 2 => design.x1[(i, j - 1)],
        _ => design.x2[(i, j - 3)],
    });
    let xt = x.transpose();
    let mut fixed_mean = [0.0; 3];
    let mut fixed_prec = [0.0; 3];
    for (j, id) in [Beta0Y, BetaS1, BetaS2].into_iter().enumerate() {
        (fixed_mean[j], fixed_prec[j]) = normal_moments(spec.prior(id), id)?;
    }
    let model = Cs2Model {
        spec,
        l,
        n: n as f64,
        xtx: &xt * &x,
        xty: &xt * &y,
        yty: y.dot(&y),
        x_stats: BetaStats::new(&data.xs())?,
        z_stats: BetaStats::new(&data.zs()?)?,
        fixed_mean,
        fixed_prec,
    };
    let out = run_chains(&model, cfg, &stream.derive_named("cs2-mcmc"));
    stream.next_u64();
    out
}
