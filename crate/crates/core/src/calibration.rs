//! Rank statistics, simulation-based calibration of parameters and of
//! derived quantities, and uniformity tests for the resulting ranks.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::gridstruct::{build_reference_grid, build_replicate_structure, midpoints, GridSpec};
use crate::inference::{sample_posterior, McmcConfig, PosteriorMatrix};
use crate::models::{
    draw_prior, simulate_covariates_cs1, simulate_covariates_cs2, simulate_response, toy_design, Dataset,
    ModelFamily, ModelSpec, ParamId, ParameterDraw,
};
use crate::qoi::{
    anova_decompose, axis_weights, qoi_cs2_conditional_expectation, qoi_cs2_predicted_mean, qoi_version_a,
    qoi_version_b, qoi_version_c, smooth_surface, PredictionStructure, QoiLabel, WeightScheme,
};
use crate::rngdist::SeedStream;
use crate::smooth::{build_smooth, SmoothReparam};

/// Minimum replications for a uniformity band.
pub const MIN_BAND_REPLICATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub replication: u64,
    pub prior_label: String,
    pub posterior_label: String,
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
}

/// Cardinal rank and the number of exact ties encountered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rank {
    pub k: usize,
    pub ties: usize,
}

/// `k = #{s : prior < posterior_s}`. Ties count as not-less and are
/// reported.
pub fn rank_statistic(prior: f64, posterior: &[f64]) -> Result<Rank> {
    if !prior.is_finite() || posterior.iter().any(|v| !v.is_finite()) {
        return Err(Error::precondition("rank statistic needs finite values"));
    }
    let k = posterior.iter().filter(|v| prior < **v).count();
    let ties = posterior.iter().filter(|v| prior == **v).count();
    Ok(Rank { k, ties })
}

/// Ascending position of the prior value among `S + 1` values.
pub fn display_position(k: usize, s: usize) -> usize {
    s + 1 - k
}

/// Counters for properties checked while a study runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyChecks {
    pub rank_ties: usize,
    pub jensen_checked: usize,
    pub jensen_violations: usize,
    pub anova_decompositions: usize,
    pub anova_max_identity_error: f64,
    pub anova_max_centering_error: f64,
}

impl PropertyChecks {
    fn merge(&mut self, o: &PropertyChecks) {
        self.rank_ties += o.rank_ties;
        self.jensen_checked += o.jensen_checked;
        self.jensen_violations += o.jensen_violations;
        self.anova_decompositions += o.anova_decompositions;
        self.anova_max_identity_error = self.anova_max_identity_error.max(o.anova_max_identity_error);
        self.anova_max_centering_error = self.anova_max_centering_error.max(o.anova_max_centering_error);
    }
}

/// Records of all replications that completed, plus the first failure.
#[derive(Debug)]
pub struct StudyOutcome {
    pub records: Vec<RankRecord>,
    pub checks: PropertyChecks,
    pub failure: Option<Error>,
}

impl StudyOutcome {
    pub fn into_result(self) -> Result<(Vec<RankRecord>, PropertyChecks)> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok((self.records, self.checks)),
        }
    }
}

/// One simulated dataset with the prior draw that generated it.
pub struct Replication {
    pub truth: ParameterDraw,
    pub data: Dataset,
    pub basis: Option<SmoothReparam>,
}

/// Prior draw, covariates and response for replication stream `stream`.
pub fn simulate_replication(spec: &ModelSpec, stream: &SeedStream) -> Result<Replication> {
    let truth = draw_prior(spec, &mut stream.derive_named("prior"))?;
    let mut cov_stream = stream.derive_named("covariates");
    let (cov, basis) = match spec.family {
        ModelFamily::Cs1MultilevelLoglink => (simulate_covariates_cs1(spec, &mut cov_stream)?, None),
        ModelFamily::Cs2SmoothJoint => {
            let cov = simulate_covariates_cs2(spec, &truth, &mut cov_stream)?;
            let basis = build_smooth(&cov, spec.k)?;
            (cov, Some(basis))
        }
        ModelFamily::ToyNormalConjugate | ModelFamily::ToyBernoulli => (toy_design(spec.n), None),
    };
    let data = simulate_response(spec, &truth, &cov, basis.as_ref(), &mut stream.derive_named("response"))?;
    Ok(Replication { truth, data, basis })
}

fn fit(spec: &ModelSpec, rep: &Replication, cfg: &McmcConfig, stream: &SeedStream) -> Result<PosteriorMatrix> {
    sample_posterior(spec, &rep.data, rep.basis.as_ref(), cfg, &mut stream.derive_named("posterior"))
}

/// Runs `body` for replications `1..=r` in the current rayon pool and
/// collects results in replication order. Replications not yet started when
/// one fails are skipped.
fn for_each_replication<F>(r: usize, master_seed: u64, body: F) -> StudyOutcome
where
    F: Fn(&SeedStream) -> Result<(Vec<RankRecord>, PropertyChecks)> + Sync,
{
    let abort = AtomicBool::new(false);
    let results: Vec<Option<Result<(Vec<RankRecord>, PropertyChecks)>>> = (1..=r as u64)
        .into_par_iter()
        .map(|rep| {
            if abort.load(Ordering::Relaxed) {
                return None;
            }
            let out = body(&SeedStream::new(master_seed, rep))
                .map_err(|e| Error::Replication { replication: rep, source: Box::new(e) });
            if out.is_err() {
                abort.store(true, Ordering::Relaxed);
            }
            Some(out)
        })
        .collect();
    let mut outcome = StudyOutcome { records: Vec::new(), checks: PropertyChecks::default(), failure: None };
    for res in results.into_iter().flatten() {
        match res {
            Ok((recs, checks)) => {
                outcome.records.extend(recs);
                outcome.checks.merge(&checks);
            }
            Err(e) if outcome.failure.is_none() => outcome.failure = Some(e),
            Err(_) => {}
        }
    }
    outcome
}

/// Parameter-wise SBC, keeping completed replications on failure.
pub fn sbc_outcome(spec: &ModelSpec, r: usize, cfg: &McmcConfig, master_seed: u64) -> StudyOutcome {
    for_each_replication(r, master_seed, |stream| {
        let rep = simulate_replication(spec, stream)?;
        let post = fit(spec, &rep, cfg, stream)?;
        let mut checks = PropertyChecks::default();
        let records = post
            .schema
            .iter()
            .enumerate()
            .map(|(j, id)| {
                let col: Vec<f64> = post.draws.iter().map(|row| row[j]).collect();
                let rank = rank_statistic(rep.truth.require(*id)?, &col)?;
                checks.rank_ties += rank.ties;
                Ok(RankRecord {
                    replication: stream.stream_id(),
                    prior_label: id.to_string(),
                    posterior_label: id.to_string(),
                    k: rank.k,
                    s: post.s(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((records, checks))
    })
}

/// Ranks of every scalar parameter's prior draw among its posterior draws.
pub fn run_sbc(spec: &ModelSpec, r: usize, cfg: &McmcConfig, master_seed: u64) -> Result<Vec<RankRecord>> {
    sbc_outcome(spec, r, cfg, master_seed).into_result().map(|(recs, _)| recs)
}

/// A QOI-Check study: which quantities are compared, on which structures.
#[derive(Debug, Clone)]
pub struct QoiStudy {
    pub spec: ModelSpec,
    pub r: usize,
    pub mcmc: McmcConfig,
    pub master_seed: u64,
    pub prior_labels: Vec<QoiLabel>,
    pub posterior_labels: Vec<QoiLabel>,
    /// Covariate value of the multilevel-model QOIs.
    pub x_fixed: f64,
    /// Singleton levels of the reference grid.
    pub n_new_levels: usize,
    /// Points per axis of the midpoint grids.
    pub grid_resolution: usize,
    /// Rows averaged by prior-predicted smooth-model QOIs.
    pub n_reference: usize,
}

impl QoiStudy {
    /// Prior × posterior label pairs whose covariate values agree.
    pub fn comparisons(&self) -> Vec<(QoiLabel, QoiLabel)> {
        let mut out = Vec::new();
        for p in &self.prior_labels {
            for q in &self.posterior_labels {
                if p.x_fixed() == q.x_fixed() {
                    out.push((*p, *q));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.prior_labels.is_empty() || self.posterior_labels.is_empty() {
            return Err(Error::Config("a QOI study needs prior and posterior labels".into()));
        }
        for l in self.prior_labels.iter().chain(&self.posterior_labels) {
            let ok = match (self.spec.family, l) {
                (ModelFamily::Cs1MultilevelLoglink, QoiLabel::CondA | QoiLabel::MargB | QoiLabel::MeanC { .. }) => true,
                (ModelFamily::Cs2SmoothJoint, QoiLabel::PredMean { .. } | QoiLabel::CondMean { .. }) => true,
                (_, QoiLabel::Param(p)) => self.spec.schema().contains(p),
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!("label {l} does not apply to {:?}", self.spec.family)));
            }
        }
        if let Some(x) = self.prior_labels.iter().chain(&self.posterior_labels).find_map(|l| l.x_fixed()) {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::Config(format!("x_fixed {x} must lie in (0,1)")));
            }
        }
        if self.comparisons().is_empty() {
            return Err(Error::Config("no compatible prior/posterior label pairs".into()));
        }
        Ok(())
    }
}

/// Prediction structures of one replication.
struct Structures {
    replicate: Option<Dataset>,
    refgrid: Option<Dataset>,
    existing_levels: Vec<u32>,
    z_grid: Vec<f64>,
}

impl Structures {
    fn new(study: &QoiStudy, rep: &Replication) -> Result<Self> {
        let needs = |s: PredictionStructure| {
            study
                .prior_labels
                .iter()
                .chain(&study.posterior_labels)
                .any(|l| matches!(l, QoiLabel::MeanC { structure, .. } if *structure == s))
        };
        let replicate = if needs(PredictionStructure::ReplicateA) {
            Some(build_replicate_structure(&rep.data, &GridSpec::replicate(study.x_fixed))?)
        } else {
            None
        };
        let refgrid = if needs(PredictionStructure::RefgridB) {
            let g = GridSpec::reference(study.x_fixed, study.n_new_levels);
            Some(build_reference_grid(&g, study.spec.g)?)
        } else {
            None
        };
        Ok(Structures {
            replicate,
            refgrid,
            existing_levels: rep.data.observed_levels(),
            z_grid: midpoints(study.grid_resolution),
        })
    }
}

fn qoi_value(
    study: &QoiStudy,
    label: &QoiLabel,
    params: &ParameterDraw,
    rep: &Replication,
    st: &Structures,
    stream: &mut SeedStream,
) -> Result<f64> {
    match *label {
        QoiLabel::CondA => qoi_version_a(params, study.x_fixed),
        QoiLabel::MargB => qoi_version_b(params, study.x_fixed),
        QoiLabel::MeanC { structure, sampling } => {
            let grid = match structure {
                PredictionStructure::ReplicateA => st.replicate.as_ref(),
                PredictionStructure::RefgridB => st.refgrid.as_ref(),
            }
            .expect("structure built for every label that uses it");
            qoi_version_c(&study.spec, params, grid, sampling, &st.existing_levels, stream)
        }
        QoiLabel::PredMean { x } => {
            let basis = rep.basis.as_ref().ok_or_else(|| Error::precondition("smooth QOI without a basis"))?;
            qoi_cs2_predicted_mean(&study.spec, params, basis, x, study.n_reference, stream)
        }
        QoiLabel::CondMean { x, scheme } => {
            let basis = rep.basis.as_ref().ok_or_else(|| Error::precondition("smooth QOI without a basis"))?;
            qoi_cs2_conditional_expectation(params, basis, x, &st.z_grid, scheme)
        }
        QoiLabel::Param(p) => params.require(p),
    }
}

fn jensen_check(params: &ParameterDraw, x: f64, checks: &mut PropertyChecks) -> Result<()> {
    if params.require(ParamId::SigmaGamma)? > 0.0 {
        checks.jensen_checked += 1;
        if qoi_version_b(params, x)? <= qoi_version_a(params, x)? {
            checks.jensen_violations += 1;
        }
    }
    Ok(())
}

fn anova_check(params: &ParameterDraw, basis: &SmoothReparam, grid: &[f64], checks: &mut PropertyChecks) -> Result<()> {
    let f = smooth_surface(basis, params, grid, grid)?;
    for scheme in [WeightScheme::WeightedA, WeightScheme::UnweightedB] {
        let wx = axis_weights(params, ParamId::Beta0X, grid, scheme)?;
        let wz = axis_weights(params, ParamId::Beta0Z, grid, scheme)?;
        let a = anova_decompose(&f, &wx, &wz, scheme)?;
        checks.anova_decompositions += 1;
        checks.anova_max_identity_error = checks.anova_max_identity_error.max(a.identity_error(&f));
        checks.anova_max_centering_error = checks.anova_max_centering_error.max(a.centering_error());
    }
    Ok(())
}

/// General QOI-Check over all compatible prior × posterior label pairs,
/// keeping completed replications on failure.
pub fn qoi_check_outcome(study: &QoiStudy) -> StudyOutcome {
    if let Err(e) = study.validate().and_then(|_| study.mcmc.validate()) {
        return StudyOutcome { records: Vec::new(), checks: PropertyChecks::default(), failure: Some(e) };
    }
    let comparisons = study.comparisons();
    for_each_replication(study.r, study.master_seed, |stream| {
        let rep = simulate_replication(&study.spec, stream)?;
        let st = Structures::new(study, &rep)?;
        let mut checks = PropertyChecks::default();

        let prior_values = study
            .prior_labels
            .iter()
            .map(|l| qoi_value(study, l, &rep.truth, &rep, &st, &mut stream.derive_named(&format!("prior-qoi/{l}"))))
            .collect::<Result<Vec<f64>>>()?;

        let post = fit(&study.spec, &rep, &study.mcmc, stream)?;
        let draws: Vec<ParameterDraw> = (0..post.s()).map(|s| post.draw(s)).collect();
        let posterior_values = study
            .posterior_labels
            .iter()
            .map(|l| {
                let mut ls = stream.derive_named(&format!("posterior-qoi/{l}"));
                draws.iter().map(|d| qoi_value(study, l, d, &rep, &st, &mut ls)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        match study.spec.family {
            ModelFamily::Cs1MultilevelLoglink => {
                for d in std::iter::once(&rep.truth).chain(&draws) {
                    jensen_check(d, study.x_fixed, &mut checks)?;
                }
            }
            ModelFamily::Cs2SmoothJoint => {
                let basis = rep.basis.as_ref().expect("smooth model replications carry a basis");
                let grid = midpoints(study.grid_resolution);
                for d in std::iter::once(&rep.truth).chain(&draws) {
                    anova_check(d, basis, &grid, &mut checks)?;
                }
            }
            _ => {}
        }

        let mut records = Vec::with_capacity(comparisons.len());
        for (p, q) in &comparisons {
            let i = study.prior_labels.iter().position(|l| l == p).expect("label from study");
            let j = study.posterior_labels.iter().position(|l| l == q).expect("label from study");
            let rank = rank_statistic(prior_values[i], &posterior_values[j])?;
            checks.rank_ties += rank.ties;
            records.push(RankRecord {
                replication: stream.stream_id(),
                prior_label: p.to_string(),
                posterior_label: q.to_string(),
                k: rank.k,
                s: post.s(),
            });
        }
        Ok((records, checks))
    })
}

pub fn run_qoi_check(study: &QoiStudy) -> Result<(Vec<RankRecord>, PropertyChecks)> {
    qoi_check_outcome(study).into_result()
}

/// Prior side evaluated directly on prior draws, posterior side from
/// posterior predictions (or directly).
pub fn run_qoi_check_prior_derived(study: &QoiStudy) -> Result<(Vec<RankRecord>, PropertyChecks)> {
    if let Some(l) = study.prior_labels.iter().find(|l| l.is_predictive()) {
        return Err(Error::Config(format!("prior-derived check needs direct prior QOIs, got {l}")));
    }
    run_qoi_check(study)
}

/// Prior side from prior predictions, posterior side evaluated directly on
/// posterior draws.
pub fn run_qoi_check_prior_predicted(study: &QoiStudy) -> Result<(Vec<RankRecord>, PropertyChecks)> {
    if let Some(l) = study.posterior_labels.iter().find(|l| l.is_predictive()) {
        return Err(Error::Config(format!("prior-predicted check needs direct posterior QOIs, got {l}")));
    }
    run_qoi_check(study)
}

/// Simultaneous band for the ECDF of normalized ranks, calibrated for a
/// given (R, S, α).
#[derive(Debug, Clone, PartialEq)]
pub struct BandCalibration {
    pub r: usize,
    pub s: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eval_points: Vec<f64>,
    /// Envelope on the ECDF scale.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Per evaluation point: Binomial(R, p) CDF table.
struct Envelopes {
    cdfs: Vec<Vec<f64>>,
}

impl Envelopes {
    fn new(r: usize, probs: &[f64]) -> Self {
        let cdfs = probs
            .iter()
            .map(|&p| {
                if p <= 0.0 {
                    vec![1.0; r + 1]
                } else if p >= 1.0 {
                    let mut v = vec![0.0; r + 1];
                    v[r] = 1.0;
                    v
                } else {
                    let b = Binomial::new(p, r as u64).expect("p inside (0,1)");
                    (0..=r as u64).map(|c| b.cdf(c)).collect()
                }
            })
            .collect();
        Envelopes { cdfs }
    }

    /// Smallest count whose CDF reaches `q`.
    fn quantile(cdf: &[f64], q: f64) -> usize {
        cdf.partition_point(|c| *c < q).min(cdf.len() - 1)
    }

    fn bounds(&self, gamma: f64) -> (Vec<usize>, Vec<usize>) {
        self.cdfs
            .iter()
            .map(|c| (Self::quantile(c, gamma / 2.0), Self::quantile(c, 1.0 - gamma / 2.0)))
            .unzip()
    }
}

fn eval_points(r: usize) -> Vec<f64> {
    let k = r.min(100);
    (1..=k).map(|j| j as f64 / (k + 1) as f64).collect()
}

/// `#{u ≤ t_j}` for normalized ranks `u = (k+1)/(S+1)`.
fn ecdf_counts(ks: &[usize], s: usize, points: &[f64]) -> Vec<usize> {
    let mut hist = vec![0usize; s + 1];
    for &k in ks {
        hist[k.min(s)] += 1;
    }
    let mut cum = Vec::with_capacity(s + 1);
    let mut acc = 0;
    for h in &hist {
        acc += h;
        cum.push(acc);
    }
    // u ≤ t ⇔ k + 1 ≤ t(S+1) ⇔ k ≤ floor(t(S+1)) − 1.
    points
        .iter()
        .map(|t| {
            let m = (t * (s + 1) as f64).floor() as usize;
            if m == 0 {
                0
            } else {
                cum[(m - 1).min(s)]
            }
        })
        .collect()
}

/// Calibrates the pointwise level γ so that `M` simulated sets of `R`
/// uniform ranks fall entirely inside the band with probability `1 − α`.
pub fn calibrate_band(r: usize, s: usize, alpha: f64, m: usize, stream: &mut SeedStream) -> Result<BandCalibration> {
    if r < MIN_BAND_REPLICATIONS {
        return Err(Error::InsufficientReplications { needed: MIN_BAND_REPLICATIONS, got: r });
    }
    if !(alpha > 0.0 && alpha < 1.0) || m == 0 || s == 0 {
        return Err(Error::precondition("band needs 0 < alpha < 1, M >= 1 and S >= 1"));
    }
    let points = eval_points(r);
    let probs: Vec<f64> = points.iter().map(|t| (t * (s + 1) as f64).floor() / (s + 1) as f64).collect();
    let env = Envelopes::new(r, &probs);
    let sims: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let ks: Vec<usize> = (0..r).map(|_| stream.index(s + 1)).collect();
            ecdf_counts(&ks, s, &points)
        })
        .collect();
    let coverage = |gamma: f64| -> f64 {
        let (lo, hi) = env.bounds(gamma);
        let inside = sims
            .iter()
            .filter(|c| c.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h))
            .count();
        inside as f64 / m as f64
    };
    let target = 1.0 - alpha;
    let gamma = if coverage(alpha) >= target {
        alpha
    } else {
        let (mut lo, mut hi) = (0.0, alpha);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if coverage(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (lo, hi) = env.bounds(gamma);
    Ok(BandCalibration {
        r,
        s,
        alpha,
        gamma,
        eval_points: points,
        lo: lo.iter().map(|c| *c as f64 / r as f64).collect(),
        hi: hi.iter().map(|c| *c as f64 / r as f64).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub prior_label: String,
    pub posterior_label: String,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eval_points: Vec<f64>,
    pub ecdf: Vec<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    pub pass: bool,
    pub chi2_stat: f64,
    pub chi2_p: f64,
}

/// Pearson chi-square of ranks over (up to) 20 bins of `{0..S}`.
pub fn chi_square_uniformity(ks: &[usize], s: usize) -> (f64, f64) {
    let bins = 20.min(s + 1);
    let bin_of = |k: usize| k * bins / (s + 1);
    let mut width = vec![0usize; bins];
    for k in 0..=s {
        width[bin_of(k)] += 1;
    }
    let mut obs = vec![0usize; bins];
    for &k in ks {
        obs[bin_of(k.min(s))] += 1;
    }
    let r = ks.len() as f64;
    let stat: f64 = obs
        .iter()
        .zip(&width)
        .map(|(o, w)| {
            let e = r * *w as f64 / (s + 1) as f64;
            (*o as f64 - e).powi(2) / e
        })
        .sum();
    let p = if bins > 1 {
        1.0 - ChiSquared::new((bins - 1) as f64).expect("df >= 1").cdf(stat)
    } else {
        1.0
    };
    (stat, p)
}

impl UniformityReport {
    pub fn from_calibration(prior_label: &str, posterior_label: &str, ks: &[usize], cal: &BandCalibration) -> Result<Self> {
        if ks.len() != cal.r {
            return Err(Error::precondition(format!("band calibrated for R={}, got {} ranks", cal.r, ks.len())));
        }
        if ks.iter().any(|k| *k > cal.s) {
            return Err(Error::precondition("rank exceeds S"));
        }
        let counts = ecdf_counts(ks, cal.s, &cal.eval_points);
        let ecdf: Vec<f64> = counts.iter().map(|c| *c as f64 / cal.r as f64).collect();
        let pass = ecdf.iter().zip(cal.lo.iter().zip(&cal.hi)).all(|(v, (l, h))| l <= v && v <= h);
        let (chi2_stat, chi2_p) = chi_square_uniformity(ks, cal.s);
        Ok(UniformityReport {
            prior_label: prior_label.to_string(),
            posterior_label: posterior_label.to_string(),
            r: cal.r,
            s: cal.s,
            alpha: cal.alpha,
            gamma: cal.gamma,
            eval_points: cal.eval_points.clone(),
            ecdf,
            band_lo: cal.lo.clone(),
            band_hi: cal.hi.clone(),
            pass,
            chi2_stat,
            chi2_p,
        })
    }

    pub fn comparison_id(&self) -> String {
        format!("{}__{}", self.prior_label, self.posterior_label)
    }
}

/// Uniformity report for the records of one comparison.
pub fn ecdf_uniformity_band(records: &[RankRecord], alpha: f64, m: usize, stream: &mut SeedStream) -> Result<UniformityReport> {
    let first = records
        .first()
        .ok_or(Error::InsufficientReplications { needed: MIN_BAND_REPLICATIONS, got: 0 })?;
    if records.iter().any(|r| r.s != first.s) {
        return Err(Error::precondition("all rank records must share S"));
    }
    if records
        .iter()
        .any(|r| r.prior_label != first.prior_label || r.posterior_label != first.posterior_label)
    {
        return Err(Error::precondition("records span more than one comparison"));
    }
    let cal = calibrate_band(records.len(), first.s, alpha, m, stream)?;
    let ks: Vec<usize> = records.iter().map(|r| r.k).collect();
    UniformityReport::from_calibration(&first.prior_label, &first.posterior_label, &ks, &cal)
}

/// Records grouped by comparison, in order of first appearance.
pub fn group_by_comparison(records: &[RankRecord]) -> Vec<((String, String), Vec<RankRecord>)> {
    let mut groups: Vec<((String, String), Vec<RankRecord>)> = Vec::new();
    for rec in records {
        let key = (rec.prior_label.clone(), rec.posterior_label.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rec.clone()),
            None => groups.push((key, vec![rec.clone()])),
        }
    }
    groups
}

/// Posterior predictive p-value `(1/S)·#{s : T(ỹ_s, θ_s) ≥ T(y, θ_s)}`.
pub fn ppp_value<T>(t: T, y: &[f64], posterior: &PosteriorMatrix, replicates: &[Vec<f64>]) -> Result<f64>
where
    T: Fn(&[f64], &ParameterDraw) -> f64,
{
    if replicates.len() != posterior.s() {
        return Err(Error::precondition(format!(
            "{} replicates for {} posterior draws",
            replicates.len(),
            posterior.s()
        )));
    }
    let hits = replicates
        .iter()
        .enumerate()
        .filter(|(s, rep)| {
            let theta = posterior.draw(*s);
            t(rep, &theta) >= t(y, &theta)
        })
        .count();
    Ok(hits as f64 / posterior.s() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_rank_example() {
        let r = rank_statistic(0.32, &[0.1, 0.2, 0.4]).unwrap();
        assert_eq!(r.k, 1);
        assert_eq!(display_position(r.k, 3), 3);
        assert_eq!(rank_statistic(-1.0, &[0.1, 0.2, 0.4]).unwrap().k, 3);
        assert_eq!(rank_statistic(9.0, &[0.1, 0.2, 0.4]).unwrap().k, 0);
        assert!(rank_statistic(f64::NAN, &[0.1]).is_err());
        assert!(rank_statistic(0.0, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn ties_are_not_less_and_reported() {
        let r = rank_statistic(0.2, &[0.1, 0.2, 0.2, 0.4]).unwrap();
        assert_eq!(r, Rank { k: 1, ties: 2 });
    }

    #[test]
    fn ecdf_counts_follow_normalized_ranks() {
        // S = 3: u ∈ {0.25, 0.5, 0.75, 1}.
        let c = ecdf_counts(&[0, 1, 1, 3], 3, &[0.2, 0.25, 0.6, 0.99]);
        assert_eq!(c, vec![0, 1, 3, 3]);
    }

    #[test]
    fn gamma_is_below_alpha_and_band_is_ordered() {
        let mut s = SeedStream::new(1, 0);
        let cal = calibrate_band(100, 99, 0.05, 2000, &mut s).unwrap();
        assert!(cal.gamma < 0.05 && cal.gamma > 0.0);
        assert!(cal.lo.iter().zip(&cal.hi).all(|(l, h)| l <= h));
        assert_eq!(cal.eval_points.len(), 100);
    }

    #[test]
    fn all_zero_ranks_fail() {
        let recs: Vec<RankRecord> = (0..50)
            .map(|r| RankRecord { replication: r, prior_label: "a".into(), posterior_label: "b".into(), k: 0, s: 99 })
            .collect();
        let rep = ecdf_uniformity_band(&recs, 0.05, 1000, &mut SeedStream::new(2, 0)).unwrap();
        assert!(!rep.pass);
        assert!(rep.chi2_p < 1e-6);
    }

    #[test]
    fn too_few_replications_refused() {
        let recs: Vec<RankRecord> = (0..19)
            .map(|r| RankRecord { replication: r, prior_label: "a".into(), posterior_label: "a".into(), k: 5, s: 99 })
            .collect();
        assert!(matches!(
            ecdf_uniformity_band(&recs, 0.05, 100, &mut SeedStream::new(3, 0)),
            Err(Error::InsufficientReplications { needed: 20, got: 19 })
        ));
    }

    #[test]
    fn report_is_deterministic() {
        let mut src = SeedStream::new(4, 0);
        let recs: Vec<RankRecord> = (0..60)
            .map(|r| RankRecord {
                replication: r,
                prior_label: "a".into(),
                posterior_label: "a".into(),
                k: src.index(100),
                s: 99,
            })
            .collect();
        let a = ecdf_uniformity_band(&recs, 0.05, 500, &mut SeedStream::new(5, 0)).unwrap();
        let b = ecdf_uniformity_band(&recs, 0.05, 500, &mut SeedStream::new(5, 0)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn chi_square_of_exactly_flat_ranks_is_zero() {
        let ks: Vec<usize> = (0..100).collect();
        let (stat, p) = chi_square_uniformity(&ks, 99);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ppp_constant_statistic_is_one() {
        let pm = PosteriorMatrix::new(vec![ParamId::Theta], vec![vec![0.0]; 5], vec![0; 5], (0..5).collect()).unwrap();
        let reps = vec![vec![1.0]; 5];
        assert_eq!(ppp_value(|_, _| 3.0, &[0.0], &pm, &reps).unwrap(), 1.0);
        assert!(ppp_value(|_, _| 3.0, &[0.0], &pm, &reps[..4]).is_err());
        let one = PosteriorMatrix::new(vec![ParamId::Theta], vec![vec![0.0]], vec![0], vec![0]).unwrap();
        let p = ppp_value(|y, _| y[0], &[0.5], &one, &[vec![0.2]]).unwrap();
        assert!(p == 0.0 || p == 1.0);
    }
}
