//! Study configuration, parallel execution of replications and artifact
//! output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_band, group_by_comparison, qoi_check_outcome, sbc_outcome, PropertyChecks, QoiStudy, RankRecord,
    StudyOutcome, UniformityReport,
};
use crate::error::{Error, Result};
use crate::inference::McmcConfig;
use crate::models::{ModelSpec, ParamId, PriorDist};
use crate::qoi::{QoiLabel, WeightScheme};
use crate::rngdist::SeedStream;

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "QOI_CHECK_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Case {
    Cs1,
    Cs2,
    SbcOnly,
    Toy,
}

/// Model fitted by a parameter-wise SBC run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SbcModel {
    Cs1,
    Cs2,
    ToyNormal,
}

/// Configuration document. Omitted fields take case-dependent defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case: Option<Case>,
    pub sbc_model: Option<SbcModel>,
    #[serde(rename = "R")]
    pub r: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    pub k: Option<usize>,
    pub n_new_levels: Option<usize>,
    pub grid_resolution: Option<usize>,
    pub n_reference: Option<usize>,
    #[serde(default)]
    pub prior_overrides: BTreeMap<String, PriorDist>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    pub prior_labels: Option<Vec<String>>,
    pub posterior_labels: Option<Vec<String>>,
    pub x_fixed: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub band_draws: Option<usize>,
    pub toy_prior_mean: Option<f64>,
    pub toy_prior_sd: Option<f64>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Validated study with every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedStudy {
    pub case: Case,
    pub spec: ModelSpec,
    pub r: usize,
    pub mcmc: McmcConfig,
    /// `None` for parameter-wise SBC.
    pub qoi: Option<QoiStudy>,
    pub alpha: f64,
    pub band_draws: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
}

fn cs2_default_x() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 0.9]
}

fn parse_labels(labels: &[String]) -> Result<Vec<QoiLabel>> {
    labels.iter().map(|l| l.parse()).collect()
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills defaults and validates. `force_sbc` turns a case-study config
    /// into parameter-wise SBC of its model.
    pub fn resolve(&self, force_sbc: bool) -> Result<ResolvedStudy> {
        let case = self.case.ok_or_else(|| Error::Config("missing field 'case'".into()))?;
        let sbc_model = match (case, self.sbc_model) {
            (Case::SbcOnly, m) => Some(m.unwrap_or(SbcModel::Cs1)),
            (_, Some(_)) => return Err(Error::Config("'sbc_model' applies to SBC_ONLY only".into())),
            (Case::Cs1, None) if force_sbc => Some(SbcModel::Cs1),
            (Case::Cs2, None) if force_sbc => Some(SbcModel::Cs2),
            (Case::Toy, None) => Some(SbcModel::ToyNormal),
            _ => None,
        };
        let model = sbc_model.unwrap_or(if case == Case::Cs2 { SbcModel::Cs2 } else { SbcModel::Cs1 });
        let r = self.r.unwrap_or(match model {
            SbcModel::Cs1 => 100,
            SbcModel::Cs2 => 20,
            SbcModel::ToyNormal => 1000,
        });
        if r < 1 {
            return Err(Error::Config("R must be at least 1".into()));
        }
        let mut spec = match model {
            SbcModel::Cs1 => ModelSpec::cs1(self.n.unwrap_or(500), self.g.unwrap_or(20))?,
            SbcModel::Cs2 => ModelSpec::cs2(self.n.unwrap_or(10_000), self.k.unwrap_or(10))?,
            SbcModel::ToyNormal => ModelSpec::toy_normal(
                self.n.unwrap_or(10),
                self.toy_prior_mean.unwrap_or(0.0),
                self.toy_prior_sd.unwrap_or(1.0),
            )?,
        };
        for (name, prior) in &self.prior_overrides {
            let id: ParamId = name.parse()?;
            spec = spec.with_prior(id, *prior)?;
        }
        self.mcmc.validate()?;
        let alpha = self.alpha.unwrap_or(0.05);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
        }
        let band_draws = self.band_draws.unwrap_or(5000);
        if band_draws == 0 {
            return Err(Error::Config("band_draws must be positive".into()));
        }
        let workers = match std::env::var(WORKERS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}='{v}' is not a count")))?,
            Err(_) => self.workers.unwrap_or(1),
        };
        if workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }

        let qoi = if sbc_model.is_some() {
            if self.prior_labels.is_some() || self.posterior_labels.is_some() {
                return Err(Error::Config("QOI labels do not apply to parameter-wise SBC".into()));
            }
            None
        } else {
            let (prior_labels, posterior_labels, x_fixed) = match case {
                Case::Cs1 => {
                    let xs = self.x_fixed.clone().unwrap_or_else(|| vec![1.0]);
                    if xs.len() != 1 || !xs[0].is_finite() {
                        return Err(Error::Config("CS1 takes exactly one finite x_fixed".into()));
                    }
                    let p = self.prior_labels.as_deref().map(parse_labels).transpose()?.unwrap_or_else(QoiLabel::cs1_all);
                    let q = self
                        .posterior_labels
                        .as_deref()
                        .map(parse_labels)
                        .transpose()?
                        .unwrap_or_else(QoiLabel::cs1_all);
                    (p, q, xs[0])
                }
                Case::Cs2 => {
                    if self.x_fixed.is_some() && (self.prior_labels.is_some() || self.posterior_labels.is_some()) {
                        return Err(Error::Config("give either x_fixed or explicit CS2 labels, not both".into()));
                    }
                    let xs = self.x_fixed.clone().unwrap_or_else(cs2_default_x);
                    let p = match &self.prior_labels {
                        Some(l) => parse_labels(l)?,
                        None => xs.iter().map(|&x| QoiLabel::PredMean { x }).collect(),
                    };
                    let q = match &self.posterior_labels {
                        Some(l) => parse_labels(l)?,
                        None => xs
                            .iter()
                            .flat_map(|&x| {
                                [WeightScheme::WeightedA, WeightScheme::UnweightedB]
                                    .map(|scheme| QoiLabel::CondMean { x, scheme })
                            })
                            .collect(),
                    };
                    (p, q, f64::NAN)
                }
                Case::SbcOnly | Case::Toy => unreachable!("handled as SBC"),
            };
            let study = QoiStudy {
                spec: spec.clone(),
                r,
                mcmc: self.mcmc.clone(),
                master_seed: self.master_seed.unwrap_or(1),
                prior_labels,
                posterior_labels,
                x_fixed,
                n_new_levels: self.n_new_levels.unwrap_or(200),
                grid_resolution: self.grid_resolution.unwrap_or(50),
                n_reference: self.n_reference.unwrap_or(spec.n),
            };
            if study.n_new_levels == 0 || study.grid_resolution == 0 || study.n_reference == 0 {
                return Err(Error::Config("n_new_levels, grid_resolution and n_reference must be positive".into()));
            }
            Some(study)
        };

        Ok(ResolvedStudy {
            case,
            spec,
            r,
            mcmc: self.mcmc.clone(),
            qoi,
            alpha,
            band_draws,
            master_seed: self.master_seed.unwrap_or(1),
            workers,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("qoi-check-out")),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub prior_label: String,
    pub posterior_label: String,
    pub pass: bool,
    pub chi2_p: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: Case,
    #[serde(rename = "R")]
    pub r: usize,
    pub completed_replications: usize,
    pub master_seed: u64,
    pub cells: Vec<CellSummary>,
    pub checks: PropertyChecks,
    pub notes: Vec<String>,
    pub band_refused: Option<String>,
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn cell(&self, prior: &str, posterior: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.prior_label == prior && c.posterior_label == posterior)
    }
}

/// Result of a run: summary plus the error that stopped it, if any.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub reports: Vec<UniformityReport>,
    pub records: Vec<RankRecord>,
    pub failure: Option<Error>,
}

/// Runs the study in a pool of `workers` threads.
pub fn execute(study: &ResolvedStudy) -> Result<StudyOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(study.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| match &study.qoi {
        Some(q) => qoi_check_outcome(q),
        None => sbc_outcome(&study.spec, study.r, &study.mcmc, study.master_seed),
    }))
}

/// Uniformity reports for every comparison, sharing one band calibration
/// per replication count.
pub fn uniformity_reports(
    records: &[RankRecord],
    alpha: f64,
    band_draws: usize,
    master_seed: u64,
) -> Result<Vec<UniformityReport>> {
    let groups = group_by_comparison(records);
    let mut shapes: Vec<(usize, usize)> = groups.iter().map(|(_, v)| (v.len(), v[0].s)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let cals = shapes
        .par_iter()
        .map(|&(r, s)| {
            let mut stream = SeedStream::new(master_seed, 0).derive_named(&format!("band/{r}/{s}"));
            calibrate_band(r, s, alpha, band_draws, &mut stream).map(|c| ((r, s), c))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    groups
        .par_iter()
        .map(|((p, q), recs)| {
            let ks: Vec<usize> = recs.iter().map(|r| r.k).collect();
            UniformityReport::from_calibration(p, q, &ks, &cals[&(recs.len(), recs[0].s)])
        })
        .collect()
}

pub fn write_ranks_csv(records: &[RankRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ranks_csv(path: &Path) -> Result<Vec<RankRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// File-name-safe version of a label.
fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

pub fn plot_file_name(report: &UniformityReport) -> String {
    format!("{}__{}.svg", file_stem(&report.prior_label), file_stem(&report.posterior_label))
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG of the ECDF difference `ecdf(t) − t` inside its band.
pub fn render_ecdf_svg(report: &UniformityReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let t = &report.eval_points;
    let diff = |v: &[f64]| -> Vec<f64> { v.iter().zip(t).map(|(a, b)| a - b).collect() };
    let (curve, lo, hi) = (diff(&report.ecdf), diff(&report.band_lo), diff(&report.band_hi));
    let extent = curve.iter().chain(&lo).chain(&hi).fold(0.05f64, |m, v| m.max(v.abs())) * 1.1;
    let px = |x: f64| M + x * (W - 2.0 * M);
    let py = |y: f64| H / 2.0 - y / extent * (H / 2.0 - M);
    let points = |ys: &[f64]| -> String {
        t.iter().zip(ys).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect::<Vec<_>>().join(" ")
    };
    let band: String = {
        let upper = points(&hi);
        let lower: Vec<String> =
            t.iter().zip(&lo).rev().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        format!("{upper} {}", lower.join(" "))
    };
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r##"<polygon points="{band}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#777" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(0.0)
    );
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, points(&curve));
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="20" font-family="sans-serif" font-size="13">{} vs {}</text>"#,
        escape_xml(&report.prior_label),
        escape_xml(&report.posterior_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" font-family="sans-serif" font-size="13" text-anchor="end" fill="{}">{verdict}</text>"#,
        W - M,
        if report.pass { "darkgreen" } else { "firebrick" }
    );
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="{:.2}" font-family="sans-serif" font-size="11">R={} S={} chi2 p={:.4}</text>"#,
        H - 12.0,
        report.r,
        report.s,
        report.chi2_p
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_ecdf_plot(report: &UniformityReport, path: &Path) -> Result<()> {
    fs::write(path, render_ecdf_svg(report))?;
    Ok(())
}

fn property_notes(study: &ResolvedStudy, checks: &PropertyChecks) -> Vec<String> {
    let mut notes = Vec::new();
    if checks.rank_ties > 0 {
        notes.push(format!("{} exact ties between prior-side and posterior-side values (counted as not-less)", checks.rank_ties));
    }
    if checks.jensen_checked > 0 {
        notes.push(format!(
            "marginal exceeds conditional expectation: {} violations in {} draws with sigma_gamma > 0",
            checks.jensen_violations, checks.jensen_checked
        ));
    }
    if checks.anova_decompositions > 0 {
        notes.push(format!(
            "ANOVA over {} decompositions: max identity error {:.3e}, max weighted centering error {:.3e}",
            checks.anova_decompositions, checks.anova_max_identity_error, checks.anova_max_centering_error
        ));
    }
    if study.case == Case::Cs2 && study.qoi.is_some() {
        notes.push(
            "cond_B cells use unweighted averaging over z; failures there are an expected consequence of the \
             mismatch with the skewed covariate distribution, not a published finding"
                .into(),
        );
    }
    notes
}

/// Executes a resolved study and writes all artifacts to its output
/// directory. Uniformity failures are findings; only sampler or runtime
/// errors populate `failure`.
pub fn run_resolved(study: &ResolvedStudy) -> Result<RunOutcome> {
    let out = &study.output_dir;
    fs::create_dir_all(out.join("plots"))?;
    let outcome = execute(study)?;
    write_ranks_csv(&outcome.records, &out.join("ranks.csv"))?;

    let mut band_refused = None;
    let reports = if outcome.failure.is_some() {
        Vec::new()
    } else {
        match uniformity_reports(&outcome.records, study.alpha, study.band_draws, study.master_seed) {
            Ok(r) => r,
            Err(e @ Error::InsufficientReplications { .. }) => {
                band_refused = Some(e.to_string());
                Vec::new()
            }
            Err(e) => return Err(e),
        }
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&reports)?)?;
    for rep in &reports {
        emit_ecdf_plot(rep, &out.join("plots").join(plot_file_name(rep)))?;
    }
    let completed = {
        let mut ids: Vec<u64> = outcome.records.iter().map(|r| r.replication).collect();
        ids.dedup();
        ids.len()
    };
    let summary = RunSummary {
        case: study.case,
        r: study.r,
        completed_replications: completed,
        master_seed: study.master_seed,
        cells: reports
            .iter()
            .map(|r| CellSummary {
                prior_label: r.prior_label.clone(),
                posterior_label: r.posterior_label.clone(),
                pass: r.pass,
                chi2_p: r.chi2_p,
            })
            .collect(),
        notes: property_notes(study, &outcome.checks),
        checks: outcome.checks,
        band_refused,
        failure: outcome.failure.as_ref().map(|e| e.to_string()),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome { summary, reports, records: outcome.records, failure: outcome.failure })
}

pub fn run_study(config_path: &Path) -> Result<RunOutcome> {
    run_resolved(&StudyConfig::load(config_path)?.resolve(false)?)
}

pub fn run_self_sbc(config: &StudyConfig) -> Result<RunOutcome> {
    run_resolved(&config.resolve(true)?)
}

/// Process exit status for a finished or failed run.
pub fn exit_code(result: &Result<RunOutcome>) -> u8 {
    let err = match result {
        Ok(o) => match &o.failure {
            None => return 0,
            Some(e) => e,
        },
        Err(e) => e,
    };
    match err {
        Error::Config(_) => 2,
        e if e.is_quality_failure() => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(StudyConfig::from_json(r#"{"case":"CS1","sigma_gama":1}"#), Err(Error::Config(_))));
        assert!(StudyConfig::from_json(r#"{"case":"CS1","mcmc":{"chains":2,"warmpu":3}}"#).is_err());
    }

    #[test]
    fn cs1_defaults_give_36_cells() {
        let s = StudyConfig::from_json(r#"{"case":"CS1"}"#).unwrap().resolve(false).unwrap();
        let q = s.qoi.unwrap();
        assert_eq!((s.r, s.spec.n, s.spec.g, q.n_new_levels, q.x_fixed), (100, 500, 20, 200, 1.0));
        assert_eq!(q.comparisons().len(), 36);
    }

    #[test]
    fn cs2_defaults_pair_matching_x() {
        let s = StudyConfig::from_json(r#"{"case":"CS2"}"#).unwrap().resolve(false).unwrap();
        let q = s.qoi.unwrap();
        assert_eq!((s.r, s.spec.n, s.spec.k), (20, 10_000, 10));
        assert_eq!(q.comparisons().len(), 10);
        assert!(q.comparisons().iter().all(|(p, c)| p.x_fixed() == c.x_fixed()));
    }

    #[test]
    fn prior_override_and_bad_override() {
        let s = StudyConfig::from_json(r#"{"case":"CS1","prior_overrides":{"beta0":{"normal":{"mean":1.0,"sd":0.5}}}}"#)
            .unwrap()
            .resolve(false)
            .unwrap();
        assert_eq!(*s.spec.prior(ParamId::Beta0), PriorDist::Normal { mean: 1.0, sd: 0.5 });
        let bad = StudyConfig::from_json(r#"{"case":"CS1","prior_overrides":{"phi_x":{"constant":{"value":1.0}}}}"#)
            .unwrap()
            .resolve(false);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn svg_is_deterministic_and_annotated() {
        let rep = UniformityReport {
            prior_label: "a".into(),
            posterior_label: "c_A_G".into(),
            r: 20,
            s: 9,
            alpha: 0.05,
            gamma: 0.01,
            eval_points: vec![0.25, 0.5, 0.75],
            ecdf: vec![0.0, 0.0, 0.0],
            band_lo: vec![0.1, 0.3, 0.55],
            band_hi: vec![0.4, 0.7, 0.9],
            pass: false,
            chi2_stat: 180.0,
            chi2_p: 0.0,
        };
        let a = render_ecdf_svg(&rep);
        assert_eq!(a, render_ecdf_svg(&rep));
        assert!(a.contains(">FAIL<"));
        assert_eq!(plot_file_name(&rep), "a__c_A_G.svg");
    }
}
