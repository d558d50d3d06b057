//! Generative model families: priors, covariate designs, linear predictors
//! and response simulation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngdist::{
    sample_bernoulli, sample_beta_mean_precision, sample_group_assignment, sample_normal,
    sample_truncated_normal_positive, sample_uniform, SeedStream,
};
use crate::smooth::{evaluate_smooth, SmoothReparam};

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelFamily {
    Cs1MultilevelLoglink,
    Cs2SmoothJoint,
    ToyNormalConjugate,
    ToyBernoulli,
}

impl ModelFamily {
    /// Parameters carrying an explicit prior descriptor. Group coefficients
    /// and penalized smooth coefficients are hierarchical and have none.
    pub fn prior_schema(self) -> &'static [ParamId] {
        use ParamId::*;
        match self {
            ModelFamily::Cs1MultilevelLoglink => &[Beta0, Beta1, SigmaGamma, Sigma],
            ModelFamily::Cs2SmoothJoint => &[Beta0X, PhiX, Beta0Z, PhiZ, Beta0Y, SigmaY, BetaS1, BetaS2, SigmaS],
            ModelFamily::ToyNormalConjugate | ModelFamily::ToyBernoulli => &[Theta],
        }
    }
}

/// Parameter identifiers across all model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Beta0,
    Beta1,
    SigmaGamma,
    Sigma,
    Gamma(u32),
    Beta0X,
    PhiX,
    Beta0Z,
    PhiZ,
    Beta0Y,
    SigmaY,
    BetaS1,
    BetaS2,
    SigmaS,
    B(u32),
    Theta,
}

impl ParamId {
    pub fn is_scale(self) -> bool {
        matches!(
            self,
            ParamId::SigmaGamma | ParamId::Sigma | ParamId::SigmaY | ParamId::SigmaS | ParamId::PhiX | ParamId::PhiZ
        )
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ParamId::*;
        match self {
            Beta0 => f.write_str("beta0"),
            Beta1 => f.write_str("beta1"),
            SigmaGamma => f.write_str("sigma_gamma"),
            Sigma => f.write_str("sigma"),
            Gamma(l) => write!(f, "gamma[{l}]"),
            Beta0X => f.write_str("beta0_x"),
            PhiX => f.write_str("phi_x"),
            Beta0Z => f.write_str("beta0_z"),
            PhiZ => f.write_str("phi_z"),
            Beta0Y => f.write_str("beta0_y"),
            SigmaY => f.write_str("sigma_y"),
            BetaS1 => f.write_str("beta_s1"),
            BetaS2 => f.write_str("beta_s2"),
            SigmaS => f.write_str("sigma_s"),
            B(l) => write!(f, "b[{l}]"),
            Theta => f.write_str("theta"),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use ParamId::*;
        let indexed = |prefix: &str| -> Option<u32> {
            s.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok()
        };
        Ok(match s {
            "beta0" => Beta0,
            "beta1" => Beta1,
            "sigma_gamma" => SigmaGamma,
            "sigma" => Sigma,
            "beta0_x" => Beta0X,
            "phi_x" => PhiX,
            "beta0_z" => Beta0Z,
            "phi_z" => PhiZ,
            "beta0_y" => Beta0Y,
            "sigma_y" => SigmaY,
            "beta_s1" => BetaS1,
            "beta_s2" => BetaS2,
            "sigma_s" => SigmaS,
            "theta" => Theta,
            _ => {
                if let Some(l) = indexed("gamma[") {
                    Gamma(l)
                } else if let Some(l) = indexed("b[") {
                    B(l)
                } else {
                    return Err(Error::Config(format!("unknown parameter '{s}'")));
                }
            }
        })
    }
}

/// Prior descriptor: distribution name plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorDist {
    Normal { mean: f64, sd: f64 },
    /// Normal truncated to (0, ∞).
    NormalPositive { loc: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl PriorDist {
    pub fn sample(&self, stream: &mut SeedStream) -> Result<f64> {
        match *self {
            PriorDist::Normal { mean, sd } => sample_normal(mean, sd, stream),
            PriorDist::NormalPositive { loc, sd } => sample_truncated_normal_positive(loc, sd, stream),
            PriorDist::Uniform { lo, hi } => sample_uniform(lo, hi, stream),
            PriorDist::Constant { value } => Ok(value),
        }
    }

    /// Log density up to an additive constant; `-inf` outside the support.
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            PriorDist::Normal { mean, sd } => -0.5 * ((v - mean) / sd).powi(2),
            PriorDist::NormalPositive { loc, sd } => {
                if v > 0.0 {
                    -0.5 * ((v - loc) / sd).powi(2)
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorDist::Uniform { lo, hi } => {
                if v >= lo && v <= hi {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorDist::Constant { value } => {
                if v == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Rough prior scale, used to seed proposal widths.
    pub fn scale_hint(&self) -> f64 {
        match *self {
            PriorDist::Normal { sd, .. } | PriorDist::NormalPositive { sd, .. } => sd,
            PriorDist::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            PriorDist::Constant { .. } => 0.0,
        }
    }

    fn validate(&self, id: ParamId) -> Result<()> {
        let ok = match *self {
            PriorDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0 && !id.is_scale(),
            PriorDist::NormalPositive { loc, sd } => loc.is_finite() && sd.is_finite() && sd > 0.0,
            PriorDist::Uniform { lo, hi } => {
                lo.is_finite() && hi.is_finite() && lo < hi && (!id.is_scale() || lo >= 0.0)
            }
            PriorDist::Constant { value } => value.is_finite() && (!id.is_scale() || value > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior {self:?} for parameter {id}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: ModelFamily,
    priors: BTreeMap<ParamId, PriorDist>,
    /// Observation count.
    pub n: usize,
    /// Group count (CS1).
    pub g: usize,
    /// Smooth basis size (CS2).
    pub k: usize,
}

impl ModelSpec {
    /// Multilevel log-link model with the published priors.
    pub fn cs1(n: usize, g: usize) -> Result<Self> {
        use ParamId::*;
        let priors = BTreeMap::from([
            (Beta0, PriorDist::Normal { mean: 0.0, sd: 0.1 }),
            (Beta1, PriorDist::Normal { mean: 1.0, sd: 0.1 }),
            (SigmaGamma, PriorDist::NormalPositive { loc: 0.5, sd: 0.1 }),
            (Sigma, PriorDist::NormalPositive { loc: 1.0, sd: 0.1 }),
        ]);
        Self::new(ModelFamily::Cs1MultilevelLoglink, priors, n, g, 0)
    }

    /// Joint Beta/Beta/Gaussian smooth model with the published priors.
    pub fn cs2(n: usize, k: usize) -> Result<Self> {
        use ParamId::*;
        let priors = BTreeMap::from([
            (Beta0X, PriorDist::Normal { mean: 0.0, sd: 0.001 }),
            (Beta0Z, PriorDist::Normal { mean: -1.1, sd: 0.001 }),
            (Beta0Y, PriorDist::Normal { mean: 0.5, sd: 0.1 }),
            (BetaS1, PriorDist::Normal { mean: 1.0, sd: 0.1 }),
            (BetaS2, PriorDist::Normal { mean: -1.0, sd: 0.1 }),
            (SigmaS, PriorDist::NormalPositive { loc: 1.0, sd: 0.1 }),
            (PhiX, PriorDist::NormalPositive { loc: 3.0, sd: 0.001 }),
            (PhiZ, PriorDist::NormalPositive { loc: 3.0, sd: 0.001 }),
            (SigmaY, PriorDist::NormalPositive { loc: 0.1, sd: 0.01 }),
        ]);
        Self::new(ModelFamily::Cs2SmoothJoint, priors, n, 0, k)
    }

    /// Normal mean with known unit observation variance and prior Normal(m0, s0²).
    pub fn toy_normal(n: usize, m0: f64, s0: f64) -> Result<Self> {
        let priors = BTreeMap::from([(ParamId::Theta, PriorDist::Normal { mean: m0, sd: s0 })]);
        Self::new(ModelFamily::ToyNormalConjugate, priors, n, 0, 0)
    }

    /// Bernoulli probability with a Uniform(0,1) prior.
    pub fn toy_bernoulli(n: usize) -> Result<Self> {
        let priors = BTreeMap::from([(ParamId::Theta, PriorDist::Uniform { lo: 0.0, hi: 1.0 })]);
        Self::new(ModelFamily::ToyBernoulli, priors, n, 0, 0)
    }

    pub fn new(
        family: ModelFamily,
        priors: BTreeMap<ParamId, PriorDist>,
        n: usize,
        g: usize,
        k: usize,
    ) -> Result<Self> {
        let schema = family.prior_schema();
        if priors.len() != schema.len() || schema.iter().any(|id| !priors.contains_key(id)) {
            return Err(Error::Config(format!(
                "priors for {family:?} must cover exactly {:?}",
                schema.iter().map(|p| p.to_string()).collect::<Vec<_>>()
            )));
        }
        for (id, p) in &priors {
            p.validate(*id)?;
        }
        match family {
            ModelFamily::Cs1MultilevelLoglink if !(n >= g && g >= 1) => {
                return Err(Error::Config(format!("CS1 needs N >= G >= 1, got N={n}, G={g}")))
            }
            ModelFamily::Cs2SmoothJoint if k < 4 || n == 0 => {
                return Err(Error::Config(format!("CS2 needs k >= 4 and N >= 1, got k={k}, N={n}")))
            }
            ModelFamily::ToyBernoulli => {
                if let Some(PriorDist::Normal { .. } | PriorDist::NormalPositive { .. }) = priors.get(&ParamId::Theta) {
                    return Err(Error::Config("Bernoulli probability needs a prior supported in [0,1]".into()));
                }
            }
            _ => {}
        }
        Ok(ModelSpec { family, priors, n, g, k })
    }

    pub fn with_prior(mut self, id: ParamId, prior: PriorDist) -> Result<Self> {
        if !self.priors.contains_key(&id) {
            return Err(Error::Config(format!("{id} has no prior in {:?}", self.family)));
        }
        prior.validate(id)?;
        if self.family == ModelFamily::ToyBernoulli
            && matches!(prior, PriorDist::Uniform { lo, hi } if lo < 0.0 || hi > 1.0)
        {
            return Err(Error::Config("Bernoulli probability prior must stay inside [0,1]".into()));
        }
        self.priors.insert(id, prior);
        Ok(self)
    }

    pub fn prior(&self, id: ParamId) -> &PriorDist {
        &self.priors[&id]
    }

    pub fn priors(&self) -> &BTreeMap<ParamId, PriorDist> {
        &self.priors
    }

    /// Number of penalized smooth coefficients for a basis of size `k`:
    /// `k − 3` knots, less the three side constraints of the radial basis.
    pub fn penalized_dim(&self) -> usize {
        self.k.saturating_sub(3).saturating_sub(3)
    }

    /// Full parameter schema in canonical order.
    pub fn schema(&self) -> Vec<ParamId> {
        use ParamId::*;
        match self.family {
            ModelFamily::Cs1MultilevelLoglink => {
                let mut s = vec![Beta0, Beta1, SigmaGamma, Sigma];
                s.extend((1..=self.g as u32).map(Gamma));
                s
            }
            ModelFamily::Cs2SmoothJoint => {
                let mut s = vec![Beta0X, PhiX, Beta0Z, PhiZ, Beta0Y, SigmaY, BetaS1, BetaS2, SigmaS];
                s.extend((1..=self.penalized_dim() as u32).map(B));
                s
            }
            ModelFamily::ToyNormalConjugate | ModelFamily::ToyBernoulli => vec![Theta],
        }
    }
}

/// One parameter vector, optionally extended with coefficients that only
/// exist for a prediction data structure (new group levels).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterDraw {
    values: BTreeMap<ParamId, f64>,
    extension: BTreeMap<ParamId, f64>,
}

impl ParameterDraw {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (ParamId, f64)>) -> Self {
        ParameterDraw {
            values: pairs.into_iter().collect(),
            extension: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<f64> {
        self.values.get(&id).or_else(|| self.extension.get(&id)).copied()
    }

    pub fn require(&self, id: ParamId) -> Result<f64> {
        self.get(id).ok_or_else(|| Error::MissingCoefficient(id.to_string()))
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        self.values.insert(id, v);
    }

    pub fn values(&self) -> &BTreeMap<ParamId, f64> {
        &self.values
    }

    pub fn extension(&self) -> &BTreeMap<ParamId, f64> {
        &self.extension
    }

    /// Adds a grid-specific coefficient. Never shadows a core coefficient.
    pub fn extend_with(&mut self, id: ParamId, v: f64) -> Result<()> {
        if self.values.contains_key(&id) {
            return Err(Error::precondition(format!("extension key {id} collides with a core coefficient")));
        }
        self.extension.insert(id, v);
        Ok(())
    }

    pub fn clear_extension(&mut self) {
        self.extension.clear();
    }

    /// Penalized smooth coefficients `b_1..b_L` in order.
    pub fn penalized(&self) -> Vec<f64> {
        self.values
            .range(ParamId::B(0)..=ParamId::B(u32::MAX))
            .map(|(_, v)| *v)
            .collect()
    }

    /// Group coefficients present among the core values, by level.
    pub fn group_coefficients(&self) -> Vec<(u32, f64)> {
        self.values
            .range(ParamId::Gamma(0)..=ParamId::Gamma(u32::MAX))
            .filter_map(|(k, v)| match k {
                ParamId::Gamma(l) => Some((*l, *v)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StructureTag {
    Original,
    ReplicateA,
    RefgridB,
    XzGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub x: f64,
    pub z: Option<f64>,
    pub group: Option<u32>,
    pub y: Option<f64>,
}

impl Row {
    pub fn at(x: f64) -> Self {
        Row { x, z: None, group: None, y: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Row>,
    pub tag: StructureTag,
    pub level_registry: Vec<u32>,
}

impl Dataset {
    pub fn new(rows: Vec<Row>, tag: StructureTag, level_registry: Vec<u32>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if let Some(g) = r.group {
                if !level_registry.contains(&g) {
                    return Err(Error::precondition(format!("row {i} references unregistered level {g}")));
                }
            }
        }
        Ok(Dataset { rows, tag, level_registry })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.x).collect()
    }

    pub fn zs(&self) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.z.ok_or_else(|| Error::precondition(format!("row {i} has no z"))))
            .collect()
    }

    pub fn ys(&self) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.y.ok_or_else(|| Error::precondition(format!("row {i} has no response"))))
            .collect()
    }

    /// Levels that have at least one row, ascending.
    pub fn observed_levels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.rows.iter().filter_map(|r| r.group).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Writes `row_id,x,z,group,y` with a header; absent values are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row_id", "x", "z", "group", "y"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for (i, r) in self.rows.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                r.x.to_string(),
                opt(r.z),
                r.group.map(|g| g.to_string()).unwrap_or_default(),
                opt(r.y),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`Dataset::write_csv`]. The level
    /// registry is rebuilt from the observed group column.
    pub fn read_csv<R: Read>(r: R, tag: StructureTag) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["row_id", "x", "z", "group", "y"] {
            return Err(Error::precondition(format!("unexpected dataset header {header:?}")));
        }
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::precondition(format!("bad number '{s}'")))
            }
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let x = parse(&rec[1])?.ok_or_else(|| Error::precondition("x is mandatory"))?;
            let group = if rec[3].is_empty() {
                None
            } else {
                Some(rec[3].parse().map_err(|_| Error::precondition(format!("bad level '{}'", &rec[3])))?)
            };
            rows.push(Row { x, z: parse(&rec[2])?, group, y: parse(&rec[4])? });
        }
        let ds = Dataset { rows, tag, level_registry: Vec::new() };
        let levels = ds.observed_levels();
        Ok(Dataset { level_registry: levels, ..ds })
    }
}

pub fn draw_prior(spec: &ModelSpec, stream: &mut SeedStream) -> Result<ParameterDraw> {
    use ParamId::*;
    let mut draw = ParameterDraw::default();
    for &id in spec.family.prior_schema() {
        draw.set(id, spec.prior(id).sample(stream)?);
    }
    match spec.family {
        ModelFamily::Cs1MultilevelLoglink => {
            let sd = draw.require(SigmaGamma)?;
            for l in 1..=spec.g as u32 {
                draw.set(Gamma(l), sd * stream.std_normal());
            }
        }
        ModelFamily::Cs2SmoothJoint => {
            let sd = draw.require(SigmaS)?;
            for l in 1..=spec.penalized_dim() as u32 {
                draw.set(B(l), sd * stream.std_normal());
            }
        }
        _ => {}
    }
    Ok(draw)
}

pub fn simulate_covariates_cs1(spec: &ModelSpec, stream: &mut SeedStream) -> Result<Dataset> {
    if spec.family != ModelFamily::Cs1MultilevelLoglink {
        return Err(Error::precondition("simulate_covariates_cs1 needs the CS1 family"));
    }
    let groups = sample_group_assignment(spec.n, spec.g, stream)?;
    let rows = groups
        .into_iter()
        .map(|g| {
            Ok(Row {
                x: sample_uniform(0.0, 2.0, stream)?,
                z: None,
                group: Some(g),
                y: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(rows, StructureTag::Original, (1..=spec.g as u32).collect())
}

pub fn simulate_covariates_cs2(spec: &ModelSpec, params: &ParameterDraw, stream: &mut SeedStream) -> Result<Dataset> {
    if spec.family != ModelFamily::Cs2SmoothJoint {
        return Err(Error::precondition("simulate_covariates_cs2 needs the CS2 family"));
    }
    let rows = simulate_xz(spec.n, params, stream)?
        .into_iter()
        .map(|(x, z)| Row { x, z: Some(z), group: None, y: None })
        .collect();
    Dataset::new(rows, StructureTag::Original, Vec::new())
}

/// `n` independent (x, z) pairs from the covariate Beta model of `params`.
pub fn simulate_xz(n: usize, params: &ParameterDraw, stream: &mut SeedStream) -> Result<Vec<(f64, f64)>> {
    use ParamId::*;
    let mu_x = logistic(params.require(Beta0X)?);
    let mu_z = logistic(params.require(Beta0Z)?);
    let phi_x = params.require(PhiX)?;
    let phi_z = params.require(PhiZ)?;
    (0..n)
        .map(|_| {
            Ok((
                sample_beta_mean_precision(mu_x, phi_x, stream)?,
                sample_beta_mean_precision(mu_z, phi_z, stream)?,
            ))
        })
        .collect()
}

/// Toy models have no covariates; rows carry x = 0.
pub fn toy_design(n: usize) -> Dataset {
    Dataset {
        rows: vec![Row::at(0.0); n],
        tag: StructureTag::Original,
        level_registry: Vec::new(),
    }
}

/// Group coefficient for `level`, from core values or the extension.
pub fn group_coefficient(params: &ParameterDraw, level: u32) -> Result<f64> {
    params
        .get(ParamId::Gamma(level))
        .ok_or_else(|| Error::MissingCoefficient(format!("gamma[{level}]")))
}

pub fn linear_predictor(
    spec: &ModelSpec,
    params: &ParameterDraw,
    data: &Dataset,
    basis: Option<&SmoothReparam>,
) -> Result<Vec<f64>> {
    use ParamId::*;
    match spec.family {
        ModelFamily::Cs1MultilevelLoglink => {
            let b0 = params.require(Beta0)?;
            let b1 = params.require(Beta1)?;
            let mut cache: BTreeMap<u32, f64> = BTreeMap::new();
            data.rows
                .iter()
                .map(|r| {
                    let g = r.group.ok_or_else(|| Error::precondition("CS1 rows need a group level"))?;
                    let gamma = match cache.get(&g) {
                        Some(v) => *v,
                        None => {
                            let v = group_coefficient(params, g)?;
                            cache.insert(g, v);
                            v
                        }
                    };
                    Ok(b0 + b1 * r.x + gamma)
                })
                .collect()
        }
        ModelFamily::Cs2SmoothJoint => {
            let basis = basis.ok_or_else(|| Error::precondition("CS2 linear predictor needs the smooth basis"))?;
            let b0 = params.require(Beta0Y)?;
            Ok(evaluate_smooth(basis, params, data)?.into_iter().map(|f| b0 + f).collect())
        }
        ModelFamily::ToyNormalConjugate | ModelFamily::ToyBernoulli => {
            let t = params.require(Theta)?;
            Ok(vec![t; data.len()])
        }
    }
}

/// Draws one response per row of `data` from the likelihood.
pub fn simulate_response(
    spec: &ModelSpec,
    params: &ParameterDraw,
    data: &Dataset,
    basis: Option<&SmoothReparam>,
    stream: &mut SeedStream,
) -> Result<Dataset> {
    let ys = draw_responses(spec, params, data, basis, stream)?;
    let mut out = data.clone();
    for (r, y) in out.rows.iter_mut().zip(ys) {
        r.y = Some(y);
    }
    Ok(out)
}

pub(crate) fn draw_responses(
    spec: &ModelSpec,
    params: &ParameterDraw,
    data: &Dataset,
    basis: Option<&SmoothReparam>,
    stream: &mut SeedStream,
) -> Result<Vec<f64>> {
    use ParamId::*;
    let eta = linear_predictor(spec, params, data, basis)?;
    match spec.family {
        ModelFamily::Cs1MultilevelLoglink => {
            let sigma = params.require(Sigma)?;
            Ok(eta.into_iter().map(|e| e.exp() + sigma * stream.std_normal()).collect())
        }
        ModelFamily::Cs2SmoothJoint => {
            let sigma = params.require(SigmaY)?;
            Ok(eta.into_iter().map(|e| e + sigma * stream.std_normal()).collect())
        }
        ModelFamily::ToyNormalConjugate => Ok(eta.into_iter().map(|e| e + stream.std_normal()).collect()),
        ModelFamily::ToyBernoulli => eta
            .into_iter()
            .map(|p| sample_bernoulli(p, stream).map(|b| if b { 1.0 } else { 0.0 }))
            .collect(),
    }
}
