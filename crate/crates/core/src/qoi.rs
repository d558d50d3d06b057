//! Quantities of interest: conditional and marginal expectations of the
//! multilevel model, prediction means on prediction structures, and the
//! weighted functional ANOVA decomposition of the smooth surface.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};

use crate::error::{Error, Result};
use crate::gridstruct::{extend_parameters_gaussian, extend_parameters_uncertainty};
use crate::models::{draw_responses, logistic, Dataset, ModelSpec, ParamId, ParameterDraw, Row, StructureTag};
use crate::rngdist::{sample_beta_mean_precision, SeedStream};
use crate::smooth::{design_matrix, smooth_coefficients, SmoothReparam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NewLevelSampling {
    Gaussian,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PredictionStructure {
    ReplicateA,
    RefgridB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightScheme {
    /// Each axis averaged against the estimated covariate density.
    WeightedA,
    /// Each axis averaged uniformly.
    UnweightedB,
}

/// Identifies one quantity of interest on either side of a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QoiLabel {
    /// `exp(β0 + β1 x)`.
    CondA,
    /// `exp(β0 + β1 x + σ_γ²/2)`.
    MargB,
    /// Mean of predictions on a prediction structure.
    MeanC { structure: PredictionStructure, sampling: NewLevelSampling },
    /// Mean of predictions at `x` with z drawn from its covariate model.
    PredMean { x: f64 },
    /// `E(y | x)` by averaging the smooth over z.
    CondMean { x: f64, scheme: WeightScheme },
    /// A single model parameter.
    Param(ParamId),
}

impl QoiLabel {
    /// The six multilevel-model labels in display order.
    pub fn cs1_all() -> Vec<QoiLabel> {
        use NewLevelSampling::*;
        use PredictionStructure::*;
        vec![
            QoiLabel::CondA,
            QoiLabel::MargB,
            QoiLabel::MeanC { structure: ReplicateA, sampling: Gaussian },
            QoiLabel::MeanC { structure: ReplicateA, sampling: Uncertainty },
            QoiLabel::MeanC { structure: RefgridB, sampling: Gaussian },
            QoiLabel::MeanC { structure: RefgridB, sampling: Uncertainty },
        ]
    }

    /// Covariate value the label is tied to, if any.
    pub fn x_fixed(&self) -> Option<f64> {
        match self {
            QoiLabel::PredMean { x } | QoiLabel::CondMean { x, .. } => Some(*x),
            _ => None,
        }
    }

    /// True for labels that need predictions (the sample-statistic side).
    pub fn is_predictive(&self) -> bool {
        matches!(self, QoiLabel::MeanC { .. } | QoiLabel::PredMean { .. })
    }
}

impl fmt::Display for QoiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QoiLabel::CondA => f.write_str("a"),
            QoiLabel::MargB => f.write_str("b"),
            QoiLabel::MeanC { structure, sampling } => {
                let s = match structure {
                    PredictionStructure::ReplicateA => "A",
                    PredictionStructure::RefgridB => "B",
                };
                let m = match sampling {
                    NewLevelSampling::Gaussian => "G",
                    NewLevelSampling::Uncertainty => "u",
                };
                write!(f, "c_{s}_{m}")
            }
            QoiLabel::PredMean { x } => write!(f, "pred_x{x}"),
            QoiLabel::CondMean { x, scheme } => {
                let s = match scheme {
                    WeightScheme::WeightedA => "A",
                    WeightScheme::UnweightedB => "B",
                };
                write!(f, "cond_{s}_x{x}")
            }
            QoiLabel::Param(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for QoiLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use NewLevelSampling::*;
        use PredictionStructure::*;
        let parse_x = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("bad covariate value in label '{s}'")))
        };
        Ok(match s {
            "a" => QoiLabel::CondA,
            "b" => QoiLabel::MargB,
            "c_A_G" => QoiLabel::MeanC { structure: ReplicateA, sampling: Gaussian },
            "c_A_u" => QoiLabel::MeanC { structure: ReplicateA, sampling: Uncertainty },
            "c_B_G" => QoiLabel::MeanC { structure: RefgridB, sampling: Gaussian },
            "c_B_u" => QoiLabel::MeanC { structure: RefgridB, sampling: Uncertainty },
            _ => {
                if let Some(v) = s.strip_prefix("pred_x") {
                    QoiLabel::PredMean { x: parse_x(v)? }
                } else if let Some(v) = s.strip_prefix("cond_A_x") {
                    QoiLabel::CondMean { x: parse_x(v)?, scheme: WeightScheme::WeightedA }
                } else if let Some(v) = s.strip_prefix("cond_B_x") {
                    QoiLabel::CondMean { x: parse_x(v)?, scheme: WeightScheme::UnweightedB }
                } else {
                    QoiLabel::Param(s.parse().map_err(|_| Error::Config(format!("unknown QOI label '{s}'")))?)
                }
            }
        })
    }
}

/// Conditional expectation for a group with coefficient 0.
pub fn qoi_version_a(params: &ParameterDraw, x: f64) -> Result<f64> {
    Ok((params.require(ParamId::Beta0)? + params.require(ParamId::Beta1)? * x).exp())
}

/// Marginal expectation, integrating out a Normal(0, σ_γ²) group effect.
pub fn qoi_version_b(params: &ParameterDraw, x: f64) -> Result<f64> {
    let sg = params.require(ParamId::SigmaGamma)?;
    Ok((params.require(ParamId::Beta0)? + params.require(ParamId::Beta1)? * x + 0.5 * sg * sg).exp())
}

/// One likelihood draw per row, including observation noise.
pub fn predict(
    spec: &ModelSpec,
    params: &ParameterDraw,
    data: &Dataset,
    basis: Option<&SmoothReparam>,
    stream: &mut SeedStream,
) -> Result<Vec<f64>> {
    draw_responses(spec, params, data, basis, stream)
}

/// Mean of predictions on `grid` after supplying coefficients for its group
/// levels. `existing_levels` are the levels available for copying under
/// uncertainty sampling.
pub fn qoi_version_c(
    spec: &ModelSpec,
    params: &ParameterDraw,
    grid: &Dataset,
    sampling: NewLevelSampling,
    existing_levels: &[u32],
    stream: &mut SeedStream,
) -> Result<f64> {
    if !matches!(grid.tag, StructureTag::ReplicateA | StructureTag::RefgridB) {
        return Err(Error::precondition("version (c) needs a replicate or reference-grid structure"));
    }
    if grid.is_empty() {
        return Err(Error::precondition("version (c) needs a non-empty prediction structure"));
    }
    let new_levels = grid.observed_levels();
    let extended = match sampling {
        NewLevelSampling::Gaussian => extend_parameters_gaussian(params, &new_levels, stream)?,
        NewLevelSampling::Uncertainty => extend_parameters_uncertainty(params, existing_levels, &new_levels, stream)?,
    };
    let y = predict(spec, &extended, grid, None, stream)?;
    Ok(y.iter().sum::<f64>() / y.len() as f64)
}

/// Intercept, centered main effects and interaction of a tabulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaComponents {
    pub f_empty: f64,
    pub f_x: Vec<f64>,
    pub f_z: Vec<f64>,
    /// Indexed `[i][j]` for x-grid point i and z-grid point j.
    pub f_xz: Vec<Vec<f64>>,
    pub weight_scheme: WeightScheme,
    /// Normalized weights actually used.
    pub x_weights: Vec<f64>,
    pub z_weights: Vec<f64>,
}

fn normalize(w: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::precondition("empty weight vector"));
    }
    if scheme == WeightScheme::UnweightedB {
        return Ok(vec![1.0 / w.len() as f64; w.len()]);
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::precondition("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::precondition("weights sum to zero"));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

/// Decomposes `f[i][j] = f(x_i, z_j)` with product weights. Under
/// `UnweightedB` the supplied weights are ignored and uniform ones used.
pub fn anova_decompose(
    f: &[Vec<f64>],
    x_weights: &[f64],
    z_weights: &[f64],
    scheme: WeightScheme,
) -> Result<AnovaComponents> {
    if f.len() != x_weights.len() || f.iter().any(|row| row.len() != z_weights.len()) {
        return Err(Error::precondition("surface shape does not match the weight axes"));
    }
    if x_weights.iter().chain(z_weights).any(|v| *v < 0.0) {
        return Err(Error::precondition("weights must be nonnegative"));
    }
    let wx = normalize(x_weights, scheme)?;
    let wz = normalize(z_weights, scheme)?;
    let row_means: Vec<f64> = f.iter().map(|row| row.iter().zip(&wz).map(|(v, w)| v * w).sum()).collect();
    let col_means: Vec<f64> = (0..wz.len()).map(|j| f.iter().zip(&wx).map(|(row, w)| row[j] * w).sum()).collect();
    let f_empty: f64 = row_means.iter().zip(&wx).map(|(v, w)| v * w).sum();
    let f_x: Vec<f64> = row_means.iter().map(|v| v - f_empty).collect();
    let f_z: Vec<f64> = col_means.iter().map(|v| v - f_empty).collect();
    let f_xz = f
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, v)| v - f_empty - f_x[i] - f_z[j]).collect())
        .collect();
    Ok(AnovaComponents { f_empty, f_x, f_z, f_xz, weight_scheme: scheme, x_weights: wx, z_weights: wz })
}

impl AnovaComponents {
    /// `max |f_∅ + f_x + f_z + f_xz − f|`.
    pub fn identity_error(&self, f: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in f.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((self.f_empty + self.f_x[i] + self.f_z[j] + self.f_xz[i][j] - v).abs());
            }
        }
        worst
    }

    /// `max(|Σ w(x) f_x(x)|, |Σ w(z) f_z(z)|)`.
    pub fn centering_error(&self) -> f64 {
        let cx: f64 = self.f_x.iter().zip(&self.x_weights).map(|(v, w)| v * w).sum();
        let cz: f64 = self.f_z.iter().zip(&self.z_weights).map(|(v, w)| v * w).sum();
        cx.abs().max(cz.abs())
    }

    /// Long-format CSV: `component, x, z, value`, with grid coordinates given
    /// by `x_grid` and `z_grid`.
    pub fn write_csv<W: Write>(&self, x_grid: &[f64], z_grid: &[f64], w: W) -> Result<()> {
        if x_grid.len() != self.f_x.len() || z_grid.len() != self.f_z.len() {
            return Err(Error::precondition("grid coordinates do not match the decomposition"));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["component", "x", "z", "value"])?;
        out.write_record(["f_empty", "", "", &self.f_empty.to_string()])?;
        for (x, v) in x_grid.iter().zip(&self.f_x) {
            out.write_record(["f_x", &x.to_string(), "", &v.to_string()])?;
        }
        for (z, v) in z_grid.iter().zip(&self.f_z) {
            out.write_record(["f_z", "", &z.to_string(), &v.to_string()])?;
        }
        for (x, row) in x_grid.iter().zip(&self.f_xz) {
            for (z, v) in z_grid.iter().zip(row) {
                out.write_record(["f_xz", &x.to_string(), &z.to_string(), &v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean/precision Beta density evaluated at each grid point.
pub fn beta_density_weights(beta0: f64, phi: f64, grid: &[f64]) -> Result<Vec<f64>> {
    let mu = logistic(beta0);
    let d = Beta::new(mu * phi, (1.0 - mu) * phi)
        .map_err(|e| Error::domain(format!("Beta(μ={mu}, φ={phi}): {e}")))?;
    Ok(grid.iter().map(|v| d.pdf(*v)).collect())
}

/// Axis weights for `scheme` from the covariate model of one draw.
pub fn axis_weights(params: &ParameterDraw, axis: ParamId, grid: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    let (b, p) = match axis {
        ParamId::Beta0X => (ParamId::Beta0X, ParamId::PhiX),
        ParamId::Beta0Z => (ParamId::Beta0Z, ParamId::PhiZ),
        other => return Err(Error::precondition(format!("{other} does not identify a covariate axis"))),
    };
    let w = match scheme {
        WeightScheme::WeightedA => beta_density_weights(params.require(b)?, params.require(p)?, grid)?,
        WeightScheme::UnweightedB => vec![1.0; grid.len()],
    };
    normalize(&w, scheme)
}

/// `f(x_i, z_j)` over the product grid, without the model intercept.
pub fn smooth_surface(reparam: &SmoothReparam, params: &ParameterDraw, x_grid: &[f64], z_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let rows = x_grid
        .iter()
        .flat_map(|&x| z_grid.iter().map(move |&z| Row { x, z: Some(z), group: None, y: None }))
        .collect();
    let data = Dataset::new(rows, StructureTag::XzGrid, Vec::new())?;
    let (beta, b) = smooth_coefficients(reparam, params)?;
    let flat = design_matrix(reparam, &data)?.apply(beta, &b)?;
    Ok(flat.chunks(z_grid.len()).map(|c| c.to_vec()).collect())
}

/// `β0_y + Σ_z w(z) f(x_fixed, z)` with `w` from the same draw's z model
/// (`WeightedA`) or uniform (`UnweightedB`).
pub fn qoi_cs2_conditional_expectation(
    params: &ParameterDraw,
    reparam: &SmoothReparam,
    x_fixed: f64,
    z_grid: &[f64],
    scheme: WeightScheme,
) -> Result<f64> {
    if z_grid.iter().any(|z| !(*z > 0.0 && *z < 1.0)) {
        return Err(Error::precondition("z grid must lie inside (0,1)"));
    }
    let w = axis_weights(params, ParamId::Beta0Z, z_grid, scheme)?;
    let f = smooth_surface(reparam, params, &[x_fixed], z_grid)?;
    Ok(params.require(ParamId::Beta0Y)? + f[0].iter().zip(&w).map(|(v, w)| v * w).sum::<f64>())
}

/// Mean of `n` predictions at `x_fixed`, with z drawn from the draw's own
/// covariate model.
pub fn qoi_cs2_predicted_mean(
    spec: &ModelSpec,
    params: &ParameterDraw,
    reparam: &SmoothReparam,
    x_fixed: f64,
    n: usize,
    stream: &mut SeedStream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::precondition("prediction mean needs at least one row"));
    }
    let mu_z = logistic(params.require(ParamId::Beta0Z)?);
    let phi_z = params.require(ParamId::PhiZ)?;
    let rows = (0..n)
        .map(|_| Ok(Row { x: x_fixed, z: Some(sample_beta_mean_precision(mu_z, phi_z, stream)?), group: None, y: None }))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(rows, StructureTag::XzGrid, Vec::new())?;
    let y = predict(spec, params, &data, Some(reparam), stream)?;
    Ok(y.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridstruct::{build_reference_grid, midpoints, GridSpec};
    use crate::models::{draw_prior, simulate_covariates_cs2, PriorDist};
    use crate::smooth::build_smooth;

    fn cs1_draw(b0: f64, b1: f64, sg: f64, sigma: f64) -> ParameterDraw {
        use ParamId::*;
        ParameterDraw::from_pairs([(Beta0, b0), (Beta1, b1), (SigmaGamma, sg), (Sigma, sigma)])
    }

    #[test]
    fn version_a_and_b_closed_forms() {
        assert_eq!(qoi_version_a(&cs1_draw(0.0, 0.0, 0.3, 1.0), 7.0).unwrap(), 1.0);
        assert!((qoi_version_a(&cs1_draw(0.0, 1.0, 0.3, 1.0), 1.0).unwrap() - std::f64::consts::E).abs() < 1e-12);
        let b = qoi_version_b(&cs1_draw(0.0, 1.0, 0.5, 1.0), 1.0).unwrap();
        assert!((b - 1.125f64.exp()).abs() < 1e-12);
        let p = cs1_draw(0.2, 0.9, 0.0, 1.0);
        assert_eq!(qoi_version_a(&p, 1.3).unwrap(), qoi_version_b(&p, 1.3).unwrap());
    }

    #[test]
    fn version_b_matches_monte_carlo_average_over_groups() {
        let mut s = SeedStream::new(1, 0);
        let m = 1_000_000;
        let mc = (0..m).map(|_| (1.0 + 0.5 * s.std_normal()).exp()).sum::<f64>() / m as f64;
        let b = qoi_version_b(&cs1_draw(0.0, 1.0, 0.5, 1.0), 1.0).unwrap();
        assert!((mc / b - 1.0).abs() < 0.01);
        assert!((b - 3.08022).abs() < 1e-5);
    }

    #[test]
    fn version_c_noiseless_single_row() {
        let spec = ModelSpec::cs1(20, 20).unwrap();
        let p = cs1_draw(0.1, 0.8, 1e-300, 1e-300);
        let grid = build_reference_grid(&GridSpec::reference(1.0, 1), 20).unwrap();
        let mut s = SeedStream::new(2, 0);
        let v = qoi_version_c(&spec, &p, &grid, NewLevelSampling::Gaussian, &[1], &mut s).unwrap();
        assert!((v - 0.9f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn version_c_on_reference_grid_converges_to_version_b() {
        let spec = ModelSpec::cs1(20, 20).unwrap();
        let p = cs1_draw(0.0, 1.0, 0.5, 1.0);
        let grid = build_reference_grid(&GridSpec::reference(1.0, 200), 20).unwrap();
        let mut s = SeedStream::new(3, 0);
        let reps = 4000;
        let vals: Vec<f64> = (0..reps)
            .map(|_| qoi_version_c(&spec, &p, &grid, NewLevelSampling::Gaussian, &[1], &mut s).unwrap())
            .collect();
        let m = vals.iter().sum::<f64>() / reps as f64;
        let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64 / reps as f64).sqrt();
        let b = qoi_version_b(&p, 1.0).unwrap();
        assert!((m - b).abs() < 3.0 * se, "{m} vs {b} (se {se})");
    }

    #[test]
    fn prediction_needs_extension_on_reference_grid() {
        let spec = ModelSpec::cs1(20, 20).unwrap();
        let grid = build_reference_grid(&GridSpec::reference(1.0, 5), 20).unwrap();
        let mut s = SeedStream::new(4, 0);
        assert!(matches!(
            predict(&spec, &cs1_draw(0.0, 1.0, 0.5, 1.0), &grid, None, &mut s),
            Err(Error::MissingCoefficient(_))
        ));
    }

    #[test]
    fn prediction_mean_at_fixed_predictor() {
        let spec = ModelSpec::cs1(20, 20).unwrap();
        let mut p = cs1_draw(0.0, 1.0, 0.5, 1.0);
        p.set(ParamId::Gamma(1), 0.0);
        let rows = vec![Row { x: 0.5, z: None, group: Some(1), y: None }; 1_000_000];
        let data = Dataset::new(rows, StructureTag::Original, vec![1]).unwrap();
        let mut s = SeedStream::new(5, 0);
        let y = predict(&spec, &p, &data, None, &mut s).unwrap();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m - 0.5f64.exp()).abs() < 3.0 / 1000.0);
    }

    fn tabulate(g: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
        g.iter().map(|&x| g.iter().map(|&z| f(x, z)).collect()).collect()
    }

    #[test]
    fn additive_surface_has_no_interaction() {
        let g = midpoints(50);
        let f = tabulate(&g, |x, z| x + z);
        let a = anova_decompose(&f, &vec![1.0; 50], &vec![1.0; 50], WeightScheme::UnweightedB).unwrap();
        assert!((a.f_empty - 1.0).abs() < 1e-12);
        for (i, x) in g.iter().enumerate() {
            assert!((a.f_x[i] - (x - 0.5)).abs() < 1e-12);
            assert!((a.f_z[i] - (x - 0.5)).abs() < 1e-12);
        }
        assert!(a.f_xz.iter().flatten().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn product_surface_closed_form() {
        let g = midpoints(50);
        let f = tabulate(&g, |x, z| x * z);
        let a = anova_decompose(&f, &vec![1.0; 50], &vec![1.0; 50], WeightScheme::UnweightedB).unwrap();
        assert!((a.f_empty - 0.25).abs() < 1e-12);
        for (i, x) in g.iter().enumerate() {
            assert!((a.f_x[i] - (0.5 * x - 0.25)).abs() < 1e-12);
            for (j, z) in g.iter().enumerate() {
                assert!((a.f_xz[i][j] - (x * z - 0.5 * x - 0.5 * z + 0.25)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_surface_and_identities_under_skewed_weights() {
        let g = midpoints(50);
        let a = anova_decompose(&tabulate(&g, |_, _| 2.5), &vec![1.0; 50], &vec![1.0; 50], WeightScheme::WeightedA).unwrap();
        assert!((a.f_empty - 2.5).abs() < 1e-12);
        assert!(a.f_x.iter().chain(&a.f_z).all(|v| v.abs() < 1e-12));

        let wx = beta_density_weights(0.0, 3.0, &g).unwrap();
        let wz = beta_density_weights(-1.1, 3.0, &g).unwrap();
        let f = tabulate(&g, |x, z| (3.0 * x).sin() * z.exp() + x * x * z);
        let a = anova_decompose(&f, &wx, &wz, WeightScheme::WeightedA).unwrap();
        assert!(a.identity_error(&f) < 1e-10);
        assert!(a.centering_error() < 1e-8);
    }

    #[test]
    fn decomposition_rejects_bad_input() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(anova_decompose(&f, &[1.0, -1.0], &[1.0, 1.0], WeightScheme::WeightedA).is_err());
        assert!(anova_decompose(&f, &[1.0], &[1.0, 1.0], WeightScheme::WeightedA).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let mut labels = QoiLabel::cs1_all();
        labels.push(QoiLabel::PredMean { x: 0.25 });
        labels.push(QoiLabel::CondMean { x: 0.9, scheme: WeightScheme::UnweightedB });
        labels.push(QoiLabel::Param(ParamId::Gamma(3)));
        for l in labels {
            assert_eq!(l.to_string().parse::<QoiLabel>().unwrap(), l);
        }
        assert!("c_C_G".parse::<QoiLabel>().is_err());
    }

    fn cs2_setup() -> (ModelSpec, ParameterDraw, SmoothReparam) {
        let spec = ModelSpec::cs2(400, 10).unwrap();
        let mut s = SeedStream::new(6, 0);
        let p = draw_prior(&spec, &mut s).unwrap();
        let d = simulate_covariates_cs2(&spec, &p, &mut s).unwrap();
        let r = build_smooth(&d, 10).unwrap();
        (spec, p, r)
    }

    #[test]
    fn conditional_expectation_of_zero_smooth_is_intercept() {
        let (_, mut p, r) = cs2_setup();
        p.set(ParamId::BetaS1, 0.0);
        p.set(ParamId::BetaS2, 0.0);
        for l in 1..=r.l as u32 {
            p.set(ParamId::B(l), 0.0);
        }
        let z = midpoints(50);
        for scheme in [WeightScheme::WeightedA, WeightScheme::UnweightedB] {
            let v = qoi_cs2_conditional_expectation(&p, &r, 0.3, &z, scheme).unwrap();
            assert_eq!(v, p.require(ParamId::Beta0Y).unwrap());
        }
    }

    #[test]
    fn weighted_expectation_of_linear_z_is_beta_mean() {
        // With only β_s2 active, f(x, z) = β_s2·(z − z̄) for the stored mean z̄.
        let (_, mut p, r) = cs2_setup();
        p.set(ParamId::BetaS1, 0.0);
        p.set(ParamId::BetaS2, 1.0);
        for l in 1..=r.l as u32 {
            p.set(ParamId::B(l), 0.0);
        }
        let z = midpoints(2000);
        let v = qoi_cs2_conditional_expectation(&p, &r, 0.3, &z, WeightScheme::WeightedA).unwrap();
        let expected = p.require(ParamId::Beta0Y).unwrap() + logistic(p.require(ParamId::Beta0Z).unwrap())
            - r.centering_means[1];
        assert!((v - expected).abs() < 1e-3, "{v} vs {expected}");
    }

    #[test]
    fn uniform_beta_makes_schemes_agree() {
        let (_, mut p, r) = cs2_setup();
        p.set(ParamId::Beta0Z, 0.0);
        p.set(ParamId::PhiZ, 2.0);
        let z = midpoints(50);
        let a = qoi_cs2_conditional_expectation(&p, &r, 0.6, &z, WeightScheme::WeightedA).unwrap();
        let b = qoi_cs2_conditional_expectation(&p, &r, 0.6, &z, WeightScheme::UnweightedB).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn conditional_expectation_equals_decomposition_on_grid() {
        let (_, p, r) = cs2_setup();
        let g = midpoints(50);
        let f = smooth_surface(&r, &p, &g, &g).unwrap();
        let wx = axis_weights(&p, ParamId::Beta0X, &g, WeightScheme::WeightedA).unwrap();
        let wz = axis_weights(&p, ParamId::Beta0Z, &g, WeightScheme::WeightedA).unwrap();
        let a = anova_decompose(&f, &wx, &wz, WeightScheme::WeightedA).unwrap();
        let b0 = p.require(ParamId::Beta0Y).unwrap();
        for i in [0, 17, 49] {
            let v = qoi_cs2_conditional_expectation(&p, &r, g[i], &g, WeightScheme::WeightedA).unwrap();
            assert!((v - (b0 + a.f_empty + a.f_x[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn predicted_mean_tracks_weighted_expectation() {
        let (spec, p, r) = cs2_setup();
        let mut s = SeedStream::new(7, 0);
        let v = qoi_cs2_predicted_mean(&spec, &p, &r, 0.5, 400_000, &mut s).unwrap();
        let e = qoi_cs2_conditional_expectation(&p, &r, 0.5, &midpoints(400), WeightScheme::WeightedA).unwrap();
        assert!((v - e).abs() < 0.01, "{v} vs {e}");
    }

    #[test]
    fn dogmatic_prior_constant_still_predicts() {
        let spec = ModelSpec::cs2(50, 10)
            .unwrap()
            .with_prior(ParamId::SigmaY, PriorDist::Constant { value: 0.1 })
            .unwrap();
        let mut s = SeedStream::new(8, 0);
        let p = draw_prior(&spec, &mut s).unwrap();
        let d = simulate_covariates_cs2(&spec, &p, &mut s).unwrap();
        let r = build_smooth(&d, 10).unwrap();
        assert!(qoi_cs2_predicted_mean(&spec, &p, &r, 0.5, 10, &mut s).unwrap().is_finite());
    }
}
