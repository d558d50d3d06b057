//! Prediction data structures (replicate, reference grid, xz-grid) and the
//! two ways of supplying coefficients for group levels that were never
//! estimated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{group_coefficient, Dataset, ParamId, ParameterDraw, Row, StructureTag};
use crate::rngdist::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GridKind {
    ReplicateA,
    RefgridB,
    XzGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub kind: GridKind,
    pub x_fixed: Option<f64>,
    pub n_new_levels: usize,
    pub grid_resolution: usize,
}

impl GridSpec {
    pub fn replicate(x_fixed: f64) -> Self {
        GridSpec { kind: GridKind::ReplicateA, x_fixed: Some(x_fixed), n_new_levels: 200, grid_resolution: 50 }
    }

    pub fn reference(x_fixed: f64, n_new_levels: usize) -> Self {
        GridSpec { kind: GridKind::RefgridB, x_fixed: Some(x_fixed), n_new_levels, grid_resolution: 50 }
    }

    pub fn xz(grid_resolution: usize) -> Self {
        GridSpec { kind: GridKind::XzGrid, x_fixed: None, n_new_levels: 200, grid_resolution }
    }

    fn validate(&self, expected: GridKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::precondition(format!("grid spec of kind {:?} used as {expected:?}", self.kind)));
        }
        if self.n_new_levels == 0 {
            return Err(Error::precondition("n_new_levels must be >= 1"));
        }
        if self.grid_resolution < 2 {
            return Err(Error::precondition("grid_resolution must be >= 2"));
        }
        Ok(())
    }
}

/// Same rows and group balance as `original`, relabeled onto fresh levels
/// `G+1..2G`, with x overwritten by `x_fixed` and y cleared.
pub fn build_replicate_structure(original: &Dataset, spec: &GridSpec) -> Result<Dataset> {
    spec.validate(GridKind::ReplicateA)?;
    if original.tag != StructureTag::Original {
        return Err(Error::precondition("replicate structure is built from ORIGINAL data"));
    }
    let offset = original.level_registry.iter().copied().max().unwrap_or(0);
    let rows = original
        .rows
        .iter()
        .map(|r| {
            let g = r.group.ok_or_else(|| Error::precondition("replicate structure needs a group column"))?;
            Ok(Row {
                x: spec.x_fixed.unwrap_or(r.x),
                z: r.z,
                group: Some(g + offset),
                y: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let registry = original.level_registry.iter().map(|l| l + offset).collect();
    Dataset::new(rows, StructureTag::ReplicateA, registry)
}

/// `n_new_levels` singleton groups at `x_fixed`, on levels numbered after
/// `base_level_count`.
pub fn build_reference_grid(spec: &GridSpec, base_level_count: usize) -> Result<Dataset> {
    spec.validate(GridKind::RefgridB)?;
    let x = spec.x_fixed.ok_or_else(|| Error::precondition("reference grid needs x_fixed"))?;
    let first = base_level_count as u32 + 1;
    let levels: Vec<u32> = (first..first + spec.n_new_levels as u32).collect();
    let rows = levels
        .iter()
        .map(|&l| Row { x, z: None, group: Some(l), y: None })
        .collect();
    Dataset::new(rows, StructureTag::RefgridB, levels)
}

/// Cell-midpoint grid over (0,1)², x varying slowest.
pub fn build_xz_grid(spec: &GridSpec) -> Result<Dataset> {
    spec.validate(GridKind::XzGrid)?;
    let axis = midpoints(spec.grid_resolution);
    let rows = axis
        .iter()
        .flat_map(|&x| axis.iter().map(move |&z| Row { x, z: Some(z), group: None, y: None }))
        .collect();
    Dataset::new(rows, StructureTag::XzGrid, Vec::new())
}

/// `m` equidistant cell midpoints on (0,1).
pub fn midpoints(m: usize) -> Vec<f64> {
    (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect()
}

/// New-level coefficients drawn from Normal(0, σ_γ²).
pub fn extend_parameters_gaussian(
    params: &ParameterDraw,
    new_levels: &[u32],
    stream: &mut SeedStream,
) -> Result<ParameterDraw> {
    let sd = params
        .get(ParamId::SigmaGamma)
        .ok_or_else(|| Error::MissingCoefficient("sigma_gamma".into()))?;
    let mut out = params.clone();
    out.clear_extension();
    for &l in new_levels {
        out.extend_with(ParamId::Gamma(l), sd * stream.std_normal())?;
    }
    Ok(out)
}

/// New-level coefficients copied from uniformly chosen existing levels,
/// independently per new level.
pub fn extend_parameters_uncertainty(
    params: &ParameterDraw,
    existing_levels: &[u32],
    new_levels: &[u32],
    stream: &mut SeedStream,
) -> Result<ParameterDraw> {
    if existing_levels.is_empty() {
        return Err(Error::precondition("uncertainty sampling needs at least one existing level"));
    }
    let pool = existing_levels
        .iter()
        .map(|&l| group_coefficient(params, l))
        .collect::<Result<Vec<_>>>()?;
    let mut out = params.clone();
    out.clear_extension();
    for &l in new_levels {
        out.extend_with(ParamId::Gamma(l), pool[stream.index(pool.len())])?;
    }
    Ok(out)
}
