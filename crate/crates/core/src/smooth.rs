//! Low-rank bivariate radial-basis smooth in mixed-model form.
//!
//! The raw basis evaluates `η(r) = r² log r` between each data point and a
//! small set of knots. Coefficients are constrained to the complement of
//! `{1, x, z}` at the knots, which makes the knot-to-knot kernel a proper
//! penalty. Its eigendecomposition `S = U Λ Uᵀ` gives the random-effect
//! form: columns `X U` scaled by `1/√λ` carry i.i.d. Normal(0, σ_s²)
//! coefficients, while the linear terms in x and z are left unpenalized.
//! Everything needed to rebuild the design on other data (knots, U, D and
//! the estimation-data column means) is stored, never recomputed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, ParamId, ParameterDraw};

/// Relative cutoff below which an eigenvalue counts as unpenalized.
pub const ZERO_EIGEN_TOL: f64 = 1e-9;
const NULL_DIM: usize = 2;

/// Thin-plate radial function, continuously extended with η(0) = 0.
pub fn radial(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothReparam {
    pub knots: Vec<(f64, f64)>,
    /// κ×κ penalty, row-major.
    pub penalty_s: Vec<Vec<f64>>,
    /// κ×κ orthogonal eigenvectors of the penalty, row-major; columns sorted
    /// by descending eigenvalue.
    pub u: Vec<Vec<f64>>,
    /// Square roots of the penalty eigenvalues (zero for unpenalized directions).
    pub d: Vec<f64>,
    pub null_dim: usize,
    /// Means of `[x, z, penalized columns…]` on the estimation data.
    pub centering_means: Vec<f64>,
    /// Number of penalized columns.
    pub l: usize,
}

/// Design matrices for one dataset; `extrapolated_rows` counts rows with a
/// coordinate outside (0,1).
#[derive(Debug, Clone)]
pub struct SmoothDesign {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub extrapolated_rows: usize,
}

impl SmoothDesign {
    pub fn rows(&self) -> usize {
        self.x1.nrows()
    }

    /// `X1·β_s + X2·b`.
    pub fn apply(&self, beta_s: [f64; 2], b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.x2.ncols() {
            return Err(Error::precondition(format!(
                "expected {} penalized coefficients, got {}",
                self.x2.ncols(),
                b.len()
            )));
        }
        Ok((0..self.rows())
            .map(|i| {
                let mut f = self.x1[(i, 0)] * beta_s[0] + self.x1[(i, 1)] * beta_s[1];
                for (l, bl) in b.iter().enumerate() {
                    f += self.x2[(i, l)] * bl;
                }
                f
            })
            .collect())
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Radical-inverse Halton coordinate.
fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Linear-interpolation empirical quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn coords(data: &Dataset) -> Result<Vec<(f64, f64)>> {
    let zs = data.zs()?;
    Ok(data.xs().into_iter().zip(zs).collect())
}

impl SmoothReparam {
    pub fn kappa(&self) -> usize {
        self.knots.len()
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.u)
    }

    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.penalty_s)
    }

    /// Raw radial basis (N×κ) of `data` against the stored knots.
    pub fn raw_basis(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let pts = coords(data)?;
        Ok(DMatrix::from_fn(pts.len(), self.kappa(), |i, j| {
            let (x, z) = pts[i];
            let (kx, kz) = self.knots[j];
            radial(((x - kx).powi(2) + (z - kz).powi(2)).sqrt())
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Builds the reparameterized basis on estimation data with basis size `k`
/// (`k − 3` knots).
pub fn build_smooth(data: &Dataset, k: usize) -> Result<SmoothReparam> {
    if k < 4 {
        return Err(Error::precondition(format!("basis size k must be >= 4, got {k}")));
    }
    let kappa = k - 3;
    let pts = coords(data)?;
    if pts.is_empty() {
        return Err(Error::precondition("smooth needs at least one data row"));
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut zs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    xs.sort_by(f64::total_cmp);
    zs.sort_by(f64::total_cmp);
    let knots: Vec<(f64, f64)> = (1..=kappa)
        .map(|j| (quantile(&xs, halton(j, 2)), quantile(&zs, halton(j, 3))))
        .collect();
    for i in 0..kappa {
        for j in 0..i {
            let d = ((knots[i].0 - knots[j].0).powi(2) + (knots[i].1 - knots[j].1).powi(2)).sqrt();
            if d < 1e-10 {
                return Err(Error::Conditioning(format!("knots {j} and {i} coincide at {:?}", knots[i])));
            }
        }
    }

    let kernel = DMatrix::from_fn(kappa, kappa, |i, j| {
        radial(((knots[i].0 - knots[j].0).powi(2) + (knots[i].1 - knots[j].1).powi(2)).sqrt())
    });
    // Projector onto {c : Tᵀc = 0}, T = [1, knot x, knot z].
    let t = DMatrix::from_fn(kappa, 3, |i, j| match j {
        0 => 1.0,
        1 => knots[i].0,
        _ => knots[i].1,
    });
    let svd = t.clone().svd(true, false);
    let u_t = svd.u.ok_or_else(|| Error::Conditioning("SVD of knot constraint failed".into()))?;
    let smax = svd.singular_values.max();
    let mut proj = DMatrix::<f64>::identity(kappa, kappa);
    for (c, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-10 * smax.max(1.0) {
            let col = u_t.column(c);
            proj -= &col * col.transpose();
        }
    }
    let mut penalty = &proj * &kernel * &proj;
    penalty = (&penalty + penalty.transpose()) * 0.5;

    let eig = SymmetricEigen::new(penalty.clone());
    let mut order: Vec<usize> = (0..kappa).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam_max = eig.eigenvalues[order[0]].max(0.0);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("non-finite penalty eigenvalue".into()));
    }
    let u = DMatrix::from_fn(kappa, kappa, |i, j| eig.eigenvectors[(i, order[j])]);
    let lambdas: Vec<f64> = order.iter().map(|&o| eig.eigenvalues[o]).collect();
    let l = lambdas.iter().filter(|&&v| lam_max > 0.0 && v > ZERO_EIGEN_TOL * lam_max).count();
    let d: Vec<f64> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < l { v.sqrt() } else { 0.0 })
        .collect();

    let mut reparam = SmoothReparam {
        knots,
        penalty_s: to_rows(&penalty),
        u: to_rows(&u),
        d,
        null_dim: NULL_DIM,
        centering_means: vec![0.0; NULL_DIM + l],
        l,
    };
    let (x1, x2) = uncentered_design(&reparam, data)?;
    let n = x1.nrows() as f64;
    let means: Vec<f64> = x1
        .column_iter()
        .chain(x2.column_iter())
        .map(|c| c.sum() / n)
        .collect();
    reparam.centering_means = means;
    Ok(reparam)
}

fn uncentered_design(reparam: &SmoothReparam, data: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let raw = reparam.raw_basis(data)?;
    let zs = data.zs()?;
    let n = data.len();
    let x1 = DMatrix::from_fn(n, NULL_DIM, |i, j| if j == 0 { data.rows[i].x } else { zs[i] });
    let u = reparam.u_matrix();
    let mut x2 = raw * u.columns(0, reparam.l);
    for (l, mut col) in x2.column_iter_mut().enumerate() {
        col /= reparam.d[l];
    }
    Ok((x1, x2))
}

/// Design for `data` using the stored knots, U, D and estimation-data means.
pub fn design_matrix(reparam: &SmoothReparam, data: &Dataset) -> Result<SmoothDesign> {
    let (mut x1, mut x2) = uncentered_design(reparam, data)?;
    for (j, mut col) in x1.column_iter_mut().enumerate() {
        col.add_scalar_mut(-reparam.centering_means[j]);
    }
    for (l, mut col) in x2.column_iter_mut().enumerate() {
        col.add_scalar_mut(-reparam.centering_means[NULL_DIM + l]);
    }
    let extrapolated_rows = data
        .rows
        .iter()
        .filter(|r| {
            let z = r.z.unwrap_or(0.5);
            !(r.x > 0.0 && r.x < 1.0 && z > 0.0 && z < 1.0)
        })
        .count();
    Ok(SmoothDesign { x1, x2, extrapolated_rows })
}

/// Smooth coefficients `(β_s1, β_s2)` and `b_1..b_L` from a draw.
pub fn smooth_coefficients(reparam: &SmoothReparam, params: &ParameterDraw) -> Result<([f64; 2], Vec<f64>)> {
    let beta = [params.require(ParamId::BetaS1)?, params.require(ParamId::BetaS2)?];
    let b = params.penalized();
    if b.len() != reparam.l {
        return Err(Error::precondition(format!(
            "draw has {} penalized coefficients, basis has {}",
            b.len(),
            reparam.l
        )));
    }
    Ok((beta, b))
}

/// `f(x, z)` per row, without the model intercept.
pub fn evaluate_smooth(reparam: &SmoothReparam, params: &ParameterDraw, data: &Dataset) -> Result<Vec<f64>> {
    let (beta, b) = smooth_coefficients(reparam, params)?;
    design_matrix(reparam, data)?.apply(beta, &b)
}

/// Maps coefficients `c` of the raw radial basis (assumed to satisfy the
/// knot side constraints) to penalized random-effect coefficients.
pub fn raw_to_random_effects(reparam: &SmoothReparam, c: &DVector<f64>) -> Vec<f64> {
    let u = reparam.u_matrix();
    (0..reparam.l).map(|l| u.column(l).dot(c) * reparam.d[l]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Row, StructureTag};
    use crate::rngdist::{sample_beta_mean_precision, SeedStream};

    fn data(n: usize, mu_z: f64, seed: u64) -> Dataset {
        let mut s = SeedStream::new(seed, 0);
        let rows = (0..n)
            .map(|_| Row {
                x: sample_beta_mean_precision(0.5, 3.0, &mut s).unwrap(),
                z: Some(sample_beta_mean_precision(mu_z, 3.0, &mut s).unwrap()),
                group: None,
                y: None,
            })
            .collect();
        Dataset::new(rows, StructureTag::Original, vec![]).unwrap()
    }

    fn draw(beta: [f64; 2], b: &[f64]) -> ParameterDraw {
        let mut p = ParameterDraw::from_pairs([(ParamId::BetaS1, beta[0]), (ParamId::BetaS2, beta[1])]);
        for (i, v) in b.iter().enumerate() {
            p.set(ParamId::B(i as u32 + 1), *v);
        }
        p
    }

    #[test]
    fn radial_closed_forms() {
        assert_eq!(radial(0.0), 0.0);
        assert!(radial(1e-300).abs() < 1e-290);
        assert_eq!(radial(1.0), 0.0);
        let e = std::f64::consts::E;
        assert!((radial(e) - e * e).abs() < 1e-12);
    }

    #[test]
    fn structure_invariants() {
        let d = data(500, 0.25, 1);
        let r = build_smooth(&d, 10).unwrap();
        assert_eq!(r.kappa(), 7);
        assert_eq!(r.l, 4);
        assert_eq!(r.null_dim, 2);
        let u = r.u_matrix();
        let err = (u.transpose() * &u - DMatrix::<f64>::identity(7, 7)).abs().max();
        assert!(err < 1e-10, "orthogonality {err}");
        let eig = SymmetricEigen::new(r.penalty_matrix());
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
        let zero = r.d.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(r.l + zero, r.kappa());
    }

    #[test]
    fn four_knot_reconstruction() {
        let d = data(300, 0.5, 2);
        let r = build_smooth(&d, 7).unwrap();
        assert_eq!(r.kappa(), 4);
        let u = r.u_matrix();
        let eig = SymmetricEigen::new(r.penalty_matrix());
        assert!(eig.eigenvalues.iter().all(|v| v.is_finite()));
        // Λ in U's column order: d² for penalized, 0 otherwise.
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(4, r.d.iter().map(|v| v * v)));
        let resid = (&u * lam * u.transpose() - r.penalty_matrix()).abs().max();
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn too_small_basis_and_duplicate_knots() {
        let d = data(50, 0.5, 3);
        assert!(matches!(build_smooth(&d, 3), Err(Error::Precondition(_))));
        let same = Dataset::new(
            vec![Row { x: 0.3, z: Some(0.3), group: None, y: None }; 20],
            StructureTag::Original,
            vec![],
        )
        .unwrap();
        assert!(matches!(build_smooth(&same, 10), Err(Error::Conditioning(_))));
    }

    #[test]
    fn own_data_design_is_idempotent_and_centered() {
        let d = data(400, 0.25, 4);
        let r = build_smooth(&d, 10).unwrap();
        let a = design_matrix(&r, &d).unwrap();
        let b = design_matrix(&r, &d).unwrap();
        assert_eq!(a.x1, b.x1);
        assert_eq!(a.x2, b.x2);
        for c in a.x1.column_iter().chain(a.x2.column_iter()) {
            assert!(c.mean().abs() < 1e-10);
        }
        assert_eq!(a.extrapolated_rows, 0);
    }

    #[test]
    fn stored_centering_differs_from_naive_on_skewed_grid() {
        let d = data(1000, 0.5, 5);
        let r = build_smooth(&d, 10).unwrap();
        let skewed = data(1000, 0.25, 6);
        let stored = design_matrix(&r, &skewed).unwrap();
        // Naive path recenters on the grid itself, so its columns have mean 0;
        // the stored path keeps the estimation-data means.
        let shift = stored
            .x1
            .column_iter()
            .chain(stored.x2.column_iter())
            .map(|c| c.mean().abs())
            .fold(0.0, f64::max);
        assert!(shift > 1e-3, "max column mean shift {shift}");
        let rebuilt = build_smooth(&skewed, 10).unwrap();
        assert_ne!(rebuilt.centering_means, r.centering_means);
    }

    #[test]
    fn single_row_design_shape() {
        let d = data(200, 0.5, 7);
        let r = build_smooth(&d, 10).unwrap();
        let one = Dataset::new(vec![Row { x: 0.5, z: Some(0.5), group: None, y: None }], StructureTag::XzGrid, vec![]).unwrap();
        let m = design_matrix(&r, &one).unwrap();
        assert_eq!(m.x1.shape(), (1, 2));
        assert_eq!(m.x2.shape(), (1, r.l));
        let out = Dataset::new(vec![Row { x: 1.5, z: Some(0.5), group: None, y: None }], StructureTag::XzGrid, vec![]).unwrap();
        assert_eq!(design_matrix(&r, &out).unwrap().extrapolated_rows, 1);
    }

    #[test]
    fn evaluate_zero_and_linear() {
        let d = data(300, 0.5, 8);
        let r = build_smooth(&d, 10).unwrap();
        let zero = evaluate_smooth(&r, &draw([0.0, 0.0], &vec![0.0; r.l]), &d).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let lin = evaluate_smooth(&r, &draw([1.0, -1.0], &vec![0.0; r.l]), &d).unwrap();
        for (row, f) in d.rows.iter().zip(&lin) {
            let expect = (row.x - r.centering_means[0]) - (row.z.unwrap() - r.centering_means[1]);
            assert!((f - expect).abs() < 1e-12);
        }
        let p = draw([0.3, 0.2], &[0.5, -1.0, 0.25, 2.0]);
        assert_eq!(evaluate_smooth(&r, &p, &d).unwrap(), evaluate_smooth(&r, &p, &d).unwrap());
        assert!(evaluate_smooth(&r, &draw([0.0, 0.0], &[1.0]), &d).is_err());
    }

    #[test]
    fn reparameterization_round_trip_and_penalty_identity() {
        let d = data(500, 0.3, 9);
        let r = build_smooth(&d, 10).unwrap();
        let raw = r.raw_basis(&d).unwrap();
        let u = r.u_matrix();
        let penalty = r.penalty_matrix();
        let mut s = SeedStream::new(10, 0);
        for _ in 0..20 {
            // Random coefficient in the constrained raw space: combination of
            // penalized eigenvectors.
            let c = (0..r.l).fold(DVector::zeros(r.kappa()), |acc, l| acc + u.column(l) * s.std_normal());
            let b = raw_to_random_effects(&r, &c);
            let fitted_raw = &raw * &c;
            let mean = fitted_raw.mean();
            let f = design_matrix(&r, &d).unwrap().apply([0.0, 0.0], &b).unwrap();
            let err = f.iter().zip(fitted_raw.iter()).map(|(a, b)| (a - (b - mean)).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "round trip {err}");
            let quad = (c.transpose() * &penalty * &c)[(0, 0)];
            let sum_sq: f64 = b.iter().map(|v| v * v).sum();
            assert!((quad - sum_sq).abs() < 1e-8 * (1.0 + sum_sq), "{quad} vs {sum_sq}");
        }
    }

    #[test]
    fn predictions_depend_only_on_stored_transformation() {
        let d = data(500, 0.3, 11);
        let r = build_smooth(&d, 10).unwrap();
        let restored = SmoothReparam::from_json(&r.to_json().unwrap()).unwrap();
        let grid = data(50, 0.7, 12);
        let p = draw([1.0, -1.0], &[0.4, -0.2, 1.1, 0.3]);
        assert_eq!(evaluate_smooth(&r, &p, &grid).unwrap(), evaluate_smooth(&restored, &p, &grid).unwrap());
    }
}
