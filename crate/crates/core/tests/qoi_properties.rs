use proptest::prelude::*;

use qoi_check::calibration::{rank_statistic, simulate_replication, RankRecord, ecdf_uniformity_band};
use qoi_check::gridstruct::{build_reference_grid, midpoints, GridSpec};
use qoi_check::inference::{sample_posterior, McmcConfig};
use qoi_check::models::{ModelSpec, ParamId, ParameterDraw};
use qoi_check::qoi::{
    anova_decompose, beta_density_weights, qoi_cs2_conditional_expectation, qoi_version_a, qoi_version_b,
    qoi_version_c, NewLevelSampling, WeightScheme,
};
use qoi_check::rngdist::SeedStream;

fn cs1_draw(b0: f64, b1: f64, sg: f64) -> ParameterDraw {
    ParameterDraw::from_pairs([
        (ParamId::Beta0, b0),
        (ParamId::Beta1, b1),
        (ParamId::SigmaGamma, sg),
        (ParamId::Sigma, 1.0),
    ])
}

proptest! {
    #[test]
    fn marginal_exceeds_conditional(b0 in -2f64..2.0, b1 in -2f64..2.0, sg in 1e-3f64..2.0, x in -2f64..2.0) {
        let p = cs1_draw(b0, b1, sg);
        prop_assert!(qoi_version_b(&p, x).unwrap() > qoi_version_a(&p, x).unwrap());
    }

    #[test]
    fn anova_identity_and_centering(
        coef in prop::collection::vec(-3f64..3.0, 6),
        bx in -2f64..2.0, px in 0.5f64..20.0,
        bz in -2f64..2.0, pz in 0.5f64..20.0,
        weighted in any::<bool>(),
    ) {
        let g = midpoints(30);
        let f: Vec<Vec<f64>> = g.iter().map(|x| g.iter().map(|z| {
            coef[0] + coef[1] * x + coef[2] * z + coef[3] * x * z + coef[4] * (6.0 * x).sin() * z * z + coef[5] * (x - z).powi(3)
        }).collect()).collect();
        let scheme = if weighted { WeightScheme::WeightedA } else { WeightScheme::UnweightedB };
        let wx = beta_density_weights(bx, px, &g).unwrap();
        let wz = beta_density_weights(bz, pz, &g).unwrap();
        let a = anova_decompose(&f, &wx, &wz, scheme).unwrap();
        prop_assert!(a.identity_error(&f) < 1e-10);
        prop_assert!(a.centering_error() < 1e-8);
    }
}

#[test]
fn zero_group_spread_collapses_versions() {
    let p = cs1_draw(0.3, 0.7, 0.0);
    assert_eq!(qoi_version_a(&p, 1.0).unwrap(), qoi_version_b(&p, 1.0).unwrap());
}

#[test]
fn reference_grid_mean_converges_to_marginal_expectation() {
    let spec = ModelSpec::cs1(500, 20).unwrap();
    let p = cs1_draw(0.0, 1.0, 0.5);
    let grid = build_reference_grid(&GridSpec::reference(1.0, 2000), 20).unwrap();
    let mut s = SeedStream::new(21, 0);
    let vals: Vec<f64> = (0..400)
        .map(|_| qoi_version_c(&spec, &p, &grid, NewLevelSampling::Gaussian, &[], &mut s).unwrap())
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt() / (vals.len() as f64).sqrt();
    let target = qoi_version_b(&p, 1.0).unwrap();
    assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
}

#[test]
fn weighted_conditional_expectation_is_calibrated_against_its_exact_prior_value() {
    // Prior side: the same weighted expectation on a fine grid. The posterior
    // side uses the same fine grid, so ranks isolate the implementation.
    let spec = ModelSpec::cs2(1000, 10).unwrap();
    let grid = midpoints(4000);
    let cfg = McmcConfig { warmup: 2000, post_warmup: 500, ..McmcConfig::default() };
    let recs: Vec<RankRecord> = (1..=40u64)
        .map(|r| {
            let stream = SeedStream::new(22, r);
            let rep = simulate_replication(&spec, &stream).unwrap();
            let basis = rep.basis.as_ref().unwrap();
            let prior = qoi_cs2_conditional_expectation(&rep.truth, basis, 0.5, &grid, WeightScheme::WeightedA).unwrap();
            let post = sample_posterior(&spec, &rep.data, Some(basis), &cfg, &mut stream.derive_named("post")).unwrap();
            let vals: Vec<f64> = (0..post.s())
                .map(|s| qoi_cs2_conditional_expectation(&post.draw(s), basis, 0.5, &grid, WeightScheme::WeightedA).unwrap())
                .collect();
            RankRecord {
                replication: r,
                prior_label: "exact".into(),
                posterior_label: "cond_A_x0.5".into(),
                k: rank_statistic(prior, &vals).unwrap().k,
                s: post.s(),
            }
        })
        .collect();
    let rep = ecdf_uniformity_band(&recs, 0.05, 2000, &mut SeedStream::new(22, 0)).unwrap();
    assert!(rep.pass, "{:?}", recs.iter().map(|r| r.k).collect::<Vec<_>>());
}
