use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use dwp_core::geometry::{annulus_area, build_rings_simple, Piece, Polygon, PolygonLayout};
use dwp_core::validation::with_distances;
use dwp_core::{
    add_carcasses, build_rings_circular, build_rings_polygon, est_dwp, est_psi, filter_models,
    fit_battery, fit_rows, posterior_m, rows_from_rings, CarcassRecord, DistanceDistribution,
    ModelForm, PlotShape, SimpleGeometryRow, Thresholds, STANDARD_FORMS,
};

fn gamma_profile(n: usize, srad: f64, seed: u64) -> dwp_core::RingProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(1.7744, 1.0 / 0.0355).unwrap();
    let d: Vec<f64> = (0..n)
        .map(|_| g.sample(&mut rng))
        .filter(|&x| x <= srad)
        .collect();
    with_distances(&build_rings_circular(srad).unwrap(), &d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn road_pad_pinc_is_a_proportion(
        padrad in 2.0f64..40.0,
        roadwidth in 0.5f64..12.0,
        n_road in 1u32..6,
        radius in 20.0f64..160.0,
    ) {
        let p = build_rings_simple(&SimpleGeometryRow {
            turbine: "t1".into(),
            radius,
            shape: PlotShape::RoadPad { padrad, roadwidth, n_road },
        }).unwrap();
        let t = &p.turbines[0];
        for (i, &v) in t.pinc.iter().enumerate() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "ring {} pinc {}", i + 1, v);
        }
        for row in &t.rows {
            prop_assert!(row.exposure <= annulus_area(row.r) * (1.0 + 1e-12));
        }
        // Pad rings are fully searched.
        for r in 1..(padrad.min(radius).floor() as usize) {
            prop_assert!((t.pinc[r - 1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn polygon_area_is_conserved(
        half in 3.0f64..60.0,
        cx in -20.0f64..20.0,
        cy in -20.0f64..20.0,
    ) {
        let sq = Polygon::new(vec![
            (cx - half, cy - half),
            (cx + half, cy - half),
            (cx + half, cy + half),
            (cx - half, cy + half),
        ]);
        let layout = PolygonLayout {
            pieces: vec![Piece { turbine: "t1".into(), class: None, polygon: sq }],
            ..Default::default()
        };
        let p = build_rings_polygon(&layout, &BTreeSet::new()).unwrap();
        let total: f64 = p.turbines[0].rows.iter().map(|r| r.exposure).sum();
        let want = 4.0 * half * half;
        prop_assert!((total - want).abs() < 1e-6 * want, "{total} vs {want}");
    }

    #[test]
    fn carcasses_are_conserved(dists in prop::collection::vec(0.0f64..120.0, 0..80)) {
        let base = build_rings_circular(100.0).unwrap();
        let recs: Vec<CarcassRecord> = dists.iter().map(|&d| CarcassRecord::at_distance("t1", d)).collect();
        let inside = dists.iter().filter(|&&d| d <= 100.0).count() as u32;
        match add_carcasses(&base, &recs, None) {
            Ok(p) => {
                prop_assert_eq!(p.site_ncarc(), inside);
                prop_assert_eq!(p.turbines[0].ncarc(), inside);
            }
            // Carcasses beyond the search radius are rejected, never dropped silently.
            Err(_) => prop_assert!(inside < dists.len() as u32),
        }
    }

    #[test]
    fn posterior_is_a_distribution(m_in in 0u64..40, psi in 0.05f64..0.99) {
        let post = posterior_m(m_in, psi).unwrap();
        let total: f64 = post.support().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(post.support().all(|(m, p)| m >= m_in && p >= 0.0));
        prop_assert!(post.mode() >= m_in);
        prop_assert!(post.mean() >= m_in as f64);
        let (lo, hi) = post.credible_interval(0.9);
        prop_assert!(m_in <= lo && lo <= hi);
        let mass: f64 = post.support().filter(|(m, _)| (lo..=hi).contains(m)).map(|(_, p)| p).sum();
        prop_assert!(mass >= 0.9 - 1e-9);
    }

    #[test]
    fn quantiles_invert_the_cdf(shape in 1.1f64..6.0, rate in 0.01f64..0.2, p in 0.01f64..0.99) {
        let d = DistanceDistribution::new(ModelForm::Xep01, &[shape - 2.0, -rate]).unwrap();
        let x = d.qdd(p).unwrap();
        prop_assert!((d.pdd(x) - p).abs() < 1e-9);
        let y = d.qdd((p + 0.005).min(0.999)).unwrap();
        prop_assert!(y >= x);
    }

    #[test]
    fn loosening_thresholds_never_fails_a_model(seed in 0u64..1000) {
        let prof = gamma_profile(50, 100.0, seed);
        let rows = rows_from_rings(&prof.site);
        let fits: Vec<_> = fit_battery(&rows, &[ModelForm::Xep1, ModelForm::Xep01, ModelForm::Xep2], false)
            .into_iter()
            .filter_map(|(_, f)| f.ok())
            .collect();
        prop_assume!(fits.iter().any(|f| f.converged));
        let strict = filter_models(&fits, &rows, false, 100.0, &Thresholds::default()).unwrap();
        let loose = filter_models(&fits, &rows, false, 100.0, &Thresholds::permissive()).unwrap();
        for s in &strict.scores {
            let l = loose.get(s.form).unwrap();
            for (a, b) in s.flags().iter().zip(l.flags()) {
                prop_assert!(!a || b, "{} lost a pass when loosened", s.form);
            }
        }
    }
}

#[test]
fn selection_passes_every_test_when_any_model_does() {
    for seed in 0..10 {
        let prof = gamma_profile(60, 100.0, seed);
        let rows = rows_from_rings(&prof.site);
        let fits: Vec<_> = fit_battery(&rows, &STANDARD_FORMS, false)
            .into_iter()
            .filter_map(|(_, f)| f.ok())
            .collect();
        let t = filter_models(&fits, &rows, false, 100.0, &Thresholds::default()).unwrap();
        let any = t.scores.iter().any(|s| s.passes_all());
        assert_eq!(t.selected_passes_all, any);
        if any {
            let first = t.scores.iter().find(|s| s.passes_all()).unwrap();
            assert_eq!(first.form, t.selected);
        }
    }
}

#[test]
fn dwp_draws_are_proportions_and_reproducible() {
    let prof = gamma_profile(80, 100.0, 3);
    let fit = fit_rows(&rows_from_rings(&prof.site), ModelForm::Xep01, false).unwrap();
    let psi = est_psi(&prof, &fit, 200, 11).unwrap();
    let a = est_dwp(&psi, &prof.ncarc(), prof.site_ncarc(), 5).unwrap();
    let b = est_dwp(&psi, &prof.ncarc(), prof.site_ncarc(), 5).unwrap();
    assert_eq!(a.draws, b.draws);
    for v in a.draws.values.iter().filter(|v| v.is_finite()) {
        assert!((0.0..=1.0).contains(v));
    }
    // ψ is the mean of dwp: the averages agree to within Monte Carlo noise.
    let mean = |v: Vec<f64>| {
        let f: Vec<f64> = v.into_iter().filter(|x| x.is_finite()).collect();
        f.iter().sum::<f64>() / f.len() as f64
    };
    let (mp, md) = (mean(psi.draws.column_at(0)), mean(a.draws.column_at(0)));
    assert!((mp - md).abs() < 0.05, "psi {mp} dwp {md}");
}
