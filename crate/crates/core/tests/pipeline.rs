use conjunction_core::inference::{
    assess, significance_probability, AssessmentRequest, PivotSource, PlanarSource, ProfileSource,
};
use conjunction_core::likelihood::PlanarLikelihoodContext;
use conjunction_core::units::{LengthUnit, SpeedUnit};
use conjunction_core::{DispersionSpec, LikelihoodContext, PivotKind, RelativeState};
use nalgebra::{Vector2, Vector3};

fn case_b() -> LikelihoodContext {
    let state = RelativeState::new(
        Vector3::new(-258.909, -635.813, 126.229),
        Vector3::new(10_580.0, -3_733.0, 3_126.0),
    )
    .unwrap();
    let dispersion = DispersionSpec::from_sigma_tau(0.05, 1.0, LengthUnit::Kilometers).unwrap();
    LikelihoodContext::six_dim(&state, &dispersion).unwrap()
}

fn request(kinds: &[PivotKind]) -> AssessmentRequest {
    AssessmentRequest {
        psi0: 20.0,
        epsilon: 1e-4,
        alphas: vec![0.05, 0.025, 0.005],
        kinds: kinds.to_vec(),
        grid_points: 60,
    }
}

#[test]
fn case_b_intervals_nest_and_r_star_shifts_left() {
    let ctx = case_b();
    let (report, _) = assess(&ProfileSource::new(&ctx, None), &request(&PivotKind::FREQUENTIST)).unwrap();
    for kind in PivotKind::FREQUENTIST {
        let iv: Vec<_> = report.intervals.iter().filter(|i| i.pivot_kind == kind).collect();
        assert_eq!(iv.len(), 3);
        for w in iv.windows(2) {
            assert!(w[1].lower <= w[0].lower && w[1].upper >= w[0].upper, "{kind}");
        }
    }
    let upper = |k: PivotKind| report.intervals.iter().find(|i| i.pivot_kind == k && i.alpha == 0.05).unwrap().upper;
    assert!(upper(PivotKind::Modified) < upper(PivotKind::Root));
    assert!(report.psi_hat_star.unwrap() < report.psi_hat);
    assert!(!report.evasive_action || report.significance.iter().all(|s| !s.below_epsilon));
}

#[test]
fn planar_fast_path_matches_general_assessment() {
    let x = Vector2::new(30.0, -12.0);
    let v = (15.0f64.powi(2), 6.0f64.powi(2));
    let fast = PlanarSource::new(x, v).unwrap();
    let ctx = LikelihoodContext::planar(&PlanarLikelihoodContext::new(x, v).unwrap()).unwrap();
    let general = ProfileSource::new(&ctx, None);
    assert!((fast.psi_hat() - general.psi_hat()).abs() < 1e-12);
    assert!((fast.standard_error() - general.standard_error()).abs() < 1e-8 * fast.standard_error());
    let (a, _) = assess(&fast, &request(&PivotKind::FREQUENTIST)).unwrap();
    let (b, _) = assess(&general, &request(&PivotKind::FREQUENTIST)).unwrap();
    for (p, q) in a.intervals.iter().zip(&b.intervals) {
        assert_eq!(p.pivot_kind, q.pivot_kind);
        assert!((p.lower - q.lower).abs() < 1e-3 && (p.upper - q.upper).abs() < 1e-3, "{p:?} vs {q:?}");
    }
    for (p, q) in a.significance.iter().zip(&b.significance) {
        assert!((p.p_obs - q.p_obs).abs() < 1e-6);
    }
}

#[test]
fn small_noise_pivots_coincide() {
    let state = RelativeState::with_units(
        [-100.0, -20.0, 0.0],
        LengthUnit::Kilometers,
        [10.0, 6.0, 1.0],
        SpeedUnit::KilometersPerSecond,
    )
    .unwrap();
    let dispersion = DispersionSpec::from_sigma_tau(1e-3, 1.0, LengthUnit::Kilometers).unwrap();
    let ctx = LikelihoodContext::six_dim(&state, &dispersion).unwrap();
    let source = ProfileSource::new(&ctx, None);
    let se = source.standard_error();
    for t in [-2.0, 1.5] {
        let e = source.evaluate(ctx.psi_hat() + t * se, None).unwrap().pivots;
        assert!((e.wald - e.root).abs() < 0.05, "{e:?}");
        assert!((e.modified.unwrap() - e.root).abs() < 0.05, "{e:?}");
    }
}

#[test]
fn significance_grows_with_threshold() {
    let ctx = case_b();
    let source = ProfileSource::new(&ctx, None);
    let (_, curve) = assess(&source, &request(&[PivotKind::Modified])).unwrap();
    let p: Vec<f64> = [20.0, 200.0, 400.0, 650.0]
        .iter()
        .map(|&psi0| significance_probability(&curve, &source, psi0, PivotKind::Modified).unwrap())
        .collect();
    assert!(p.windows(2).all(|w| w[0] < w[1]), "{p:?}");
}
