//! Approximate pivots for the miss distance: Wald statistic `w`, likelihood
//! root `r`, the correction `q` and modified root `r* = r + log(q/r)/r`,
//! plus the Bayesian analogue `r*_B` under a flat or Jeffreys prior.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::likelihood::{jeffreys_density, LikelihoodContext, ProfileFit};
use crate::{Error, Result};

/// `r*` is not evaluated where `|r|` falls below this; inference routines
/// interpolate across the gap.
pub const EXCLUSION: f64 = 0.1;
/// Allowed excess of a profile log-likelihood over the overall maximum.
pub const PROFILE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotKind {
    Wald,
    Root,
    Modified,
    ModifiedBayes,
}

impl PivotKind {
    pub const ALL: [PivotKind; 4] =
        [PivotKind::Wald, PivotKind::Root, PivotKind::Modified, PivotKind::ModifiedBayes];
    pub const FREQUENTIST: [PivotKind; 3] = [PivotKind::Wald, PivotKind::Root, PivotKind::Modified];

    pub fn value(self, set: &PivotSet) -> Option<f64> {
        match self {
            PivotKind::Wald => Some(set.wald),
            PivotKind::Root => Some(set.root),
            PivotKind::Modified => set.modified,
            PivotKind::ModifiedBayes => set.modified_bayes,
        }
    }

    /// Whether the pivot is undefined in the `|r| < EXCLUSION` window.
    pub fn is_modified(self) -> bool {
        matches!(self, PivotKind::Modified | PivotKind::ModifiedBayes)
    }

    pub fn name(self) -> &'static str {
        match self {
            PivotKind::Wald => "wald",
            PivotKind::Root => "root",
            PivotKind::Modified => "modified",
            PivotKind::ModifiedBayes => "modified_bayes",
        }
    }
}

impl fmt::Display for PivotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PivotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wald" | "w" => Ok(PivotKind::Wald),
            "root" | "r" => Ok(PivotKind::Root),
            "modified" | "r*" | "rstar" => Ok(PivotKind::Modified),
            "modified_bayes" | "r*_B" | "rstar_b" => Ok(PivotKind::ModifiedBayes),
            other => Err(Error::InvalidInput(format!("unknown pivot kind {other:?}"))),
        }
    }
}

/// Prior used by the Bayesian correction `q_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    Flat,
    #[default]
    Jeffreys,
}

/// All pivots at one value of `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotSet {
    pub psi: f64,
    pub wald: f64,
    pub root: f64,
    pub correction: Option<f64>,
    pub modified: Option<f64>,
    pub correction_bayes: Option<f64>,
    pub modified_bayes: Option<f64>,
}

/// `w(psi) = j_p(psi_hat)^{1/2} (psi_hat - psi)`.
pub fn wald(psi: f64, ctx: &LikelihoodContext) -> f64 {
    (ctx.psi_hat() - psi) / ctx.standard_error()
}

/// `r(psi) = sign(psi_hat - psi) [2{l(theta_hat) - l(theta_hat_psi)}]^{1/2}`.
pub fn likelihood_root(ctx: &LikelihoodContext, fit: &ProfileFit) -> Result<f64> {
    let max = ctx.loglik(ctx.mle())?;
    root_from_loglik(ctx.psi_hat(), fit.psi, max, fit.loglik)
}

fn root_from_loglik(psi_hat: f64, psi: f64, max: f64, loglik: f64) -> Result<f64> {
    let drop = max - loglik;
    if drop < -PROFILE_SLACK {
        return Err(Error::InvalidProfile { loglik, max });
    }
    let r = (2.0 * drop.max(0.0)).sqrt();
    Ok(if psi_hat >= psi { r } else { -r })
}

/// `|y - eta(theta_hat_psi)  eta_lambda(theta_hat_psi)| |Omega|^{1/2} |j_lambda_lambda|^{-1/2}`
/// with the sign produced by the determinant.
pub fn q_determinant(ctx: &LikelihoodContext, fit: &ProfileFit) -> Result<f64> {
    let mut m = ctx.fit_jacobian(fit);
    m.set_column(0, &(ctx.observation() - ctx.fit_mean(fit)));
    let det_ll = lambda_determinant(fit)?;
    Ok(m.determinant() * (0.5 * ctx.log_det_precision()).exp() / det_ll.sqrt())
}

/// Frequentist correction `q(psi)`: the magnitude of [`q_determinant`] carrying
/// the sign of `psi_hat - psi`, so that `q/r > 0`.
pub fn q_frequentist(ctx: &LikelihoodContext, fit: &ProfileFit) -> Result<f64> {
    let q = q_determinant(ctx, fit)?.abs();
    Ok(if ctx.psi_hat() >= fit.psi { q } else { -q })
}

/// Relative step of the five-point stencil; truncation error is O(h^4).
const STENCIL_STEP: f64 = 1e-3;

/// Correction from a constructed parameter `phi(theta)`:
/// `|phi(theta_hat) - phi(theta_hat_psi)  phi_lambda(theta_hat_psi)| / |phi_theta(theta_hat)|`
/// times `|j(theta_hat)|^{1/2} / |j_lambda_lambda(theta_hat_psi)|^{1/2}`.
/// `phi_jac` is only used at `theta_hat`; `phi_lambda` at the fit is a
/// five-point difference in the fit's nuisance coordinates.
pub fn q_constructed<P, J>(ctx: &LikelihoodContext, fit: &ProfileFit, phi: P, phi_jac: J) -> Result<f64>
where
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let d = ctx.dim();
    let at = |u: &DVector<f64>| phi(&ctx.theta_at(fit.psi, u));
    let mut m = DMatrix::zeros(d, d);
    m.set_column(0, &(phi(ctx.mle())? - at(&fit.coords)?));
    for k in 0..d - 1 {
        let h = STENCIL_STEP * fit.coords[k].abs().max(1.0);
        let shifted = |t: f64| {
            let mut u = fit.coords.clone();
            u[k] += t * h;
            at(&u)
        };
        let d1 = shifted(1.0)? - shifted(-1.0)?;
        let d2 = shifted(2.0)? - shifted(-2.0)?;
        m.set_column(k + 1, &((8.0 * d1 - d2) / (12.0 * h)));
    }
    let denom = phi_jac(ctx.mle())?.determinant();
    if denom == 0.0 {
        return Err(Error::SingularInformation("constructed parameter has singular Jacobian".into()));
    }
    let det_ll = lambda_determinant(fit)?;
    Ok(m.determinant() / denom * (0.5 * ctx.log_det_info_at_mle()).exp() / det_ll.sqrt())
}

fn lambda_determinant(fit: &ProfileFit) -> Result<f64> {
    let det = fit.info_lambda.determinant();
    if !(det > 1e-300) {
        return Err(Error::SingularInformation(format!(
            "|j_lambda_lambda| = {det:.3e} at psi = {}",
            fit.psi
        )));
    }
    Ok(det)
}

/// `r* = r + log(q/r)/r`.
pub fn modified_root(root: f64, correction: f64) -> Result<f64> {
    if root.abs() < EXCLUSION {
        return Err(Error::Indeterminate(root));
    }
    let ratio = correction / root;
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "q/r = {ratio:.3e} is not positive (r = {root:.6e}, q = {correction:.6e})"
        )));
    }
    Ok(root + ratio.ln() / root)
}

/// Bayesian correction
/// `q_B = l_psi(theta_hat_psi) |j_lambda_lambda(theta_hat_psi)|^{1/2} / |j(theta_hat)|^{1/2} * f(theta_hat)/f(theta_hat_psi)`,
/// with `l_psi` the partial derivative at the constrained fit.
///
/// Everything at the fit is taken in the coordinates of [`ProfileFit::info`];
/// `l_psi` is unchanged by that since `l_lambda = 0` there, and the prior
/// density picks up the same Jacobian as `|j_lambda_lambda|^{1/2}`.
pub fn q_bayes(ctx: &LikelihoodContext, fit: &ProfileFit, prior: PriorSpec) -> Result<f64> {
    let jac = ctx.fit_jacobian(fit);
    let residual = ctx.observation() - ctx.fit_mean(fit);
    let score = jac.column(0).dot(&(ctx.precision() * residual));
    let det_ll = lambda_determinant(fit)?;
    let ratio = match prior {
        PriorSpec::Flat => 1.0,
        PriorSpec::Jeffreys => {
            let at_fit = jac.determinant().abs();
            if !(at_fit > 0.0) {
                return Err(Error::SingularInformation(format!(
                    "Jeffreys prior vanishes at psi = {}",
                    fit.psi
                )));
            }
            jeffreys_density(ctx.kind(), ctx.mle())? / at_fit
        }
    };
    Ok(score * det_ll.sqrt() / (0.5 * ctx.log_det_info_at_mle()).exp() * ratio)
}

/// Every pivot at the constrained fit `fit`. Corrections that cannot be
/// formed (singular `j_lambda_lambda`, `|r|` inside the exclusion window) are
/// left as `None`.
pub fn pivot_set(ctx: &LikelihoodContext, fit: &ProfileFit, prior: Option<PriorSpec>) -> Result<PivotSet> {
    let root = likelihood_root(ctx, fit)?;
    let correction = q_frequentist(ctx, fit).ok();
    let correction_bayes = prior.and_then(|p| q_bayes(ctx, fit, p).ok());
    Ok(PivotSet {
        psi: fit.psi,
        wald: wald(fit.psi, ctx),
        root,
        correction,
        modified: correction.and_then(|q| modified_root(root, q).ok()),
        correction_bayes,
        modified_bayes: correction_bayes.and_then(|q| modified_root(root, q).ok()),
    })
}

/// Pivots for a single Rayleigh observation, with the exact upper-tail
/// significance `Pr(Y >= y_obs; psi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayleighPivots {
    pub wald: f64,
    pub root: f64,
    pub correction: f64,
    pub modified: Option<f64>,
    pub exact_tail: f64,
}

/// Rayleigh model `f(y; psi) = (y/psi²) exp{-y²/(2 psi²)}`, where
/// `psi_hat = y/sqrt(2)` and `j(psi_hat) = 4/psi_hat²`.
pub fn rayleigh_pivots(psi: f64, y_obs: f64) -> Result<RayleighPivots> {
    if !(psi > 0.0 && y_obs > 0.0) {
        return Err(Error::InvalidInput(format!("psi = {psi} and y = {y_obs} must be positive")));
    }
    let psi_hat = y_obs / std::f64::consts::SQRT_2;
    let ratio = psi_hat / psi;
    let wald = 2.0 * (1.0 - psi / psi_hat);
    let drop = 2.0 * (psi / psi_hat).ln() + ratio * ratio - 1.0;
    let root = (2.0 * drop.max(0.0)).sqrt().copysign(psi_hat - psi);
    let correction = (1.0 - ratio * ratio).abs().copysign(psi_hat - psi);
    Ok(RayleighPivots {
        wald,
        root,
        correction,
        modified: modified_root(root, correction).ok(),
        exact_tail: (-(y_obs * y_obs) / (2.0 * psi * psi)).exp(),
    })
}

/// Constrained angle `lambda_hat_psi` in the planar model: the global
/// minimizer of `(x1 - psi cos l)²/d1² + (x2 - psi sin l)²/d2²`.
pub fn planar_profile_angle(psi: f64, x: &Vector2<f64>, variances: (f64, f64)) -> f64 {
    let lambda_hat = x.y.atan2(x.x);
    let (v1, v2) = variances;
    if psi == 0.0 || v1 == v2 {
        return lambda_hat;
    }
    let f = |l: f64| {
        let (s, c) = l.sin_cos();
        (x.x - psi * c).powi(2) / v1 + (x.y - psi * s).powi(2) / v2
    };
    let newton = |mut l: f64| {
        for _ in 0..100 {
            let (s, c) = l.sin_cos();
            let g = (x.x - psi * c) * psi * s / v1 - (x.y - psi * s) * psi * c / v2;
            let h = psi * (x.x * c - psi * (2.0 * l).cos()) / v1
                + psi * (x.y * s + psi * (2.0 * l).cos()) / v2;
            let step = if h > 0.0 { -g / h } else { -g.signum() * 0.1 };
            let step = step.clamp(-0.5, 0.5);
            let mut t = 1.0;
            let f0 = f(l);
            while t > 1e-4 && f(l + t * step) > f0 + 1e-15 * f0.abs() {
                t *= 0.5;
            }
            l += t * step;
            if (t * step).abs() < 1e-15 * (1.0 + l.abs()) {
                break;
            }
        }
        l
    };
    const SCAN: usize = 24;
    let scan_best = (0..SCAN)
        .map(|k| lambda_hat + std::f64::consts::TAU * k as f64 / SCAN as f64)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap_or(lambda_hat);
    let a = newton(lambda_hat);
    let b = newton(scan_best);
    if f(b) < f(a) - 1e-14 * f(a).abs() {
        b
    } else {
        a
    }
}

/// Closed-form planar pivots at `psi` for observation `x` and variances
/// `(d1², d2²)`. `r*_B` uses the Jeffreys prior.
pub fn planar_pivots(psi: f64, x: &Vector2<f64>, variances: (f64, f64)) -> Result<PivotSet> {
    let (v1, v2) = variances;
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::InvalidInput("variances must be positive".into()));
    }
    if !(psi >= 0.0) {
        return Err(Error::InvalidInput(format!("psi = {psi} must be non-negative")));
    }
    let psi_hat = x.norm();
    if psi_hat == 0.0 {
        return Err(Error::DegenerateGeometry("observed miss distance is zero".into()));
    }
    let lambda_hat = x.y.atan2(x.x);
    let (sh, ch) = lambda_hat.sin_cos();
    let wald = (psi_hat - psi) / (ch * ch * v1 + sh * sh * v2).sqrt();

    let l = planar_profile_angle(psi, x, variances);
    let (s, c) = l.sin_cos();
    let (e1, e2) = (x.x - psi * c, x.y - psi * s);
    let drop = 0.5 * (e1 * e1 / v1 + e2 * e2 / v2);
    let root = root_from_loglik(psi_hat, psi, 0.0, -drop)?;

    let cos2 = (2.0 * l).cos();
    let k = v2 * (x.x * c - psi * cos2) + v1 * (x.y * s + psi * cos2);
    let (correction, correction_bayes) = if psi > 0.0 && k > 0.0 {
        let q = (psi.sqrt() * (x.x * c + x.y * s - psi) / k.sqrt()).abs();
        let q = if psi_hat >= psi { q } else { -q };
        // l_psi * j_ll^{1/2} * (d1 d2 / psi_hat) * (psi_hat / psi).
        let score = e1 * c / v1 + e2 * s / v2;
        let j_ll = psi * k / (v1 * v2);
        let qb = score * j_ll.sqrt() * (v1 * v2).sqrt() / psi;
        (Some(q), Some(qb))
    } else {
        (None, None)
    };
    Ok(PivotSet {
        psi,
        wald,
        root,
        correction,
        modified: correction.and_then(|q| modified_root(root, q).ok()),
        correction_bayes,
        modified_bayes: correction_bayes.and_then(|q| modified_root(root, q).ok()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{spherical_to_state, state_to_spherical, RelativeState};
    use crate::likelihood::PlanarLikelihoodContext;
    use crate::normal;
    use nalgebra::{Matrix6, Vector3, Vector6};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rayleigh_reference_tails() {
        let p = rayleigh_pivots(0.3, 2f64.sqrt()).unwrap();
        assert!((p.wald - 1.4).abs() < 1e-12);
        assert!((normal::sf(p.wald) - 0.0808).abs() < 5e-5);
        assert!((p.root - 3.925).abs() < 1e-3);
        assert!((normal::sf(p.root) / 4.33e-5 - 1.0).abs() < 5e-3);
        assert!((p.correction - 10.111).abs() < 1e-3);
        let m = p.modified.unwrap();
        assert!((m - 4.166).abs() < 1e-3);
        assert!((normal::sf(m) / 1.55e-5 - 1.0).abs() < 5e-3);
        assert!((p.exact_tail / 1.49e-5 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn rayleigh_at_mle() {
        let p = rayleigh_pivots(1.0, 2f64.sqrt()).unwrap();
        assert!(p.wald.abs() < 1e-15 && p.root.abs() < 1e-7);
        assert!(p.modified.is_none());
    }

    #[test]
    fn planar_equal_variance_closed_forms() {
        let x = Vector2::new(3.0, 4.0);
        let d = 1.5;
        for &psi in &[0.5, 2.0, 4.5, 7.0, 12.0] {
            let p = planar_pivots(psi, &x, (d * d, d * d)).unwrap();
            assert!((p.root - (5.0 - psi) / d).abs() < 1e-12);
            assert!((p.wald - p.root).abs() < 1e-12);
            let q = p.root * (psi / 5.0f64).sqrt();
            assert!((p.correction.unwrap() - q).abs() < 1e-12);
            let m = (5.0 - psi) / d + d * (psi / 5.0f64).ln() / (2.0 * (5.0 - psi));
            assert!((p.modified.unwrap() - m).abs() < 1e-11);
            assert!(p.modified.unwrap() < p.root);
        }
        // Limit at psi_hat.
        let near = planar_pivots(5.0 - 0.151, &x, (d * d, d * d)).unwrap();
        assert!((near.modified.unwrap() - near.root + d / 10.0).abs() < 0.01);
    }

    #[test]
    fn modified_root_guards() {
        assert!(matches!(modified_root(0.05, 0.05), Err(Error::Indeterminate(_))));
        assert!(modified_root(1.0, -1.0).is_err());
        assert!((modified_root(2.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pivot_kind_round_trip() {
        for k in PivotKind::ALL {
            assert_eq!(k.name().parse::<PivotKind>().unwrap(), k);
        }
        assert!("x".parse::<PivotKind>().is_err());
    }

    fn random_six_dim(rng: &mut ChaCha8Rng) -> LikelihoodContext {
        let truth = RelativeState::new(
            Vector3::new(-258.909, -635.813, 126.229) * (0.5 + rng.random::<f64>()),
            Vector3::new(10_580.0, -3_733.0, 3_126.0),
        )
        .unwrap();
        let sigma = 20.0 + 80.0 * rng.random::<f64>();
        let y = truth.to_vector() + Vector6::from_fn(|_, _| sigma * (rng.random::<f64>() - 0.5));
        let mut a = Matrix6::zeros();
        for v in a.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        let cov = (a * a.transpose() + Matrix6::identity()) * sigma * sigma;
        let omega = cov.try_inverse().unwrap();
        LikelihoodContext::from_precision(&y, &((omega + omega.transpose()) * 0.5)).unwrap()
    }

    #[test]
    fn determinant_forms_agree_six_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let ctx = random_six_dim(&mut rng);
            let psi = ctx.psi_hat() * (0.6 + 0.8 * rng.random::<f64>());
            let fit = ctx.profile_fit(psi, None).unwrap();
            let kind = ctx.kind();
            let q21 = q_determinant(&ctx, &fit).unwrap();
            let q15 = q_constructed(&ctx, &fit, |t| kind.mean(t), |t| kind.jacobian(t)).unwrap();
            assert!((q21.abs() - q15.abs()).abs() <= 1e-8 * q21.abs(), "{q21} vs {q15}");
            // Any affine map of eta gives the same value.
            let g = DMatrix::from_fn(6, 6, |i, j| if i == j { 2.0 } else { 0.1 * (i + 2 * j) as f64 });
            let a = DVector::from_fn(6, |i, _| i as f64);
            let qa = q_constructed(
                &ctx,
                &fit,
                |t| Ok(&g * kind.mean(t)? + &a),
                |t| Ok(&g * kind.jacobian(t)?),
            )
            .unwrap();
            assert!((qa - q15).abs() <= 1e-8 * q15.abs(), "{qa} vs {q15}");
        }
    }

    #[test]
    fn root_matches_two_point_deviance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_six_dim(&mut rng);
        let psi = 0.7 * ctx.psi_hat();
        let fit = ctx.profile_fit(psi, None).unwrap();
        let r = likelihood_root(&ctx, &fit).unwrap();
        let dev = ctx.loglik(ctx.mle()).unwrap() - ctx.loglik(&fit.params()).unwrap();
        assert!((r - (2.0 * dev).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn invalid_profile_detected() {
        assert!(matches!(
            root_from_loglik(1.0, 0.5, 0.0, 1e-6),
            Err(Error::InvalidProfile { .. })
        ));
    }

    #[test]
    fn bayes_correction_vanishes_at_mle_and_is_close_to_frequentist() {
        let truth = state_to_spherical(
            &RelativeState::new(Vector3::new(-2588.0, -6358.0, 1262.0), Vector3::new(10_580.0, -3_733.0, 3_126.0))
                .unwrap(),
        )
        .unwrap();
        let y = spherical_to_state(&truth).unwrap() + Vector6::new(30.0, -20.0, 10.0, 5.0, -3.0, 1.0);
        let omega = Matrix6::identity() / 400.0;
        let ctx = LikelihoodContext::from_precision(&y, &omega).unwrap();
        let fit = ctx.profile_fit(ctx.psi_hat(), None).unwrap();
        let at_mle = q_bayes(&ctx, &fit, PriorSpec::Jeffreys).unwrap();
        let psi = ctx.psi_hat() - 50.0;
        let fit = ctx.profile_fit(psi, None).unwrap();
        let set = pivot_set(&ctx, &fit, Some(PriorSpec::Jeffreys)).unwrap();
        let (m, mb) = (set.modified.unwrap(), set.modified_bayes.unwrap());
        assert!((m - mb).abs() < 0.05 * m.abs(), "{m} vs {mb}");
        let flat = q_bayes(&ctx, &fit, PriorSpec::Flat).unwrap();
        let jeff = q_bayes(&ctx, &fit, PriorSpec::Jeffreys).unwrap();
        assert!(at_mle.abs() < 1e-6 * jeff.abs(), "{at_mle} vs {jeff}");
        let ratio = jeffreys_density(ctx.kind(), ctx.mle()).unwrap()
            / ctx.fit_jacobian(&fit).determinant().abs();
        assert!((jeff - flat * ratio).abs() < 1e-12 * jeff.abs());
    }

    #[test]
    fn case_c_significance() {
        let x = Vector2::new(11.84, -1.36);
        let v = (25.1f64.powi(2), 11.61f64.powi(2));
        let p = planar_pivots(10.0, &x, v).unwrap();
        for z in [p.wald, p.root] {
            let s = normal::sf(z);
            assert!((0.45..=0.55).contains(&s), "{s}");
        }
        // |r| is inside the exclusion window here.
        assert!(p.root.abs() < EXCLUSION && p.modified.is_none());
    }

    fn general_planar(psi: f64, x: &Vector2<f64>, v: (f64, f64)) -> PivotSet {
        let ctx = LikelihoodContext::planar(&PlanarLikelihoodContext::new(*x, v).unwrap()).unwrap();
        let fit = ctx.profile_fit(psi, None).unwrap();
        pivot_set(&ctx, &fit, Some(PriorSpec::Jeffreys)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn planar_closed_form_matches_general(
            x1 in -50.0..50.0f64, x2 in -50.0..50.0f64,
            d1 in 1.0..30.0f64, d2 in 1.0..30.0f64, frac in 0.05..3.0f64,
        ) {
            let x = Vector2::new(x1, x2);
            prop_assume!(x.norm() > 0.5);
            let psi = frac * x.norm();
            let v = (d1 * d1, d2 * d2);
            let a = planar_pivots(psi, &x, v).unwrap();
            let b = general_planar(psi, &x, v);
            let close = |p: f64, q: f64| (p - q).abs() <= 1e-8 * (1.0 + p.abs());
            prop_assert!(close(a.wald, b.wald));
            prop_assert!(close(a.root, b.root), "{} vs {}", a.root, b.root);
            prop_assert!(close(a.correction.unwrap(), b.correction.unwrap()));
            prop_assert!(close(a.correction_bayes.unwrap(), b.correction_bayes.unwrap()));
        }

        #[test]
        fn planar_signs_agree(
            x1 in -50.0..50.0f64, x2 in -50.0..50.0f64,
            d1 in 1.0..30.0f64, d2 in 1.0..30.0f64, frac in 0.05..3.0f64,
        ) {
            let x = Vector2::new(x1, x2);
            prop_assume!(x.norm() > 0.5 && (frac - 1.0).abs() > 1e-6);
            let p = planar_pivots(frac * x.norm(), &x, (d1 * d1, d2 * d2)).unwrap();
            prop_assert_eq!(p.wald.signum(), p.root.signum());
            prop_assert_eq!(p.root.signum(), (1.0 - frac).signum());
        }
    }
}
