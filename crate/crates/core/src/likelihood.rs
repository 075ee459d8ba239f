//! Gaussian log-likelihoods for the six-dimensional and planar conjunction
//! models, their derivatives, and profile (constrained) maximum likelihood.
//!
//! Parameters are handled as vectors `theta = (psi, lambda)` with the interest
//! parameter first. Both models have as many parameters as observation
//! components, so the unconstrained MLE reproduces the observation exactly.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::geometry::{
    spherical_to_state, state_to_spherical, unit_vector, unit_vector_partials,
    ConjunctionParams, DispersionSpec, PlanarParams, RelativeState, SIN_BETA_FLOOR,
};
use crate::optimize::{minimize, Derivatives, MinimizeOptions, Minimum};
use crate::{Error, Result};

/// Relative finite-difference step for second derivatives of the mean.
pub const FD_STEP: f64 = 1e-6;
/// Profile fits must reach this gradient norm (in the optimizer's
/// dimensionless coordinates).
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 500;
/// Multiple of the elementwise rounding bound on the gradient below which
/// it is treated as zero.
const GRADIENT_ROUNDING: f64 = 16.0;
pub const RESTARTS: usize = 5;
const POLAR_SCAN: usize = 72;

/// Which mean model `eta(theta)` a context uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `theta = (psi, theta1, phi1, ||nu||, theta2, phi2)`, six-dimensional state.
    Spherical,
    /// `theta = (psi, lambda)`, encounter-plane position.
    Polar,
}

impl ModelKind {
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Spherical => 6,
            ModelKind::Polar => 2,
        }
    }

    pub fn mean(self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ModelKind::Spherical => {
                let p = to_params(theta);
                Ok(DVector::from_column_slice(spherical_to_state(&p)?.as_slice()))
            }
            ModelKind::Polar => {
                let (s, c) = theta[1].sin_cos();
                Ok(DVector::from_vec(vec![theta[0] * c, theta[0] * s]))
            }
        }
    }

    pub fn jacobian(self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            ModelKind::Spherical => {
                let j = eta_jacobian(&to_params(theta))?;
                Ok(DMatrix::from_column_slice(6, 6, j.as_slice()))
            }
            ModelKind::Polar => {
                let (psi, (s, c)) = (theta[0], theta[1].sin_cos());
                Ok(DMatrix::from_row_slice(2, 2, &[c, -psi * s, s, psi * c]))
            }
        }
    }

    /// Representative of `theta` with angles in their canonical ranges.
    pub fn canonical(self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelKind::Spherical => {
                DVector::from_column_slice(&to_params(theta).canonical().to_array())
            }
            ModelKind::Polar => {
                let mut t = theta.clone();
                t[1] = t[1].rem_euclid(TAU);
                if t[1] >= TAU {
                    t[1] = 0.0;
                }
                t
            }
        }
    }

    // Optimizer coordinates for the nuisance parameter. For the spherical
    // model the position is split along the velocity direction u2 and across
    // it, in the tangent frame (e_theta, e_phi) at u2:
    //   mu = a u2 + psi (cos(g) e_theta + sin(g) e_phi),  nu = exp(l) u2,
    // so u = (a, g, l, theta2, phi2) with a = psi cot(beta) the along-track
    // offset. Unlike the angles of u1 these stay regular as the directions
    // become collinear, and at psi = 0 they describe every trajectory
    // through the origin rather than only mu = 0.
    fn to_free(self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelKind::Polar => DVector::from_vec(vec![theta[1]]),
            ModelKind::Spherical => {
                let u1 = unit_vector(theta[1], theta[2]);
                let u2 = unit_vector(theta[4], theta[5]);
                let (e1, e2) = tangent_frame(theta[4], theta[5]);
                let across = u1.cross(&u2).norm().max(SIN_BETA_FLOOR);
                let a = theta[0] * u1.dot(&u2) / across;
                let g = u1.dot(&e2).atan2(u1.dot(&e1));
                DVector::from_vec(vec![a, g, theta[3].ln(), theta[4], theta[5]])
            }
        }
    }

    fn free_mean(self, psi: f64, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelKind::Polar => {
                let (s, c) = u[0].sin_cos();
                DVector::from_vec(vec![psi * c, psi * s])
            }
            ModelKind::Spherical => {
                let (mu, nu) = free_position_velocity(psi, u);
                DVector::from_vec(vec![mu.x, mu.y, mu.z, nu.x, nu.y, nu.z])
            }
        }
    }

    pub(crate) fn theta_from_free(self, psi: f64, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelKind::Polar => DVector::from_vec(vec![psi, u[0]]),
            ModelKind::Spherical => {
                let (mu, _) = free_position_velocity(psi, u);
                let dir = if mu.norm() > 0.0 { mu.normalize() } else { unit_vector(u[3], u[4]) };
                let theta1 = dir.x.hypot(dir.y).atan2(dir.z);
                let phi1 = dir.y.atan2(dir.x);
                DVector::from_vec(vec![psi, theta1, phi1, u[2].exp(), u[3], u[4]])
            }
        }
    }

    // d eta / d (psi, u).
    fn coord_jacobian(self, psi: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        match self {
            ModelKind::Polar => j.set_column(0, &self.free_mean(1.0, u)),
            ModelKind::Spherical => {
                let (e1, e2) = tangent_frame(u[3], u[4]);
                let (sg, cg) = u[1].sin_cos();
                j.view_mut((0, 0), (3, 1)).copy_from(&(e1 * cg + e2 * sg));
            }
        }
        j.view_mut((0, 1), (d, d - 1)).copy_from(&self.free_jacobian(psi, u));
        j
    }

    // d eta / d u.
    fn free_jacobian(self, psi: f64, u: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ModelKind::Polar => {
                let (s, c) = u[0].sin_cos();
                DMatrix::from_column_slice(2, 1, &[-psi * s, psi * c])
            }
            ModelKind::Spherical => {
                let (a, g, speed, t2, p2) = (u[0], u[1], u[2].exp(), u[3], u[4]);
                let u2 = unit_vector(t2, p2);
                let (e1, e2) = tangent_frame(t2, p2);
                let (sg, cg) = g.sin_cos();
                let (st, ct) = t2.sin_cos();
                let (sp, cp) = p2.sin_cos();
                // d e_phi / d phi2; e_phi does not depend on theta2.
                let de2 = Vector3::new(-cp, -sp, 0.0);
                let cols: [(Vector3<f64>, Vector3<f64>); 5] = [
                    (u2, Vector3::zeros()),
                    ((e2 * cg - e1 * sg) * psi, Vector3::zeros()),
                    (Vector3::zeros(), u2 * speed),
                    (e1 * a - u2 * (psi * cg), e1 * speed),
                    (e2 * (a * st + psi * cg * ct) + de2 * (psi * sg), e2 * (speed * st)),
                ];
                let mut j = DMatrix::zeros(6, 5);
                for (k, (dmu, dnu)) in cols.iter().enumerate() {
                    j.view_mut((0, k), (3, 1)).copy_from(dmu);
                    j.view_mut((3, k), (3, 1)).copy_from(dnu);
                }
                j
            }
        }
    }
}

// (e_theta, e_phi): orthonormal tangent vectors at unit_vector(theta, phi).
fn tangent_frame(theta: f64, phi: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (Vector3::new(ct * cp, ct * sp, -st), Vector3::new(-sp, cp, 0.0))
}

fn free_position_velocity(psi: f64, u: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u2 = unit_vector(u[3], u[4]);
    let (e1, e2) = tangent_frame(u[3], u[4]);
    let (sg, cg) = u[1].sin_cos();
    (u2 * u[0] + (e1 * cg + e2 * sg) * psi, u2 * u[2].exp())
}

fn to_params(theta: &DVector<f64>) -> ConjunctionParams {
    ConjunctionParams::from_array([theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]])
}

/// Analytic Jacobian `d eta / d theta` of the six-dimensional mean; columns
/// follow the parameter order `(psi, theta1, phi1, ||nu||, theta2, phi2)`.
pub fn eta_jacobian(params: &ConjunctionParams) -> Result<Matrix6<f64>> {
    let u1 = unit_vector(params.theta1, params.phi1);
    let u2 = unit_vector(params.theta2, params.phi2);
    let (a1, b1) = unit_vector_partials(params.theta1, params.phi1);
    let (a2, b2) = unit_vector_partials(params.theta2, params.phi2);
    let c = u1.dot(&u2);
    let s = u1.cross(&u2).norm();
    if s < SIN_BETA_FLOOR {
        return Err(Error::DegenerateGeometry(format!(
            "|sin beta| = {s:.3e}: Jacobian undefined"
        )));
    }
    let psi = params.psi;
    let s3 = s * s * s;
    let cols: [(Vector3<f64>, Vector3<f64>); 6] = [
        (u1 / s, Vector3::zeros()),
        (psi * (a1 / s + u1 * (c * a1.dot(&u2) / s3)), Vector3::zeros()),
        (psi * (b1 / s + u1 * (c * b1.dot(&u2) / s3)), Vector3::zeros()),
        (Vector3::zeros(), u2),
        (u1 * (psi * c * u1.dot(&a2) / s3), a2 * params.speed),
        (u1 * (psi * c * u1.dot(&b2) / s3), b2 * params.speed),
    ];
    let mut j = Matrix6::zeros();
    for (k, (dmu, dnu)) in cols.iter().enumerate() {
        j.fixed_view_mut::<3, 1>(0, k).copy_from(dmu);
        j.fixed_view_mut::<3, 1>(3, k).copy_from(dnu);
    }
    Ok(j)
}

/// Observation and dispersion matrix for one of the two models.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    kind: ModelKind,
    observation: DVector<f64>,
    precision: DMatrix<f64>,
    // Upper factor R with Omega = R^T R, so that l = -|R (y - eta)|²/2.
    factor: DMatrix<f64>,
    log_det_precision: f64,
    mle: DVector<f64>,
    info_at_mle: DMatrix<f64>,
    log_det_info_at_mle: f64,
    standard_error: f64,
}

impl LikelihoodContext {
    /// Six-dimensional context for a relative state and its covariance.
    pub fn six_dim(state: &RelativeState, dispersion: &DispersionSpec) -> Result<Self> {
        let mle = state_to_spherical(state)?;
        let omega = dispersion.precision()?;
        Self::build(
            ModelKind::Spherical,
            DVector::from_column_slice(state.to_vector().as_slice()),
            DMatrix::from_column_slice(6, 6, omega.as_slice()),
            DVector::from_column_slice(&mle.to_array()),
        )
    }

    /// Six-dimensional context from an observation vector and `Omega`.
    pub fn from_precision(y: &Vector6<f64>, precision: &Matrix6<f64>) -> Result<Self> {
        let state = RelativeState::from_vector(y)?;
        let mle = state_to_spherical(&state)?;
        Self::build(
            ModelKind::Spherical,
            DVector::from_column_slice(y.as_slice()),
            DMatrix::from_column_slice(6, 6, precision.as_slice()),
            DVector::from_column_slice(&mle.to_array()),
        )
    }

    /// Planar model as a two-parameter instance of the general machinery.
    pub fn planar(ctx: &PlanarLikelihoodContext) -> Result<Self> {
        let mle = ctx.mle();
        let (v1, v2) = ctx.variances;
        Self::build(
            ModelKind::Polar,
            DVector::from_column_slice(ctx.observation.as_slice()),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / v1, 1.0 / v2])),
            DVector::from_vec(vec![mle.psi, mle.lambda]),
        )
    }

    fn build(
        kind: ModelKind,
        observation: DVector<f64>,
        precision: DMatrix<f64>,
        mle: DVector<f64>,
    ) -> Result<Self> {
        let chol = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("precision matrix is not positive definite".into()))?;
        let l = chol.l();
        let log_det_precision = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let factor = l.transpose();
        if mle[0] == 0.0 {
            return Err(Error::DegenerateGeometry(
                "observed miss distance is zero; Jacobian is singular at the MLE".into(),
            ));
        }
        let j = kind.jacobian(&mle)?;
        let info = j.transpose() * &precision * &j;
        let info = (&info + info.transpose()) * 0.5;
        let lu = info.clone().lu();
        let det = lu.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::SingularInformation(format!(
                "observed information at the MLE has determinant {det:.3e}"
            )));
        }
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::SingularInformation("observed information not invertible".into()))?;
        let var = inv[(0, 0)];
        if !(var > 0.0) {
            return Err(Error::SingularInformation(format!("var(psi_hat) = {var:.3e}")));
        }
        Ok(Self {
            kind,
            observation,
            precision,
            factor,
            log_det_precision,
            mle,
            info_at_mle: info,
            log_det_info_at_mle: det.ln(),
            standard_error: var.sqrt(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.observation
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_precision
    }

    /// Overall MLE `theta_hat`.
    pub fn mle(&self) -> &DVector<f64> {
        &self.mle
    }

    pub fn psi_hat(&self) -> f64 {
        self.mle[0]
    }

    /// `j(theta_hat) = eta_theta^T Omega eta_theta`.
    pub fn info_at_mle(&self) -> &DMatrix<f64> {
        &self.info_at_mle
    }

    pub fn log_det_info_at_mle(&self) -> f64 {
        self.log_det_info_at_mle
    }

    /// `se(psi_hat) = {j^{-1}(theta_hat)}_{11}^{1/2} = j_p(psi_hat)^{-1/2}`.
    pub fn standard_error(&self) -> f64 {
        self.standard_error
    }

    pub fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.observation - self.kind.mean(theta)?)
    }

    /// `l(theta) = -(y - eta)^T Omega (y - eta) / 2`.
    pub fn loglik(&self, theta: &DVector<f64>) -> Result<f64> {
        let z = &self.factor * self.residual(theta)?;
        Ok(-0.5 * z.norm_squared())
    }

    /// Gradient of `l` with respect to `theta`.
    pub fn score(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let j = self.kind.jacobian(theta)?;
        Ok(j.transpose() * (&self.precision * self.residual(theta)?))
    }

    /// Observed information `j(theta) = -d²l/d theta d theta^T`. The
    /// curvature of `eta` enters through central differences of the analytic
    /// Jacobian.
    pub fn observed_information(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let j = self.kind.jacobian(theta)?;
        let weighted = &self.precision * self.residual(theta)?;
        let mut info = j.transpose() * &self.precision * &j;
        for r in 0..d {
            let h = FD_STEP * theta[r].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[r] += h;
            tm[r] -= h;
            let djr = (self.kind.jacobian(&tp)? - self.kind.jacobian(&tm)?) / (2.0 * h);
            let row = djr.transpose() * &weighted;
            for s in 0..d {
                info[(r, s)] -= row[s];
            }
        }
        Ok((&info + info.transpose()) * 0.5)
    }

    /// Constrained MLE of the nuisance parameter at fixed `psi`. `init` is a
    /// starting point in optimizer coordinates, typically
    /// [`ProfileFit::coords`] from a neighbouring `psi`; the overall MLE and
    /// a projection of the observation are tried as well.
    pub fn profile_fit(&self, psi: f64, init: Option<&DVector<f64>>) -> Result<ProfileFit> {
        if !(psi >= 0.0) || !psi.is_finite() {
            return Err(Error::InvalidInput(format!("psi = {psi} must be non-negative")));
        }
        let mut candidates: Vec<DVector<f64>> = init.into_iter().cloned().collect();
        candidates.push(self.kind.to_free(&self.mle));
        candidates.extend(self.projected_start(psi));
        candidates.sort_by(|a, b| self.free_objective(psi, a).total_cmp(&self.free_objective(psi, b)));
        let opts = MinimizeOptions { grad_tol: GRAD_TOL, max_iter: MAX_ITER };
        let mut best: Option<(f64, DVector<f64>, usize)> = None;
        let mut total_iter = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(psi.to_bits());
        let mut starts = vec![candidates[0].clone()];
        for attempt in 0..=RESTARTS {
            if attempt > 0 {
                let base = if attempt < candidates.len() {
                    candidates[attempt].clone()
                } else {
                    best.as_ref().map(|b| b.1.clone()).unwrap_or_else(|| starts[0].clone())
                };
                let jitter = 0.3 * attempt as f64;
                let u = base.map(|v| v + jitter * (rng.random::<f64>() - 0.5));
                starts.push(u);
            }
            let u0 = starts[attempt].clone();
            let run = minimize(
                u0,
                |u| Ok(self.free_objective(psi, u)),
                |u| self.free_derivatives(psi, u),
                opts,
            );
            let Ok(m) = run else { continue };
            total_iter += m.iterations;
            if m.converged {
                let m = match self.kind {
                    ModelKind::Polar => self.polar_global(psi, m, opts, &mut total_iter),
                    ModelKind::Spherical => m,
                };
                return self.finish_fit(psi, m.x, m.value, m.grad_norm, true, total_iter);
            }
            if best.as_ref().is_none_or(|b| m.grad_norm < b.0) {
                best = Some((m.grad_norm, m.x.clone(), m.iterations));
            }
        }
        let grad_norm = best.as_ref().map_or(f64::NAN, |b| b.0);
        Err(Error::NonConvergence { psi, grad_norm, iterations: total_iter })
    }

    // Feasible point near the observation: the observed velocity, and the
    // observed position with its component across the velocity rescaled to
    // length psi.
    fn projected_start(&self, psi: f64) -> Option<DVector<f64>> {
        if self.kind != ModelKind::Spherical || psi <= 0.0 {
            return None;
        }
        let y = &self.observation;
        let mu = Vector3::new(y[0], y[1], y[2]);
        let nu = Vector3::new(y[3], y[4], y[5]);
        let speed = nu.norm();
        if !(speed > 0.0) {
            return None;
        }
        let n = nu / speed;
        let theta2 = n.x.hypot(n.y).atan2(n.z);
        let phi2 = n.y.atan2(n.x);
        let (e1, e2) = tangent_frame(theta2, phi2);
        let across = mu - n * mu.dot(&n);
        if !(across.norm() > 0.0) {
            return None;
        }
        let g = across.dot(&e2).atan2(across.dot(&e1));
        Some(DVector::from_vec(vec![mu.dot(&n) / psi, g, speed.ln(), theta2, phi2]))
    }

    // The planar profile has a one-dimensional nuisance, so a local minimum
    // can be checked against a scan of the whole circle.
    fn polar_global(&self, psi: f64, found: Minimum, opts: MinimizeOptions, iterations: &mut usize) -> Minimum {
        let f = |l: f64| {
            self.loglik(&DVector::from_vec(vec![psi, l])).map_or(f64::INFINITY, |v| -v)
        };
        let best = (0..POLAR_SCAN)
            .map(|i| TAU * i as f64 / POLAR_SCAN as f64)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap_or(0.0);
        if f(best) >= found.value {
            return found;
        }
        let start = DVector::from_vec(vec![best]);
        match minimize(
            start,
            |u| Ok(self.free_objective(psi, u)),
            |u| self.free_derivatives(psi, u),
            opts,
        ) {
            Ok(m) => {
                *iterations += m.iterations;
                if m.converged && m.value < found.value {
                    m
                } else {
                    found
                }
            }
            Err(_) => found,
        }
    }

    // Minus the log-likelihood at the constrained point with optimizer
    // coordinates u.
    fn free_objective(&self, psi: f64, u: &DVector<f64>) -> f64 {
        let res = &self.observation - self.kind.free_mean(psi, u);
        0.5 * (&self.factor * res).norm_squared()
    }

    fn free_derivatives(&self, psi: f64, u: &DVector<f64>) -> Result<Derivatives> {
        let mean = self.kind.free_mean(psi, u);
        let res = &self.observation - &mean;
        let weighted = &self.precision * &res;
        let ju = self.kind.free_jacobian(psi, u);
        let gn = ju.transpose() * &self.precision * &ju;
        let gradient = -(ju.transpose() * &weighted);
        let m = u.len();
        let mut hessian = gn.clone();
        for r in 0..m {
            let h = FD_STEP * u[r].abs().max(1.0);
            let mut up = u.clone();
            let mut um = u.clone();
            up[r] += h;
            um[r] -= h;
            let dj = (self.kind.free_jacobian(psi, &up) - self.kind.free_jacobian(psi, &um)) / (2.0 * h);
            let row = dj.transpose() * &weighted;
            for s in 0..m {
                hessian[(r, s)] -= row[s];
            }
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let magnitude = self.observation.abs() + mean.abs();
        let gradient_floor =
            GRADIENT_ROUNDING * f64::EPSILON * (ju.abs().transpose() * self.precision.abs() * magnitude).norm();
        let z = &self.factor * res;
        Ok(Derivatives { value: 0.5 * z.norm_squared(), gradient, hessian, gauss_newton: gn, gradient_floor })
    }

    fn finish_fit(
        &self,
        psi: f64,
        coords: DVector<f64>,
        neg_loglik: f64,
        grad_norm: f64,
        converged: bool,
        iterations: usize,
    ) -> Result<ProfileFit> {
        let theta = self.kind.canonical(&self.kind.theta_from_free(psi, &coords));
        let info = self.coord_information(psi, &coords);
        let d = self.dim();
        let info_lambda = info.view((1, 1), (d - 1, d - 1)).into_owned();
        Ok(ProfileFit {
            psi,
            lambda_hat: theta.rows(1, d - 1).into_owned(),
            coords,
            loglik: -neg_loglik,
            info_lambda,
            info,
            converged,
            iterations,
            grad_norm,
        })
    }

    // Observed information in (psi, u).
    fn coord_information(&self, psi: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let point = |x: &DVector<f64>| (x[0], x.rows(1, d - 1).into_owned());
        let mut x = DVector::zeros(d);
        x[0] = psi;
        x.rows_mut(1, d - 1).copy_from(u);
        let j = self.kind.coord_jacobian(psi, u);
        let weighted = &self.precision * (&self.observation - self.kind.free_mean(psi, u));
        let mut info = j.transpose() * &self.precision * &j;
        for r in 0..d {
            let h = FD_STEP * x[r].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[r] += h;
            xm[r] -= h;
            let (pp, up) = point(&xp);
            let (pm, um) = point(&xm);
            let djr = (self.kind.coord_jacobian(pp, &up) - self.kind.coord_jacobian(pm, &um)) / (2.0 * h);
            let row = djr.transpose() * &weighted;
            for s in 0..d {
                info[(r, s)] -= row[s];
            }
        }
        (&info + info.transpose()) * 0.5
    }

    /// `eta` at a constrained fit.
    pub fn fit_mean(&self, fit: &ProfileFit) -> DVector<f64> {
        self.kind.free_mean(fit.psi, &fit.coords)
    }

    /// `d eta / d (psi, u)` at a constrained fit, in the coordinates of
    /// [`ProfileFit::info`].
    pub fn fit_jacobian(&self, fit: &ProfileFit) -> DMatrix<f64> {
        self.kind.coord_jacobian(fit.psi, &fit.coords)
    }

    /// `theta` at the point with miss distance `psi` and nuisance coordinates `u`.
    pub fn theta_at(&self, psi: f64, u: &DVector<f64>) -> DVector<f64> {
        self.kind.theta_from_free(psi, u)
    }

    /// Profile information `j_p(psi) = |j(theta_hat_psi)| / |j_lambda_lambda(theta_hat_psi)|`.
    pub fn profile_information(&self, fit: &ProfileFit) -> Result<f64> {
        let dl = fit.info_lambda.determinant();
        if dl.abs() < 1e-300 {
            return Err(Error::SingularInformation(format!(
                "|j_lambda_lambda| = {dl:.3e} at psi = {}",
                fit.psi
            )));
        }
        Ok(fit.info.determinant() / dl)
    }
}

/// Constrained fit at a fixed miss distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileFit {
    pub psi: f64,
    /// `lambda_hat_psi` in natural coordinates.
    pub lambda_hat: DVector<f64>,
    /// The same point in the optimizer's nuisance coordinates `u`. Natural
    /// coordinates degenerate as the two directions become collinear; these
    /// do not.
    pub coords: DVector<f64>,
    pub loglik: f64,
    /// `j_lambda_lambda(theta_hat_psi)` with respect to `u`.
    pub info_lambda: DMatrix<f64>,
    /// Full `j(theta_hat_psi)` with respect to `(psi, u)`. Determinant ratios
    /// such as `|j| / |j_lambda_lambda|` do not depend on this choice.
    pub info: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ProfileFit {
    /// `theta_hat_psi = (psi, lambda_hat_psi)`.
    pub fn params(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.lambda_hat.len() + 1);
        t[0] = self.psi;
        t.rows_mut(1, self.lambda_hat.len()).copy_from(&self.lambda_hat);
        t
    }
}

/// Encounter-plane observation `x` with variances `(d1², d2²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarLikelihoodContext {
    pub observation: Vector2<f64>,
    pub variances: (f64, f64),
}

impl PlanarLikelihoodContext {
    pub fn new(observation: Vector2<f64>, variances: (f64, f64)) -> Result<Self> {
        if !(variances.0 > 0.0 && variances.1 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "variances ({}, {}) must be positive",
                variances.0, variances.1
            )));
        }
        if !observation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("observation is not finite".into()));
        }
        Ok(Self { observation, variances })
    }

    /// `psi_hat = ||x||`, `lambda_hat = atan2(x2, x1)`.
    pub fn mle(&self) -> PlanarParams {
        PlanarParams::from_xi(&self.observation)
    }

    pub fn precision(&self) -> Matrix2<f64> {
        Matrix2::new(1.0 / self.variances.0, 0.0, 0.0, 1.0 / self.variances.1)
    }
}

/// Six-dimensional log-likelihood.
pub fn loglik_6d(params: &ConjunctionParams, ctx: &LikelihoodContext) -> Result<f64> {
    if ctx.kind() != ModelKind::Spherical {
        return Err(Error::InvalidInput("context is not six-dimensional".into()));
    }
    ctx.loglik(&DVector::from_column_slice(&params.to_array()))
}

/// Planar log-likelihood
/// `-{(x1 - psi cos lambda)²/d1² + (x2 - psi sin lambda)²/d2²}/2`.
pub fn loglik_planar(params: &PlanarParams, ctx: &PlanarLikelihoodContext) -> f64 {
    let xi = params.xi();
    let (a, b) = (ctx.observation.x - xi.x, ctx.observation.y - xi.y);
    -0.5 * (a * a / ctx.variances.0 + b * b / ctx.variances.1)
}

/// Log-likelihood of independent epochs `(y_j, Omega_j)` sharing the miss
/// distance `psi`, each with its own nuisance
/// `lambda_j = (theta1, phi1, ||nu||, theta2, phi2)`.
pub fn loglik_multi(
    psi: f64,
    nuisances: &[[f64; 5]],
    observations: &[(Vector6<f64>, Matrix6<f64>)],
) -> Result<f64> {
    if nuisances.is_empty() || nuisances.len() != observations.len() {
        return Err(Error::InvalidInput(format!(
            "{} nuisance vectors for {} observations",
            nuisances.len(),
            observations.len()
        )));
    }
    let mut total = 0.0;
    for (l, (y, omega)) in nuisances.iter().zip(observations) {
        let p = ConjunctionParams::from_array([psi, l[0], l[1], l[2], l[3], l[4]]);
        let r = y - spherical_to_state(&p)?;
        total += -0.5 * (r.transpose() * omega * r)[(0, 0)];
    }
    Ok(total)
}

/// Jeffreys prior density (up to a constant), `|det eta_theta(theta)|`.
pub fn jeffreys_density(kind: ModelKind, theta: &DVector<f64>) -> Result<f64> {
    Ok(kind.jacobian(theta)?.determinant().abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn case_b_params() -> ConjunctionParams {
        let s = RelativeState::new(
            Vector3::new(-258.909, -635.813, 126.229),
            Vector3::new(10_580.0, -3_733.0, 3_126.0),
        )
        .unwrap();
        state_to_spherical(&s).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        for v in m.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        (m * m.transpose() + Matrix6::identity() * 0.5) * scale
    }

    fn fd_jacobian(p: &ConjunctionParams) -> Matrix6<f64> {
        let base = p.to_array();
        let mut j = Matrix6::zeros();
        for k in 0..6 {
            let h = 1e-6 * base[k].abs().max(1.0);
            let mut a = base;
            let mut b = base;
            a[k] += h;
            b[k] -= h;
            let col = (spherical_to_state(&ConjunctionParams::from_array(a)).unwrap()
                - spherical_to_state(&ConjunctionParams::from_array(b)).unwrap())
                / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    #[test]
    fn loglik_zero_at_mle() {
        let p = case_b_params();
        let state = RelativeState::from_vector(&spherical_to_state(&p).unwrap()).unwrap();
        let disp = DispersionSpec::from_sigma_tau(1e4, 1.0, crate::units::LengthUnit::Meters).unwrap();
        let ctx = LikelihoodContext::six_dim(&state, &disp).unwrap();
        let l = loglik_6d(&state_to_spherical(&state).unwrap(), &ctx).unwrap();
        assert!(l <= 0.0 && l > -1e-12);
    }

    #[test]
    fn unit_residual() {
        let p = case_b_params();
        let eta = spherical_to_state(&p).unwrap();
        let mut y = eta;
        y[0] -= 1.0;
        let ctx = LikelihoodContext::from_precision(&y, &Matrix6::identity()).unwrap();
        assert!((loglik_6d(&p, &ctx).unwrap() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn planar_loglik_examples() {
        let ctx = PlanarLikelihoodContext::new(Vector2::new(1.0, 0.0), (1.0, 1.0)).unwrap();
        assert!((loglik_planar(&PlanarParams { psi: 0.0, lambda: 2.0 }, &ctx) + 0.5).abs() < 1e-15);
        let x = Vector2::new(-3.0, 4.0);
        let ctx = PlanarLikelihoodContext::new(x, (2.0, 5.0)).unwrap();
        assert!(loglik_planar(&ctx.mle(), &ctx).abs() < 1e-28);
    }

    #[test]
    fn jacobian_structure_and_fd() {
        let p = case_b_params();
        let j = eta_jacobian(&p).unwrap();
        for k in 0..3 {
            assert_eq!(j.fixed_view::<3, 1>(3, k).norm(), 0.0);
        }
        let fd = fd_jacobian(&p);
        assert!((j - fd).amax() < 1e-6, "{}", (j - fd).amax());
        let mut q = p;
        q.psi *= 3.0;
        let jq = eta_jacobian(&q).unwrap();
        assert!((jq.column(0) - j.column(0)).amax() < 1e-15);
    }

    #[test]
    fn multi_epoch() {
        let p = case_b_params();
        let eta = spherical_to_state(&p).unwrap();
        let lam = [p.theta1, p.phi1, p.speed, p.theta2, p.phi2];
        let omega = Matrix6::identity() * 1e-2;
        let ctx = LikelihoodContext::from_precision(&(eta + Vector6::repeat(3.0)), &omega).unwrap();
        let single = loglik_6d(&p, &ctx).unwrap();
        let multi = loglik_multi(p.psi, &[lam], &[(eta + Vector6::repeat(3.0), omega)]).unwrap();
        assert!((single - multi).abs() < 1e-12);
        assert_eq!(loglik_multi(p.psi, &[lam, lam], &[(eta, omega), (eta, omega * 10.0)]).unwrap(), 0.0);
        // Second epoch ten times as precise: the same perturbation costs ten times as much.
        let mut l1 = lam;
        l1[0] += 1e-4;
        let obs = [(eta, omega), (eta, omega * 10.0)];
        let d1 = loglik_multi(p.psi, &[l1, lam], &obs).unwrap();
        let d2 = loglik_multi(p.psi, &[lam, l1], &obs).unwrap();
        assert!((d2 / d1 - 10.0).abs() < 1e-6, "{}", d2 / d1);
        assert!(loglik_multi(p.psi, &[], &[]).is_err());
    }

    #[test]
    fn information_at_mle_and_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = case_b_params();
        let y = spherical_to_state(&p).unwrap() + Vector6::from_fn(|_, _| 30.0 * (rng.random::<f64>() - 0.5));
        let omega = random_spd(&mut rng, 1e-3);
        let ctx = LikelihoodContext::from_precision(&y, &omega).unwrap();
        let at_mle = ctx.observed_information(ctx.mle()).unwrap();
        assert!((&at_mle - ctx.info_at_mle()).amax() <= 1e-6 * ctx.info_at_mle().amax());
        assert!(at_mle.clone().cholesky().is_some());

        // Away from the MLE, compare with a finite-difference Hessian of l.
        let mut theta = ctx.mle().clone();
        theta[0] *= 0.8;
        theta[1] += 0.01;
        theta[5] -= 0.02;
        let j = ctx.observed_information(&theta).unwrap();
        let mut hess = DMatrix::zeros(6, 6);
        for a in 0..6 {
            let h = 1e-4 * theta[a].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[a] += h;
            tm[a] -= h;
            let g = (ctx.score(&tp).unwrap() - ctx.score(&tm).unwrap()) / (2.0 * h);
            hess.set_column(a, &g);
        }
        let hess = (&hess + hess.transpose()) * -0.5;
        for a in 0..6 {
            for b in 0..6 {
                let scale = (j[(a, a)] * j[(b, b)]).sqrt();
                assert!((j[(a, b)] - hess[(a, b)]).abs() <= 1e-5 * scale, "{a},{b}");
            }
        }
    }

    #[test]
    fn profile_at_mle_is_mle() {
        let p = case_b_params();
        let y = spherical_to_state(&p).unwrap();
        let ctx = LikelihoodContext::from_precision(&y, &(Matrix6::identity() * 1e-4)).unwrap();
        let fit = ctx.profile_fit(ctx.psi_hat(), None).unwrap();
        assert!(fit.loglik.abs() < 1e-12);
        assert!((fit.params() - ctx.mle()).amax() < 1e-8);
        let jp = ctx.profile_information(&fit).unwrap();
        let se = ctx.standard_error();
        assert!((jp * se * se - 1.0).abs() < 1e-8);
    }

    #[test]
    fn profile_fit_away_from_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = case_b_params();
        let y = spherical_to_state(&p).unwrap()
            + Vector6::from_fn(|i, _| if i < 3 { 50.0 } else { 20.0 } * (rng.random::<f64>() - 0.5));
        let disp = DispersionSpec::from_sigma_tau(100.0, 1.0, crate::units::LengthUnit::Meters).unwrap();
        let ctx = LikelihoodContext::six_dim(&RelativeState::from_vector(&y).unwrap(), &disp).unwrap();
        let fit = ctx.profile_fit(20.0, None).unwrap();
        assert!(fit.converged && fit.grad_norm < 1e-6);
        assert!(fit.loglik < 0.0);
        let g = ctx.score(&fit.params()).unwrap();
        assert!(g.rows(1, 5).amax() < 1e-6);
        // Any nearby nuisance value does no better.
        for _ in 0..50 {
            let mut t = fit.params();
            for k in 1..6 {
                t[k] += 1e-3 * (rng.random::<f64>() - 0.5) * if k == 3 { t[3] } else { 1.0 };
            }
            assert!(ctx.loglik(&t).unwrap() <= fit.loglik + 1e-12);
        }
    }

    #[test]
    fn planar_equal_variance_profile_keeps_direction() {
        let pc = PlanarLikelihoodContext::new(Vector2::new(3.0, -2.0), (4.0, 4.0)).unwrap();
        let ctx = LikelihoodContext::planar(&pc).unwrap();
        for &psi in &[0.5, 2.0, 3.6, 6.0] {
            let fit = ctx.profile_fit(psi, None).unwrap();
            assert!((fit.lambda_hat[0] - ctx.mle()[1]).abs() < 1e-9);
        }
        let fit = ctx.profile_fit(ctx.psi_hat(), None).unwrap();
        let jp = ctx.profile_information(&fit).unwrap();
        assert!((jp - 0.25).abs() < 1e-10);
    }

    #[test]
    fn case_a_profile_information_matches_inverse() {
        let state = RelativeState::new(
            Vector3::new(-100_000.0, -20_000.0, 0.0),
            Vector3::new(10_000.0, 6_000.0, 1_000.0),
        )
        .unwrap();
        let disp = DispersionSpec::from_sigma_tau(1e-3, 1.0, crate::units::LengthUnit::Kilometers).unwrap();
        let ctx = LikelihoodContext::six_dim(&state, &disp).unwrap();
        let fit = ctx.profile_fit(ctx.psi_hat(), None).unwrap();
        let jp = ctx.profile_information(&fit).unwrap();
        let inv = ctx.info_at_mle().clone().try_inverse().unwrap();
        assert!((jp * inv[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn block_diagonal_information() {
        let f = ProfileFit {
            psi: 1.0,
            lambda_hat: DVector::from_vec(vec![0.0]),
            coords: DVector::from_vec(vec![0.0]),
            loglik: 0.0,
            info_lambda: DMatrix::from_element(1, 1, 3.0),
            info: DMatrix::from_row_slice(2, 2, &[7.0, 0.0, 0.0, 3.0]),
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        };
        let pc = PlanarLikelihoodContext::new(Vector2::new(1.0, 1.0), (1.0, 1.0)).unwrap();
        let ctx = LikelihoodContext::planar(&pc).unwrap();
        assert!((ctx.profile_information(&f).unwrap() - 7.0).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn jacobian_matches_finite_differences(
            psi in 1.0..1e4f64, t1 in 0.2..(PI - 0.2), f1 in -PI..PI,
            s in 100.0..2e4f64, t2 in 0.2..(PI - 0.2), f2 in -PI..PI,
        ) {
            let p = ConjunctionParams { psi, theta1: t1, phi1: f1, speed: s, theta2: t2, phi2: f2 };
            prop_assume!(p.sin_beta() > 0.2);
            let j = eta_jacobian(&p).unwrap();
            let fd = fd_jacobian(&p);
            // Entries scale with psi and speed; compare on that scale.
            let scale = 1.0 + (psi / p.sin_beta()).max(s) * 1e-6;
            prop_assert!((j - fd).amax() < 1e-6 * scale * 1e3, "{}", (j - fd).amax());
        }

        #[test]
        fn loglik_matches_quadratic_form(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ConjunctionParams {
                psi: 10.0 + 1e3 * rng.random::<f64>(),
                theta1: 0.3 + 2.5 * rng.random::<f64>(),
                phi1: -PI + TAU * rng.random::<f64>(),
                speed: 1e3 + 1e4 * rng.random::<f64>(),
                theta2: 0.3 + 2.5 * rng.random::<f64>(),
                phi2: -PI + TAU * rng.random::<f64>(),
            };
            prop_assume!(p.sin_beta() > 1e-3);
            let y = spherical_to_state(&p).unwrap() + Vector6::from_fn(|_, _| 10.0 * (rng.random::<f64>() - 0.5));
            let omega = random_spd(&mut rng, 0.01);
            prop_assume!(RelativeState::from_vector(&y).is_ok());
            let ctx = LikelihoodContext::from_precision(&y, &omega).unwrap();
            let q = loglik_6d(&p, &ctx).unwrap();
            let r = y - spherical_to_state(&p).unwrap();
            let mut direct = 0.0;
            for a in 0..6 { for b in 0..6 { direct += r[a] * omega[(a, b)] * r[b]; } }
            prop_assert!(q <= 0.0);
            prop_assert!((q + 0.5 * direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
