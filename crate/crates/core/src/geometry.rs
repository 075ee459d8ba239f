//! Relative-state geometry: spherical-polar parametrization, miss distance,
//! and the orthogonal projection onto the encounter plane.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::units::{LengthUnit, SpeedUnit};
use crate::{Error, Result};

/// Below this `|sin beta|` the direction of closest approach is undefined.
pub const SIN_BETA_FLOOR: f64 = 1e-12;

/// Observed relative position (m) and velocity (m/s) of the secondary object
/// with respect to the primary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl RelativeState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Result<Self> {
        if !position.iter().chain(velocity.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("relative state has non-finite components".into()));
        }
        if velocity.norm() <= 0.0 {
            return Err(Error::DegenerateGeometry("relative velocity is zero".into()));
        }
        Ok(Self { position, velocity })
    }

    /// Builds a state from values expressed in the given units.
    pub fn with_units(
        position: [f64; 3],
        length: LengthUnit,
        velocity: [f64; 3],
        speed: SpeedUnit,
    ) -> Result<Self> {
        let l = length.to_meters();
        let s = speed.to_meters_per_second();
        Self::new(
            Vector3::from(position) * l,
            Vector3::from(velocity) * s,
        )
    }

    pub fn from_vector(y: &Vector6<f64>) -> Result<Self> {
        Self::new(y.fixed_rows::<3>(0).into(), y.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut y = Vector6::zeros();
        y.fixed_rows_mut::<3>(0).copy_from(&self.position);
        y.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        y
    }
}

/// Covariance `Omega^{-1}` of the relative state, in SI units by block
/// (m², m²/s, m²/s²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovarianceRows", into = "CovarianceRows")]
pub struct DispersionSpec {
    covariance: Matrix6<f64>,
}

#[derive(Serialize, Deserialize)]
struct CovarianceRows {
    covariance: [[f64; 6]; 6],
}

impl TryFrom<CovarianceRows> for DispersionSpec {
    type Error = Error;

    fn try_from(rows: CovarianceRows) -> Result<Self> {
        Self::new(Matrix6::from_fn(|i, j| rows.covariance[i][j]))
    }
}

impl From<DispersionSpec> for CovarianceRows {
    fn from(d: DispersionSpec) -> Self {
        let mut covariance = [[0.0; 6]; 6];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = d.covariance[(i, j)];
            }
        }
        Self { covariance }
    }
}

impl DispersionSpec {
    pub fn new(covariance: Matrix6<f64>) -> Result<Self> {
        if !covariance.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        let scale = covariance.amax();
        if scale == 0.0 {
            return Err(Error::InvalidInput("covariance is zero".into()));
        }
        let asym = (covariance - covariance.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let sym = (covariance + covariance.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let min = eig.min();
        if min <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive definite (smallest eigenvalue {min:.6e})"
            )));
        }
        Ok(Self { covariance: sym })
    }

    /// `P1 = tau sigma² I`, `P2 = sigma² I`, `P12 = 0`, with `sigma2` in
    /// squared `unit` (so standard deviations are `unit` and `unit`/s).
    pub fn from_sigma_tau(sigma2: f64, tau: f64, unit: LengthUnit) -> Result<Self> {
        if !(sigma2 > 0.0 && tau > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma2 = {sigma2} and tau = {tau} must both be positive"
            )));
        }
        let s2 = sigma2 * unit.to_meters().powi(2);
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = tau * s2;
            cov[(i + 3, i + 3)] = s2;
        }
        Self::new(cov)
    }

    /// Assembles the covariance from position, velocity and cross blocks.
    pub fn from_blocks(
        position: Matrix3<f64>,
        velocity: Matrix3<f64>,
        cross: Matrix3<f64>,
    ) -> Result<Self> {
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&position);
        cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&velocity);
        cov.fixed_view_mut::<3, 3>(0, 3).copy_from(&cross);
        cov.fixed_view_mut::<3, 3>(3, 0).copy_from(&cross.transpose());
        Self::new(cov)
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    /// The dispersion matrix `Omega`.
    pub fn precision(&self) -> Result<Matrix6<f64>> {
        let chol = self
            .covariance
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("covariance Cholesky failed".into()))?;
        let inv = chol.inverse();
        Ok((inv + inv.transpose()) * 0.5)
    }

    pub fn position_block(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn velocity_block(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(3, 3).into()
    }

    pub fn cross_block(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 3).into()
    }
}

/// Parameter vector `(psi, theta1, phi1, speed, theta2, phi2)`: the miss
/// distance followed by the five nuisance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjunctionParams {
    pub psi: f64,
    pub theta1: f64,
    pub phi1: f64,
    pub speed: f64,
    pub theta2: f64,
    pub phi2: f64,
}

impl ConjunctionParams {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            psi: v[0],
            theta1: v[1],
            phi1: v[2],
            speed: v[3],
            theta2: v[4],
            phi2: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.psi, self.theta1, self.phi1, self.speed, self.theta2, self.phi2]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.psi >= 0.0
            && (0.0..=PI).contains(&self.theta1)
            && (0.0..=PI).contains(&self.theta2)
            && (-PI..PI).contains(&self.phi1)
            && (-PI..PI).contains(&self.phi2)
            && self.speed > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("parameters out of range: {self:?}")))
        }
    }

    /// `cos beta`, the cosine of the angle between position and velocity.
    pub fn cos_beta(&self) -> f64 {
        unit_vector(self.theta1, self.phi1).dot(&unit_vector(self.theta2, self.phi2))
    }

    /// `|sin beta|`, computed from the cross product for accuracy near 0 and pi.
    pub fn sin_beta(&self) -> f64 {
        unit_vector(self.theta1, self.phi1)
            .cross(&unit_vector(self.theta2, self.phi2))
            .norm()
    }

    /// Current separation `||mu|| = psi / |sin beta|`.
    pub fn mu_norm(&self) -> Result<f64> {
        if self.psi == 0.0 {
            return Ok(0.0);
        }
        let s = self.sin_beta();
        if s < SIN_BETA_FLOOR {
            return Err(Error::DegenerateGeometry(format!(
                "|sin beta| = {s:.3e} with psi = {} > 0",
                self.psi
            )));
        }
        Ok(self.psi / s)
    }

    /// Maps angles back into `theta in [0, pi]`, `phi in [-pi, pi)`, using the
    /// periodicity of the sphere.
    pub fn canonical(mut self) -> Self {
        (self.theta1, self.phi1) = canonical_angles(self.theta1, self.phi1);
        (self.theta2, self.phi2) = canonical_angles(self.theta2, self.phi2);
        self
    }
}

/// Miss distance and polar angle of the encounter-plane mean
/// `xi = (psi cos lambda, psi sin lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarParams {
    pub psi: f64,
    pub lambda: f64,
}

impl PlanarParams {
    pub fn xi(&self) -> Vector2<f64> {
        Vector2::new(self.psi * self.lambda.cos(), self.psi * self.lambda.sin())
    }

    /// Polar coordinates of a planar point, `lambda` in `[0, 2 pi)`.
    pub fn from_xi(xi: &Vector2<f64>) -> Self {
        let mut lambda = xi.y.atan2(xi.x);
        if lambda < 0.0 {
            lambda += TAU;
        }
        if lambda >= TAU {
            lambda -= TAU;
        }
        Self { psi: xi.norm(), lambda }
    }
}

/// Unit vector with polar angle `theta` and azimuth `phi`.
pub fn unit_vector(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// `d u / d theta` and `d u / d phi`.
pub(crate) fn unit_vector_partials(theta: f64, phi: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (
        Vector3::new(ct * cp, ct * sp, -st),
        Vector3::new(-st * sp, st * cp, 0.0),
    )
}

/// Wraps `phi` into `[-pi, pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

fn canonical_angles(theta: f64, phi: f64) -> (f64, f64) {
    let t = theta.rem_euclid(TAU);
    if t > PI {
        (TAU - t, wrap_angle(phi + PI))
    } else {
        (t, wrap_angle(phi))
    }
}

fn polar_angles(v: &Vector3<f64>) -> (f64, f64) {
    let theta = v.x.hypot(v.y).atan2(v.z);
    let phi = if v.x == 0.0 && v.y == 0.0 {
        0.0
    } else {
        wrap_angle(v.y.atan2(v.x))
    };
    (theta, phi)
}

/// Mean vector `eta(params) = (mu, nu)`.
pub fn spherical_to_state(params: &ConjunctionParams) -> Result<Vector6<f64>> {
    let mu = unit_vector(params.theta1, params.phi1) * params.mu_norm()?;
    let nu = unit_vector(params.theta2, params.phi2) * params.speed;
    let mut eta = Vector6::zeros();
    eta.fixed_rows_mut::<3>(0).copy_from(&mu);
    eta.fixed_rows_mut::<3>(3).copy_from(&nu);
    Ok(eta)
}

/// Inverts [`spherical_to_state`]; this is the maximum likelihood estimate of
/// the full parameter since the model maps parameters onto states bijectively.
pub fn state_to_spherical(state: &RelativeState) -> Result<ConjunctionParams> {
    let mu = state.position;
    let nu = state.velocity;
    let speed = nu.norm();
    if speed <= 0.0 {
        return Err(Error::DegenerateGeometry("relative velocity is zero".into()));
    }
    let (theta2, phi2) = polar_angles(&nu);
    let mu_norm = mu.norm();
    if mu_norm == 0.0 {
        return Ok(ConjunctionParams {
            psi: 0.0,
            theta1: 0.0,
            phi1: 0.0,
            speed,
            theta2,
            phi2,
        });
    }
    let sin_beta = mu.cross(&nu).norm() / (mu_norm * speed);
    if sin_beta < SIN_BETA_FLOOR {
        return Err(Error::DegenerateGeometry(
            "position and velocity are collinear".into(),
        ));
    }
    let (theta1, phi1) = polar_angles(&mu);
    Ok(ConjunctionParams {
        psi: miss_distance(&mu, &nu),
        theta1,
        phi1,
        speed,
        theta2,
        phi2,
    })
}

/// Closest approach of the line `mu + t nu` to the origin.
pub fn miss_distance(mu: &Vector3<f64>, nu: &Vector3<f64>) -> f64 {
    mu.cross(nu).norm() / nu.norm()
}

/// Orthogonal frame `A = (CV, nu/||nu||)` whose first two columns span the
/// encounter plane and diagonalize the projected position covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncounterFrame {
    pub rotation: Matrix3<f64>,
    pub planar_basis: Matrix3x2<f64>,
    /// `(d1², d2²)` with `d1² >= d2²`.
    pub planar_variances: (f64, f64),
}

impl EncounterFrame {
    pub fn project(&self, y: &Vector3<f64>) -> Vector2<f64> {
        self.planar_basis.transpose() * y
    }
}

/// Builds the encounter frame for relative velocity `nu` and 3×3 position
/// covariance `position_cov`.
pub fn encounter_frame(nu: &Vector3<f64>, position_cov: &Matrix3<f64>) -> Result<EncounterFrame> {
    let speed = nu.norm();
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::DegenerateGeometry("relative velocity is zero".into()));
    }
    if !position_cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("position covariance is not finite".into()));
    }
    let (b1, b2) = plane_basis(nu);
    let c = Matrix3x2::from_columns(&[b1, b2]);
    let projected: Matrix2<f64> = c.transpose() * position_cov * c;
    let (vals, vecs) = symmetric_eigen2(&projected)?;
    if vals.1 <= 0.0 {
        return Err(Error::InvalidInput(
            "projected position covariance is not positive definite".into(),
        ));
    }
    let planar_basis = c * vecs;
    let rotation = Matrix3::from_columns(&[
        planar_basis.column(0).into_owned(),
        planar_basis.column(1).into_owned(),
        nu / speed,
    ]);
    Ok(EncounterFrame {
        rotation,
        planar_basis,
        planar_variances: vals,
    })
}

/// Planar observation `x = (CV)^T y`.
pub fn project_state(y: &Vector3<f64>, frame: &EncounterFrame) -> Vector2<f64> {
    frame.project(y)
}

// Orthonormal basis of the plane normal to `nu`. Uses the columns
// b1 = (0, nu3, -nu2), b2 = (nu2² + nu3², -nu1 nu2, -nu1 nu3), falling back to
// a permuted axis when nu is (nearly) along x.
fn plane_basis(nu: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = nu / nu.norm();
    let b1 = Vector3::new(0.0, n.z, -n.y);
    if b1.norm() > 1e-6 {
        let b2 = Vector3::new(n.y * n.y + n.z * n.z, -n.x * n.y, -n.x * n.z);
        return (b1.normalize(), b2.normalize());
    }
    let b1 = Vector3::new(-n.z, 0.0, n.x).normalize();
    let b2 = n.cross(&b1).normalize();
    (b1, b2)
}

// Eigen-decomposition of a symmetric 2×2 matrix, eigenvalues descending.
fn symmetric_eigen2(m: &Matrix2<f64>) -> Result<((f64, f64), Matrix2<f64>)> {
    let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let rad = (0.5 * (a - d)).hypot(b);
    let (l1, l2) = (mean + rad, mean - rad);
    if !(l1.is_finite() && l2.is_finite()) {
        return Err(Error::NumericalFailure("2x2 spectral decomposition failed".into()));
    }
    // Rotation angle of the leading eigenvector.
    let angle = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = angle.sin_cos();
    let vecs = Matrix2::new(c, -s, s, c);
    Ok(((l1, l2), vecs))
}
