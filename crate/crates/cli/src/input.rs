//! JSON input documents. Every length and speed carries an explicit unit;
//! values are converted to SI as they are resolved.

use conjunction_core::geometry::{encounter_frame, PlanarParams};
use conjunction_core::units::{LengthUnit, SpeedUnit};
use conjunction_core::{DispersionSpec, PivotKind, RelativeState};
use nalgebra::{Matrix6, Vector2, Vector3};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SixDim,
    Planar,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateInput {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    #[serde(default)]
    pub position_unit: LengthUnit,
    #[serde(default)]
    pub velocity_unit: SpeedUnit,
}

impl StateInput {
    fn si(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::from(self.position) * self.position_unit.to_meters(),
            Vector3::from(self.velocity) * self.velocity_unit.to_meters_per_second(),
        )
    }
}

/// Either the `(sigma2, tau)` shorthand (position variance `tau sigma2`,
/// velocity variance `sigma2`, in `unit²` and `unit²/s²`) or a full 6×6
/// matrix whose blocks are in the given position and velocity units.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceInput {
    pub sigma2: Option<f64>,
    pub tau: Option<f64>,
    #[serde(default)]
    pub unit: LengthUnit,
    pub matrix: Option<[[f64; 6]; 6]>,
    #[serde(default)]
    pub position_unit: LengthUnit,
    #[serde(default)]
    pub velocity_unit: SpeedUnit,
}

impl CovarianceInput {
    pub fn resolve(&self, field: &str) -> Result<DispersionSpec, CliError> {
        let spec = match (self.matrix, self.sigma2, self.tau) {
            (Some(m), None, None) => {
                let l = self.position_unit.to_meters();
                let s = self.velocity_unit.to_meters_per_second();
                let scale = |i: usize| if i < 3 { l } else { s };
                DispersionSpec::new(Matrix6::from_fn(|i, j| m[i][j] * scale(i) * scale(j)))
            }
            (None, Some(sigma2), Some(tau)) => DispersionSpec::from_sigma_tau(sigma2, tau, self.unit),
            _ => {
                return Err(CliError::Validation(format!(
                    "{field}: give either `matrix` or both `sigma2` and `tau`"
                )))
            }
        };
        spec.map_err(|e| CliError::Validation(format!("{field}: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectInput {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    #[serde(default)]
    pub position_unit: LengthUnit,
    #[serde(default)]
    pub velocity_unit: SpeedUnit,
    pub covariance: Option<CovarianceInput>,
}

/// Encounter-plane data given directly: `x` and the variances `(d1², d2²)`
/// along its axes.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarInput {
    pub x: [f64; 2],
    pub variances: [f64; 2],
    #[serde(default)]
    pub unit: LengthUnit,
}

impl PlanarInput {
    fn si(&self) -> (Vector2<f64>, (f64, f64)) {
        let l = self.unit.to_meters();
        (Vector2::from(self.x) * l, (self.variances[0] * l * l, self.variances[1] * l * l))
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.025, 0.005]
}

fn default_epsilon() -> f64 {
    1e-4
}

/// One conjunction to assess. The relative state is either given directly
/// or as `primary - secondary`, in which case the covariance defaults to the
/// sum of the two objects' covariances.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjunctionInput {
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    pub relative_state: Option<StateInput>,
    pub primary: Option<ObjectInput>,
    pub secondary: Option<ObjectInput>,
    pub covariance: Option<CovarianceInput>,
    pub planar: Option<PlanarInput>,
    /// `psi_min`, meters.
    pub hard_body_radius: f64,
    /// `psi0`, meters.
    pub safety_threshold: f64,
    #[serde(default = "default_alphas")]
    pub alpha_levels: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

/// The data model a conjunction is analysed under, in SI units.
#[derive(Debug, Clone)]
pub enum Problem {
    SixDim { state: RelativeState, dispersion: DispersionSpec },
    Planar { x: Vector2<f64>, variances: (f64, f64) },
}

impl Problem {
    /// Encounter-plane position and variances, used for `p_c`.
    pub fn encounter_plane(&self) -> Result<(Vector2<f64>, (f64, f64)), CliError> {
        match self {
            Problem::Planar { x, variances } => Ok((*x, *variances)),
            Problem::SixDim { state, dispersion } => {
                let frame = encounter_frame(&state.velocity, &dispersion.position_block())?;
                Ok((frame.project(&state.position), frame.planar_variances))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conjunction {
    pub problem: Problem,
    pub hard_body_radius: f64,
    pub safety_threshold: f64,
    pub alphas: Vec<f64>,
    pub epsilon: f64,
}

impl ConjunctionInput {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("input: {e}")))
    }

    fn state(&self) -> Result<Option<RelativeState>, CliError> {
        let (mu, nu) = match (&self.relative_state, &self.primary, &self.secondary) {
            (Some(s), None, None) => s.si(),
            (None, Some(p), Some(s)) => {
                let a = StateInput {
                    position: p.position,
                    velocity: p.velocity,
                    position_unit: p.position_unit,
                    velocity_unit: p.velocity_unit,
                }
                .si();
                let b = StateInput {
                    position: s.position,
                    velocity: s.velocity,
                    position_unit: s.position_unit,
                    velocity_unit: s.velocity_unit,
                }
                .si();
                (a.0 - b.0, a.1 - b.1)
            }
            (None, None, None) => return Ok(None),
            _ => {
                return Err(CliError::Validation(
                    "give either `relative_state` or both `primary` and `secondary`".into(),
                ))
            }
        };
        RelativeState::new(mu, nu)
            .map(Some)
            .map_err(|e| CliError::Validation(format!("relative state: {e}")))
    }

    fn dispersion(&self) -> Result<Option<DispersionSpec>, CliError> {
        let objects = [&self.primary, &self.secondary];
        let per_object = objects.iter().any(|o| o.as_ref().is_some_and(|o| o.covariance.is_some()));
        match (&self.covariance, per_object) {
            (Some(c), false) => c.resolve("covariance").map(Some),
            (Some(_), true) => Err(CliError::Validation(
                "covariance: give the combined `covariance` or per-object covariances, not both".into(),
            )),
            (None, true) => {
                let mut total = Matrix6::zeros();
                for (name, o) in ["primary", "secondary"].iter().zip(objects) {
                    let c = o.as_ref().and_then(|o| o.covariance.as_ref()).ok_or_else(|| {
                        CliError::Validation(format!("{name}.covariance: missing"))
                    })?;
                    total += c.resolve(&format!("{name}.covariance"))?.covariance();
                }
                DispersionSpec::new(total)
                    .map(Some)
                    .map_err(|e| CliError::Validation(format!("combined covariance: {e}")))
            }
            (None, false) => Ok(None),
        }
    }

    pub fn resolve(&self) -> Result<Conjunction, CliError> {
        let psi_min = self.hard_body_radius;
        let psi0 = self.safety_threshold;
        if !(psi_min > 0.0 && psi_min.is_finite()) {
            return Err(CliError::Validation(format!("hard_body_radius: {psi_min} must be positive")));
        }
        if !(psi0 >= psi_min && psi0.is_finite()) {
            return Err(CliError::Validation(format!(
                "safety_threshold: {psi0} must be at least hard_body_radius = {psi_min}"
            )));
        }
        validate_alphas("alpha_levels", &self.alpha_levels)?;
        validate_epsilon(self.epsilon)?;
        let state = self.state()?;
        let dispersion = self.dispersion()?;
        let problem = match (self.mode, &self.planar) {
            (Mode::Planar, Some(p)) => {
                if state.is_some() || dispersion.is_some() {
                    return Err(CliError::Validation(
                        "planar: a `planar` block replaces the state and covariance".into(),
                    ));
                }
                let (x, variances) = p.si();
                if !(variances.0 > 0.0 && variances.1 > 0.0) {
                    return Err(CliError::Validation("planar.variances: must be positive".into()));
                }
                if !(x.norm() > 0.0 && x.iter().all(|v| v.is_finite())) {
                    return Err(CliError::Validation("planar.x: must be finite and non-zero".into()));
                }
                Problem::Planar { x, variances }
            }
            (Mode::SixDim, Some(_)) => {
                return Err(CliError::Validation("planar: only allowed with \"mode\": \"planar\"".into()))
            }
            (mode, None) => {
                let state = state.ok_or_else(|| CliError::Validation("relative_state: missing".into()))?;
                let dispersion = dispersion.ok_or_else(|| CliError::Validation("covariance: missing".into()))?;
                let six = Problem::SixDim { state, dispersion };
                match mode {
                    Mode::SixDim => six,
                    Mode::Planar => {
                        let (x, variances) = six.encounter_plane()?;
                        Problem::Planar { x, variances }
                    }
                }
            }
        };
        Ok(Conjunction {
            problem,
            hard_body_radius: psi_min,
            safety_threshold: psi0,
            alphas: self.alpha_levels.clone(),
            epsilon: self.epsilon,
        })
    }
}

pub fn validate_alphas(field: &str, alphas: &[f64]) -> Result<(), CliError> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 0.5)) {
        return Err(CliError::Validation(format!("{field}: values must lie in (0, 0.5)")));
    }
    Ok(())
}

pub fn validate_epsilon(eps: f64) -> Result<(), CliError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CliError::Validation(format!("epsilon: {eps} must lie in (0, 1]")));
    }
    Ok(())
}

fn default_pivots() -> Vec<PivotKind> {
    PivotKind::FREQUENTIST.to_vec()
}

fn default_grid_points() -> usize {
    conjunction_core::inference::DEFAULT_GRID_POINTS
}

fn one() -> f64 {
    1.0
}

/// A repeated-sampling experiment. Six-dimensional experiments take the
/// true relative state and a covariance; planar ones take `xi`, the base
/// variances and the scalings `c²` (`scale`) and `c'` (`position_scale`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInput {
    #[serde(default)]
    pub comment: Option<String>,
    pub mode: Mode,
    pub truth: Option<StateInput>,
    pub covariance: Option<CovarianceInput>,
    pub xi: Option<[f64; 2]>,
    pub variances: Option<[f64; 2]>,
    #[serde(default)]
    pub unit: LengthUnit,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub position_scale: f64,
    pub replicates: usize,
    pub alphas: Vec<f64>,
    #[serde(default = "default_pivots")]
    pub pivots: Vec<PivotKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl CalibrationInput {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// The experiment with units converted. Validation is left to the caller,
    /// since command-line flags may still override the seed and size.
    pub fn resolve(&self) -> Result<conjunction_core::calibration::CalibrationConfig, CliError> {
        use conjunction_core::calibration::{CalibrationConfig, CalibrationModel};
        let model = match self.mode {
            Mode::SixDim => {
                let truth = self.truth.as_ref().ok_or_else(|| CliError::Validation("truth: missing".into()))?;
                let (mu, nu) = truth.si();
                let state = RelativeState::new(mu, nu).map_err(|e| CliError::Validation(format!("truth: {e}")))?;
                let truth = conjunction_core::geometry::state_to_spherical(&state)
                    .map_err(|e| CliError::Validation(format!("truth: {e}")))?;
                let dispersion = self
                    .covariance
                    .as_ref()
                    .ok_or_else(|| CliError::Validation("covariance: missing".into()))?
                    .resolve("covariance")?;
                CalibrationModel::SixDim { truth, dispersion }
            }
            Mode::Planar => {
                let l = self.unit.to_meters();
                let xi = self.xi.ok_or_else(|| CliError::Validation("xi: missing".into()))?;
                let v = self.variances.ok_or_else(|| CliError::Validation("variances: missing".into()))?;
                CalibrationModel::Planar {
                    truth: PlanarParams::from_xi(&(Vector2::from(xi) * l)),
                    variances: (v[0] * l * l, v[1] * l * l),
                    scale: self.scale,
                    position_scale: self.position_scale,
                }
            }
        };
        let config = CalibrationConfig {
            model,
            replicates: self.replicates,
            alphas: self.alphas.clone(),
            pivots: self.pivots.clone(),
            seed: self.seed,
            grid_points: self.grid_points,
        };
        Ok(config)
    }
}

/// Simulation of the plug-in `p_c(x)` over a grid of variance scalings,
/// for one or more hard-body radii.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasInput {
    #[serde(default)]
    pub comment: Option<String>,
    pub xi: [f64; 2],
    pub variances: [f64; 2],
    #[serde(default)]
    pub unit: LengthUnit,
    pub scale_grid: Vec<f64>,
    pub hard_body_radii: Vec<f64>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BiasInput {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn configs(&self) -> Result<Vec<conjunction_core::collision_probability::BiasStudyConfig>, CliError> {
        use conjunction_core::collision_probability::BiasStudyConfig;
        if self.hard_body_radii.is_empty() {
            return Err(CliError::Validation("hard_body_radii: at least one radius is required".into()));
        }
        let l = self.unit.to_meters();
        self.hard_body_radii
            .iter()
            .map(|&radius| {
                let c = BiasStudyConfig {
                    xi: Vector2::from(self.xi) * l,
                    base_variances: (self.variances[0] * l * l, self.variances[1] * l * l),
                    scale_grid: self.scale_grid.clone(),
                    replicates: self.replicates,
                    radius: radius * l,
                    seed: self.seed,
                };
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}
