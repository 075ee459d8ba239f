//! Repeated-sampling experiments: empirical left and right error rates of
//! the equi-tailed confidence limits, and samples of the pivots at the true
//! miss distance for QQ plots.
//!
//! Replicate `i` draws from stream `i` of a ChaCha8 generator keyed by the
//! seed, and results are reduced in replicate order, so reports do not
//! depend on the number of worker threads.

use nalgebra::{Matrix6, Vector2, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{spherical_to_state, ConjunctionParams, DispersionSpec, PlanarParams, RelativeState};
use crate::inference::{
    build_grid, confidence_interval, evaluate_curve, grid_alpha, pivot_for_significance, PivotSource,
    PlanarSource, ProfileSource, DEFAULT_GRID_POINTS,
};
use crate::likelihood::LikelihoodContext;
use crate::normal;
use crate::pivots::{PivotKind, PriorSpec};
use crate::{Error, Result};

pub const MIN_REPLICATES: usize = 100;
/// Largest tolerated fraction of failed replicates.
pub const FAILURE_CAP: f64 = 0.01;

/// Draws `y ~ N6(eta(truth), covariance)` through the Cholesky factor.
#[derive(Debug, Clone)]
pub struct StateSampler {
    mean: Vector6<f64>,
    factor: Matrix6<f64>,
}

impl StateSampler {
    pub fn new(truth: &ConjunctionParams, dispersion: &DispersionSpec) -> Result<Self> {
        let mean = spherical_to_state(truth)?;
        let factor = dispersion
            .covariance()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?
            .l();
        Ok(Self { mean, factor })
    }

    pub fn mean(&self) -> &Vector6<f64> {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector6<f64> {
        let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.mean + self.factor * z
    }
}

/// Draws `x ~ N2(xi, diag(variances))`.
pub fn sample_planar<R: Rng + ?Sized>(xi: &Vector2<f64>, variances: (f64, f64), rng: &mut R) -> Vector2<f64> {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    Vector2::new(xi.x + variances.0.sqrt() * z1, xi.y + variances.1.sqrt() * z2)
}

/// Generator for replicate `index`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The sampling model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CalibrationModel {
    SixDim {
        truth: ConjunctionParams,
        dispersion: DispersionSpec,
    },
    /// `x ~ N2(c' xi, c² diag(variances))`.
    Planar {
        truth: PlanarParams,
        variances: (f64, f64),
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        position_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl CalibrationModel {
    /// The miss distance the intervals are meant to cover.
    pub fn true_psi(&self) -> f64 {
        match self {
            CalibrationModel::SixDim { truth, .. } => truth.psi,
            CalibrationModel::Planar { truth, position_scale, .. } => position_scale * truth.psi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub model: CalibrationModel,
    pub replicates: usize,
    /// One-sided levels; the intervals have level `1 - 2 alpha`.
    pub alphas: Vec<f64>,
    pub pivots: Vec<PivotKind>,
    pub seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::InvalidInput(format!(
                "replicates = {} is below the minimum of {MIN_REPLICATES}",
                self.replicates
            )));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 0.5)) {
            return Err(Error::InvalidInput("alphas must be non-empty and lie in (0, 0.5)".into()));
        }
        if self.pivots.is_empty() {
            return Err(Error::InvalidInput("at least one pivot kind is required".into()));
        }
        match &self.model {
            CalibrationModel::SixDim { truth, .. } => truth.validate(),
            CalibrationModel::Planar { truth, variances, scale, position_scale } => {
                if !(variances.0 > 0.0 && variances.1 > 0.0 && *scale > 0.0 && *position_scale > 0.0) {
                    return Err(Error::InvalidInput("variances and scales must be positive".into()));
                }
                if !(truth.psi >= 0.0 && truth.psi.is_finite() && truth.lambda.is_finite()) {
                    return Err(Error::InvalidInput(format!("invalid planar truth {truth:?}")));
                }
                Ok(())
            }
        }
    }

    fn prior(&self) -> Option<PriorSpec> {
        self.pivots.contains(&PivotKind::ModifiedBayes).then_some(PriorSpec::Jeffreys)
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    /// `(psi0 < L, U < psi0)` per pivot (outer) and alpha (inner), in
    /// configuration order.
    pub misses: Vec<Vec<(bool, bool)>>,
    /// Pivot values at the true miss distance, per pivot.
    pub pivots_at_truth: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub pivot: PivotKind,
    pub alpha: f64,
    pub left_count: usize,
    pub right_count: usize,
    /// Estimates of `Pr(psi0 < L_alpha)` and `Pr(U_alpha < psi0)`.
    pub left_rate: f64,
    pub right_rate: f64,
    /// `sqrt(alpha (1 - alpha) / n)`.
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqSeries {
    pub pivot: PivotKind,
    /// `(standard normal quantile, sorted pivot value)` pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub replicates: usize,
    pub failures: usize,
    /// Messages of the first few failures, for diagnosis.
    pub failure_examples: Vec<String>,
    pub true_psi: f64,
    pub rows: Vec<CoverageRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq: Option<Vec<QqSeries>>,
}

impl CalibrationReport {
    pub fn row(&self, pivot: PivotKind, alpha: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.pivot == pivot && r.alpha == alpha)
    }
}

/// Simulates, fits and inverts one replicate.
pub fn run_replicate(config: &CalibrationConfig, index: usize) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(config.seed, index);
    let psi0 = config.model.true_psi();
    match &config.model {
        CalibrationModel::SixDim { truth, dispersion } => {
            let y = StateSampler::new(truth, dispersion)?.sample(&mut rng);
            let ctx = LikelihoodContext::six_dim(&RelativeState::from_vector(&y)?, dispersion)?;
            replicate_on(&ProfileSource::new(&ctx, config.prior()), config, psi0)
        }
        CalibrationModel::Planar { truth, variances, scale, position_scale } => {
            let xi = truth.xi() * *position_scale;
            let vars = (scale * variances.0, scale * variances.1);
            let x = sample_planar(&xi, vars, &mut rng);
            replicate_on(&PlanarSource::new(x, vars)?, config, psi0)
        }
    }
}

fn replicate_on(source: &dyn PivotSource, config: &CalibrationConfig, psi0: f64) -> Result<ReplicateOutcome> {
    let min_alpha = config.alphas.iter().copied().fold(0.5, f64::min);
    let grid = build_grid(source.psi_hat(), source.standard_error(), grid_alpha(min_alpha), config.grid_points)?;
    let mut curve = evaluate_curve(&grid, source)?;
    let mut misses = Vec::with_capacity(config.pivots.len());
    let mut pivots_at_truth = Vec::with_capacity(config.pivots.len());
    for &kind in &config.pivots {
        let mut row = Vec::with_capacity(config.alphas.len());
        for &alpha in &config.alphas {
            let ci = confidence_interval(&mut curve, source, alpha, kind)?;
            row.push((psi0 < ci.lower, ci.upper < psi0));
        }
        misses.push(row);
        pivots_at_truth.push(pivot_for_significance(&curve, source, psi0, kind)?);
    }
    Ok(ReplicateOutcome { misses, pivots_at_truth })
}

fn run_all(config: &CalibrationConfig) -> Result<(Vec<ReplicateOutcome>, usize, Vec<String>)> {
    config.validate()?;
    let results: Vec<Result<ReplicateOutcome>> =
        (0..config.replicates).into_par_iter().map(|i| run_replicate(config, i)).collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut examples = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                failures += 1;
                if examples.len() < 5 {
                    examples.push(format!("replicate {i}: {e}"));
                }
            }
        }
    }
    if failures as f64 > FAILURE_CAP * config.replicates as f64 {
        return Err(Error::TooManyFailures { failed: failures, total: config.replicates });
    }
    Ok((outcomes, failures, examples))
}

fn qq_series(config: &CalibrationConfig, outcomes: &[ReplicateOutcome]) -> Vec<QqSeries> {
    let n = outcomes.len();
    config
        .pivots
        .iter()
        .enumerate()
        .map(|(k, &pivot)| {
            let mut v: Vec<f64> = outcomes.iter().map(|o| o.pivots_at_truth[k]).collect();
            v.sort_by(f64::total_cmp);
            let points = v
                .into_iter()
                .enumerate()
                .map(|(i, x)| (normal::quantile((i as f64 + 0.5) / n as f64), x))
                .collect();
            QqSeries { pivot, points }
        })
        .collect()
}

fn aggregate(
    config: &CalibrationConfig,
    outcomes: &[ReplicateOutcome],
    failures: usize,
    failure_examples: Vec<String>,
    keep_qq: bool,
) -> CalibrationReport {
    let n = outcomes.len();
    let mut rows = Vec::new();
    for (k, &pivot) in config.pivots.iter().enumerate() {
        for (a, &alpha) in config.alphas.iter().enumerate() {
            let left_count = outcomes.iter().filter(|o| o.misses[k][a].0).count();
            let right_count = outcomes.iter().filter(|o| o.misses[k][a].1).count();
            rows.push(CoverageRow {
                pivot,
                alpha,
                left_count,
                right_count,
                left_rate: left_count as f64 / n as f64,
                right_rate: right_count as f64 / n as f64,
                standard_error: (alpha * (1.0 - alpha) / n as f64).sqrt(),
            });
        }
    }
    CalibrationReport {
        replicates: config.replicates,
        failures,
        failure_examples,
        true_psi: config.model.true_psi(),
        rows,
        qq: keep_qq.then(|| qq_series(config, outcomes)),
    }
}

/// Left and right error rates of every requested pivot and level. Runs on
/// the current rayon pool.
pub fn coverage_experiment(config: &CalibrationConfig) -> Result<CalibrationReport> {
    let (outcomes, failures, examples) = run_all(config)?;
    Ok(aggregate(config, &outcomes, failures, examples, false))
}

/// As [`coverage_experiment`], restricted to planar models, which use the
/// closed-form pivots.
pub fn planar_coverage_experiment(config: &CalibrationConfig) -> Result<CalibrationReport> {
    if !matches!(config.model, CalibrationModel::Planar { .. }) {
        return Err(Error::InvalidInput("planar experiment needs a planar model".into()));
    }
    coverage_experiment(config)
}

/// Coverage report together with the sorted pivots at the true miss
/// distance, one series per pivot of length `replicates - failures`.
pub fn qq_export(config: &CalibrationConfig) -> Result<CalibrationReport> {
    let (outcomes, failures, examples) = run_all(config)?;
    Ok(aggregate(config, &outcomes, failures, examples, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::LengthUnit;
    use nalgebra::Matrix6;

    fn planar_config(replicates: usize, scale: f64) -> CalibrationConfig {
        CalibrationConfig {
            model: CalibrationModel::Planar {
                truth: PlanarParams::from_xi(&Vector2::new(11.84, -1.36)),
                variances: (25.1f64.powi(2), 11.61f64.powi(2)),
                scale,
                position_scale: 1.0,
            },
            replicates,
            alphas: vec![0.05, 0.025],
            pivots: PivotKind::FREQUENTIST.to_vec(),
            seed: 7,
            grid_points: 40,
        }
    }

    fn case_b_truth() -> ConjunctionParams {
        let y = Vector6::new(-258.909, -635.813, 126.229, 10_580.0, -3_733.0, 3_126.0);
        crate::geometry::state_to_spherical(&RelativeState::from_vector(&y).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_limit() {
        let truth = case_b_truth();
        let d = DispersionSpec::new(Matrix6::identity() * 1e-20).unwrap();
        let s = StateSampler::new(&truth, &d).unwrap();
        let y = s.sample(&mut replicate_rng(1, 0));
        assert!((y - s.mean()).amax() < 1e-8);
    }

    #[test]
    fn sample_moments() {
        let truth = case_b_truth();
        let mut cov = Matrix6::<f64>::identity();
        for i in 0..6 {
            cov[(i, i)] = 1.0 + i as f64;
        }
        cov[(0, 3)] = 0.8;
        cov[(3, 0)] = 0.8;
        cov[(1, 2)] = -0.5;
        cov[(2, 1)] = -0.5;
        let s = StateSampler::new(&truth, &DispersionSpec::new(cov).unwrap()).unwrap();
        let mut rng = replicate_rng(3, 0);
        let n = 100_000;
        let draws: Vec<Vector6<f64>> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let mean = draws.iter().fold(Vector6::zeros(), |a, d| a + d) / n as f64;
        for i in 0..6 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - s.mean()[i]).abs() < 4.0 * se, "component {i}");
        }
        let mut sample_cov = Matrix6::zeros();
        for d in &draws {
            let e = d - mean;
            sample_cov += e * e.transpose();
        }
        sample_cov /= (n - 1) as f64;
        assert!((sample_cov - cov).norm() / cov.norm() < 0.05);
    }

    #[test]
    fn config_validation() {
        let mut c = planar_config(100, 1.0);
        assert!(c.validate().is_ok());
        c.replicates = 99;
        assert!(c.validate().is_err());
        let mut c = planar_config(100, 1.0);
        c.alphas = vec![0.5];
        assert!(c.validate().is_err());
        let mut c = planar_config(100, 1.0);
        c.pivots.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn smoke_report_structure() {
        let c = planar_config(100, 1.0);
        let r = qq_export(&c).unwrap();
        assert_eq!(r.rows.len(), 6);
        for row in &r.rows {
            assert!((0.0..=1.0).contains(&row.left_rate) && (0.0..=1.0).contains(&row.right_rate));
            assert!(row.standard_error > 0.01);
        }
        let qq = r.qq.unwrap();
        assert_eq!(qq.len(), 3);
        for s in &qq {
            assert_eq!(s.points.len(), r.replicates - r.failures);
            assert!(s.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let c = planar_config(200, 0.5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| qq_export(&c).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }

    #[test]
    fn small_noise_equal_variance_qq_is_standard_normal() {
        let c = CalibrationConfig {
            model: CalibrationModel::Planar {
                truth: PlanarParams { psi: 100.0, lambda: 0.7 },
                variances: (1.0, 1.0),
                scale: 1.0,
                position_scale: 1.0,
            },
            replicates: 10_000,
            alphas: vec![0.05],
            pivots: vec![PivotKind::Root],
            seed: 5,
            grid_points: 20,
        };
        let r = qq_export(&c).unwrap();
        let pts = &r.qq.unwrap()[0].points;
        let n = pts.len() as f64;
        // Kolmogorov-Smirnov distance of the pivot sample to N(0, 1).
        let ks = pts
            .iter()
            .enumerate()
            .map(|(i, &(_, v))| {
                let f = normal::cdf(v);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "{ks}");
    }

    #[test]
    fn six_dim_replicate_runs() {
        let truth = case_b_truth();
        let d = DispersionSpec::from_sigma_tau(1e-3, 1.0, LengthUnit::Kilometers).unwrap();
        let c = CalibrationConfig {
            model: CalibrationModel::SixDim { truth, dispersion: d },
            replicates: 100,
            alphas: vec![0.05],
            pivots: PivotKind::FREQUENTIST.to_vec(),
            seed: 1,
            grid_points: 30,
        };
        let o = run_replicate(&c, 0).unwrap();
        assert_eq!(o.misses.len(), 3);
        assert_eq!(o.pivots_at_truth.len(), 3);
    }
}
