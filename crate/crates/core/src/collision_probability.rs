//! Gaussian probability of a disk in the encounter plane and the simulation
//! study of the plug-in estimator `p_c(x)`.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::normal;
use crate::{Error, Result};

/// Successive trapezoid sums must agree to this absolute tolerance.
pub const PC_TOLERANCE: f64 = 1e-10;
/// Values below this are reported as zero and flagged.
pub const PC_FLOOR: f64 = 1e-300;
const MAX_NODES: usize = 1 << 20;

/// Disk of radius `radius` centred at the origin, integrated against
/// `N2(center, diag(variances))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskIntegralSpec {
    pub center: Vector2<f64>,
    pub variances: (f64, f64),
    pub radius: f64,
}

impl DiskIntegralSpec {
    pub fn new(center: Vector2<f64>, variances: (f64, f64), radius: f64) -> Result<Self> {
        let spec = Self { center, variances, radius };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius {} must be positive", self.radius)));
        }
        let (a, b) = self.variances;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidInput(format!("variances ({a}, {b}) must be positive")));
        }
        if !(self.center.x.is_finite() && self.center.y.is_finite()) {
            return Err(Error::InvalidInput("disk center is not finite".into()));
        }
        Ok(())
    }
}

/// Result of a disk integral together with quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskProbability {
    pub value: f64,
    /// True if the raw value fell below [`PC_FLOOR`] and was set to zero.
    pub underflow: bool,
    pub nodes: usize,
}

/// `p_c`: probability that `N2(center, diag(variances))` falls in the disk.
pub fn pc_disk(spec: &DiskIntegralSpec) -> Result<f64> {
    pc_disk_detailed(spec).map(|p| p.value)
}

/// Plug-in estimate `p_c(x)`.
pub fn pc_estimate(x: &Vector2<f64>, variances: (f64, f64), radius: f64) -> Result<f64> {
    pc_disk(&DiskIntegralSpec::new(*x, variances, radius)?)
}

/// [`pc_disk`] with diagnostics.
///
/// Integrating one coordinate in closed form over each chord of the disk and
/// substituting `x1 = R sin t` leaves a smooth periodic integrand in `t`, for
/// which the trapezoid rule converges geometrically. Nodes are doubled until
/// two successive sums agree to [`PC_TOLERANCE`].
pub fn pc_disk_detailed(spec: &DiskIntegralSpec) -> Result<DiskProbability> {
    spec.validate()?;
    let r = spec.radius;
    // Keep the larger variance on the density axis; the other is integrated exactly.
    let (m1, m2, v1, v2) = if spec.variances.0 >= spec.variances.1 {
        (spec.center.x, spec.center.y, spec.variances.0, spec.variances.1)
    } else {
        (spec.center.y, spec.center.x, spec.variances.1, spec.variances.0)
    };
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let dist = spec.center.norm();

    if r - dist >= 12.0 * s1 {
        return Ok(DiskProbability { value: 1.0, underflow: false, nodes: 0 });
    }
    if dist - r >= 40.0 * s1 {
        return Ok(DiskProbability { value: 0.0, underflow: true, nodes: 0 });
    }

    let h = |t: f64| -> f64 {
        let (s, c) = t.sin_cos();
        let half = r * c.abs();
        let density = normal::pdf((r * s - m1) / s1) / s1;
        if density == 0.0 {
            return 0.0;
        }
        half * density * normal::interval((-half - m2) / s2, (half - m2) / s2)
    };

    let resolve = (8.0 * TAU * r / s2).ceil() as usize;
    let mut n = resolve.max(32).next_power_of_two();
    if n > MAX_NODES {
        return Err(Error::NumericalFailure(format!(
            "disk radius {r} too large relative to standard deviation {s2} for quadrature"
        )));
    }
    let mut sum: f64 = (0..n).map(|k| h(TAU * k as f64 / n as f64)).sum();
    let mut estimate = 0.5 * TAU / n as f64 * sum;
    loop {
        if 2 * n > MAX_NODES {
            return Err(Error::NumericalFailure(format!(
                "disk quadrature did not converge with {n} nodes"
            )));
        }
        let odd: f64 = (0..n)
            .map(|k| h(TAU * (2 * k + 1) as f64 / (2 * n) as f64))
            .sum();
        sum += odd;
        n *= 2;
        let next = PI / n as f64 * sum;
        let change = (next - estimate).abs();
        estimate = next;
        if change < PC_TOLERANCE {
            break;
        }
    }
    let value = estimate.clamp(0.0, 1.0);
    if value < PC_FLOOR {
        return Ok(DiskProbability { value: 0.0, underflow: true, nodes: n });
    }
    Ok(DiskProbability { value, underflow: false, nodes: n })
}

/// Large-`psi` excess of the mean length of `x` over `psi = ||xi||`:
/// `psi {1 + (d1² + d2²)/psi²}^{1/2} - psi`.
pub fn expected_norm_excess(xi: &Vector2<f64>, variances: (f64, f64)) -> Result<f64> {
    let psi = xi.norm();
    if psi == 0.0 {
        return Err(Error::DegenerateGeometry("excess undefined at psi = 0".into()));
    }
    if variances.0 < 0.0 || variances.1 < 0.0 {
        return Err(Error::InvalidInput("variances must be non-negative".into()));
    }
    let s = (variances.0 + variances.1) / (psi * psi);
    Ok(psi * s / ((1.0 + s).sqrt() + 1.0))
}

/// Simulation of `p_c(x)` for `x ~ N2(xi, c² diag(base_variances))` over a
/// grid of scales `c²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyConfig {
    pub xi: Vector2<f64>,
    pub base_variances: (f64, f64),
    pub scale_grid: Vec<f64>,
    pub replicates: usize,
    pub radius: f64,
    pub seed: u64,
}

impl BiasStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.scale_grid.is_empty() || self.scale_grid.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidInput("scale grid entries must be positive".into()));
        }
        DiskIntegralSpec::new(self.xi, self.base_variances, self.radius).map(|_| ())
    }
}

/// Summary of simulated `p_c(x)` at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub scale: f64,
    pub pc_truth: f64,
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    /// Fraction of replicates with `p_c(x) < 1e-4`.
    pub fraction_below_1e4: f64,
    #[serde(skip)]
    pub sorted: Vec<f64>,
}

impl BiasSummary {
    /// Fraction of simulated values strictly below `t`.
    pub fn fraction_below(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&v| v < t) as f64 / self.sorted.len() as f64
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (the usual "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs the study on the current rayon pool. Replicate `i` draws its standard
/// normal pair from stream `i` of a generator keyed by `seed`, and the same
/// pair is reused across scales, so the output is independent of the number
/// of worker threads.
pub fn bias_study(config: &BiasStudyConfig) -> Result<Vec<BiasSummary>> {
    config.validate()?;
    let draws: Vec<(f64, f64)> = (0..config.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        })
        .collect();
    let (v1, v2) = config.base_variances;
    config
        .scale_grid
        .iter()
        .map(|&c2| {
            let vars = (c2 * v1, c2 * v2);
            let c = c2.sqrt();
            let pc_truth = pc_disk(&DiskIntegralSpec::new(config.xi, vars, config.radius)?)?;
            let mut values = draws
                .par_iter()
                .map(|&(z1, z2)| {
                    let x = Vector2::new(
                        config.xi.x + c * v1.sqrt() * z1,
                        config.xi.y + c * v2.sqrt() * z2,
                    );
                    pc_disk(&DiskIntegralSpec { center: x, variances: vars, radius: config.radius })
                })
                .collect::<Result<Vec<f64>>>()?;
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let mut s = BiasSummary {
                scale: c2,
                pc_truth,
                mean,
                min: values[0],
                q05: quantile_sorted(&values, 0.05),
                q25: quantile_sorted(&values, 0.25),
                median: quantile_sorted(&values, 0.5),
                q75: quantile_sorted(&values, 0.75),
                q95: quantile_sorted(&values, 0.95),
                max: values[values.len() - 1],
                fraction_below_1e4: 0.0,
                sorted: values,
            };
            s.fraction_below_1e4 = s.fraction_below(1e-4);
            Ok(s)
        })
        .collect()
}
