//! Pivot curves over a grid of miss distances and what is read off them:
//! confidence limits, point estimates, significance probabilities and the
//! loss-based decision threshold.
//!
//! Pivots are decreasing in `psi`. The modified roots are undefined where
//! `|r| < EXCLUSION` and are linearly interpolated across that window. The
//! modified roots can turn over near `psi = 0` and can have small bumps where
//! the constrained fit changes branch, so inversion and significance use the
//! rectified pivot: running extrema taken outward from `psi_hat`.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::likelihood::LikelihoodContext;
use crate::normal;
use crate::pivots::{self, planar_pivots, PivotKind, PivotSet, PriorSpec, EXCLUSION};
use crate::spline::NaturalSpline;
use crate::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 80;
/// Refined inverses satisfy `|pivot(psi) - target|` below this.
pub const INVERSION_TOLERANCE: f64 = 1e-4;
/// Modified roots larger in magnitude than this multiple of `max |r|` on the
/// grid are treated as numerical outliers.
pub const OUTLIER_FACTOR: f64 = 3.0;
const MAX_REFINE: usize = 100;

/// Pivots at one `psi` together with the nuisance estimate that produced
/// them, in optimizer coordinates, used to warm-start neighbouring
/// evaluations.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pivots: PivotSet,
    pub nuisance: Option<DVector<f64>>,
}

/// Anything that can evaluate the pivots at a given `psi`.
pub trait PivotSource: Sync {
    fn psi_hat(&self) -> f64;
    /// `se(psi_hat)`, which sets the grid width.
    fn standard_error(&self) -> f64;
    fn evaluate(&self, psi: f64, warm: Option<&DVector<f64>>) -> Result<Evaluation>;
}

/// General path: constrained maximum likelihood followed by the determinant
/// forms of the corrections.
#[derive(Debug, Clone, Copy)]
pub struct ProfileSource<'a> {
    pub ctx: &'a LikelihoodContext,
    pub prior: Option<PriorSpec>,
}

impl<'a> ProfileSource<'a> {
    pub fn new(ctx: &'a LikelihoodContext, prior: Option<PriorSpec>) -> Self {
        Self { ctx, prior }
    }
}

impl PivotSource for ProfileSource<'_> {
    fn psi_hat(&self) -> f64 {
        self.ctx.psi_hat()
    }

    fn standard_error(&self) -> f64 {
        self.ctx.standard_error()
    }

    fn evaluate(&self, psi: f64, warm: Option<&DVector<f64>>) -> Result<Evaluation> {
        let fit = self.ctx.profile_fit(psi, warm)?;
        let pivots = pivots::pivot_set(self.ctx, &fit, self.prior)?;
        Ok(Evaluation { pivots, nuisance: Some(fit.coords) })
    }
}

/// Planar model through its closed-form pivots.
#[derive(Debug, Clone, Copy)]
pub struct PlanarSource {
    pub x: Vector2<f64>,
    pub variances: (f64, f64),
}

impl PlanarSource {
    pub fn new(x: Vector2<f64>, variances: (f64, f64)) -> Result<Self> {
        if !(variances.0 > 0.0 && variances.1 > 0.0) {
            return Err(Error::InvalidInput("variances must be positive".into()));
        }
        if !(x.norm() > 0.0) {
            return Err(Error::DegenerateGeometry("observed miss distance is zero".into()));
        }
        Ok(Self { x, variances })
    }
}

impl PivotSource for PlanarSource {
    fn psi_hat(&self) -> f64 {
        self.x.norm()
    }

    fn standard_error(&self) -> f64 {
        let l = self.x.y.atan2(self.x.x);
        let (s, c) = l.sin_cos();
        (c * c * self.variances.0 + s * s * self.variances.1).sqrt()
    }

    fn evaluate(&self, psi: f64, _warm: Option<&DVector<f64>>) -> Result<Evaluation> {
        Ok(Evaluation { pivots: planar_pivots(psi, &self.x, self.variances)?, nuisance: None })
    }
}

/// `min(alpha, 1e-5)/2`: the tail level used to size the grid.
pub fn grid_alpha(alpha: f64) -> f64 {
    alpha.min(1e-5) / 2.0
}

/// Grid on `[max(psi_hat - z se, 0), psi_hat + z se]`, `z = z_{1-alpha}`,
/// with spacing that grows with `psi`. The nodes are
/// `lo + (hi - lo) (i/(n-1))^p` with `p >= 1` chosen so that `psi_hat` is
/// itself a node.
pub fn build_grid(psi_hat: f64, se: f64, alpha: f64, n_points: usize) -> Result<Vec<f64>> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::InvalidInput(format!("standard error {se} must be positive")));
    }
    if n_points < 20 {
        return Err(Error::InvalidInput(format!("grid needs at least 20 points, got {n_points}")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} must lie in (0, 0.5)")));
    }
    if !(psi_hat >= 0.0) {
        return Err(Error::InvalidInput(format!("psi_hat = {psi_hat} must be non-negative")));
    }
    let z = normal::quantile(1.0 - alpha);
    let lo = (psi_hat - z * se).max(0.0);
    let hi = psi_hat + z * se;
    let last = (n_points - 1) as f64;
    let frac = (psi_hat - lo) / (hi - lo);
    let (k, p) = if frac <= 0.0 {
        (0, 2.0)
    } else {
        let k = ((frac.sqrt() * last).round() as usize).clamp(1, n_points - 2);
        let p = frac.ln() / (k as f64 / last).ln();
        (k, p.max(1.0))
    };
    let mut grid: Vec<f64> = (0..n_points)
        .map(|i| lo + (hi - lo) * (i as f64 / last).powf(p))
        .collect();
    grid[0] = lo;
    grid[n_points - 1] = hi;
    grid[k] = psi_hat;
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub psi: f64,
    pub pivots: PivotSet,
    pub nuisance: Option<DVector<f64>>,
}

/// Strictly decreasing subsequence of a pivot curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneBranch {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl MonotoneBranch {
    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        self.indices[self.indices.len() - 1]
    }
}

/// Pivots evaluated along an increasing grid of `psi` values.
#[derive(Debug, Clone)]
pub struct PivotCurve {
    pub psi_hat: f64,
    pub points: Vec<CurvePoint>,
    extended_left: bool,
    extended_right: bool,
}

impl PivotCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psi).collect()
    }

    /// Indices where `|r|` is inside the exclusion window.
    pub fn excluded(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.points[i].pivots.root.abs() < EXCLUSION)
            .collect()
    }

    /// Indices whose modified root is flagged by the outlier filter.
    pub fn outliers(&self, kind: PivotKind) -> Vec<usize> {
        let limit = self.outlier_limit();
        (0..self.points.len())
            .filter(|&i| kind.value(&self.points[i].pivots).is_some_and(|v| v.abs() > limit))
            .collect()
    }

    fn outlier_limit(&self) -> f64 {
        let max_r = self.points.iter().map(|p| p.pivots.root.abs()).fold(0.0, f64::max);
        OUTLIER_FACTOR * max_r.max(EXCLUSION)
    }

    fn psi_hat_index(&self) -> usize {
        self.points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.psi - self.psi_hat).abs().total_cmp(&(b.1.psi - self.psi_hat).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    fn usable(&self, kind: PivotKind, set: &PivotSet, limit: f64) -> Option<f64> {
        let v = kind.value(set)?;
        if !v.is_finite() || (kind.is_modified() && (set.root.abs() < EXCLUSION || v.abs() > limit)) {
            return None;
        }
        Some(v)
    }

    /// Pivot values at the grid points, missing values strictly between two
    /// available ones filled by linear interpolation in `psi`.
    pub fn values(&self, kind: PivotKind) -> Vec<Option<f64>> {
        let limit = self.outlier_limit();
        let raw: Vec<Option<f64>> =
            self.points.iter().map(|p| self.usable(kind, &p.pivots, limit)).collect();
        let mut out = raw.clone();
        for i in 0..raw.len() {
            if raw[i].is_some() {
                continue;
            }
            let before = (0..i).rev().find(|&j| raw[j].is_some());
            let after = (i + 1..raw.len()).find(|&j| raw[j].is_some());
            if let (Some(a), Some(b)) = (before, after) {
                out[i] = Some(self.lerp(a, b, raw[a].unwrap(), raw[b].unwrap(), self.points[i].psi));
            }
        }
        out
    }

    fn lerp(&self, a: usize, b: usize, va: f64, vb: f64, psi: f64) -> f64 {
        let (pa, pb) = (self.points[a].psi, self.points[b].psi);
        va + (vb - va) * (psi - pa) / (pb - pa)
    }

    // The node at psi_hat, or the nearest node with a usable value, first
    // looking to the right.
    fn anchor(&self, vals: &[Option<f64>]) -> Option<usize> {
        let k = self.psi_hat_index();
        (k..vals.len()).chain((0..k).rev()).find(|&i| vals[i].is_some())
    }

    /// Rectified pivot: to the right of `psi_hat` the running minimum of the
    /// values outward from `psi_hat`, to the left the running maximum. It is
    /// non-increasing and equals the pivot wherever the pivot is decreasing.
    pub fn rectified(&self, kind: PivotKind) -> Vec<Option<f64>> {
        let vals = self.values(kind);
        let Some(k) = self.anchor(&vals) else {
            return vals;
        };
        let mut out = vec![None; vals.len()];
        let mut run: Option<f64> = None;
        for i in k..vals.len() {
            if let Some(v) = vals[i] {
                run = Some(run.map_or(v, |r: f64| r.min(v)));
            }
            out[i] = run;
        }
        run = vals[k];
        for i in (0..k).rev() {
            if let Some(v) = vals[i] {
                run = Some(run.map_or(v, |r: f64| r.max(v)));
            }
            out[i] = run;
        }
        out
    }

    /// Grid points where the pivot sets a new record outward from `psi_hat`
    /// (a new maximum to the left, a new minimum to the right): a strictly
    /// decreasing subsequence on which the curve is inverted.
    pub fn monotone_branch(&self, kind: PivotKind) -> Option<MonotoneBranch> {
        let vals = self.values(kind);
        let k = self.anchor(&vals)?;
        let centre = vals[k]?;
        let mut left = Vec::new();
        let mut best = centre;
        for i in (0..k).rev() {
            if let Some(v) = vals[i].filter(|&v| v > best) {
                best = v;
                left.push(i);
            }
        }
        left.reverse();
        let mut indices = left;
        indices.push(k);
        let mut best = centre;
        for (i, v) in vals.iter().enumerate().skip(k + 1) {
            if let Some(v) = v.filter(|&v| v < best) {
                best = v;
                indices.push(i);
            }
        }
        let values = indices.iter().map(|&i| vals[i].unwrap()).collect();
        Some(MonotoneBranch { indices, values })
    }

    fn nearest_nuisance(&self, psi: f64) -> Option<&DVector<f64>> {
        self.points
            .iter()
            .filter(|p| p.nuisance.is_some())
            .min_by(|a, b| (a.psi - psi).abs().total_cmp(&(b.psi - psi).abs()))
            .and_then(|p| p.nuisance.as_ref())
    }

    /// Pivot at an arbitrary `psi` by direct evaluation, or by linear
    /// interpolation between the nearest usable grid points when the modified
    /// root is excluded there.
    pub fn pivot_at(&self, source: &dyn PivotSource, kind: PivotKind, psi: f64) -> Result<f64> {
        let eval = source.evaluate(psi, self.nearest_nuisance(psi))?;
        // Off the grid |r| can exceed everything seen on it.
        let limit = self.outlier_limit().max(OUTLIER_FACTOR * eval.pivots.root.abs());
        if let Some(v) = self.usable(kind, &eval.pivots, limit) {
            return Ok(v);
        }
        let raw: Vec<Option<f64>> =
            self.points.iter().map(|p| self.usable(kind, &p.pivots, limit)).collect();
        let before = (0..raw.len()).rev().find(|&j| raw[j].is_some() && self.points[j].psi <= psi);
        let after = (0..raw.len()).find(|&j| raw[j].is_some() && self.points[j].psi >= psi);
        match (before, after) {
            (Some(a), Some(b)) if a == b => Ok(raw[a].unwrap()),
            (Some(a), Some(b)) => Ok(self.lerp(a, b, raw[a].unwrap(), raw[b].unwrap(), psi)),
            _ => Err(Error::Indeterminate(eval.pivots.root)),
        }
    }

    fn extend(&mut self, source: &dyn PivotSource, psis: &[f64], left: bool) -> Result<()> {
        let mut warm = if left {
            self.points.first().and_then(|p| p.nuisance.clone())
        } else {
            self.points.last().and_then(|p| p.nuisance.clone())
        };
        let mut new = Vec::with_capacity(psis.len());
        for &psi in psis {
            let e = source.evaluate(psi, warm.as_ref())?;
            warm = e.nuisance.clone().or(warm);
            new.push(CurvePoint { psi, pivots: e.pivots, nuisance: e.nuisance });
        }
        if left {
            new.reverse();
            new.append(&mut self.points);
            self.points = new;
        } else {
            self.points.append(&mut new);
        }
        Ok(())
    }

    /// Adds nodes between 0 and the current left end (finer towards 0).
    pub fn extend_left(&mut self, source: &dyn PivotSource) -> Result<bool> {
        let lo = self.points[0].psi;
        if self.extended_left || lo <= 0.0 {
            return Ok(false);
        }
        self.extended_left = true;
        let m = (self.points.len() / 4).max(10);
        let psis: Vec<f64> = (1..=m).rev().map(|i| lo * ((i - 1) as f64 / m as f64).powi(2)).collect();
        // Ordered from lo towards 0 so that warm starts follow the chain.
        let psis: Vec<f64> = psis.into_iter().filter(|&p| p < lo).collect();
        self.extend(source, &psis, true)?;
        Ok(true)
    }

    /// Doubles the distance from `psi_hat` to the right end.
    pub fn extend_right(&mut self, source: &dyn PivotSource) -> Result<bool> {
        if self.extended_right {
            return Ok(false);
        }
        self.extended_right = true;
        let hi = self.points[self.points.len() - 1].psi;
        let target = self.psi_hat + 2.0 * (hi - self.psi_hat);
        let m = (self.points.len() / 2).max(10);
        let psis: Vec<f64> = (1..=m).map(|i| hi + (target - hi) * i as f64 / m as f64).collect();
        self.extend(source, &psis, false)?;
        Ok(true)
    }
}

/// Evaluates all pivots on `grid`, continuing the constrained fits outward
/// from the node nearest `psi_hat`; the two sides run in parallel.
pub fn evaluate_curve(grid: &[f64], source: &dyn PivotSource) -> Result<PivotCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be non-empty and strictly increasing".into()));
    }
    let psi_hat = source.psi_hat();
    let k = (0..grid.len())
        .min_by(|&a, &b| (grid[a] - psi_hat).abs().total_cmp(&(grid[b] - psi_hat).abs()))
        .unwrap();
    let centre = source.evaluate(grid[k], None)?;
    let chain = |indices: Vec<usize>| -> Result<Vec<Evaluation>> {
        let mut warm = centre.nuisance.clone();
        let mut out = Vec::with_capacity(indices.len());
        for i in indices {
            let e = source.evaluate(grid[i], warm.as_ref())?;
            warm = e.nuisance.clone().or(warm);
            out.push(e);
        }
        Ok(out)
    };
    let (left, right) = rayon::join(
        || chain((0..k).rev().collect()),
        || chain((k + 1..grid.len()).collect()),
    );
    let (mut left, right) = (left?, right?);
    left.reverse();
    let points = left
        .into_iter()
        .chain(std::iter::once(centre))
        .chain(right)
        .zip(grid)
        .map(|(e, &psi)| CurvePoint { psi, pivots: e.pivots, nuisance: e.nuisance })
        .collect();
    Ok(PivotCurve { psi_hat, points, extended_left: false, extended_right: false })
}

/// Solves `pivot(psi) = target` on the monotone branch: a natural spline of
/// `psi` against the pivot gives the first guess, then bracketed secant steps
/// on the true pivot reach [`INVERSION_TOLERANCE`].
pub fn invert_curve(
    curve: &PivotCurve,
    source: &dyn PivotSource,
    kind: PivotKind,
    target: f64,
) -> Result<f64> {
    let branch = curve
        .monotone_branch(kind)
        .ok_or(Error::Indeterminate(f64::NAN))?;
    let vals = &branch.values;
    let high = vals[0];
    let low = vals[vals.len() - 1];
    if !(target <= high && target >= low) {
        return Err(Error::OutOfRange { target, low, high });
    }
    let psis: Vec<f64> = branch.indices.iter().map(|&i| curve.points[i].psi).collect();
    if vals.len() == 1 {
        return Ok(psis[0]);
    }
    let j = (0..vals.len() - 1)
        .find(|&j| vals[j] >= target && target >= vals[j + 1])
        .unwrap_or(vals.len() - 2);
    let (mut xl, mut fl) = (psis[j], vals[j] - target);
    let (mut xr, mut fr) = (psis[j + 1], vals[j + 1] - target);
    if fl == 0.0 {
        return Ok(xl);
    }
    if fr == 0.0 {
        return Ok(xr);
    }
    let spline = NaturalSpline::new(vals.iter().rev().copied().collect(), psis.iter().rev().copied().collect())?;
    let mut x = spline.eval(target);
    if !(x > xl && x < xr) {
        x = xl - fl * (xr - xl) / (fr - fl);
    }
    let mut side = 0i8;
    let mut slow = 0;
    for _ in 0..MAX_REFINE {
        let width = xr - xl;
        let f = curve.pivot_at(source, kind, x)? - target;
        if f.abs() < INVERSION_TOLERANCE {
            return Ok(x);
        }
        // Pivot decreases in psi: positive residual means the root is to the right.
        if f > 0.0 {
            xl = x;
            fl = f;
            if side == 1 {
                fr *= 0.5;
            }
            side = 1;
        } else {
            xr = x;
            fr = f;
            if side == -1 {
                fl *= 0.5;
            }
            side = -1;
        }
        // A pivot can jump (the constrained optimum switching branches); the
        // secant then crawls towards the jump, so bisect after two steps that
        // failed to halve the bracket.
        slow = if xr - xl > 0.5 * width { slow + 1 } else { 0 };
        x = xl - fl * (xr - xl) / (fr - fl);
        if slow >= 2 || !(x > xl && x < xr) {
            x = 0.5 * (xl + xr);
            slow = 0;
        }
        if xr - xl <= 1e-14 * xr.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::NumericalFailure(format!(
        "inversion of {kind} at {target} did not reach tolerance"
    )))
}

/// Equi-tailed confidence limits `(L, U)` with `pivot(L) = z_{1-alpha}`,
/// `pivot(U) = -z_{1-alpha}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub alpha: f64,
    pub pivot_kind: PivotKind,
    pub lower_clamped: bool,
    /// Set when the pivot lies below `-z_{1-alpha}` at every `psi >= 0`, so
    /// that the upper limit is 0.
    pub upper_clamped: bool,
}

/// Confidence interval of level `1 - 2 alpha`. If the lower limit is not
/// reached the grid is extended to 0 once and the limit then clamped at 0;
/// if the upper limit is not reached the right part of the grid is doubled
/// once before giving up. A pivot that is below `-z_{1-alpha}` everywhere
/// gives an upper limit of 0.
pub fn confidence_interval(
    curve: &mut PivotCurve,
    source: &dyn PivotSource,
    alpha: f64,
    kind: PivotKind,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} must lie in (0, 0.5)")));
    }
    let z = normal::quantile(1.0 - alpha);
    let (lower, lower_clamped) = loop {
        match invert_curve(curve, source, kind, z) {
            Ok(l) => break (l, false),
            Err(Error::OutOfRange { high, .. }) if z > high => {
                let first = curve.monotone_branch(kind).map_or(0, |b| b.first());
                if first == 0 && curve.extend_left(source)? {
                    continue;
                }
                break (0.0, true);
            }
            Err(e) => return Err(e),
        }
    };
    let (upper, upper_clamped) = loop {
        match invert_curve(curve, source, kind, -z) {
            Ok(u) => break (u, false),
            Err(Error::OutOfRange { low, .. }) if -z < low => {
                let last = curve.monotone_branch(kind).map_or(0, |b| b.last());
                if last + 1 == curve.points.len() && curve.extend_right(source)? {
                    continue;
                }
                return Err(Error::OutOfRange { target: -z, low, high: f64::INFINITY });
            }
            // The pivot is below -z for every psi >= 0.
            Err(Error::OutOfRange { high, .. }) if -z > high => {
                let first = curve.monotone_branch(kind).map_or(0, |b| b.first());
                if first == 0 && curve.extend_left(source)? {
                    continue;
                }
                break (0.0, true);
            }
            Err(e) => return Err(e),
        }
    };
    Ok(ConfidenceInterval {
        lower,
        upper,
        level: 1.0 - 2.0 * alpha,
        alpha,
        pivot_kind: kind,
        lower_clamped,
        upper_clamped,
    })
}

/// Pivot value used for significance at `psi0`: the direct value, limited
/// by the rectified pivot at the grid points between `psi_hat` and `psi0`.
pub fn pivot_for_significance(
    curve: &PivotCurve,
    source: &dyn PivotSource,
    psi0: f64,
    kind: PivotKind,
) -> Result<f64> {
    if !(psi0 >= 0.0) {
        return Err(Error::InvalidInput(format!("psi0 = {psi0} must be non-negative")));
    }
    let vals = curve.values(kind);
    let between = |i: usize| {
        let p = curve.points[i].psi;
        (p >= psi0 && p <= curve.psi_hat) || (p <= psi0 && p >= curve.psi_hat)
    };
    let bound = (0..vals.len()).filter(|&i| between(i)).filter_map(|i| vals[i]);
    let held = if psi0 < curve.psi_hat { bound.reduce(f64::max) } else { bound.reduce(f64::min) };
    let direct = curve.pivot_at(source, kind, psi0);
    match (direct, held) {
        (Ok(v), Some(h)) if psi0 < curve.psi_hat => Ok(v.max(h)),
        (Ok(v), Some(h)) => Ok(v.min(h)),
        (Ok(v), None) => Ok(v),
        (Err(_), Some(h)) if psi0 < curve.psi_hat => Ok(h),
        (Err(e), _) => Err(e),
    }
}

/// `p_obs = 1 - Phi{pivot(psi0)}` for `H0: psi = psi0` against `psi > psi0`.
pub fn significance_probability(
    curve: &PivotCurve,
    source: &dyn PivotSource,
    psi0: f64,
    kind: PivotKind,
) -> Result<f64> {
    Ok(normal::sf(pivot_for_significance(curve, source, psi0, kind)?))
}

/// `(psi, Phi{pivot(psi)})` at every grid point where the pivot is usable,
/// using the rectified pivot.
pub fn significance_function(curve: &PivotCurve, kind: PivotKind) -> Vec<(f64, f64)> {
    let rect = curve.rectified(kind);
    let limit = curve.outlier_limit();
    (0..curve.points.len())
        .filter(|&i| curve.usable(kind, &curve.points[i].pivots, limit).is_some())
        .filter_map(|i| rect[i].map(|v| (curve.points[i].psi, normal::cdf(v))))
        .collect()
}

/// Losses for the two-action, two-state decision; `l00 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub l01: f64,
    pub l10: f64,
    pub l11: f64,
}

/// `epsilon = l10 / (l10 + l01 - l11)`: take evasive action when the
/// probability of `psi <= psi0` reaches this level.
pub fn decision_threshold(losses: &LossTable) -> Result<f64> {
    let LossTable { l01, l10, l11 } = *losses;
    if [l01, l10, l11].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidLosses(f64::NAN));
    }
    let denom = l10 + l01 - l11;
    if !(denom > 0.0) {
        return Err(Error::InvalidLosses(denom));
    }
    Ok(l10 / denom)
}

/// Request for a full assessment of one conjunction.
#[derive(Debug, Clone)]
pub struct AssessmentRequest {
    pub psi0: f64,
    pub epsilon: f64,
    pub alphas: Vec<f64>,
    pub kinds: Vec<PivotKind>,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub pivot_kind: PivotKind,
    pub pivot: f64,
    pub p_obs: f64,
    /// `p_obs < epsilon`: the data are evidence that `psi > psi0`.
    pub below_epsilon: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub psi_hat: f64,
    pub standard_error: f64,
    pub psi_hat_star: Option<f64>,
    pub psi0: f64,
    pub epsilon: f64,
    pub intervals: Vec<ConfidenceInterval>,
    pub significance: Vec<Significance>,
    /// True unless the modified root (or, failing that, the likelihood root)
    /// gives `p_obs < epsilon`.
    pub evasive_action: bool,
    pub pc_estimate: Option<f64>,
    pub outliers: usize,
}

/// Runs the grid, curve, interval and significance steps for `source`.
pub fn assess(source: &dyn PivotSource, request: &AssessmentRequest) -> Result<(AssessmentReport, PivotCurve)> {
    if !(request.epsilon > 0.0 && request.epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!("epsilon = {} must lie in (0, 1]", request.epsilon)));
    }
    if request.alphas.is_empty() {
        return Err(Error::InvalidInput("at least one alpha level is required".into()));
    }
    let min_alpha = request.alphas.iter().copied().fold(0.5, f64::min);
    let grid = build_grid(
        source.psi_hat(),
        source.standard_error(),
        grid_alpha(min_alpha),
        request.grid_points,
    )?;
    let mut curve = evaluate_curve(&grid, source)?;
    let mut intervals = Vec::new();
    for &kind in &request.kinds {
        for &alpha in &request.alphas {
            intervals.push(confidence_interval(&mut curve, source, alpha, kind)?);
        }
    }
    let mut significance = Vec::new();
    for &kind in &request.kinds {
        let pivot = pivot_for_significance(&curve, source, request.psi0, kind)?;
        let p_obs = normal::sf(pivot);
        significance.push(Significance {
            pivot_kind: kind,
            pivot,
            p_obs,
            below_epsilon: p_obs < request.epsilon,
        });
    }
    let deciding = significance
        .iter()
        .find(|s| s.pivot_kind == PivotKind::Modified)
        .or_else(|| significance.iter().find(|s| s.pivot_kind == PivotKind::Root))
        .or(significance.first());
    let evasive_action = deciding.is_none_or(|s| !s.below_epsilon);
    let psi_hat_star = invert_curve(&curve, source, PivotKind::Modified, 0.0).ok();
    let outliers = curve.outliers(PivotKind::Modified).len();
    Ok((
        AssessmentReport {
            psi_hat: source.psi_hat(),
            standard_error: source.standard_error(),
            psi_hat_star,
            psi0: request.psi0,
            epsilon: request.epsilon,
            intervals,
            significance,
            evasive_action,
            pc_estimate: None,
            outliers,
        },
        curve,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::PlanarLikelihoodContext;
    use proptest::prelude::*;

    fn equal_variance() -> PlanarSource {
        PlanarSource::new(Vector2::new(30.0, 40.0), (25.0, 25.0)).unwrap()
    }

    fn curve_for(source: &dyn PivotSource, alpha: f64) -> PivotCurve {
        let grid = build_grid(source.psi_hat(), source.standard_error(), grid_alpha(alpha), 80).unwrap();
        evaluate_curve(&grid, source).unwrap()
    }

    #[test]
    fn grid_example() {
        let g = build_grid(1.0, 0.1, 0.05, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 0.8355).abs() < 1e-4 && (g[49] - 1.1645).abs() < 1e-4);
        assert!(g.contains(&1.0));
        for w in g.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - w[1] >= (w[1] - w[0]) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn significance_far_off_grid_is_evaluated_directly() {
        let s = PlanarSource::new(Vector2::new(300.0, 400.0), (25.0, 25.0)).unwrap();
        let c = curve_for(&s, 0.005);
        let r = pivot_for_significance(&c, &s, 100.0, PivotKind::Root).unwrap();
        let rs = pivot_for_significance(&c, &s, 100.0, PivotKind::Modified).unwrap();
        assert!(r > 70.0, "{r}");
        assert!((rs - r).abs() < 1.0, "{rs} vs {r}");
    }

    #[test]
    fn grid_clamps_at_zero() {
        let g = build_grid(0.5, 1.0, 0.01, 30).unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g.contains(&0.5));
        assert!(build_grid(1.0, 0.0, 0.05, 50).is_err());
        assert!(build_grid(1.0, 0.1, 0.05, 10).is_err());
    }

    #[test]
    fn linear_pivot_interval() {
        let s = equal_variance();
        let mut c = curve_for(&s, 0.025);
        let ci = confidence_interval(&mut c, &s, 0.025, PivotKind::Root).unwrap();
        let z = normal::quantile(0.975);
        assert!((ci.lower - (50.0 - 5.0 * z)).abs() < 5.0 * INVERSION_TOLERANCE);
        assert!((ci.upper - (50.0 + 5.0 * z)).abs() < 5.0 * INVERSION_TOLERANCE);
        let m = confidence_interval(&mut c, &s, 0.025, PivotKind::Modified).unwrap();
        assert!(m.lower < ci.lower && m.upper < ci.upper);
    }

    #[test]
    fn point_estimates() {
        let s = equal_variance();
        let c = curve_for(&s, 0.05);
        let r0 = invert_curve(&c, &s, PivotKind::Root, 0.0).unwrap();
        assert!((r0 - 50.0).abs() < 1e-3);
        let star = invert_curve(&c, &s, PivotKind::Modified, 0.0).unwrap();
        assert!(star < 50.0);
        // r*(psi) = (50 - psi)/5 + 5 log(psi/50)/(2 (50 - psi)) has its zero near psi = 49.75.
        let f = |p: f64| (50.0 - p) / 5.0 + 5.0 * (p / 50.0).ln() / (2.0 * (50.0 - p));
        assert!(f(star).abs() < INVERSION_TOLERANCE);
    }

    #[test]
    fn significance_examples() {
        let s = equal_variance();
        let c = curve_for(&s, 0.05);
        for k in [PivotKind::Wald, PivotKind::Root] {
            assert!((significance_probability(&c, &s, 50.0, k).unwrap() - 0.5).abs() < 1e-12);
        }
        let table = significance_function(&c, PivotKind::Modified);
        assert_eq!(table.len(), c.points.len() - c.excluded().len());
        assert!(table.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn interpolates_inside_exclusion_window() {
        let s = equal_variance();
        let c = curve_for(&s, 0.05);
        let v = c.pivot_at(&s, PivotKind::Modified, 50.1).unwrap();
        // Within the window the modified root is close to r - d/(2 psi_hat).
        assert!((v - (-0.1 / 5.0 - 0.05)).abs() < 0.01, "{v}");
    }

    #[test]
    fn lower_limit_clamped_for_small_psi_hat() {
        let s = PlanarSource::new(Vector2::new(1.0, 0.5), (25.0, 16.0)).unwrap();
        let mut c = curve_for(&s, 0.005);
        let ci = confidence_interval(&mut c, &s, 0.005, PivotKind::Root).unwrap();
        assert!(ci.lower_clamped && ci.lower == 0.0);
        let m = confidence_interval(&mut c, &s, 0.005, PivotKind::Modified).unwrap();
        assert!(m.lower_clamped);
        assert!(m.upper > s.psi_hat());
    }

    #[test]
    fn thresholds() {
        let e = decision_threshold(&LossTable { l01: 1e4 + 1.0, l10: 1.0, l11: 1.0 }).unwrap();
        assert!((e - 1.0 / 10001.0).abs() < 1e-18);
        assert!((e - 1e-4).abs() < 1e-8);
        let e = decision_threshold(&LossTable { l01: 3.0, l10: 3.0, l11: 0.0 }).unwrap();
        assert_eq!(e, 0.5);
        assert!(decision_threshold(&LossTable { l01: 1e300, l10: 1.0, l11: 0.0 }).unwrap() < 1e-299);
        assert!(matches!(
            decision_threshold(&LossTable { l01: 0.0, l10: 1.0, l11: 2.0 }),
            Err(Error::InvalidLosses(_))
        ));
    }

    #[test]
    fn general_and_closed_form_curves_agree() {
        let x = Vector2::new(11.84, -1.36);
        let v = (25.1f64.powi(2), 11.61f64.powi(2));
        let closed = PlanarSource::new(x, v).unwrap();
        let ctx = LikelihoodContext::planar(&PlanarLikelihoodContext::new(x, v).unwrap()).unwrap();
        let general = ProfileSource::new(&ctx, Some(PriorSpec::Jeffreys));
        let a = curve_for(&closed, 0.05);
        let b = curve_for(&general, 0.05);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.pivots.root - q.pivots.root).abs() < 1e-8);
        }
    }

    #[test]
    fn assessment_case_c() {
        let s = PlanarSource::new(Vector2::new(11.84, -1.36), (25.1f64.powi(2), 11.61f64.powi(2))).unwrap();
        let req = AssessmentRequest {
            psi0: 10.0,
            epsilon: 1e-4,
            alphas: vec![0.05, 0.025],
            kinds: PivotKind::ALL.to_vec(),
            grid_points: 80,
        };
        let (report, _) = assess(&s, &req).unwrap();
        assert_eq!(report.intervals.len(), 8);
        for sig in &report.significance {
            let expected = match sig.pivot_kind {
                PivotKind::Wald | PivotKind::Root => 0.45..=0.55,
                PivotKind::Modified => 0.55..=0.65,
                PivotKind::ModifiedBayes => 0.0..=1.0,
            };
            assert!(expected.contains(&sig.p_obs), "{:?} {}", sig.pivot_kind, sig.p_obs);
        }
        assert!(report.evasive_action);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn nesting_and_decision_equivalence(
            x1 in 5.0..60.0f64, x2 in -20.0..20.0f64, d1 in 2.0..15.0f64, d2 in 2.0..15.0f64,
        ) {
            let s = PlanarSource::new(Vector2::new(x1, x2), (d1 * d1, d2 * d2)).unwrap();
            let mut c = curve_for(&s, 0.005);
            for kind in PivotKind::FREQUENTIST {
                let wide = confidence_interval(&mut c, &s, 0.005, kind).unwrap();
                let narrow = confidence_interval(&mut c, &s, 0.05, kind).unwrap();
                prop_assert!(wide.lower <= narrow.lower + 1e-9 && wide.upper >= narrow.upper - 1e-9);
                let branch = c.monotone_branch(kind).unwrap();
                prop_assert!(branch.values.windows(2).all(|w| w[1] < w[0]));
                // p_obs(psi0) < eps exactly when psi0 lies below the one-sided limit L_eps.
                let eps = 0.05;
                if !narrow.lower_clamped {
                    for psi0 in [narrow.lower * 0.97, narrow.lower * 1.03] {
                        let p = significance_probability(&c, &s, psi0, kind).unwrap();
                        prop_assert_eq!(p < eps, psi0 < narrow.lower);
                    }
                }
            }
        }
    }
}
