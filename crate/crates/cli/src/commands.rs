//! The subcommands. Each returns the exact bytes to write, so invocations
//! with the same inputs and seed produce identical files.

use conjunction_core::calibration::{coverage_experiment, qq_export, CalibrationReport};
use conjunction_core::collision_probability::{bias_study, pc_estimate};
use conjunction_core::inference::{
    assess as run_assessment, build_grid, evaluate_curve, grid_alpha, significance_function, AssessmentRequest,
    PivotSource, PlanarSource, ProfileSource, DEFAULT_GRID_POINTS,
};
use conjunction_core::likelihood::PlanarLikelihoodContext;
use conjunction_core::pivots::PriorSpec;
use conjunction_core::{AssessmentReport, LikelihoodContext, PivotKind};
use serde::Serialize;

use crate::input::{validate_alphas, validate_epsilon, BiasInput, CalibrationInput, Conjunction, Problem};
use crate::{csv_row, fmt_f64, CliError};

#[derive(Debug, Clone)]
pub struct AssessOptions {
    pub psi0: Option<f64>,
    pub epsilon: Option<f64>,
    pub grid_points: usize,
    /// Also compute the Jeffreys-prior modified root.
    pub bayes: bool,
}

impl Default for AssessOptions {
    fn default() -> Self {
        Self { psi0: None, epsilon: None, grid_points: DEFAULT_GRID_POINTS, bayes: false }
    }
}

#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub alpha_min: f64,
    pub grid_points: usize,
    pub bayes: bool,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { alpha_min: 1e-6, grid_points: DEFAULT_GRID_POINTS, bayes: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CalibrateOptions {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub workers: Option<usize>,
    pub qq: bool,
}

#[derive(Debug, Serialize)]
pub struct AssessOutput {
    pub mode: &'static str,
    pub hard_body_radius: f64,
    #[serde(flatten)]
    pub report: AssessmentReport,
}

/// Builds the pivot source for a conjunction. The planar closed forms have
/// no Bayesian variant, so `bayes` routes planar data through the general
/// two-parameter fit.
fn with_source<T>(
    problem: &Problem,
    bayes: bool,
    f: impl FnOnce(&dyn PivotSource) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let prior = bayes.then_some(PriorSpec::Jeffreys);
    match problem {
        Problem::SixDim { state, dispersion } => {
            let ctx = LikelihoodContext::six_dim(state, dispersion)?;
            f(&ProfileSource::new(&ctx, prior))
        }
        Problem::Planar { x, variances } if bayes => {
            let ctx = LikelihoodContext::planar(&PlanarLikelihoodContext::new(*x, *variances)?)?;
            f(&ProfileSource::new(&ctx, prior))
        }
        Problem::Planar { x, variances } => f(&PlanarSource::new(*x, *variances)?),
    }
}

fn kinds(bayes: bool) -> Vec<PivotKind> {
    if bayes {
        PivotKind::ALL.to_vec()
    } else {
        PivotKind::FREQUENTIST.to_vec()
    }
}

fn check_grid_points(n: usize) -> Result<(), CliError> {
    if n < 10 {
        return Err(CliError::Validation(format!("grid points: {n} is below the minimum of 10")));
    }
    Ok(())
}

pub fn assess(conj: &Conjunction, opts: &AssessOptions) -> Result<AssessOutput, CliError> {
    let psi0 = opts.psi0.unwrap_or(conj.safety_threshold);
    let epsilon = opts.epsilon.unwrap_or(conj.epsilon);
    if !(psi0 >= conj.hard_body_radius && psi0.is_finite()) {
        return Err(CliError::Validation(format!(
            "psi0: {psi0} must be at least hard_body_radius = {}",
            conj.hard_body_radius
        )));
    }
    validate_epsilon(epsilon)?;
    check_grid_points(opts.grid_points)?;
    let request = AssessmentRequest {
        psi0,
        epsilon,
        alphas: conj.alphas.clone(),
        kinds: kinds(opts.bayes),
        grid_points: opts.grid_points,
    };
    let (mut report, _) = with_source(&conj.problem, opts.bayes, |s| Ok(run_assessment(s, &request)?))?;
    let (x, variances) = conj.problem.encounter_plane()?;
    report.pc_estimate = Some(pc_estimate(&x, variances, conj.hard_body_radius)?);
    Ok(AssessOutput {
        mode: match conj.problem {
            Problem::SixDim { .. } => "six_dim",
            Problem::Planar { .. } => "planar",
        },
        hard_body_radius: conj.hard_body_radius,
        report,
    })
}

pub fn assess_json(conj: &Conjunction, opts: &AssessOptions) -> Result<String, CliError> {
    let out = assess(conj, opts)?;
    let mut text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Significance functions `Phi{pivot(psi)}` on the grid, one row per grid
/// point at which every requested pivot is usable.
pub fn curve(conj: &Conjunction, opts: &CurveOptions) -> Result<String, CliError> {
    validate_alphas("alpha-min", &[opts.alpha_min])?;
    check_grid_points(opts.grid_points)?;
    let kinds = kinds(opts.bayes);
    let columns = with_source(&conj.problem, opts.bayes, |s| {
        let grid = build_grid(s.psi_hat(), s.standard_error(), grid_alpha(opts.alpha_min), opts.grid_points)?;
        let curve = evaluate_curve(&grid, s)?;
        Ok(kinds.iter().map(|&k| significance_function(&curve, k)).collect::<Vec<_>>())
    })?;
    let mut out = String::new();
    csv_row(
        &mut out,
        std::iter::once("psi".to_string()).chain(kinds.iter().map(|k| format!("phi_{}", k.name()))),
    );
    // Every column is a subsequence of the same grid, so a merge on psi
    // keeps exactly the rows present in all of them.
    let mut cursors = vec![0usize; columns.len()];
    for &(psi, _) in &columns[0] {
        let mut row = vec![fmt_f64(psi)];
        for (col, cur) in columns.iter().zip(cursors.iter_mut()) {
            while *cur < col.len() && col[*cur].0 < psi {
                *cur += 1;
            }
            match col.get(*cur) {
                Some(&(p, v)) if p == psi => row.push(fmt_f64(v)),
                _ => break,
            }
        }
        if row.len() == columns.len() + 1 {
            csv_row(&mut out, row);
        }
    }
    Ok(out)
}

pub struct CalibrateOutput {
    pub table: String,
    pub json: String,
    pub qq: Option<String>,
    pub report: CalibrationReport,
}

/// Runs the experiment on a dedicated pool of `workers` threads. Results do
/// not depend on the worker count.
pub fn calibrate(input: &CalibrationInput, opts: &CalibrateOptions) -> Result<CalibrateOutput, CliError> {
    let mut config = input.resolve()?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(n) = opts.replicates {
        config.replicates = n;
    }
    config.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            return Err(CliError::Validation("workers: must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    let report = pool.install(|| if opts.qq { qq_export(&config) } else { coverage_experiment(&config) })?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
    json.push('\n');
    Ok(CalibrateOutput {
        table: coverage_table(&report, &config.pivots, &config.alphas),
        qq: report.qq.as_ref().map(|series| {
            let mut out = String::new();
            csv_row(&mut out, ["pivot", "normal_quantile", "pivot_value"].map(String::from));
            for s in series {
                for &(q, v) in &s.points {
                    csv_row(&mut out, [s.pivot.name().to_string(), fmt_f64(q), fmt_f64(v)]);
                }
            }
            out
        }),
        json,
        report,
    })
}

/// Rates in percent, one row per pivot with the left-tail columns followed
/// by the right-tail ones, and a final row of Monte Carlo standard errors.
pub fn coverage_table(report: &CalibrationReport, pivots: &[PivotKind], alphas: &[f64]) -> String {
    let mut out = String::new();
    let header = std::iter::once("pivot".to_string())
        .chain(alphas.iter().map(|a| format!("left_{a}")))
        .chain(alphas.iter().map(|a| format!("right_{a}")));
    csv_row(&mut out, header);
    for &k in pivots {
        let rate = |a: f64, left: bool| {
            report.row(k, a).map_or(String::new(), |r| fmt_f64(100.0 * if left { r.left_rate } else { r.right_rate }))
        };
        let row = std::iter::once(k.name().to_string())
            .chain(alphas.iter().map(|&a| rate(a, true)))
            .chain(alphas.iter().map(|&a| rate(a, false)));
        csv_row(&mut out, row);
    }
    let se = |a: f64| fmt_f64(100.0 * (a * (1.0 - a) / report.replicates as f64).sqrt());
    csv_row(
        &mut out,
        std::iter::once("se".to_string()).chain(alphas.iter().map(|&a| se(a))).chain(alphas.iter().map(|&a| se(a))),
    );
    out
}

pub fn pc_study(input: &BiasInput) -> Result<String, CliError> {
    let mut out = String::new();
    csv_row(
        &mut out,
        [
            "hard_body_radius",
            "c2",
            "pc_truth",
            "mean",
            "min",
            "q05",
            "q25",
            "median",
            "q75",
            "q95",
            "max",
            "fraction_below_1e-4",
        ]
        .map(String::from),
    );
    for config in input.configs()? {
        for s in bias_study(&config)? {
            csv_row(
                &mut out,
                [
                    config.radius,
                    s.scale,
                    s.pc_truth,
                    s.mean,
                    s.min,
                    s.q05,
                    s.q25,
                    s.median,
                    s.q75,
                    s.q95,
                    s.max,
                    s.fraction_below_1e4,
                ]
                .map(fmt_f64),
            );
        }
    }
    Ok(out)
}
