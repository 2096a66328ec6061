//! Multi-path error curves `E‖w^k − w*‖²` against a long-run SPI reference,
//! SPI/SGD comparison and log-log rate fits.
//!
//! Seeding: the dataset is drawn from `data_seed`, the reference chain uses
//! `seed_base`, and path `p` (1-based) uses `seed_base + p`. SPI and SGD paths
//! with the same index see the same sample sequence.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function_space::{generate_dataset, RNG_ALGORITHM};
use crate::model::{ParamState, Problem};
use crate::solvers::{run_chain_observed, Method, Schedule, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Number of samples, half per class.
    pub n: usize,
    /// Grid resolution `N`.
    pub resolution: usize,
    /// Steps per path, `M`.
    pub steps: usize,
    pub paths: usize,
    pub eta: f64,
    pub lambda: f64,
    pub checkpoint_every: usize,
    pub seed_base: u64,
    pub data_seed: u64,
    /// The reference run takes `reference_multiplier * steps` SPI steps.
    pub reference_multiplier: usize,
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 200,
            resolution: 200,
            steps: 10_000,
            paths: 10,
            eta: 2000.0,
            lambda: 1e-3,
            checkpoint_every: 100,
            seed_base: 1000,
            data_seed: 1,
            reference_multiplier: 10,
            tol: DEFAULT_TOL,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return fail(format!("n must be even and >= 2, got {}", self.n));
        }
        if self.resolution == 0 {
            return fail("resolution must be >= 1".into());
        }
        if self.steps == 0 || self.paths == 0 {
            return fail("steps and paths must be >= 1".into());
        }
        if self.checkpoint_every == 0 || !self.steps.is_multiple_of(self.checkpoint_every) {
            return fail(format!(
                "checkpoint_every ({}) must be >= 1 and divide steps ({})",
                self.checkpoint_every, self.steps
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.reference_multiplier == 0 {
            return fail("reference_multiplier must be >= 1".into());
        }
        if !(self.tol > 0.0) {
            return fail(format!(
                "solver tolerance must be positive, got {}",
                self.tol
            ));
        }
        Ok(())
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        Self {
            resolution,
            ..self.clone()
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::harmonic(self.eta)
    }

    pub fn reference_seed(&self) -> u64 {
        self.seed_base
    }

    pub fn path_seed(&self, path: usize) -> u64 {
        self.seed_base + path as u64
    }

    pub fn build_problem(&self) -> Result<Problem> {
        Problem::new(
            generate_dataset(self.n, self.resolution, self.data_seed)?,
            self.lambda,
        )
    }
}

/// Squared composite distance `‖w − w*‖² + (bias − bias*)²`. Non-finite values
/// are reported as `+inf`.
pub fn squared_error(state: &ParamState, reference: &ParamState) -> f64 {
    let e = match state.sub(reference) {
        Ok(d) => d.norm(),
        Err(_) => f64::INFINITY,
    };
    let sq = e * e;
    if sq.is_finite() {
        sq
    } else {
        f64::INFINITY
    }
}

/// Long SPI run approximating the minimizer.
pub fn compute_reference(problem: &Problem, config: &RunConfig) -> Result<ParamState> {
    let steps = config.reference_multiplier * config.steps;
    run_chain_observed(
        problem,
        Method::Spi,
        &config.schedule()?,
        steps,
        config.reference_seed(),
        steps,
        config.tol,
        |_, _| {},
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub method: Method,
    pub resolution: usize,
    /// `‖w¹ − w*‖²` for the zero starting point.
    pub initial_sq_error: f64,
    pub points: Vec<(usize, f64)>,
}

impl ErrorCurve {
    pub fn final_error(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Runs `config.paths` chains and averages the squared errors per checkpoint.
/// Paths run in parallel; the reduction is in path order so the result does
/// not depend on scheduling.
pub fn run_experiment(
    problem: &Problem,
    config: &RunConfig,
    method: Method,
    reference: &ParamState,
) -> Result<ErrorCurve> {
    config.validate()?;
    let schedule = config.schedule()?;
    let per_path: Vec<Vec<(usize, f64)>> = (1..=config.paths)
        .into_par_iter()
        .map(|p| {
            let mut errors = Vec::with_capacity(config.steps / config.checkpoint_every);
            run_chain_observed(
                problem,
                method,
                &schedule,
                config.steps,
                config.path_seed(p),
                config.checkpoint_every,
                config.tol,
                |k, s| errors.push((k, squared_error(s, reference))),
            )?;
            Ok(errors)
        })
        .collect::<Result<_>>()?;

    let mut points: Vec<(usize, f64)> = per_path[0].iter().map(|&(k, _)| (k, 0.0)).collect();
    for path in &per_path {
        for (acc, &(_, e)) in points.iter_mut().zip(path) {
            acc.1 += e;
        }
    }
    let paths = config.paths as f64;
    for p in &mut points {
        p.1 = if p.1.is_finite() {
            p.1 / paths
        } else {
            f64::INFINITY
        };
    }
    Ok(ErrorCurve {
        method,
        resolution: problem.resolution(),
        initial_sq_error: squared_error(&ParamState::zeros(problem.resolution()), reference),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub metadata: Vec<(String, String)>,
    pub curves: Vec<ErrorCurve>,
}

const TABLE_HEADER: &str = "method,N,k,mean_sq_error";

impl ErrorTable {
    pub fn curve(&self, method: Method, resolution: usize) -> Option<&ErrorCurve> {
        self.curves
            .iter()
            .find(|c| c.method == method && c.resolution == resolution)
    }

    pub fn curves_for(&self, method: Method) -> Vec<&ErrorCurve> {
        self.curves.iter().filter(|c| c.method == method).collect()
    }

    /// `#`-prefixed metadata, then `method,N,k,mean_sq_error` rows.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}").unwrap();
        }
        for c in &self.curves {
            writeln!(
                out,
                "# initial_sq_error.{}.{}={}",
                c.method, c.resolution, c.initial_sq_error
            )
            .unwrap();
        }
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for c in &self.curves {
            for (k, e) in &c.points {
                writeln!(out, "{},{},{k},{e}", c.method, c.resolution).unwrap();
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut table = ErrorTable::default();
        let mut initial: Vec<(Method, usize, f64)> = Vec::new();
        let mut seen_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| err(lineno, "metadata line without '='".into()))?;
                if let Some(rest) = key.strip_prefix("initial_sq_error.") {
                    let (m, n) = rest
                        .split_once('.')
                        .ok_or_else(|| err(lineno, format!("bad key {key:?}")))?;
                    let method = m.parse().map_err(|e: Error| err(lineno, e.to_string()))?;
                    let n = n
                        .parse()
                        .map_err(|_| err(lineno, format!("bad resolution {n:?}")))?;
                    let v = value
                        .parse()
                        .map_err(|_| err(lineno, format!("bad value {value:?}")))?;
                    initial.push((method, n, v));
                } else {
                    table.metadata.push((key.to_string(), value.to_string()));
                }
                continue;
            }
            if !seen_header {
                if line != TABLE_HEADER {
                    return Err(err(lineno, format!("expected header {TABLE_HEADER:?}")));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err(
                    lineno,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let method: Method = fields[0]
                .parse()
                .map_err(|e: Error| err(lineno, e.to_string()))?;
            let resolution: usize = fields[1]
                .parse()
                .map_err(|_| err(lineno, format!("bad N {:?}", fields[1])))?;
            let k: usize = fields[2]
                .parse()
                .map_err(|_| err(lineno, format!("bad k {:?}", fields[2])))?;
            let e: f64 = fields[3]
                .parse()
                .map_err(|_| err(lineno, format!("bad error value {:?}", fields[3])))?;
            if e.is_nan() || e < 0.0 {
                return Err(err(lineno, format!("error value must be >= 0, got {e}")));
            }
            match table
                .curves
                .iter_mut()
                .find(|c| c.method == method && c.resolution == resolution)
            {
                Some(c) => {
                    if c.points.last().is_some_and(|&(prev, _)| prev >= k) {
                        return Err(err(lineno, "k must increase within a curve".into()));
                    }
                    c.points.push((k, e));
                }
                None => table.curves.push(ErrorCurve {
                    method,
                    resolution,
                    initial_sq_error: f64::NAN,
                    points: vec![(k, e)],
                }),
            }
        }
        if !seen_header {
            return Err(err(
                text.lines().count().max(1),
                "missing table header".into(),
            ));
        }
        for (m, n, v) in initial {
            if let Some(c) = table
                .curves
                .iter_mut()
                .find(|c| c.method == m && c.resolution == n)
            {
                c.initial_sq_error = v;
            }
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

fn metadata(config: &RunConfig, resolutions: &[usize]) -> Vec<(String, String)> {
    let list = resolutions
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    vec![
        ("n".into(), config.n.to_string()),
        ("resolutions".into(), list),
        ("steps".into(), config.steps.to_string()),
        ("paths".into(), config.paths.to_string()),
        ("eta".into(), config.eta.to_string()),
        ("lambda".into(), config.lambda.to_string()),
        (
            "checkpoint_every".into(),
            config.checkpoint_every.to_string(),
        ),
        ("schedule".into(), "eta/k".into()),
        ("initial_state".into(), "zero".into()),
        ("data_seed".into(), config.data_seed.to_string()),
        ("reference_seed".into(), config.reference_seed().to_string()),
        (
            "reference_steps".into(),
            (config.reference_multiplier * config.steps).to_string(),
        ),
        (
            "path_seeds".into(),
            format!(
                "{}..={}",
                config.path_seed(1),
                config.path_seed(config.paths)
            ),
        ),
        ("solver_tol".into(), format!("{:e}", config.tol)),
        ("rng".into(), RNG_ALGORITHM.into()),
        ("error_norm".into(), "rms(w-w*)^2+(bias-bias*)^2".into()),
    ]
}

/// Runs every method at every resolution. Each resolution gets its own
/// dataset (same seed) and reference; resolutions run in parallel.
pub fn run_study(
    config: &RunConfig,
    resolutions: &[usize],
    methods: &[Method],
) -> Result<ErrorTable> {
    if resolutions.is_empty() || methods.is_empty() {
        return Err(Error::Config(
            "need at least one resolution and one method".into(),
        ));
    }
    for &n in resolutions {
        config.with_resolution(n).validate()?;
    }
    let per_resolution: Vec<Vec<ErrorCurve>> = resolutions
        .par_iter()
        .map(|&n| {
            let cfg = config.with_resolution(n);
            let problem = cfg.build_problem()?;
            let reference = compute_reference(&problem, &cfg)?;
            methods
                .iter()
                .map(|&m| run_experiment(&problem, &cfg, m, &reference))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut curves = Vec::new();
    for &m in methods {
        for group in &per_resolution {
            curves.extend(group.iter().filter(|c| c.method == m).cloned());
        }
    }
    Ok(ErrorTable {
        metadata: metadata(config, resolutions),
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    /// Natural log of the error constant.
    pub intercept: f64,
    pub points_used: usize,
}

/// Least-squares fit of `ln(error)` against `ln(k)` over `k >= k_min`.
/// Non-positive and non-finite errors are skipped.
pub fn estimate_rate(points: &[(usize, f64)], k_min: usize) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(k, e)| k >= k_min && k > 0 && e > 0.0 && e.is_finite())
        .map(|&(k, e)| ((k as f64).ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 2 usable points with k >= {k_min}, found {}",
            usable.len()
        )));
    }
    let m = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs at least two distinct k"));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: mean_y - slope * mean_x,
        points_used: usable.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub resolution: usize,
    pub spi_final: f64,
    pub sgd_final: f64,
    /// `sgd_final / spi_final`
    pub ratio: f64,
    pub sgd_initial: f64,
    /// SGD ended above its own starting error.
    pub diverged: bool,
}

pub fn compare_curves(spi: &ErrorCurve, sgd: &ErrorCurve) -> Result<Comparison> {
    if spi.resolution != sgd.resolution {
        return Err(Error::DimensionMismatch {
            left: spi.resolution,
            right: sgd.resolution,
        });
    }
    let (spi_final, sgd_final) = match (spi.final_error(), sgd.final_error()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid("cannot compare empty curves")),
    };
    Ok(Comparison {
        resolution: spi.resolution,
        spi_final,
        sgd_final,
        ratio: sgd_final / spi_final,
        sgd_initial: sgd.initial_sq_error,
        diverged: sgd_final > sgd.initial_sq_error,
    })
}

/// Pairs SPI and SGD curves by resolution.
pub fn compare_tables(table: &ErrorTable) -> Result<Vec<Comparison>> {
    table
        .curves_for(Method::Spi)
        .into_iter()
        .filter_map(|spi| {
            table
                .curve(Method::Sgd, spi.resolution)
                .map(|sgd| compare_curves(spi, sgd))
        })
        .collect()
}

/// Runs both methods on one problem with identical seeds and compares them.
pub fn compare_methods(
    problem: &Problem,
    config: &RunConfig,
    reference: &ParamState,
) -> Result<Comparison> {
    let spi = run_experiment(problem, config, Method::Spi, reference)?;
    let sgd = run_experiment(problem, config, Method::Sgd, reference)?;
    compare_curves(&spi, &sgd)
}
