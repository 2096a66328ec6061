//! Command-line front end: `generate`, `run`, `verify` and `rate`.
//!
//! Exit codes: 0 success, 1 check or run failure, 2 usage or config error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::Error;
use crate::experiment::{estimate_rate, run_study, ErrorTable, RunConfig};
use crate::function_space::{generate_dataset, RNG_ALGORITHM};
use crate::lemma_oracles::{self, CheckSummary};
use crate::plot::loglog_svg;
use crate::solvers::{Method, DEFAULT_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spi",
    version,
    about = "Stochastic proximal iteration experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one dataset CSV per configured resolution.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute references, run all paths and write the error table and plot.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "spi")]
        method: MethodArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rate fits printed after the run use k >= k_min.
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Run randomized checks of the supporting inequalities.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit log-log slopes to an error table.
    Rate {
        table: PathBuf,
        #[arg(long, default_value_t = 1000)]
        k_min: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Spi,
    Sgd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Spi => Method::Spi,
            MethodArg::Sgd => Method::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Algebraic,
    Operators,
    Resolvent,
    Moments,
    All,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    pub resolutions: Vec<usize>,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n: 200,
            resolutions: vec![200, 400, 800, 1600],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub steps: usize,
    pub paths: usize,
    pub eta: f64,
    pub lambda: f64,
    pub checkpoint_every: usize,
    pub seed_base: u64,
    pub reference_multiplier: usize,
    pub k_min: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            steps: d.steps,
            paths: d.paths,
            eta: d.eta,
            lambda: d.lambda,
            checkpoint_every: d.checkpoint_every,
            seed_base: d.seed_base,
            reference_multiplier: d.reference_multiplier,
            k_min: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub seed: u64,
    pub algebraic_trials: usize,
    pub operator_trials: usize,
    pub resolvent_trials: usize,
    pub moment_steps: usize,
    pub moment_paths: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            seed: 7,
            algebraic_trials: 10_000,
            operator_trials: 500,
            resolvent_trials: 1000,
            moment_steps: 5000,
            moment_paths: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Contents of the TOML configuration file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: DatasetSection,
    pub run: RunSection,
    pub solver: SolverSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Run configuration at the first configured resolution.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            n: self.dataset.n,
            resolution: self.dataset.resolutions.first().copied().unwrap_or(0),
            steps: self.run.steps,
            paths: self.run.paths,
            eta: self.run.eta,
            lambda: self.run.lambda,
            checkpoint_every: self.run.checkpoint_every,
            seed_base: self.run.seed_base,
            data_seed: self.dataset.seed,
            reference_multiplier: self.run.reference_multiplier,
            tol: self.solver.tolerance,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.dataset.resolutions.is_empty() {
            return Err(Error::Config(
                "dataset.resolutions must not be empty".into(),
            ));
        }
        let base = self.run_config();
        for &n in &self.dataset.resolutions {
            base.with_resolution(n).validate()?;
        }
        if self.verify.moment_paths == 0 || self.verify.moment_steps == 0 {
            return Err(Error::Config(
                "verify.moment_steps and moment_paths must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Failure(msg) => eprintln!("failed: {msg}"),
            }
            e.code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Generate { config, out: dir } => cmd_generate(&config, dir, out),
        Command::Run {
            config,
            method,
            out: dir,
            k_min,
            dry_run,
        } => cmd_run(&config, method.into(), dir, k_min, dry_run, out),
        Command::Verify {
            suite,
            config,
            out: dir,
        } => cmd_verify(suite, config.as_deref(), dir, out),
        Command::Rate { table, k_min } => cmd_rate(&table, k_min, out),
    }
}

fn io_fail(e: std::io::Error) -> CliError {
    CliError::Failure(e.to_string())
}

/// Creates `dir` and confirms a file can be written there.
fn ensure_writable(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".spi-write-probe");
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| CliError::Failure(format!("{} is not writable: {e}", dir.display())))
}

/// Writes all `(path, contents)` pairs; on any failure removes what was
/// already written.
fn write_all_or_nothing(files: &[(PathBuf, String)]) -> Result<(), CliError> {
    let mut written: Vec<&Path> = Vec::new();
    for (path, contents) in files {
        if let Err(e) = fs::write(path, contents) {
            for p in written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(path);
            return Err(CliError::Failure(format!("{}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(())
}

fn cmd_generate(config: &Path, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = CliConfig::load(config)?;
    let dir = dir.unwrap_or_else(|| cfg.output.dir.clone());
    let mut files = Vec::new();
    for &n in &cfg.dataset.resolutions {
        let data = generate_dataset(cfg.dataset.n, n, cfg.dataset.seed)?;
        files.push((dir.join(format!("dataset_N{n}.csv")), data.to_csv_string()));
    }
    ensure_writable(&dir)?;
    write_all_or_nothing(&files)?;
    for (path, _) in &files {
        writeln!(
            out,
            "n={} seed={} rng={} -> {}",
            cfg.dataset.n,
            cfg.dataset.seed,
            RNG_ALGORITHM,
            path.display()
        )
        .map_err(io_fail)?;
    }
    Ok(EXIT_OK)
}

fn cmd_run(
    config: &Path,
    method: Method,
    dir: Option<PathBuf>,
    k_min: Option<usize>,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let cfg = CliConfig::load(config)?;
    let dir = dir.unwrap_or_else(|| cfg.output.dir.clone());
    let k_min = k_min.unwrap_or(cfg.run.k_min);
    let base = cfg.run_config();
    let csv_path = dir.join(format!("errors_{method}.csv"));
    let svg_path = dir.join(format!("errors_{method}.svg"));

    if dry_run {
        writeln!(
            out,
            "plan: method={method} n={} N={:?} steps={} paths={} eta={} lambda={} checkpoint_every={} reference_steps={}",
            base.n,
            cfg.dataset.resolutions,
            base.steps,
            base.paths,
            base.eta,
            base.lambda,
            base.checkpoint_every,
            base.reference_multiplier * base.steps
        )
        .map_err(io_fail)?;
        writeln!(
            out,
            "would write {} and {}",
            csv_path.display(),
            svg_path.display()
        )
        .map_err(io_fail)?;
        return Ok(EXIT_OK);
    }

    ensure_writable(&dir)?;
    let table = run_study(&base, &cfg.dataset.resolutions, &[method])?;
    let curves = table.curves_for(method);
    let svg = loglog_svg(
        &format!("{} error E||w_k - w*||^2", method.name().to_uppercase()),
        &curves,
    );
    write_all_or_nothing(&[
        (csv_path.clone(), table.to_csv_string()),
        (svg_path.clone(), svg),
    ])?;

    writeln!(out, "method,N,final_error,slope,intercept").map_err(io_fail)?;
    for c in curves {
        let fin = c.final_error().unwrap_or(f64::NAN);
        match estimate_rate(&c.points, k_min) {
            Ok(fit) => writeln!(
                out,
                "{},{},{fin:.6e},{:.4},{:.4}",
                c.method, c.resolution, fit.slope, fit.intercept
            ),
            Err(_) => writeln!(out, "{},{},{fin:.6e},,", c.method, c.resolution),
        }
        .map_err(io_fail)?;
    }
    writeln!(
        out,
        "wrote {} and {}",
        csv_path.display(),
        svg_path.display()
    )
    .map_err(io_fail)?;
    Ok(EXIT_OK)
}

/// Runs the selected suites. Missing config means built-in defaults.
pub fn verify_suites(suite: Suite, cfg: &CliConfig) -> Result<Vec<CheckSummary>, Error> {
    let v = &cfg.verify;
    let mut results = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Algebraic {
        results.extend(lemma_oracles::algebraic_suite(v.algebraic_trials, v.seed)?);
    }
    if all || suite == Suite::Operators {
        results.extend(lemma_oracles::operators_suite(v.operator_trials, v.seed)?);
    }
    if all || suite == Suite::Resolvent {
        let problem = cfg.run_config().build_problem()?;
        results.extend(lemma_oracles::resolvent_suite(
            &problem,
            v.resolvent_trials,
            v.seed,
        )?);
    }
    if all || suite == Suite::Moments {
        results.extend(lemma_oracles::moments_suite(
            &cfg.run_config(),
            v.moment_steps,
            v.moment_paths,
        )?);
    }
    Ok(results)
}

pub fn summaries_to_csv(results: &[CheckSummary]) -> String {
    let mut s = String::from("check,trials,failures,worst_margin\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{:e}\n",
            r.name, r.trials, r.failures, r.worst_margin
        ));
    }
    s
}

fn cmd_verify(
    suite: Suite,
    config: Option<&Path>,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let cfg = match config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(d) = &dir {
        ensure_writable(d)?;
    }
    let results = verify_suites(suite, &cfg)?;
    let csv = summaries_to_csv(&results);
    out.write_all(csv.as_bytes()).map_err(io_fail)?;
    if let Some(d) = dir {
        write_all_or_nothing(&[(d.join("verify.csv"), csv)])?;
    }
    let failed: Vec<&CheckSummary> = results.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        eprintln!(
            "check {} failed {}/{} trials, worst margin {:e}",
            r.name, r.failures, r.trials, r.worst_margin
        );
    }
    Ok(if failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn cmd_rate(table: &Path, k_min: usize, out: &mut dyn Write) -> Result<i32, CliError> {
    let table = ErrorTable::read_csv(table)?;
    writeln!(out, "method,N,slope,intercept,points").map_err(io_fail)?;
    for c in &table.curves {
        let fit = estimate_rate(&c.points, k_min)
            .map_err(|e| CliError::Failure(format!("{} N={}: {e}", c.method, c.resolution)))?;
        writeln!(
            out,
            "{},{},{:.3},{:.4},{}",
            c.method, c.resolution, fit.slope, fit.intercept, fit.points_used
        )
        .map_err(io_fail)?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = CliConfig::parse("[dataset]\nn = 4\nresolutions = [8]\n").unwrap();
        assert_eq!(cfg.dataset.n, 4);
        assert_eq!(cfg.run, RunSection::default());
        assert_eq!(cfg.run_config().resolution, 8);
        assert_eq!(CliConfig::parse("").unwrap(), CliConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            CliConfig::parse("[dataset]\nsize = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(CliConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(CliConfig::parse("[dataset]\nn = 5\n").is_err());
        assert!(CliConfig::parse("[dataset]\nresolutions = []\n").is_err());
        assert!(CliConfig::parse("[run]\nsteps = 1000\ncheckpoint_every = 300\n").is_err());
        assert!(CliConfig::parse("[run]\nlambda = 0.0\n").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let mut sink = Vec::new();
        assert_eq!(
            run_from_args(["spi", "verify", "--suite", "bogus"], &mut sink),
            EXIT_USAGE
        );
        assert_eq!(run_from_args(["spi", "frobnicate"], &mut sink), EXIT_USAGE);
    }

    #[test]
    fn summary_csv_layout() {
        let s = summaries_to_csv(&[CheckSummary {
            name: "x".into(),
            trials: 3,
            failures: 0,
            worst_margin: 0.5,
        }]);
        assert_eq!(s, "check,trials,failures,worst_margin\nx,3,0,5e-1\n");
    }
}
