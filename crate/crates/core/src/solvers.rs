//! SPI and SGD steps for the logistic problem, step-size schedules and a
//! seeded single-chain runner.
//!
//! The implicit step `new = old - α ∇f(new, ξ)` reduces to a scalar equation.
//! With `c` the bias increment,
//!
//! ```text
//! w_new    = (w + c x) / (1 + αλ)
//! bias_new = bias + c
//! c        = α y / (1 + exp(y (<w_new, x> + bias_new)))
//! ```
//!
//! Substituting the first two lines into the third gives `φ(c) = 0` with `φ`
//! strictly increasing and its root inside `[-α, α]`.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::function_space::{seeded_rng, Sample, SAMPLING_STREAM};
use crate::model::{predict, sample_gradient, sigmoid, ParamState, Problem};

/// Absolute tolerance on `φ` used when none is given.
pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_SOLVER_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `η / k`
    Harmonic,
    /// `η / k²`
    SquareSummable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    eta: f64,
    rule: StepRule,
}

impl Schedule {
    pub fn new(eta: f64, rule: StepRule) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!(
                "initial step size must be positive, got {eta}"
            )));
        }
        Ok(Self { eta, rule })
    }

    pub fn harmonic(eta: f64) -> Result<Self> {
        Self::new(eta, StepRule::Harmonic)
    }

    pub fn square_summable(eta: f64) -> Result<Self> {
        Self::new(eta, StepRule::SquareSummable)
    }

    /// All step sizes zero. Only useful as a diagnostic baseline.
    pub fn frozen() -> Self {
        Self {
            eta: 0.0,
            rule: StepRule::Harmonic,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    pub fn step_size(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::invalid("step index starts at 1"));
        }
        Ok(self.alpha(k))
    }

    fn alpha(&self, k: usize) -> f64 {
        let k = k as f64;
        match self.rule {
            StepRule::Harmonic => self.eta / k,
            StepRule::SquareSummable => self.eta / (k * k),
        }
    }
}

/// The scalar equation of one SPI step, with the inner products already
/// evaluated.
#[derive(Debug, Clone, Copy)]
pub struct ScalarProx {
    /// `<w, x>`
    pub wx: f64,
    /// `<x, x>`
    pub xx: f64,
    pub bias: f64,
    pub y: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// `false` holds the bias fixed and solves the proximal step in `w` only.
    pub bias_moves: bool,
}

impl ScalarProx {
    pub fn new(state: &ParamState, sample: &Sample, alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "step size must be >= 0, got {alpha}"
            )));
        }
        Ok(Self {
            wx: state.w.inner(sample.x())?,
            xx: sample.norm_sq(),
            bias: state.bias,
            y: sample.y(),
            alpha,
            lambda,
            bias_moves: true,
        })
    }

    fn shrink(&self) -> f64 {
        1.0 / (1.0 + self.alpha * self.lambda)
    }

    /// Prediction of the updated state as a function of `c`.
    fn prediction(&self, c: f64) -> f64 {
        let moved = if self.bias_moves { c } else { 0.0 };
        (self.wx + c * self.xx) * self.shrink() + self.bias + moved
    }

    pub fn residual(&self, c: f64) -> f64 {
        let z = self.y * self.prediction(c);
        c - self.alpha * self.y * sigmoid(-z)
    }

    pub fn derivative(&self, c: f64) -> f64 {
        let s = sigmoid(-self.y * self.prediction(c));
        let bias_term = if self.bias_moves { 1.0 } else { 0.0 };
        1.0 + self.alpha * s * (1.0 - s) * (self.xx * self.shrink() + bias_term)
    }

    /// Safeguarded Newton iteration on `[-α - tol, α + tol]`. Newton steps that
    /// leave the current bracket or fail to halve the step before last are
    /// replaced by bisection. If float spacing near the root prevents
    /// `|φ| <= tol`, the closest representable root estimate is returned.
    pub fn solve(&self, tol: f64) -> Result<f64> {
        if self.alpha == 0.0 {
            return Ok(0.0);
        }
        let mut lo = -self.alpha - tol;
        let mut hi = self.alpha + tol;
        let f_lo = self.residual(lo);
        let f_hi = self.residual(hi);
        if !(f_lo <= 0.0 && f_hi >= 0.0) {
            return Err(Error::Bracket {
                lo,
                hi,
                lower: f_lo,
                upper: f_hi,
            });
        }

        let mut c = 0.0;
        let mut best = (f64::INFINITY, c);
        let mut step_before_last = hi - lo;
        let mut last_step = step_before_last;
        for _ in 0..MAX_SOLVER_ITERATIONS {
            let f = self.residual(c);
            if f.abs() < best.0 {
                best = (f.abs(), c);
            }
            if f.abs() <= tol {
                return Ok(c);
            }
            if f < 0.0 {
                lo = c;
            } else {
                hi = c;
            }
            let newton = c - f / self.derivative(c);
            // bisect when Newton leaves the bracket or stops halving its step,
            // which happens when it bounces across the sigmoid's knee
            let next = if newton > lo && newton < hi && (newton - c).abs() <= 0.5 * step_before_last
            {
                newton
            } else {
                0.5 * (lo + hi)
            };
            step_before_last = last_step;
            last_step = (next - c).abs();
            if next <= lo || next >= hi {
                // bracket has collapsed to neighbouring floats
                break;
            }
            c = next;
        }
        Ok(best.1)
    }
}

/// `φ(c)` for the SPI step from `state` on `sample`.
pub fn spi_residual(
    c: f64,
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(ScalarProx::new(state, sample, alpha, lambda)?.residual(c))
}

/// Root of [`spi_residual`], the bias increment of the SPI step.
pub fn solve_ck(
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
    tol: f64,
) -> Result<f64> {
    ScalarProx::new(state, sample, alpha, lambda)?.solve(tol)
}

pub fn spi_step(
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
) -> Result<ParamState> {
    spi_step_tol(state, sample, alpha, lambda, DEFAULT_TOL)
}

pub fn spi_step_tol(
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
    tol: f64,
) -> Result<ParamState> {
    let mut next = state.clone();
    spi_update(&mut next, sample, alpha, lambda, tol)?;
    Ok(next)
}

fn spi_update(
    state: &mut ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
    tol: f64,
) -> Result<()> {
    let prox = ScalarProx::new(state, sample, alpha, lambda)?;
    let c = prox.solve(tol)?;
    let shrink = prox.shrink();
    for (w, x) in state.w.values_mut().iter_mut().zip(sample.x().values()) {
        *w = (*w + c * x) * shrink;
    }
    state.bias += c;
    Ok(())
}

/// Proximal step in `w` with the bias held fixed. The map is a
/// `1/(1 + αλ)` contraction in `w`.
pub fn spi_step_frozen_bias(
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
) -> Result<ParamState> {
    let mut prox = ScalarProx::new(state, sample, alpha, lambda)?;
    prox.bias_moves = false;
    let c = prox.solve(DEFAULT_TOL)?;
    let shrink = prox.shrink();
    let w = state.w.add_scaled(c, sample.x())?.scaled(shrink);
    Ok(ParamState {
        w,
        bias: state.bias,
    })
}

pub fn sgd_step(
    state: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
) -> Result<ParamState> {
    let mut next = state.clone();
    sgd_update(&mut next, sample, alpha, lambda)?;
    Ok(next)
}

fn sgd_update(state: &mut ParamState, sample: &Sample, alpha: f64, lambda: f64) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "step size must be >= 0, got {alpha}"
        )));
    }
    let y = sample.y();
    let coef = -y * sigmoid(-y * predict(state, sample.x())?);
    for (w, x) in state.w.values_mut().iter_mut().zip(sample.x().values()) {
        *w -= alpha * (coef * x + lambda * *w);
    }
    state.bias -= alpha * coef;
    Ok(())
}

/// Residual `new - old + α ∇f(new, ξ)` of the implicit equation.
pub fn implicit_residual(
    old: &ParamState,
    new: &ParamState,
    sample: &Sample,
    alpha: f64,
    lambda: f64,
) -> Result<ParamState> {
    let g = sample_gradient(new, sample, lambda)?;
    new.sub(old)?.add_scaled(alpha, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Spi,
    Sgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spi => "spi",
            Method::Sgd => "sgd",
        }
    }

    pub fn step(
        self,
        state: &ParamState,
        sample: &Sample,
        alpha: f64,
        lambda: f64,
    ) -> Result<ParamState> {
        match self {
            Method::Spi => spi_step(state, sample, alpha, lambda),
            Method::Sgd => sgd_step(state, sample, alpha, lambda),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spi" => Ok(Method::Spi),
            "sgd" => Ok(Method::Sgd),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub checkpoints: Vec<(usize, ParamState)>,
    pub final_state: ParamState,
    pub seed: u64,
}

impl ChainResult {
    /// One row per checkpoint: `k,bias,w1,...,wN`.
    pub fn to_csv_string(&self) -> String {
        let n = self.final_state.resolution();
        let mut out = String::from("k,bias");
        for i in 1..=n {
            write!(out, ",w{i}").unwrap();
        }
        out.push('\n');
        for (k, s) in &self.checkpoints {
            write!(out, "{k},{}", s.bias).unwrap();
            for v in s.w.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `steps` iterations from the zero state, drawing `ξ^k` uniformly with
/// replacement. `observer(k, state)` sees the state after step `k` for every
/// `k` that is a multiple of `checkpoint_every`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_observed(
    problem: &Problem,
    method: Method,
    schedule: &Schedule,
    steps: usize,
    seed: u64,
    checkpoint_every: usize,
    tol: f64,
    mut observer: impl FnMut(usize, &ParamState),
) -> Result<ParamState> {
    if steps == 0 || checkpoint_every == 0 {
        return Err(Error::invalid(
            "steps and checkpoint interval must be at least 1",
        ));
    }
    let n = problem.len();
    let lambda = problem.lambda();
    let mut rng = seeded_rng(seed, SAMPLING_STREAM);
    let mut state = ParamState::zeros(problem.resolution());
    for k in 1..=steps {
        let j = rng.random_range(0..n);
        let sample = problem.sample(j)?;
        let alpha = schedule.alpha(k);
        match method {
            Method::Spi => spi_update(&mut state, sample, alpha, lambda, tol)?,
            Method::Sgd => sgd_update(&mut state, sample, alpha, lambda)?,
        }
        if k % checkpoint_every == 0 {
            observer(k, &state);
        }
    }
    Ok(state)
}

pub fn run_chain(
    problem: &Problem,
    method: Method,
    schedule: &Schedule,
    steps: usize,
    seed: u64,
    checkpoint_every: usize,
) -> Result<ChainResult> {
    let mut checkpoints = Vec::new();
    let final_state = run_chain_observed(
        problem,
        method,
        schedule,
        steps,
        seed,
        checkpoint_every,
        DEFAULT_TOL,
        |k, s| checkpoints.push((k, s.clone())),
    )?;
    Ok(ChainResult {
        checkpoints,
        final_state,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{generate_dataset, GridFunction, Label};

    fn zero_sample(n: usize, label: Label) -> Sample {
        Sample::new(GridFunction::zeros(n), label)
    }

    /// Plain bisection, independent of the Newton path.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn step_sizes() {
        let s = Schedule::harmonic(2000.0).unwrap();
        assert_eq!(s.step_size(1).unwrap(), 2000.0);
        assert_eq!(s.step_size(1000).unwrap(), 2.0);
        for k in [1, 7, 99, 12345] {
            assert!((s.step_size(k).unwrap() * k as f64 - 2000.0).abs() < 1e-9);
        }
        assert!(s.step_size(0).is_err());
        let q = Schedule::square_summable(3.0).unwrap();
        assert_eq!(q.step_size(2).unwrap(), 0.75);
        assert!(Schedule::harmonic(0.0).is_err());
        assert!(Schedule::harmonic(-1.0).is_err());
    }

    #[test]
    fn step_sizes_positive_and_nonincreasing() {
        for s in [
            Schedule::harmonic(5.0).unwrap(),
            Schedule::square_summable(5.0).unwrap(),
        ] {
            let a: Vec<f64> = (1..500).map(|k| s.step_size(k).unwrap()).collect();
            assert!(a.iter().all(|&x| x > 0.0));
            assert!(a.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn residual_examples() {
        let zero = ParamState::zeros(4);
        let s = zero_sample(4, Label::Positive);
        assert!((spi_residual(0.0, &zero, &s, 3.0, 0.1).unwrap() + 1.5).abs() < 1e-15);
        for c in [-2.0, 0.0, 0.7] {
            assert_eq!(spi_residual(c, &zero, &s, 0.0, 0.1).unwrap(), c);
        }
    }

    #[test]
    fn solve_matches_bisection_oracle() {
        let zero = ParamState::zeros(4);
        let s = zero_sample(4, Label::Positive);
        let c = solve_ck(&zero, &s, 1.0, 0.0, DEFAULT_TOL).unwrap();
        let oracle = bisect(|c| c - 1.0 / (1.0 + c.exp()), 0.0, 1.0);
        assert!((c - oracle).abs() < 1e-11);
        assert!((c - 0.4010).abs() < 1e-4);
        assert_eq!(solve_ck(&zero, &s, 0.0, 0.0, DEFAULT_TOL).unwrap(), 0.0);
    }

    #[test]
    fn newton_bouncing_across_the_knee_still_converges() {
        let prox = ScalarProx {
            wx: 0.049099750961663614,
            xx: 0.7499362637934011,
            bias: -2.6946800762686243,
            y: 1.0,
            alpha: 65.41752571878061,
            lambda: 1e-3,
            bias_moves: true,
        };
        let c = prox.solve(DEFAULT_TOL).unwrap();
        let oracle = bisect(|c| prox.residual(c), 0.0, prox.alpha);
        assert!(prox.residual(c).abs() <= DEFAULT_TOL);
        assert!((c - oracle).abs() < 1e-10);
    }

    #[test]
    fn root_sign_follows_label() {
        let d = generate_dataset(6, 10, 3).unwrap();
        let zero = ParamState::zeros(10);
        for s in d.samples() {
            let c = solve_ck(&zero, s, 5.0, 0.1, DEFAULT_TOL).unwrap();
            assert_eq!(c.signum(), s.y());
        }
    }

    #[test]
    fn alpha_zero_leaves_state_unchanged() {
        let d = generate_dataset(2, 6, 3).unwrap();
        let st = ParamState::new(GridFunction::new(vec![0.5; 6]).unwrap(), -0.3).unwrap();
        for s in d.samples() {
            assert_eq!(spi_step(&st, s, 0.0, 1.0).unwrap(), st);
            assert_eq!(sgd_step(&st, s, 0.0, 1.0).unwrap(), st);
        }
    }

    #[test]
    fn pure_ridge_scaling() {
        let st = ParamState::new(GridFunction::new(vec![1.0, -2.0, 3.0]).unwrap(), 0.0).unwrap();
        let s = zero_sample(3, Label::Positive);
        let (alpha, lambda) = (2.0, 0.5);
        let spi = spi_step(&st, &s, alpha, lambda).unwrap();
        let expect = st.w.scaled(1.0 / (1.0 + alpha * lambda));
        assert!(spi.w.sub(&expect).unwrap().rms_norm() < 1e-15);
        let sgd = sgd_step(&st, &s, alpha, lambda).unwrap();
        let expect = st.w.scaled(1.0 - alpha * lambda);
        assert!(sgd.w.sub(&expect).unwrap().rms_norm() < 1e-15);
    }

    #[test]
    fn sgd_from_zero_moves_bias_by_half_alpha() {
        let d = generate_dataset(2, 6, 3).unwrap();
        let s = &d.samples()[1];
        let next = sgd_step(&ParamState::zeros(6), s, 0.8, 1e-3).unwrap();
        assert!((next.bias - 0.4).abs() < 1e-15);
    }

    #[test]
    fn residual_is_increasing() {
        let d = generate_dataset(10, 12, 8).unwrap();
        let st = ParamState::new(GridFunction::new(vec![0.4; 12]).unwrap(), 0.2).unwrap();
        for s in d.samples() {
            let p = ScalarProx::new(&st, s, 50.0, 1e-3).unwrap();
            let vals: Vec<f64> = (-100..=100).map(|i| p.residual(i as f64 * 0.5)).collect();
            assert!(vals.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn chain_determinism_and_checkpoints() {
        let p = Problem::new(generate_dataset(20, 16, 1).unwrap(), 1e-2).unwrap();
        let sched = Schedule::harmonic(100.0).unwrap();
        for m in [Method::Spi, Method::Sgd] {
            let a = run_chain(&p, m, &sched, 250, 9, 50).unwrap();
            let b = run_chain(&p, m, &sched, 250, 9, 50).unwrap();
            assert_eq!(a, b);
            let ks: Vec<usize> = a.checkpoints.iter().map(|c| c.0).collect();
            assert_eq!(ks, vec![50, 100, 150, 200, 250]);
            assert_eq!(a.checkpoints.last().unwrap().1, a.final_state);
            let c = run_chain(&p, m, &sched, 250, 10, 50).unwrap();
            assert_ne!(a.final_state, c.final_state);
        }
        let frozen = run_chain(&p, Method::Spi, &Schedule::frozen(), 1, 3, 1).unwrap();
        assert_eq!(frozen.final_state, ParamState::zeros(16));
        assert!(run_chain(&p, Method::Spi, &sched, 0, 3, 1).is_err());
    }

    #[test]
    fn chain_csv_layout() {
        let p = Problem::new(generate_dataset(4, 3, 1).unwrap(), 1e-2).unwrap();
        let r = run_chain(&p, Method::Spi, &Schedule::harmonic(1.0).unwrap(), 4, 2, 2).unwrap();
        let text = r.to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,bias,w1,w2,w3");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2,"));
        assert_eq!(lines[2].split(',').count(), 5);
    }
}
