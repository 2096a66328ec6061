//! Executable checks of the inequalities behind the convergence analysis:
//! generalized harmonic product/sum bounds, the quadratic bound on the
//! resolvent contraction factor, basic resolvent inequalities, order relations
//! for symmetric operators, and uniform boundedness of iterate moments.
//!
//! Every check returns a [`Bound`] (or a margin) rather than a bool so that
//! sweeps can report how close the worst case came.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{compute_reference, RunConfig};
use crate::function_space::{seeded_rng, GridFunction};
use crate::model::{ParamState, Problem};
use crate::solvers::{
    implicit_residual, run_chain_observed, spi_step, spi_step_frozen_bias, Method, ScalarProx,
    Schedule, DEFAULT_TOL,
};

/// Absolute eigenvalue tolerance for semidefiniteness.
pub const EIG_TOL: f64 = 1e-10;
/// Relative tolerance for the closed-form scalar bounds.
pub const REL_TOL: f64 = 1e-12;
pub const MAX_MATRIX_DIM: usize = 16;

/// A claimed inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lhs: f64,
    pub rhs: f64,
}

impl Bound {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Margin relative to `max(|rhs|, f64::MIN_POSITIVE)`.
    pub fn relative_margin(&self) -> f64 {
        self.margin() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }

    pub fn holds_abs(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }

    pub fn holds_rel(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol * self.rhs.abs()
    }
}

/// Symbols of the regularity assumption and the constants of the algebraic
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityParams {
    pub mu: f64,
    pub nu: f64,
    pub sigma: f64,
    pub m: u32,
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub r: f64,
}

impl RegularityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.nu >= self.mu) {
            return Err(Error::invalid("need nu >= mu > 0"));
        }
        if !(self.sigma >= 0.0) || self.m == 0 {
            return Err(Error::invalid("need sigma >= 0 and m >= 1"));
        }
        check_harmonic_params(self.c1, self.c2, self.p)?;
        check_sum_params(self.c1, self.p, self.r)
    }
}

fn check_harmonic_params(c1: f64, c2: f64, p: f64) -> Result<()> {
    if !(c1 > 0.0 && c2 > 0.0 && p > 0.0) {
        return Err(Error::invalid("need C1, C2, p > 0"));
    }
    if !(4.0 * c2 >= c1 * c1) {
        return Err(Error::invalid("need 4 C2 >= C1^2"));
    }
    Ok(())
}

fn check_sum_params(c1: f64, p: f64, r: f64) -> Result<()> {
    if !(r >= 0.0 && c1 * p > r) {
        return Err(Error::invalid("need C1 p > r >= 0"));
    }
    Ok(())
}

/// `1 - C1/j + C2/j²`, written as a completed square plus a nonnegative
/// remainder so rounding cannot push it below zero.
pub fn harmonic_factor(c1: f64, c2: f64, j: usize) -> f64 {
    let j = j as f64;
    let s = 1.0 - c1 / (2.0 * j);
    s * s + (c2 - 0.25 * c1 * c1) / (j * j)
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `Π_{j=1..k} (1 - C1/j + C2/j²)^p <= exp(C2 p π²/6) (k+1)^{-C1 p}`.
pub fn harmonic_product_bound(c1: f64, c2: f64, p: f64, k: usize) -> Result<Bound> {
    check_harmonic_params(c1, c2, p)?;
    let mut log_prod = CompensatedSum::default();
    let mut zero = false;
    for j in (1..=k).rev() {
        let f = harmonic_factor(c1, c2, j);
        if f == 0.0 {
            zero = true;
            break;
        }
        log_prod.add(p * f.ln());
    }
    let lhs = if zero { 0.0 } else { log_prod.value().exp() };
    let rhs = (c2 * p * PI * PI / 6.0 - c1 * p * (k as f64 + 1.0).ln()).exp();
    Ok(Bound { lhs, rhs })
}

/// `Σ_{j=1..k} j^{-(1+r)} Π_{i=j..k} (1 - C1/i + C2/i²)^p
///   <= exp(C2 p π²/6 + C1 p) (k+1)^{-r} / (C1 p - r)`.
pub fn harmonic_sum_bound(c1: f64, c2: f64, p: f64, r: f64, k: usize) -> Result<Bound> {
    check_harmonic_params(c1, c2, p)?;
    check_sum_params(c1, p, r)?;
    let mut log_prod = CompensatedSum::default();
    let mut total = CompensatedSum::default();
    for j in (1..=k).rev() {
        let f = harmonic_factor(c1, c2, j);
        if f == 0.0 {
            // every remaining product contains this factor
            break;
        }
        log_prod.add(p * f.ln());
        total.add((log_prod.value() - (1.0 + r) * (j as f64).ln()).exp());
    }
    let rhs = (c2 * p * PI * PI / 6.0 + c1 * p - r * (k as f64 + 1.0).ln()).exp() / (c1 * p - r);
    Ok(Bound {
        lhs: total.value(),
        rhs,
    })
}

/// `(1 + μ̄α)^{-2} <= 1 - 2μ̄α + 3μ̄²α²`.
pub fn contraction_quadratic_bound(mu_bar: f64, alpha: f64) -> Bound {
    let x = mu_bar * alpha;
    Bound {
        lhs: (1.0 + x).powi(-2),
        rhs: 1.0 - 2.0 * x + 3.0 * x * x,
    }
}

/// `‖T u - u‖ <= α ‖∇f(u, ξ)‖` for the SPI resolvent on sample `index`.
pub fn resolvent_basic_check(
    problem: &Problem,
    state: &ParamState,
    alpha: f64,
    index: usize,
) -> Result<Bound> {
    let sample = problem.sample(index)?;
    let next = spi_step(state, sample, alpha, problem.lambda())?;
    let grad = problem.sample_gradient(state, index)?;
    Ok(Bound {
        lhs: next.sub(state)?.norm(),
        rhs: alpha * grad.norm(),
    })
}

/// Symmetric matrix of dimension at most [`MAX_MATRIX_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmallSymMatrix(DMatrix<f64>);

impl SmallSymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 || m.nrows() > MAX_MATRIX_DIM {
            return Err(Error::Matrix(format!(
                "need a square matrix of dimension 1..={MAX_MATRIX_DIM}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-14 * m.amax().max(1.0) {
            return Err(Error::Matrix(format!(
                "matrix is not symmetric (defect {asym:e})"
            )));
        }
        Ok(Self(m))
    }

    /// Symmetrizes `(m + mᵀ)/2` before validating.
    pub fn symmetrized(m: DMatrix<f64>) -> Result<Self> {
        let s = (&m + m.transpose()) * 0.5;
        Self::new(s)
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .fold(0.0, |acc, e| acc.max(e.abs()))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Matrix("matrix is singular".into()))?;
        Self::symmetrized(inv)
    }

    fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Self::symmetrized(&self.0 + &other.0)
    }
}

/// Minimum eigenvalue of `Q⁻¹ - (Q+S)⁻¹`; nonnegative when the order relation
/// `(Q+S)⁻¹ <= Q⁻¹` holds.
pub fn operator_order_margin(q: &SmallSymMatrix, s: &SmallSymMatrix) -> Result<f64> {
    if q.min_eigenvalue() <= 0.0 {
        return Err(Error::Matrix("Q must be invertible with Q^-1 > 0".into()));
    }
    if s.min_eigenvalue() < -EIG_TOL {
        return Err(Error::Matrix("S must be positive semidefinite".into()));
    }
    let q_inv = q.inverse()?;
    let qs_inv = q.add(s)?.inverse()?;
    let diff = SmallSymMatrix::symmetrized(q_inv.matrix() - qs_inv.matrix())?;
    Ok(diff.min_eigenvalue())
}

pub fn operator_order_check(q: &SmallSymMatrix, s: &SmallSymMatrix) -> Result<bool> {
    Ok(operator_order_margin(q, s)? >= -EIG_TOL)
}

/// `‖Qu‖² <= <Qu, u>` for positive, contractive `Q`.
pub fn contractive_positive_check(q: &SmallSymMatrix, u: &[f64]) -> Result<Bound> {
    if u.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            left: q.dim(),
            right: u.len(),
        });
    }
    let eig = q.eigenvalues();
    if eig[0] < -EIG_TOL {
        return Err(Error::Matrix("Q must be positive semidefinite".into()));
    }
    if eig[eig.len() - 1] > 1.0 + EIG_TOL {
        return Err(Error::Matrix(format!(
            "Q must be contractive, has norm {}",
            eig[eig.len() - 1]
        )));
    }
    let u = DVector::from_column_slice(u);
    let qu = q.matrix() * &u;
    Ok(Bound {
        lhs: qu.norm_squared(),
        rhs: qu.dot(&u),
    })
}

/// `‖Q⁻¹‖ <= 1/β` when `<Qu, u> >= β ‖u‖²`.
pub fn strong_positivity_check(q: &SmallSymMatrix, beta: f64) -> Result<Bound> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    if q.min_eigenvalue() < beta - EIG_TOL {
        return Err(Error::Matrix(format!("Q is not {beta}-strongly positive")));
    }
    Ok(Bound {
        lhs: q.inverse()?.norm(),
        rhs: 1.0 / beta,
    })
}

/// Random symmetric positive definite matrix with eigenvalues in
/// `[floor, floor + spread]`.
pub fn random_spd<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    floor: f64,
    spread: f64,
) -> SmallSymMatrix {
    let eig: Vec<f64> = (0..dim)
        .map(|_| floor + spread * rng.random::<f64>())
        .collect();
    with_spectrum(rng, &eig)
}

/// Random symmetric matrix with the given eigenvalues and a random orthogonal
/// eigenbasis.
pub fn with_spectrum<R: Rng + ?Sized>(rng: &mut R, eigenvalues: &[f64]) -> SmallSymMatrix {
    let dim = eigenvalues.len();
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
    SmallSymMatrix::symmetrized(&q * d * q.transpose()).expect("dimension is within range")
}

/// Monte Carlo estimate of `E‖w^k − w*‖^moment` along SPI paths.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProbe {
    pub moment: u32,
    /// `(k, mean)`, starting with the initial state at `k = 0`.
    pub series: Vec<(usize, f64)>,
}

impl MomentProbe {
    pub fn global_max(&self) -> f64 {
        self.series
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn split(&self) -> usize {
        let last_k = self.series.last().map_or(0, |p| p.0);
        let cut = last_k * 3 / 4;
        self.series
            .iter()
            .position(|p| p.0 > cut)
            .unwrap_or(self.series.len())
    }

    /// Maximum over the first three quarters of the run.
    pub fn early_max(&self) -> f64 {
        self.series[..self.split()]
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last_quarter_max(&self) -> f64 {
        self.series[self.split()..]
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The running maximum stops growing: the last quarter stays within 5% of
    /// the maximum seen before it.
    pub fn stabilized(&self) -> bool {
        self.global_max().is_finite() && self.last_quarter_max() <= 1.05 * self.early_max()
    }
}

/// Averages `‖w^k − w*‖^moment` over `paths` SPI chains, sampled every
/// `max(1, steps/500)` steps.
pub fn moment_bound_probe(
    problem: &Problem,
    schedule: &Schedule,
    steps: usize,
    paths: usize,
    moment: u32,
    reference: &ParamState,
    seed_base: u64,
) -> Result<MomentProbe> {
    if moment == 0 || !moment.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "moment must be a positive even integer, got {moment}"
        )));
    }
    if paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let every = (steps / 500).max(1);
    let dist = |s: &ParamState| -> f64 {
        let d = s.sub(reference).map(|d| d.norm()).unwrap_or(f64::INFINITY);
        d.powi(moment as i32)
    };
    let per_path: Vec<Vec<(usize, f64)>> = (1..=paths)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![(0, dist(&ParamState::zeros(problem.resolution())))];
            run_chain_observed(
                problem,
                Method::Spi,
                schedule,
                steps,
                seed_base + p as u64,
                every,
                DEFAULT_TOL,
                |k, s| out.push((k, dist(s))),
            )?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut series: Vec<(usize, f64)> = per_path[0].iter().map(|&(k, _)| (k, 0.0)).collect();
    for path in &per_path {
        for (acc, &(_, v)) in series.iter_mut().zip(path) {
            acc.1 += v;
        }
    }
    for s in &mut series {
        s.1 /= paths as f64;
    }
    Ok(MomentProbe { moment, series })
}

/// Outcome of one randomized sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Smallest margin seen (negative means violated).
    pub worst_margin: f64,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn from_margins(name: &str, results: &[(bool, f64)]) -> Self {
        CheckSummary {
            name: name.to_string(),
            trials: results.len(),
            failures: results.iter().filter(|r| !r.0).count(),
            worst_margin: results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Runs `trials` independent draws in parallel; trial `i` uses ChaCha stream
/// `i` of `seed`.
fn sweep<F>(name: &str, trials: usize, seed: u64, f: F) -> Result<CheckSummary>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<(bool, f64)> + Sync,
{
    let results: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| f(&mut seeded_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(CheckSummary::from_margins(name, &results))
}

/// Admissible `(C1, C2, p, r, k)` with `k <= k_max`.
pub fn random_algebraic_params<R: Rng + ?Sized>(
    rng: &mut R,
    k_max: usize,
) -> (f64, f64, f64, f64, usize) {
    let c1 = rng.random_range(0.01..=4.0);
    let c2 = 0.25 * c1 * c1 + rng.random_range(0.0..=4.0);
    let p = rng.random_range(0.05..=2.0);
    let r = rng.random_range(0.0..1.0) * c1 * p;
    let k = rng.random_range(1..=k_max);
    (c1, c2, p, r, k)
}

pub fn algebraic_suite(trials: usize, seed: u64) -> Result<Vec<CheckSummary>> {
    let product = sweep("harmonic_product_bound", trials, seed, |rng| {
        let (c1, c2, p, _, k) = random_algebraic_params(rng, 2000);
        let b = harmonic_product_bound(c1, c2, p, k)?;
        Ok((b.holds_rel(REL_TOL), b.relative_margin()))
    })?;
    let sum = sweep("harmonic_sum_bound", trials, seed ^ 0x5u64, |rng| {
        let (c1, c2, p, r, k) = random_algebraic_params(rng, 2000);
        let b = harmonic_sum_bound(c1, c2, p, r, k)?;
        Ok((b.holds_rel(REL_TOL), b.relative_margin()))
    })?;
    let positivity = sweep(
        "harmonic_factor_nonnegative",
        trials,
        seed ^ 0x9u64,
        |rng| {
            let (c1, c2, _, _, k) = random_algebraic_params(rng, 2000);
            // direct form, not the completed square used for evaluation
            let worst = (1..=k)
                .map(|j| {
                    let j = j as f64;
                    1.0 - c1 / j + c2 / (j * j)
                })
                .fold(f64::INFINITY, f64::min);
            Ok((worst >= -4.0 * f64::EPSILON, worst))
        },
    )?;
    let quadratic = sweep(
        "contraction_quadratic_bound",
        trials,
        seed ^ 0xdu64,
        |rng| {
            let mu = rng.random_range(f64::MIN_POSITIVE..=10.0);
            let alpha = rng.random_range(0.0..=10.0);
            let b = contraction_quadratic_bound(mu, alpha);
            Ok((b.holds_rel(REL_TOL), b.relative_margin()))
        },
    )?;
    Ok(vec![product, sum, positivity, quadratic])
}

pub fn operators_suite(trials: usize, seed: u64) -> Result<Vec<CheckSummary>> {
    let order = sweep("operator_order", trials, seed, |rng| {
        let d = rng.random_range(2..=8);
        let q = random_spd(rng, d, 0.1, 5.0);
        let rank = rng.random_range(0..=d);
        let mut spectrum: Vec<f64> = (0..d)
            .map(|i| {
                if i < rank {
                    3.0 * rng.random::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        spectrum.rotate_left(rng.random_range(0..d));
        let s = with_spectrum(rng, &spectrum);
        let margin = operator_order_margin(&q, &s)?;
        Ok((margin >= -EIG_TOL, margin))
    })?;
    let contractive = sweep("contractive_positive", trials, seed ^ 0x3u64, |rng| {
        let d = rng.random_range(2..=8);
        let spectrum: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let q = with_spectrum(rng, &spectrum);
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = contractive_positive_check(&q, &u)?;
        Ok((b.holds_abs(EIG_TOL), b.margin()))
    })?;
    let strong = sweep(
        "strong_positivity_inverse_norm",
        trials,
        seed ^ 0x7u64,
        |rng| {
            let d = rng.random_range(2..=8);
            let q = random_spd(rng, d, 0.05, 5.0);
            let beta = q.min_eigenvalue() * rng.random_range(0.01..=1.0);
            let b = strong_positivity_check(&q, beta)?;
            Ok((b.lhs <= b.rhs * (1.0 + EIG_TOL), b.relative_margin()))
        },
    )?;
    Ok(vec![order, contractive, strong])
}

/// Random iterate-like state: `w` a smooth random function plus noise, bias in
/// `[-3, 3]`.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, resolution: usize) -> ParamState {
    let scale = rng.random_range(0.0..=5.0);
    let w: Vec<f64> = (0..resolution)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    ParamState {
        w: GridFunction::new(w).expect("finite draws"),
        bias: rng.random_range(-3.0..=3.0),
    }
}

/// Step size log-uniform on `[1e-3, 2e3]`.
pub fn random_alpha<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let lo = 1e-3f64.ln();
    let hi = 2e3f64.ln();
    rng.random_range(lo..=hi).exp().clamp(1e-3, 2e3)
}

/// Resolvent checks on a concrete problem: scalar solver accuracy, the
/// implicit equation, `‖Tu − u‖ <= α‖∇f(u)‖`, non-expansiveness, frozen-bias
/// contraction and mean-square contraction.
pub fn resolvent_suite(problem: &Problem, trials: usize, seed: u64) -> Result<Vec<CheckSummary>> {
    let n = problem.len();
    let dim = problem.resolution();
    let lambda = problem.lambda();

    let scalar = sweep("scalar_solver_residual", trials, seed, |rng| {
        let state = random_state(rng, dim);
        let sample = problem.sample(rng.random_range(0..n))?;
        let alpha = random_alpha(rng);
        let prox = ScalarProx::new(&state, sample, alpha, lambda)?;
        let c = prox.solve(DEFAULT_TOL)?;
        let res = prox.residual(c).abs();
        let ok = res <= DEFAULT_TOL && c.abs() <= alpha;
        Ok((ok, DEFAULT_TOL - res))
    })?;
    let implicit = sweep("implicit_equation_residual", trials, seed ^ 0x11, |rng| {
        let state = random_state(rng, dim);
        let sample = problem.sample(rng.random_range(0..n))?;
        let alpha = random_alpha(rng);
        let next = spi_step(&state, sample, alpha, lambda)?;
        let res = implicit_residual(&state, &next, sample, alpha, lambda)?.norm();
        Ok((res <= 1e-10, 1e-10 - res))
    })?;
    let basic = sweep("resolvent_step_bound", trials, seed ^ 0x13, |rng| {
        let state = random_state(rng, dim);
        let j = rng.random_range(0..n);
        let b = resolvent_basic_check(problem, &state, random_alpha(rng), j)?;
        Ok((b.holds_abs(1e-10), b.margin()))
    })?;
    let nonexp = sweep("resolvent_nonexpansive", trials, seed ^ 0x17, |rng| {
        let u = random_state(rng, dim);
        let v = random_state(rng, dim);
        let sample = problem.sample(rng.random_range(0..n))?;
        let alpha = random_alpha(rng);
        let tu = spi_step(&u, sample, alpha, lambda)?;
        let tv = spi_step(&v, sample, alpha, lambda)?;
        let b = Bound {
            lhs: tu.sub(&tv)?.norm(),
            rhs: u.sub(&v)?.norm(),
        };
        Ok((b.holds_abs(1e-10), b.margin()))
    })?;
    let frozen = sweep("frozen_bias_contraction", trials, seed ^ 0x1d, |rng| {
        let u = random_state(rng, dim);
        let mut v = random_state(rng, dim);
        v.bias = u.bias;
        let sample = problem.sample(rng.random_range(0..n))?;
        let alpha = random_alpha(rng);
        let tu = spi_step_frozen_bias(&u, sample, alpha, lambda)?;
        let tv = spi_step_frozen_bias(&v, sample, alpha, lambda)?;
        let b = Bound {
            lhs: tu.w.sub(&tv.w)?.rms_norm(),
            rhs: u.w.sub(&v.w)?.rms_norm() / (1.0 + alpha * lambda),
        };
        Ok((b.holds_abs(1e-10), b.margin()))
    })?;

    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(seed ^ 0x1f, i as u64);
            let u = random_state(&mut rng, dim);
            let v = random_state(&mut rng, dim);
            let sample = problem.sample(rng.random_range(0..n))?;
            let alpha = random_alpha(&mut rng);
            let tu = spi_step(&u, sample, alpha, lambda)?;
            let tv = spi_step(&v, sample, alpha, lambda)?;
            Ok((tu.sub(&tv)?.norm() / u.sub(&v)?.norm()).powi(2))
        })
        .collect::<Result<_>>()?;
    let mean = ratios.iter().sum::<f64>() / trials.max(1) as f64;
    let mean_contraction = CheckSummary {
        name: "mean_square_contraction".into(),
        trials,
        failures: usize::from(mean > 1.0),
        worst_margin: 1.0 - mean,
    };
    Ok(vec![
        scalar,
        implicit,
        basic,
        nonexp,
        frozen,
        mean_contraction,
    ])
}

/// Second and fourth moments along `η/k` SPI paths must stabilize.
pub fn moments_suite(config: &RunConfig, steps: usize, paths: usize) -> Result<Vec<CheckSummary>> {
    let problem = config.build_problem()?;
    let reference = compute_reference(&problem, config)?;
    let schedule = config.schedule()?;
    [2u32, 4]
        .iter()
        .map(|&moment| {
            let probe = moment_bound_probe(
                &problem,
                &schedule,
                steps,
                paths,
                moment,
                &reference,
                config.seed_base,
            )?;
            Ok(CheckSummary {
                name: format!("moment_{moment}_stabilizes"),
                trials: paths,
                failures: usize::from(!probe.stabilized()),
                worst_margin: 1.05 * probe.early_max() - probe.last_quarter_max(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::generate_dataset;

    #[test]
    fn product_examples() {
        let b = harmonic_product_bound(2.0, 1.0, 0.5, 1).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!(b.holds_rel(REL_TOL));

        let b = harmonic_product_bound(1.0, 1.0, 1.0, 1).unwrap();
        assert!((b.lhs - 1.0).abs() < 1e-15);
        let rhs = (PI * PI / 6.0).exp() / 2.0;
        assert!((b.rhs - rhs).abs() < 1e-12);
        assert!((b.rhs - 2.5903).abs() < 1e-4);

        let b = harmonic_product_bound(1.0, 1.0, 1.0, 3).unwrap();
        // factors 1, 3/4, 7/9
        assert!((b.lhs - 0.75 * 7.0 / 9.0).abs() < 1e-14);
        assert!((b.rhs - (PI * PI / 6.0).exp() / 4.0).abs() < 1e-12);
        assert!((b.rhs - 1.2952).abs() < 1e-4);
        assert!(b.lhs <= b.rhs);
    }

    #[test]
    fn product_matches_direct_multiplication() {
        for &(c1, c2, p, k) in &[
            (1.5, 0.7, 1.3, 50),
            (0.2, 0.5, 0.4, 1000),
            (3.0, 2.5, 2.0, 17),
        ] {
            let direct: f64 = (1..=k)
                .map(|j| {
                    let j = j as f64;
                    (1.0 - c1 / j + c2 / (j * j)).powf(p)
                })
                .product();
            let b = harmonic_product_bound(c1, c2, p, k).unwrap();
            assert!((b.lhs - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
        }
    }

    #[test]
    fn sum_examples() {
        let b = harmonic_sum_bound(2.0, 1.0, 1.0, 1.0, 1).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!(b.holds_rel(REL_TOL));

        // direct double loop as an oracle
        let direct = |c1: f64, c2: f64, p: f64, r: f64, k: usize| -> f64 {
            (1..=k)
                .map(|j| {
                    let prod: f64 = (j..=k)
                        .map(|i| {
                            let i = i as f64;
                            (1.0 - c1 / i + c2 / (i * i)).powf(p)
                        })
                        .product();
                    prod / (j as f64).powf(1.0 + r)
                })
                .sum()
        };
        let b = harmonic_sum_bound(4.0, 4.0, 1.0, 1.0, 10).unwrap();
        assert!((b.lhs - direct(4.0, 4.0, 1.0, 1.0, 10)).abs() < 1e-13);
        assert!(b.lhs <= b.rhs);

        let b = harmonic_sum_bound(1.0, 1.0, 2.0, 0.0, 100).unwrap();
        assert!((b.lhs - direct(1.0, 1.0, 2.0, 0.0, 100)).abs() < 1e-12 * b.lhs);
        let expected_rhs = ((PI * PI / 6.0) * 2.0 + 2.0).exp() / 2.0;
        assert!((b.rhs - expected_rhs).abs() < 1e-9 * expected_rhs);
        assert!(b.lhs <= b.rhs);
    }

    #[test]
    fn rejects_inadmissible_constants() {
        assert!(harmonic_product_bound(3.0, 1.0, 1.0, 5).is_err());
        assert!(harmonic_product_bound(-1.0, 1.0, 1.0, 5).is_err());
        assert!(harmonic_product_bound(1.0, 1.0, 0.0, 5).is_err());
        assert!(harmonic_sum_bound(1.0, 1.0, 1.0, 1.0, 5).is_err());
        assert!(harmonic_sum_bound(1.0, 1.0, 1.0, -0.1, 5).is_err());
    }

    #[test]
    fn regularity_params_validation() {
        let ok = RegularityParams {
            mu: 0.5,
            nu: 1.0,
            sigma: 0.2,
            m: 1,
            c1: 2.0,
            c2: 1.0,
            p: 1.0,
            r: 1.0,
        };
        assert!(ok.validate().is_ok());
        assert!(RegularityParams { nu: 0.1, ..ok }.validate().is_err());
        assert!(RegularityParams { r: 2.0, ..ok }.validate().is_err());
        assert!(RegularityParams { c2: 0.5, ..ok }.validate().is_err());
    }

    #[test]
    fn quadratic_examples() {
        let b = contraction_quadratic_bound(3.0, 0.0);
        assert_eq!((b.lhs, b.rhs), (1.0, 1.0));
        let b = contraction_quadratic_bound(1.0, 0.1);
        assert!((b.lhs - 1.0 / 1.21).abs() < 1e-15);
        assert!((b.lhs - 0.82645).abs() < 1e-5);
        assert!((b.rhs - 0.83).abs() < 1e-15);
        let b = contraction_quadratic_bound(1.0, 1.0);
        assert_eq!((b.lhs, b.rhs), (0.25, 2.0));
    }

    #[test]
    fn matrix_examples() {
        let q = SmallSymMatrix::identity(2).unwrap();
        let s = SmallSymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(operator_order_check(&q, &s).unwrap());
        let margin = operator_order_margin(&q, &s).unwrap();
        assert!(margin.abs() < 1e-15); // diag(1/2, 0)

        let zero = SmallSymMatrix::from_diagonal(&[0.0, 0.0, 0.0]).unwrap();
        let q3 = SmallSymMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        assert!(operator_order_margin(&q3, &zero).unwrap().abs() < 1e-15);

        let singular = SmallSymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(operator_order_check(&singular, &s).is_err());

        let b =
            contractive_positive_check(&SmallSymMatrix::identity(3).unwrap(), &[1.0, -2.0, 0.5])
                .unwrap();
        assert!((b.lhs - b.rhs).abs() < 1e-15);
        let b = contractive_positive_check(&zero, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((b.lhs, b.rhs), (0.0, 0.0));
        let big = SmallSymMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        assert!(contractive_positive_check(&big, &[1.0, 1.0]).is_err());

        let b = strong_positivity_check(&q3, 1.0).unwrap();
        assert!((b.lhs - 1.0).abs() < 1e-14 && b.rhs == 1.0);
        assert!(strong_positivity_check(&q3, 1.5).is_err());
    }

    #[test]
    fn matrix_construction_checks() {
        assert!(SmallSymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(SmallSymMatrix::new(DMatrix::identity(17, 17)).is_err());
        assert!(SmallSymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        let mut rng = seeded_rng(5, 0);
        let m = with_spectrum(&mut rng, &[0.5, 1.5, 2.5]);
        let e = m.eigenvalues();
        for (got, want) in e.iter().zip([0.5, 1.5, 2.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn small_sweeps_pass() {
        for s in algebraic_suite(300, 1).unwrap() {
            assert!(s.passed(), "{s:?}");
        }
        for s in operators_suite(100, 2).unwrap() {
            assert!(s.passed(), "{s:?}");
        }
    }

    #[test]
    fn resolvent_basic_examples() {
        let problem = Problem::new(generate_dataset(10, 8, 1).unwrap(), 1e-3).unwrap();
        let zero = ParamState::zeros(8);
        let b = resolvent_basic_check(&problem, &zero, 0.0, 3).unwrap();
        assert_eq!((b.lhs, b.rhs), (0.0, 0.0));
        for s in resolvent_suite(&problem, 200, 3).unwrap() {
            assert!(s.passed(), "{s:?}");
        }
    }

    #[test]
    fn moment_probe_with_frozen_steps_is_constant() {
        let problem = Problem::new(generate_dataset(10, 8, 1).unwrap(), 1e-2).unwrap();
        let reference = ParamState {
            w: GridFunction::new(vec![0.5; 8]).unwrap(),
            bias: -1.0,
        };
        let probe =
            moment_bound_probe(&problem, &Schedule::frozen(), 1000, 3, 2, &reference, 0).unwrap();
        let expected = reference.norm().powi(2);
        assert!(probe.series.iter().all(|p| (p.1 - expected).abs() < 1e-14));
        assert!(probe.stabilized());
        assert!(
            moment_bound_probe(&problem, &Schedule::frozen(), 10, 1, 3, &reference, 0).is_err()
        );
    }
}
