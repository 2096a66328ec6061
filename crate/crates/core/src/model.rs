//! Ridge-regularized logistic regression on `L²(0,1) × ℝ`.
//!
//! Prediction is affine, `h = <w, x> + bias`; the per-sample objective is
//! `ln(1 + exp(-h y)) + (λ/2) ‖w‖²` with the bias left unregularized.

use crate::error::{Error, Result};
use crate::function_space::{Dataset, GridFunction, Sample};

/// The optimization variable `[w, bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub w: GridFunction,
    pub bias: f64,
}

impl ParamState {
    pub fn new(w: GridFunction, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::invalid("bias must be finite"));
        }
        Ok(Self { w, bias })
    }

    pub fn zeros(resolution: usize) -> Self {
        Self {
            w: GridFunction::zeros(resolution),
            bias: 0.0,
        }
    }

    pub fn resolution(&self) -> usize {
        self.w.resolution()
    }

    /// Composite inner product `<w, w'> + bias·bias'`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        Ok(self.w.inner(&other.w)? + self.bias * other.bias)
    }

    /// Composite norm `sqrt(‖w‖² + bias²)`.
    pub fn norm(&self) -> f64 {
        let w = self.w.rms_norm();
        (w * w + self.bias * self.bias).sqrt()
    }

    pub fn add_scaled(&self, factor: f64, other: &Self) -> Result<Self> {
        Ok(Self {
            w: self.w.add_scaled(factor, &other.w)?,
            bias: self.bias + factor * other.bias,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.w.is_finite()
    }
}

pub fn predict(state: &ParamState, x: &GridFunction) -> Result<f64> {
    Ok(state.w.inner(x)? + state.bias)
}

/// Logistic loss `ln(1 + exp(-h y))`, evaluated as a softplus that never
/// overflows.
pub fn loss(h: f64, y: f64) -> f64 {
    softplus(-h * y)
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic function `1/(1 + exp(-z))`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    dataset: Dataset,
    lambda: f64,
}

impl Problem {
    pub fn new(dataset: Dataset, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "regularization weight must be positive, got {lambda}"
            )));
        }
        Ok(Self { dataset, lambda })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.dataset.resolution()
    }

    pub fn sample(&self, index: usize) -> Result<&Sample> {
        self.dataset.sample(index)
    }

    fn ridge(&self, state: &ParamState) -> f64 {
        let w = state.w.rms_norm();
        0.5 * self.lambda * w * w
    }

    /// `f(state, j)` for the zero-based sample index `j`.
    pub fn sample_objective(&self, state: &ParamState, index: usize) -> Result<f64> {
        let s = self.sample(index)?;
        Ok(loss(predict(state, s.x())?, s.y()) + self.ridge(state))
    }

    pub fn full_objective(&self, state: &ParamState) -> Result<f64> {
        let mut total = 0.0;
        for s in self.dataset.samples() {
            total += loss(predict(state, s.x())?, s.y());
        }
        Ok(total / self.len() as f64 + self.ridge(state))
    }

    pub fn sample_gradient(&self, state: &ParamState, index: usize) -> Result<ParamState> {
        sample_gradient(state, self.sample(index)?, self.lambda)
    }

    pub fn full_gradient(&self, state: &ParamState) -> Result<ParamState> {
        let n = self.len() as f64;
        let mut acc = vec![0.0; state.resolution()];
        let mut bias = 0.0;
        for s in self.dataset.samples() {
            let h = predict(state, s.x())?;
            let coef = -s.y() * sigmoid(-s.y() * h);
            for (a, x) in acc.iter_mut().zip(s.x().values()) {
                *a += coef * x;
            }
            bias += coef;
        }
        let w = acc
            .iter()
            .zip(state.w.values())
            .map(|(a, w)| a / n + self.lambda * w)
            .collect();
        Ok(ParamState {
            w: GridFunction::from_raw(w),
            bias: bias / n,
        })
    }
}

/// Gradient of the per-sample objective, as a Riesz representative in the
/// weighted inner product (same coordinates as the state).
pub fn sample_gradient(state: &ParamState, sample: &Sample, lambda: f64) -> Result<ParamState> {
    let y = sample.y();
    let h = predict(state, sample.x())?;
    let coef = -y * sigmoid(-y * h);
    let w = sample
        .x()
        .values()
        .iter()
        .zip(state.w.values())
        .map(|(x, w)| coef * x + lambda * w)
        .collect();
    Ok(ParamState {
        w: GridFunction::from_raw(w),
        bias: coef,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{generate_dataset, seeded_rng, Label};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_state<R: Rng>(rng: &mut R, n: usize, scale: f64) -> ParamState {
        ParamState {
            w: GridFunction::new((0..n).map(|_| rng.random_range(-scale..scale)).collect())
                .unwrap(),
            bias: rng.random_range(-scale..scale),
        }
    }

    fn problem() -> Problem {
        Problem::new(generate_dataset(20, 16, 5).unwrap(), 1e-2).unwrap()
    }

    #[test]
    fn predict_examples() {
        let x = GridFunction::new(vec![0.3, -1.0, 4.0]).unwrap();
        let s = ParamState::new(GridFunction::zeros(3), 0.7).unwrap();
        assert_eq!(predict(&s, &x).unwrap(), 0.7);
        let ones = GridFunction::new(vec![1.0; 9]).unwrap();
        let s = ParamState::new(ones.clone(), 0.0).unwrap();
        assert!((predict(&s, &ones).unwrap() - 0.9).abs() < 1e-15);
        assert!(predict(&s, &x).is_err());
    }

    #[test]
    fn predict_is_affine_in_x() {
        let mut rng = seeded_rng(1, 3);
        let s = random_state(&mut rng, 10, 1.0);
        let x1 = random_state(&mut rng, 10, 1.0).w;
        let x2 = random_state(&mut rng, 10, 1.0).w;
        let sum = x1.add_scaled(1.0, &x2).unwrap();
        let lhs = predict(&s, &sum).unwrap() - s.bias;
        let rhs = predict(&s, &x1).unwrap() - s.bias + predict(&s, &x2).unwrap() - s.bias;
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn loss_examples() {
        assert!((loss(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let saturated = loss(1000.0, 1.0);
        assert!(saturated.is_finite() && saturated < 1e-300);
        assert!((loss(-1000.0, 1.0) - 1000.0).abs() < 1e-12);
        assert!(loss(1.0, 1.0) > loss(2.0, 1.0));
    }

    #[test]
    fn loss_is_stable_for_huge_predictions() {
        for h in [-1e8, -1e3, -40.0, -1.0, 0.0, 1.0, 40.0, 1e3, 1e8] {
            for y in [-1.0, 1.0] {
                let l = loss(h, y);
                assert!(l.is_finite() && l >= 0.0, "h={h} y={y} -> {l}");
                if -h * y > -700.0 {
                    assert!(l > 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_state_objectives() {
        let p = problem();
        let zero = ParamState::zeros(16);
        for j in 0..p.len() {
            assert!((p.sample_objective(&zero, j).unwrap() - 2f64.ln()).abs() < 1e-15);
        }
        assert!((p.full_objective(&zero).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(p.sample_objective(&zero, p.len()).is_err());
    }

    #[test]
    fn ridge_decomposition() {
        let p = problem();
        let mut rng = seeded_rng(4, 3);
        let s = random_state(&mut rng, 16, 2.0);
        let sample = p.sample(3).unwrap();
        let data_part = loss(predict(&s, sample.x()).unwrap(), sample.y());
        let ridge = p.sample_objective(&s, 3).unwrap() - data_part;
        let w = s.w.rms_norm();
        assert!((ridge - 0.5 * p.lambda() * w * w).abs() < 1e-14);
    }

    #[test]
    fn full_objective_is_mean_of_sample_objectives() {
        let p = problem();
        let mut rng = seeded_rng(8, 3);
        let s = random_state(&mut rng, 16, 1.0);
        let mean: f64 = (0..p.len())
            .map(|j| p.sample_objective(&s, j).unwrap())
            .sum::<f64>()
            / p.len() as f64;
        assert!((mean - p.full_objective(&s).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn single_sample_problem() {
        let x = GridFunction::new(vec![0.2, -0.4, 1.0, 0.5]).unwrap();
        let d = Dataset::new(vec![Sample::new(x, Label::Positive)]).unwrap();
        let p = Problem::new(d, 0.3).unwrap();
        let s =
            ParamState::new(GridFunction::new(vec![1.0, 2.0, -1.0, 0.1]).unwrap(), 0.4).unwrap();
        assert_eq!(
            p.full_objective(&s).unwrap(),
            p.sample_objective(&s, 0).unwrap()
        );
        let g = p.full_gradient(&s).unwrap();
        let gj = p.sample_gradient(&s, 0).unwrap();
        assert!(g.sub(&gj).unwrap().norm() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_state() {
        let p = problem();
        let zero = ParamState::zeros(16);
        let j = p.len() - 1;
        let sample = p.sample(j).unwrap();
        assert_eq!(sample.y(), 1.0);
        let g = p.sample_gradient(&zero, j).unwrap();
        assert_eq!(g.bias, -0.5);
        let expected = sample.x().scaled(-0.5);
        assert!(g.w.sub(&expected).unwrap().rms_norm() < 1e-15);

        let x0 = Sample::new(GridFunction::zeros(4), Label::Negative);
        let s = ParamState::new(GridFunction::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0).unwrap();
        let g = sample_gradient(&s, &x0, 1e-300).unwrap();
        assert!(g.w.rms_norm() < 1e-290);
    }

    #[test]
    fn full_gradient_bias_vanishes_for_antisymmetric_data() {
        // balanced labels, class-wise zero-mean features
        let a = GridFunction::new(vec![1.0, -0.5, 0.25]).unwrap();
        let b = GridFunction::new(vec![0.3, 0.9, -2.0]).unwrap();
        let samples = vec![
            Sample::new(a.clone(), Label::Negative),
            Sample::new(a.scaled(-1.0), Label::Negative),
            Sample::new(b.clone(), Label::Positive),
            Sample::new(b.scaled(-1.0), Label::Positive),
        ];
        let p = Problem::new(Dataset::new(samples).unwrap(), 0.1).unwrap();
        let g = p.full_gradient(&ParamState::zeros(3)).unwrap();
        assert!(g.bias.abs() < 1e-16);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let d = generate_dataset(2, 3, 0).unwrap();
        assert!(Problem::new(d.clone(), 0.0).is_err());
        assert!(Problem::new(d, -1.0).is_err());
    }

    #[test]
    fn objective_is_midpoint_convex() {
        let p = problem();
        let mut rng = seeded_rng(12, 3);
        for _ in 0..100 {
            let u = random_state(&mut rng, 16, 3.0);
            let v = random_state(&mut rng, 16, 3.0);
            let mid = u.add_scaled(0.5, &v.sub(&u).unwrap()).unwrap();
            let j = rng.random_range(0..p.len());
            let fm = p.sample_objective(&mid, j).unwrap();
            let avg =
                0.5 * (p.sample_objective(&u, j).unwrap() + p.sample_objective(&v, j).unwrap());
            assert!(fm <= avg + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn gradient_is_strongly_monotone(seed in any::<u64>()) {
            let p = problem();
            let mut rng = seeded_rng(seed, 3);
            let u = random_state(&mut rng, 16, 4.0);
            let v = random_state(&mut rng, 16, 4.0);
            let j = rng.random_range(0..p.len());
            let gu = p.sample_gradient(&u, j).unwrap();
            let gv = p.sample_gradient(&v, j).unwrap();
            let lhs = gu.sub(&gv).unwrap().inner(&u.sub(&v).unwrap()).unwrap();
            let dw = u.w.sub(&v.w).unwrap().rms_norm();
            prop_assert!(lhs >= p.lambda() * dw * dw - 1e-12);
        }
    }
}
