//! Discretized L²(0,1).
//!
//! A [`GridFunction`] stores the values of a function at the `N` interior points
//! `t_i = i/(N+1)`, `i = 1..=N`. The inner product carries the weight
//! `1/(N+1)`, so `rms_norm` approximates the L² norm as `N` grows and the Riesz
//! map is the identity on coordinate vectors.
//!
//! Data generation draws all random parameters before evaluating on the grid,
//! so the same seed produces the same underlying functions at every resolution.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Name of the generator used for every random stream in this crate.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng(seed_from_u64)";

/// Stream id used for dataset generation. Chains draw from [`SAMPLING_STREAM`].
pub const DATA_STREAM: u64 = 0;
pub const SAMPLING_STREAM: u64 = 1;

/// Seeded generator on a given ChaCha stream.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Interior equidistant points `i/(N+1)` for `i = 1..=N`.
pub fn grid(resolution: usize) -> Result<Vec<f64>> {
    if resolution == 0 {
        return Err(Error::invalid("grid resolution must be at least 1"));
    }
    let h = 1.0 / (resolution as f64 + 1.0);
    Ok((1..=resolution).map(|i| i as f64 * h).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("grid function needs at least one value"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "grid function value {i} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(resolution: usize) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        Self {
            values: vec![0.0; resolution],
        }
    }

    /// Evaluates `f` on the interior grid.
    pub fn from_fn(resolution: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid(resolution)?.into_iter().map(f).collect())
    }

    /// Builds from values that are known to be finite (results of arithmetic on
    /// valid grid functions). Non-finite entries are only possible if an
    /// iteration blows up, which callers detect through the norm.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { values }
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `1/(N+1)`, the quadrature weight of the inner product.
    pub fn weight(&self) -> f64 {
        1.0 / (self.values.len() as f64 + 1.0)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.resolution() != other.resolution() {
            return Err(Error::DimensionMismatch {
                left: self.resolution(),
                right: other.resolution(),
            });
        }
        Ok(())
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Self) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        dot * self.weight()
    }

    pub fn rms_norm(&self) -> f64 {
        self.inner_unchecked(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(self.values.iter().map(|v| v * factor).collect())
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, factor: f64, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Coefficients `a_0..a_4` of a degree-4 polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial(pub [f64; 5]);

impl Polynomial {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut coeffs = [0.0; 5];
        for c in &mut coeffs {
            *c = rng.random_range(-1.0..=1.0);
        }
        Polynomial(coeffs)
    }

    pub fn eval(&self, t: f64) -> f64 {
        // Horner
        self.0.iter().rev().fold(0.0, |acc, a| acc * t + a)
    }

    pub fn on_grid(&self, resolution: usize) -> Result<GridFunction> {
        GridFunction::from_fn(resolution, |t| self.eval(t))
    }
}

/// `amplitude * sin(2π frequency t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trig {
    pub amplitude: f64,
    pub frequency: u32,
    pub phase: f64,
}

impl Trig {
    pub const MAX_FREQUENCY: u32 = 10;

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let amplitude = rng.random_range(0.5..=1.5);
        let frequency = rng.random_range(1..=Self::MAX_FREQUENCY);
        let phase = rng.random_range(0.0..TAU);
        Trig {
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency as f64 * t + self.phase).sin()
    }

    pub fn on_grid(&self, resolution: usize) -> Result<GridFunction> {
        GridFunction::from_fn(resolution, |t| self.eval(t))
    }
}

pub fn sample_polynomial<R: Rng + ?Sized>(rng: &mut R, resolution: usize) -> Result<GridFunction> {
    Polynomial::draw(rng).on_grid(resolution)
}

pub fn sample_trig<R: Rng + ?Sized>(rng: &mut R, resolution: usize) -> Result<GridFunction> {
    Trig::draw(rng).on_grid(resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Polynomial class, `y = -1`.
    Negative,
    /// Trigonometric class, `y = +1`.
    Positive,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn from_value(y: f64) -> Option<Self> {
        if y == -1.0 {
            Some(Label::Negative)
        } else if y == 1.0 {
            Some(Label::Positive)
        } else {
            None
        }
    }
}

/// A labeled sample. `norm_sq = <x, x>` is computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: GridFunction,
    y: Label,
    norm_sq: f64,
}

impl Sample {
    pub fn new(x: GridFunction, y: Label) -> Self {
        let norm_sq = x.inner_unchecked(&x);
        Self { x, y, norm_sq }
    }

    pub fn x(&self) -> &GridFunction {
        &self.x
    }

    pub fn label(&self) -> Label {
        self.y
    }

    pub fn y(&self) -> f64 {
        self.y.value()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    resolution: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset must not be empty"))?;
        let resolution = first.x.resolution();
        for s in &samples {
            if s.x.resolution() != resolution {
                return Err(Error::DimensionMismatch {
                    left: resolution,
                    right: s.x.resolution(),
                });
            }
        }
        Ok(Self {
            samples,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> Result<&Sample> {
        self.samples.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.samples.len(),
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("y");
        for i in 1..=self.resolution {
            write!(out, ",v{i}").unwrap();
        }
        out.push('\n');
        for s in &self.samples {
            write!(out, "{}", s.y.value() as i32).unwrap();
            for v in s.x.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Parses the `y,v1,...,vN` format. `origin` names the source in errors.
    pub fn from_csv_str(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.first() != Some(&"y") || columns.len() < 2 {
            return Err(parse_err(1, "header must be y,v1,...,vN".into()));
        }
        for (i, c) in columns.iter().enumerate().skip(1) {
            if *c != format!("v{i}") {
                return Err(parse_err(1, format!("unexpected column {c:?}")));
            }
        }
        let resolution = columns.len() - 1;
        let mut samples = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != resolution + 1 {
                return Err(parse_err(
                    lineno,
                    format!("expected {} fields, found {}", resolution + 1, fields.len()),
                ));
            }
            let y: f64 = fields[0]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad label {:?}", fields[0])))?;
            let label = Label::from_value(y)
                .ok_or_else(|| parse_err(lineno, format!("label must be -1 or 1, got {y}")))?;
            let values = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(lineno, format!("bad value {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let x = GridFunction::new(values).map_err(|e| parse_err(lineno, e.to_string()))?;
            samples.push(Sample::new(x, label));
        }
        Dataset::new(samples).map_err(|e| parse_err(1, e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

/// `n/2` polynomials labeled −1 followed by `n/2` trigonometric functions
/// labeled +1.
pub fn generate_dataset(n: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "sample count must be even and at least 2, got {n}"
        )));
    }
    if resolution == 0 {
        return Err(Error::invalid("grid resolution must be at least 1"));
    }
    let mut rng = seeded_rng(seed, DATA_STREAM);
    let half = n / 2;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..half {
        samples.push(Sample::new(
            sample_polynomial(&mut rng, resolution)?,
            Label::Negative,
        ));
    }
    for _ in 0..half {
        samples.push(Sample::new(
            sample_trig(&mut rng, resolution)?,
            Label::Positive,
        ));
    }
    Dataset::new(samples)
}
