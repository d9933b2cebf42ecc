//! Coefficient laws for random Jacobi matrices.
//!
//! Gaussian beta ensembles use the tridiagonal model with `b_k ~ N(0, 2/beta)`
//! and `beta a_k^2 ~ chi^2_{beta k}`. Generic laws only match the first two
//! moments: `E a_k^2 = k`, `Var a_k^2 = v k`, `E b_k = 0`, `Var b_k = v`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{Purpose, SeedSpec};

/// Rejections allowed per entry before truncation gives up.
pub const MAX_REJECTIONS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenericFamily {
    /// Symmetric uniform perturbations of the mean profile.
    Uniform,
    /// Deterministic coefficients `a_k^2 = k`, `b_k = 0`.
    Zero,
}

impl FromStr for GenericFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GenericFamily::Uniform),
            "zero" => Ok(GenericFamily::Zero),
            other => Err(Error::param("family", format!("unsupported family tag `{other}`"))),
        }
    }
}

impl fmt::Display for GenericFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenericFamily::Uniform => "uniform",
            GenericFamily::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnsembleKind {
    GaussianBeta { beta: f64 },
    Generic { v: f64, family: GenericFamily },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub truncate: bool,
    pub truncation_exponent: f64,
}

/// Second moments of the noise entering step `k` of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMoments {
    pub var_b: f64,
    /// Variance of `a_{k-1}^2` (zero at `k = 1`).
    pub var_a2_prev: f64,
}

impl EnsembleSpec {
    pub fn gaussian_beta(beta: f64) -> Self {
        Self { kind: EnsembleKind::GaussianBeta { beta }, truncate: false, truncation_exponent: 2.0 }
    }

    pub fn generic(v: f64, family: GenericFamily) -> Self {
        Self { kind: EnsembleKind::Generic { v, family }, truncate: false, truncation_exponent: 2.0 }
    }

    pub fn with_truncation(mut self, exponent: f64) -> Self {
        self.truncate = true;
        self.truncation_exponent = exponent;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EnsembleKind::GaussianBeta { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::param("beta", format!("must be positive, got {beta}")));
                }
            }
            EnsembleKind::Generic { v, .. } => {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::param("v", format!("must be positive, got {v}")));
                }
            }
        }
        if !(self.truncation_exponent >= 1.0) {
            return Err(Error::param(
                "truncation_exponent",
                format!("must be >= 1, got {}", self.truncation_exponent),
            ));
        }
        Ok(())
    }

    /// Noise variance `v` of the law (0 for the zero-noise family).
    pub fn noise_variance(&self) -> f64 {
        match self.kind {
            EnsembleKind::GaussianBeta { beta } => 2.0 / beta,
            EnsembleKind::Generic { family: GenericFamily::Zero, .. } => 0.0,
            EnsembleKind::Generic { v, .. } => v,
        }
    }

    /// `beta` for Gaussian ensembles, `2/v` otherwise (infinite without noise).
    pub fn beta(&self) -> f64 {
        match self.kind {
            EnsembleKind::GaussianBeta { beta } => beta,
            _ => 2.0 / self.noise_variance(),
        }
    }

    /// Exact noise moments at step `k`.
    pub fn moments(&self, k: usize) -> StepMoments {
        let v = self.noise_variance();
        StepMoments { var_b: v, var_a2_prev: v * (k.saturating_sub(1)) as f64 }
    }

    fn draw_b<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            EnsembleKind::GaussianBeta { beta } => {
                let z: f64 = StandardNormal.sample(rng);
                z * (2.0 / beta).sqrt()
            }
            EnsembleKind::Generic { v, family: GenericFamily::Uniform } => {
                let u = Uniform::new_inclusive(-(3f64.sqrt()), 3f64.sqrt()).unwrap();
                v.sqrt() * u.sample(rng)
            }
            EnsembleKind::Generic { family: GenericFamily::Zero, .. } => 0.0,
        }
    }

    /// Draw `a_j^2`.
    fn draw_a2<R: Rng>(&self, j: usize, rng: &mut R) -> f64 {
        let jf = j as f64;
        match self.kind {
            EnsembleKind::GaussianBeta { beta } => {
                let g = Gamma::new(beta * jf / 2.0, 2.0 / beta).expect("positive shape");
                g.sample(rng)
            }
            EnsembleKind::Generic { v, family: GenericFamily::Uniform } => {
                let u = Uniform::new_inclusive(-(3f64.sqrt()), 3f64.sqrt()).unwrap();
                (jf + (v * jf).sqrt() * u.sample(rng)).max(0.0)
            }
            EnsembleKind::Generic { family: GenericFamily::Zero, .. } => jf,
        }
    }
}

/// One realization: `a[k-1] = a_k` for `k = 1..n-1`, `b[k-1] = b_k` for `k = 1..n`.
/// The squares `a2[k-1] = a_k^2` are kept as drawn and are what the recursions use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiCoefficients {
    pub n: usize,
    pub a: Vec<f64>,
    pub a2: Vec<f64>,
    pub b: Vec<f64>,
    /// Noise variance of the law the coefficients came from.
    pub v: f64,
}

impl JacobiCoefficients {
    pub fn new(a: Vec<f64>, b: Vec<f64>, v: f64) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if a.len() + 1 != n {
            return Err(Error::param("a", format!("expected {} entries, got {}", n - 1, a.len())));
        }
        let a2 = a.iter().map(|x| x * x).collect();
        Ok(Self { n, a, a2, b, v })
    }

    /// Build from the squared off-diagonal entries.
    pub fn from_squares(a2: Vec<f64>, b: Vec<f64>, v: f64) -> Result<Self> {
        if a2.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::param("a2", "squared off-diagonal entries must be nonnegative"));
        }
        let mut c = Self::new(a2.iter().map(|x| x.sqrt()).collect(), b, v)?;
        c.a2 = a2;
        Ok(c)
    }

    /// Zero-noise coefficients: `a_k = sqrt(k)`, `b_k = 0`.
    pub fn zero_noise(n: usize) -> Self {
        let a2: Vec<f64> = (1..n).map(|k| k as f64).collect();
        let a = a2.iter().map(|x| x.sqrt()).collect();
        Self { n, a, a2, b: vec![0.0; n], v: 0.0 }
    }

    /// `b_k`, 1-indexed.
    #[inline]
    pub fn b(&self, k: usize) -> f64 {
        self.b[k - 1]
    }

    /// `a_k`, 1-indexed; `a_0 = 0`.
    #[inline]
    pub fn a(&self, k: usize) -> f64 {
        if k == 0 { 0.0 } else { self.a[k - 1] }
    }

    /// `a_k^2`, 1-indexed; `a_0^2 = 0`.
    #[inline]
    pub fn a_sq(&self, k: usize) -> f64 {
        if k == 0 { 0.0 } else { self.a2[k - 1] }
    }

    /// Truncation radius `(log n)^p`.
    pub fn truncation_radius(n: usize, exponent: f64) -> f64 {
        (n as f64).ln().powf(exponent)
    }

    /// Whether every entry satisfies the truncation bound with exponent `p`.
    pub fn satisfies_truncation(&self, exponent: f64) -> bool {
        let r = Self::truncation_radius(self.n, exponent);
        (1..=self.n).all(|k| self.b(k).abs() <= r)
            && (1..self.n).all(|j| a2_deviation(self.a_sq(j), j) <= r)
    }
}

/// `k^{-1/2} |a_{k-1}^2 - E a_{k-1}^2|` written for `j = k - 1`.
fn a2_deviation(a2: f64, j: usize) -> f64 {
    (a2 - j as f64).abs() / ((j + 1) as f64).sqrt()
}

/// Gaussian beta ensemble coefficients.
pub fn sample_gbe(beta: f64, n: usize, seed: SeedSpec) -> Result<JacobiCoefficients> {
    let spec = EnsembleSpec::gaussian_beta(beta);
    spec.validate()?;
    draw(&spec, n, seed)
}

/// Coefficients from a generic moment-matched family.
pub fn sample_generic(spec: &EnsembleSpec, n: usize, seed: SeedSpec) -> Result<JacobiCoefficients> {
    if !matches!(spec.kind, EnsembleKind::Generic { .. }) {
        return Err(Error::param("kind", "sample_generic needs a generic ensemble"));
    }
    spec.validate()?;
    draw(spec, n, seed)
}

fn draw(spec: &EnsembleSpec, n: usize, seed: SeedSpec) -> Result<JacobiCoefficients> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut rb = seed.rng(Purpose::Diagonal);
    let mut ra = seed.rng(Purpose::OffDiagonal);
    let b: Vec<f64> = (0..n).map(|_| spec.draw_b(&mut rb)).collect();
    let a2: Vec<f64> = (1..n).map(|j| spec.draw_a2(j, &mut ra)).collect();
    JacobiCoefficients::from_squares(a2, b, spec.noise_variance())
}

/// Sample from `spec`, truncating when `spec.truncate` is set.
pub fn sample(spec: &EnsembleSpec, n: usize, seed: SeedSpec) -> Result<JacobiCoefficients> {
    spec.validate()?;
    let coeffs = draw(spec, n, seed)?;
    if spec.truncate {
        Ok(truncate_coefficients(coeffs, spec, spec.truncation_exponent, seed)?.coefficients)
    } else {
        Ok(coeffs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub coefficients: JacobiCoefficients,
    /// Entries that had to be redrawn at least once.
    pub resampled_entries: usize,
}

/// Redraw every entry violating the `(log n)^p` bound from its own law until it complies.
pub fn truncate_coefficients(
    coeffs: JacobiCoefficients,
    spec: &EnsembleSpec,
    exponent: f64,
    seed: SeedSpec,
) -> Result<Truncation> {
    if !(exponent >= 1.0) {
        return Err(Error::param("truncation_exponent", format!("must be >= 1, got {exponent}")));
    }
    let n = coeffs.n;
    let r = JacobiCoefficients::truncation_radius(n, exponent);
    let mut out = coeffs;
    let mut rng = seed.rng(Purpose::Resample);
    let mut resampled = 0;
    for k in 1..=n {
        if out.b(k).abs() <= r {
            continue;
        }
        resampled += 1;
        out.b[k - 1] = redraw(|rng| spec.draw_b(rng), |x| x.abs() <= r, &mut rng)
            .ok_or_else(|| Error::Sampling(format!("b_{k}: no draw within radius {r} after {MAX_REJECTIONS} tries")))?;
    }
    for j in 1..n {
        if a2_deviation(out.a_sq(j), j) <= r {
            continue;
        }
        resampled += 1;
        let a2 = redraw(|rng| spec.draw_a2(j, rng), |x| a2_deviation(x, j) <= r, &mut rng)
            .ok_or_else(|| Error::Sampling(format!("a_{j}: no draw within radius {r} after {MAX_REJECTIONS} tries")))?;
        out.a[j - 1] = a2.sqrt();
        out.a2[j - 1] = a2;
    }
    debug_assert!(out.satisfies_truncation(exponent));
    Ok(Truncation { coefficients: out, resampled_entries: resampled })
}

fn redraw<R: Rng>(mut draw: impl FnMut(&mut R) -> f64, ok: impl Fn(f64) -> bool, rng: &mut R) -> Option<f64> {
    for _ in 0..MAX_REJECTIONS {
        let x = draw(rng);
        if ok(x) {
            return Some(x);
        }
    }
    None
}
