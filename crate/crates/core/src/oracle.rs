//! Independent reference computations: dense determinants, Sturm-bisection
//! eigenvalues, logarithmic potentials and the semicircle distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::JacobiCoefficients;
use crate::error::{Error, Result};
use crate::numerics::Kahan;

/// Largest minor accepted by [`dense_det`].
pub const DENSE_MAX: usize = 64;
/// Bisection step budget per eigenvalue.
pub const MAX_BISECTIONS: usize = 200;

/// Eigenvalues of the unscaled `J_n`, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub n: usize,
    pub eigenvalues: Vec<f64>,
}

/// `det(z sqrt(n) I_k - J_k)` by LU with partial pivoting on the dense matrix.
pub fn dense_det(coeffs: &JacobiCoefficients, z: f64, k: usize) -> Result<f64> {
    if k > DENSE_MAX || k > coeffs.n {
        return Err(Error::param("k", format!("must be at most min(n, {DENSE_MAX}), got {k}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let x = z * (coeffs.n as f64).sqrt();
    let mut m = vec![0.0f64; k * k];
    for i in 0..k {
        m[i * k + i] = x - coeffs.b(i + 1);
        if i + 1 < k {
            let a = coeffs.a(i + 1);
            m[i * k + i + 1] = -a;
            m[(i + 1) * k + i] = -a;
        }
    }
    let mut det = 1.0;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&r, &s| m[r * k + col].abs().total_cmp(&m[s * k + col].abs()))
            .unwrap();
        if m[piv * k + col] == 0.0 {
            return Ok(0.0);
        }
        if piv != col {
            for j in 0..k {
                m.swap(piv * k + j, col * k + j);
            }
            det = -det;
        }
        let p = m[col * k + col];
        det *= p;
        for r in col + 1..k {
            let f = m[r * k + col] / p;
            if f != 0.0 {
                for j in col..k {
                    m[r * k + j] -= f * m[col * k + j];
                }
            }
        }
    }
    Ok(det)
}

/// Gershgorin interval containing the spectrum of `J_n`.
pub fn gershgorin(coeffs: &JacobiCoefficients) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 1..=coeffs.n {
        let r = coeffs.a(k - 1) + if k < coeffs.n { coeffs.a(k) } else { 0.0 };
        lo = lo.min(coeffs.b(k) - r);
        hi = hi.max(coeffs.b(k) + r);
    }
    (lo, hi)
}

/// Number of eigenvalues of `J_n` strictly below `x` (LDL^T pivot signs).
pub fn sturm_count(coeffs: &JacobiCoefficients, x: f64) -> usize {
    let mut c = [0usize; 1];
    sturm_counts(coeffs, &[x], &mut c);
    c[0]
}

fn pivmin(coeffs: &JacobiCoefficients) -> f64 {
    f64::MIN_POSITIVE * coeffs.a2.iter().fold(1.0f64, |m, &v| m.max(v))
}

const LANES: usize = 8;

/// Sturm counts for up to `LANES` shifts in one pass over the matrix.
fn sturm_counts(coeffs: &JacobiCoefficients, xs: &[f64], out: &mut [usize]) {
    let w = xs.len();
    debug_assert!(w <= LANES && out.len() >= w);
    let pm = pivmin(coeffs);
    let mut x = [0.0; LANES];
    x[..w].copy_from_slice(xs);
    let mut d = [1.0f64; LANES];
    let mut cnt = [0usize; LANES];
    for k in 1..=coeffs.n {
        let b = coeffs.b(k);
        let a2 = coeffs.a_sq(k - 1);
        for l in 0..w {
            let mut v = b - x[l] - a2 / d[l];
            if v.abs() < pm {
                v = -pm;
            }
            cnt[l] += (v < 0.0) as usize;
            d[l] = v;
        }
    }
    out[..w].copy_from_slice(&cnt[..w]);
}

/// All eigenvalues of `J_n` by Sturm bisection, each bracketed to `tolerance`.
pub fn eigen_tridiag(coeffs: &JacobiCoefficients, tolerance: f64) -> Result<Spectrum> {
    if !(tolerance > 0.0) {
        return Err(Error::param("tolerance", format!("must be positive, got {tolerance}")));
    }
    let n = coeffs.n;
    let (lo, hi) = gershgorin(coeffs);
    let (lo, hi) = (lo - tolerance, hi + tolerance);
    let idx: Vec<usize> = (0..n).collect();
    let groups = idx
        .par_chunks(LANES)
        .map(|g| bisect_group(coeffs, g, lo, hi, tolerance))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut eigenvalues: Vec<f64> = groups.into_iter().flatten().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(Spectrum { n, eigenvalues })
}

/// Default bracketing tolerance: `1e-12` times the Gershgorin diameter.
pub fn default_tolerance(coeffs: &JacobiCoefficients) -> f64 {
    let (lo, hi) = gershgorin(coeffs);
    1e-12 * (hi - lo).max(f64::MIN_POSITIVE)
}

/// Bisect the eigenvalues with the given indices in lockstep.
/// Invariant per lane: `count(lo) <= i < count(hi)`.
fn bisect_group(coeffs: &JacobiCoefficients, ids: &[usize], lo: f64, hi: f64, tol: f64) -> Result<Vec<f64>> {
    let w = ids.len();
    let mut lo = vec![lo; w];
    let mut hi = vec![hi; w];
    let mut done = vec![false; w];
    let mut counts = [0usize; LANES];
    for _ in 0..MAX_BISECTIONS {
        let active: Vec<usize> = (0..w).filter(|&l| !done[l]).collect();
        if active.is_empty() {
            return Ok((0..w).map(|l| 0.5 * (lo[l] + hi[l])).collect());
        }
        let mids: Vec<f64> = active.iter().map(|&l| 0.5 * (lo[l] + hi[l])).collect();
        sturm_counts(coeffs, &mids, &mut counts);
        for (j, &l) in active.iter().enumerate() {
            let mid = mids[j];
            if counts[j] > ids[l] {
                hi[l] = mid;
            } else {
                lo[l] = mid;
            }
            let next = 0.5 * (lo[l] + hi[l]);
            // second test: bracket already one ulp wide
            if hi[l] - lo[l] <= tol || next <= lo[l] || next >= hi[l] {
                done[l] = true;
            }
        }
    }
    match (0..w).find(|&l| !done[l]) {
        None => Ok((0..w).map(|l| 0.5 * (lo[l] + hi[l])).collect()),
        Some(l) => Err(Error::Numerical(format!(
            "eigenvalue {} not bracketed to {tol} after {MAX_BISECTIONS} bisections (bracket [{}, {}])",
            ids[l], lo[l], hi[l]
        ))),
    }
}

/// `sum_i log |z - lambda_i / sqrt(n)|`, `-inf` at an exact coincidence.
pub fn log_potential(spectrum: &Spectrum, z: f64) -> f64 {
    let s = (spectrum.n as f64).sqrt();
    let mut acc = Kahan::new();
    for &l in &spectrum.eigenvalues {
        let d = (z - l / s).abs();
        if d == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc.add(d.ln());
    }
    acc.value()
}

/// Semicircle distribution function on `[-2, 2]`.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        0.0
    } else if x >= 2.0 {
        1.0
    } else {
        0.5 + x * (4.0 - x * x).sqrt() / (4.0 * std::f64::consts::PI) + (x / 2.0).asin() / std::f64::consts::PI
    }
}

/// Kolmogorov distance between the law of `lambda_i / sqrt(n)` and the semicircle.
pub fn semicircle_distance(spectrum: &Spectrum) -> f64 {
    let n = spectrum.n as f64;
    let s = n.sqrt();
    let mut xs: Vec<f64> = spectrum.eigenvalues.iter().map(|l| l / s).collect();
    xs.sort_by(f64::total_cmp);
    let mut sup = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = semicircle_cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    sup
}
