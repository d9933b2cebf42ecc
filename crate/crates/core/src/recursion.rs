//! Characteristic polynomials by transfer-matrix sweeps.
//!
//! The scaled polynomials `phi_k = q_k / sqrt(k!)` satisfy
//!
//! ```text
//! phi_k = (z_k - b_k / sqrt(k)) phi_{k-1} - a_{k-1}^2 / sqrt(k (k-1)) phi_{k-2},   z_k = z sqrt(n/k)
//! ```
//!
//! and stay of moderate size. The state `(phi_k, phi_{k-1})` is rescaled by
//! exact powers of two whenever it leaves `[2^-300, 2^300]`; the exponents are
//! accumulated as integers, so the result does not depend on when rescaling
//! happens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::JacobiCoefficients;
use crate::error::{Error, Result};
use crate::numerics::{exponent_of, pow2, Kahan};

const LANES: usize = 8;
const SCALE_HI: f64 = 2.037035976334486e90; // 2^300
const SCALE_LO: f64 = 4.909093465297727e-91; // 2^-300

/// Bulk point `z` for a matrix of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub z: f64,
    pub n: usize,
}

impl EvalPoint {
    /// Checked constructor for `eta <= |z| <= 2 - eta`.
    pub fn bulk(z: f64, n: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::param("eta", format!("must lie in (0, 1), got {eta}")));
        }
        if !(z.abs() >= eta && z.abs() <= 2.0 - eta) {
            return Err(Error::Domain(format!("|z| = {} outside [{eta}, {}]", z.abs(), 2.0 - eta)));
        }
        Ok(Self { z, n })
    }
}

/// Recursion state after `k` steps: `X_k = exp(log_norm) * sign * direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledState {
    pub k: usize,
    /// Unit vector along `(phi_k, phi_{k-1})`, oriented so that its first nonzero entry is positive.
    pub direction: [f64; 2],
    pub log_norm: f64,
    pub sign: f64,
}

impl ScaledState {
    fn from_scaled(k: usize, x: f64, y: f64, exp: i64) -> Self {
        let norm = x.hypot(y);
        if norm == 0.0 {
            return Self { k, direction: [0.0, 0.0], log_norm: f64::NEG_INFINITY, sign: 1.0 };
        }
        let lead = if x != 0.0 { x } else { y };
        let sign = lead.signum();
        Self {
            k,
            direction: [sign * x / norm, sign * y / norm],
            log_norm: norm.ln() + exp as f64 * std::f64::consts::LN_2,
            sign,
        }
    }

    /// First coordinate of `X_k` as (log-modulus, sign).
    pub fn first(&self) -> (f64, f64) {
        let x = self.sign * self.direction[0];
        (self.log_norm + x.abs().ln(), if x < 0.0 { -1.0 } else { 1.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharPolyResult {
    pub z: f64,
    /// `log |p_n(z)|`.
    pub log_abs_p: f64,
    /// Sign of `p_n(z)`; 0 when the value is an exact zero.
    pub sign: f64,
    /// `log |p_n(z)| - n (z^2/4 - 1/2)`.
    pub centered: f64,
    /// Set when the recursion hit an exact zero or produced non-finite state.
    pub flagged: bool,
}

/// Coefficient-dependent part of the scaled recursion, shared by all `z`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub n: usize,
    /// `sqrt(n/k)` at index `k-1`.
    pub s: Vec<f64>,
    /// `b_k / sqrt(k)`.
    pub c: Vec<f64>,
    /// `a_{k-1}^2 / sqrt(k (k-1))` (0 at `k = 1`).
    pub d: Vec<f64>,
    /// `(1/2) sum_{k<=n} log(k/n)`.
    pub offset: f64,
}

impl Prepared {
    pub fn new(coeffs: &JacobiCoefficients) -> Self {
        let n = coeffs.n;
        let nf = n as f64;
        let mut s = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut off = Kahan::new();
        for k in 1..=n {
            let kf = k as f64;
            s.push((nf / kf).sqrt());
            c.push(coeffs.b(k) / kf.sqrt());
            d.push(if k == 1 { 0.0 } else { coeffs.a_sq(k - 1) / (kf * (kf - 1.0)).sqrt() });
            off.add((kf / nf).ln());
        }
        Self { n, s, c, d, offset: 0.5 * off.value() }
    }

    /// Transfer matrix `T_k` at `z`.
    #[inline]
    pub fn transfer(&self, k: usize, z: f64) -> [[f64; 2]; 2] {
        [[z * self.s[k - 1] - self.c[k - 1], -self.d[k - 1]], [1.0, 0.0]]
    }
}

/// Raw lane state: `(phi_k, phi_{k-1}) * 2^-exp`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LaneState {
    x: f64,
    y: f64,
    exp: i64,
}

/// Run up to `LANES` points in lockstep, recording states after each step in
/// `marks` (sorted ascending). Each lane performs exactly the scalar operations
/// of a single-point run, so batching never changes results.
fn sweep_lanes(prep: &Prepared, zs: &[f64], marks: &[usize], period: usize) -> Vec<Vec<LaneState>> {
    let w = zs.len();
    debug_assert!(w <= LANES && period >= 1);
    let mut rec = vec![Vec::with_capacity(marks.len()); w];
    let upto = marks.last().copied().unwrap_or(0);
    let mut z = [0.0; LANES];
    z[..w].copy_from_slice(zs);
    let mut x = [1.0f64; LANES];
    let mut y = [0.0f64; LANES];
    let mut e = [0i64; LANES];
    let mut next = 0;
    while next < marks.len() && marks[next] == 0 {
        for r in rec.iter_mut().take(w) {
            r.push(LaneState { x: 1.0, y: 0.0, exp: 0 });
        }
        next += 1;
    }
    for k in 1..=upto {
        let (s, c, d) = (prep.s[k - 1], prep.c[k - 1], prep.d[k - 1]);
        for l in 0..w {
            let t = z[l] * s - c;
            let nx = t * x[l] - d * y[l];
            y[l] = x[l];
            x[l] = nx;
        }
        if k % period == 0 || k == upto {
            for l in 0..w {
                rescale(&mut x[l], &mut y[l], &mut e[l]);
            }
        }
        while next < marks.len() && marks[next] == k {
            for l in 0..w {
                let (mut a, mut b, mut ex) = (x[l], y[l], e[l]);
                rescale(&mut a, &mut b, &mut ex);
                rec[l].push(LaneState { x: a, y: b, exp: ex });
            }
            next += 1;
        }
    }
    rec
}

#[inline]
fn rescale(x: &mut f64, y: &mut f64, e: &mut i64) {
    let m = x.abs().max(y.abs());
    if !(SCALE_LO..=SCALE_HI).contains(&m) && m != 0.0 && m.is_finite() {
        let ex = exponent_of(m);
        let f = pow2(-ex);
        *x *= f;
        *y *= f;
        *e += ex as i64;
    }
}

fn finish(prep: &Prepared, z: f64, st: LaneState) -> CharPolyResult {
    let n = prep.n as f64;
    let center = n * (z * z / 4.0 - 0.5);
    let x = st.x;
    if !x.is_finite() || !st.y.is_finite() {
        return CharPolyResult { z, log_abs_p: f64::NAN, sign: 0.0, centered: f64::NAN, flagged: true };
    }
    if x == 0.0 {
        return CharPolyResult { z, log_abs_p: f64::NEG_INFINITY, sign: 0.0, centered: f64::NEG_INFINITY, flagged: true };
    }
    let lap = x.abs().ln() + st.exp as f64 * std::f64::consts::LN_2 + prep.offset;
    CharPolyResult { z, log_abs_p: lap, sign: x.signum(), centered: lap - center, flagged: false }
}

fn eval_prepared(prep: &Prepared, zs: &[f64], period: usize) -> Vec<CharPolyResult> {
    let marks = [prep.n];
    zs.par_chunks(LANES)
        .flat_map_iter(|chunk| {
            let rec = sweep_lanes(prep, chunk, &marks, period);
            chunk.iter().zip(rec).map(|(&z, r)| finish(prep, z, r[0])).collect::<Vec<_>>()
        })
        .collect()
}

/// `q_k(z) = det(z sqrt(n) I_k - J_k)` by the unscaled recursion.
/// Overflow shows up as a signed infinity.
pub fn raw_charpoly(coeffs: &JacobiCoefficients, z: f64, k: usize) -> f64 {
    assert!(k <= coeffs.n, "k = {k} exceeds n = {}", coeffs.n);
    let x = z * (coeffs.n as f64).sqrt();
    let (mut q1, mut q0) = (1.0f64, 0.0f64);
    for j in 1..=k {
        let q = (x - coeffs.b(j)) * q1 - coeffs.a_sq(j - 1) * q0;
        if q.is_nan() {
            return f64::INFINITY.copysign(q1);
        }
        q0 = q1;
        q1 = q;
        if q1.is_infinite() {
            return q1;
        }
    }
    q1
}

/// `log |p_n(z)|` with sign, via the scaled recursion.
pub fn log_abs_charpoly(coeffs: &JacobiCoefficients, z: f64) -> CharPolyResult {
    log_abs_charpoly_with(coeffs, z, 1)
}

/// As [`log_abs_charpoly`] with an explicit renormalization period.
pub fn log_abs_charpoly_with(coeffs: &JacobiCoefficients, z: f64, period: usize) -> CharPolyResult {
    let prep = Prepared::new(coeffs);
    eval_prepared(&prep, &[z], period.max(1))[0]
}

/// Evaluate a grid of points sharing the matrix size of `coeffs`; results in grid order.
pub fn eval_grid(coeffs: &JacobiCoefficients, grid: &[EvalPoint]) -> Result<Vec<CharPolyResult>> {
    if let Some(p) = grid.iter().find(|p| p.n != coeffs.n) {
        return Err(Error::Precondition(format!("grid point has n = {}, coefficients have n = {}", p.n, coeffs.n)));
    }
    let zs: Vec<f64> = grid.iter().map(|p| p.z).collect();
    Ok(eval_zs(coeffs, &zs))
}

/// [`eval_grid`] on bare abscissae.
pub fn eval_zs(coeffs: &JacobiCoefficients, zs: &[f64]) -> Vec<CharPolyResult> {
    if zs.is_empty() {
        return Vec::new();
    }
    let prep = Prepared::new(coeffs);
    eval_prepared(&prep, zs, 1)
}

/// [`eval_zs`] with precomputed coefficients.
pub fn eval_prepared_zs(prep: &Prepared, zs: &[f64]) -> Vec<CharPolyResult> {
    eval_prepared(prep, zs, 1)
}

/// Scaled states `X_k = (phi_k, phi_{k-1})` at each step in `ks` (sorted ascending, `k <= n`).
pub fn scaled_states(coeffs: &JacobiCoefficients, z: f64, ks: &[usize]) -> Result<Vec<ScaledState>> {
    if ks.windows(2).any(|w| w[0] > w[1]) || ks.last().is_some_and(|&k| k > coeffs.n) {
        return Err(Error::Precondition("steps must be sorted and at most n".into()));
    }
    let prep = Prepared::new(coeffs);
    let rec = sweep_lanes(&prep, &[z], ks, 1).pop().unwrap_or_default();
    Ok(ks.iter().zip(rec).map(|(&k, st)| ScaledState::from_scaled(k, st.x, st.y, st.exp)).collect())
}
