//! Numerical kernels: least-squares polynomial fitting and the standard
//! normal quantile function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("need at least {needed} points for a degree-{degree} fit, got {got}")]
    InsufficientPoints {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("design matrix is rank deficient ({distinct} distinct strikes for degree {degree})")]
    SingularDesign { degree: usize, distinct: usize },
    #[error("residuals have zero variance")]
    DegenerateResiduals,
    #[error("probability {0} outside the open interval (0, 1)")]
    OutOfDomain(f64),
}

/// Polynomial coefficients ordered by ascending power of the strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs(pub Vec<f64>);

impl PolyCoeffs {
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Least-squares fit of a degree-`degree` polynomial to `(x, y)` points.
///
/// The abscissae are centred on their mean and scaled to `[-1, 1]` before a
/// Householder QR solve; the coefficients are mapped back to the monomial
/// basis in the original variable. Strikes around 1000-2000 would otherwise
/// produce a Vandermonde matrix with condition number in the 1e12 range.
pub fn fit_polynomial(points: &[(f64, f64)], degree: usize) -> Result<PolyCoeffs, NumericsError> {
    let cols = degree + 1;
    let n = points.len();
    if n < cols {
        return Err(NumericsError::InsufficientPoints {
            degree,
            needed: cols,
            got: n,
        });
    }
    let distinct = count_distinct(points.iter().map(|p| p.0));
    if distinct < cols {
        return Err(NumericsError::SingularDesign { degree, distinct });
    }

    let center = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let scale = points
        .iter()
        .map(|p| (p.0 - center).abs())
        .fold(0.0_f64, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    // Column-major design matrix in the scaled variable.
    let mut a = vec![0.0; n * cols];
    for (i, &(x, _)) in points.iter().enumerate() {
        let u = (x - center) / scale;
        let mut v = 1.0;
        for j in 0..cols {
            a[j * n + i] = v;
            v *= u;
        }
    }
    let mut rhs: Vec<f64> = points.iter().map(|p| p.1).collect();

    let scaled = householder_solve(&mut a, &mut rhs, n, cols)
        .ok_or(NumericsError::SingularDesign { degree, distinct })?;
    Ok(PolyCoeffs(unscale(&scaled, center, scale)))
}

fn count_distinct(xs: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// In-place Householder QR of the `n x cols` column-major matrix `a`, applied
/// to `rhs`, followed by back substitution. Returns `None` when a diagonal
/// element of R vanishes relative to the column norms.
fn householder_solve(a: &mut [f64], rhs: &mut [f64], n: usize, cols: usize) -> Option<Vec<f64>> {
    let mut diag = vec![0.0; cols];
    for k in 0..cols {
        let col_norm_before: f64 = (0..n).map(|i| a[k * n + i].powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (k..n).map(|i| a[k * n + i].powi(2)).sum::<f64>().sqrt();
        if norm <= f64::EPSILON * 64.0 * col_norm_before.max(f64::MIN_POSITIVE) {
            return None;
        }
        let alpha = if a[k * n + k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of the column.
        a[k * n + k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| a[k * n + i].powi(2)).sum();
        for j in (k + 1)..cols {
            let dot: f64 = (k..n).map(|i| a[k * n + i] * a[j * n + i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[j * n + i] -= f * a[k * n + i];
            }
        }
        let dot: f64 = (k..n).map(|i| a[k * n + i] * rhs[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            rhs[i] -= f * a[k * n + i];
        }
        diag[k] = alpha;
    }

    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = rhs[k];
        for j in (k + 1)..cols {
            s -= a[j * n + k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Some(x)
}

/// Maps coefficients of `p(u)` with `u = (x - center) / scale` to the
/// monomial basis in `x`.
fn unscale(coeffs: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let d = coeffs.len();
    let mut out = vec![0.0; d];
    let mut binom = vec![1.0_f64; d];
    for (k, &b) in coeffs.iter().enumerate() {
        // binom holds C(k, j) for j = 0..=k
        if k > 0 {
            for j in (1..k).rev() {
                binom[j] += binom[j - 1];
            }
            binom[k] = 1.0;
        }
        let w = b / scale.powi(k as i32);
        for j in 0..=k {
            out[j] += w * binom[j] * (-center).powi((k - j) as i32);
        }
    }
    out
}

/// `priceⱼ − p(strikeⱼ)` for every point, in input order.
pub fn residuals(points: &[(f64, f64)], coeffs: &PolyCoeffs) -> Vec<f64> {
    points.iter().map(|&(x, y)| y - coeffs.eval(x)).collect()
}

/// Sample standard deviation (divisor `n − 1`) about the residual mean.
pub fn residual_sigma(residuals: &[f64]) -> Result<f64, NumericsError> {
    let n = residuals.len();
    if n < 2 {
        return Err(NumericsError::DegenerateResiduals);
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let ss: f64 = residuals.iter().map(|r| (r - mean).powi(2)).sum();
    let sigma = (ss / (n - 1) as f64).sqrt();
    if sigma > 0.0 && sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(NumericsError::DegenerateResiduals)
    }
}

// Wichura, Algorithm AS 241 (PPND16), Applied Statistics 37 (1988).
#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn ratio(c_num: &[f64; 8], c_den: &[f64; 8], r: f64) -> f64 {
    let num = c_num.iter().rev().fold(0.0, |acc, &c| acc * r + c);
    let den = c_den.iter().rev().fold(0.0, |acc, &c| acc * r + c);
    num / den
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::OutOfDomain(p));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * ratio(&A, &B, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    Ok(tail_quantile(tail, q < 0.0))
}

/// Quantile for a tail probability `tail ≤ 0.075`; returns the lower-tail
/// quantile when `lower` is set, else its negation.
fn tail_quantile(tail: f64, lower: bool) -> f64 {
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        ratio(&C, &D, r)
    } else {
        r -= 5.0;
        ratio(&E, &F, r)
    };
    if lower {
        -x
    } else {
        x
    }
}

/// `Φ⁻¹(1 − q)` evaluated without forming `1 − q`, for small upper-tail
/// probabilities.
pub fn normal_upper_quantile(q: f64) -> Result<f64, NumericsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(NumericsError::OutOfDomain(q));
    }
    if q < 0.075 {
        Ok(tail_quantile(q, false))
    } else {
        normal_quantile(1.0 - q)
    }
}
