//! Log-gamma, beta functions, and the regularized incomplete beta.

use std::f64::consts::PI;

use crate::error::{MimosaError, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Stirling remainder `ln Γ(x) - [(x - ½) ln x - x + ln √(2π)]`, valid for `x >= 10`.
fn stirling_correction(x: f64) -> f64 {
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let x2 = 1.0 / (x * x);
    let mut sum = 0.0;
    for c in C.iter().rev() {
        sum = sum * x2 + c;
    }
    sum / x
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MimosaError::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `ln B(a, b)` with unchecked arguments.
///
/// Large arguments go through the Stirling remainder so that the result keeps
/// its relative accuracy when `a` and `b` differ by many orders of magnitude.
pub(crate) fn ln_beta_unchecked(a: f64, b: f64) -> f64 {
    let (p, q) = if a < b { (a, b) } else { (b, a) };
    if p >= 10.0 {
        let corr = stirling_correction(p) + stirling_correction(q) - stirling_correction(p + q);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / (p + q)).ln() + q * (-p / (p + q)).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_correction(q) - stirling_correction(p + q);
        ln_gamma(p) + corr + p - p * (p + q).ln() + (q - 0.5) * (-p / (p + q)).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)
    }
}

/// `ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a + b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    Ok(ln_beta_unchecked(a, b))
}

pub(crate) fn ln_mv_beta_unchecked(alpha: &[f64]) -> f64 {
    // Telescoping product of two-argument betas over the running sum.
    let mut acc = 0.0;
    let mut running = alpha[0];
    for &a in &alpha[1..] {
        acc += ln_beta_unchecked(running, a);
        running += a;
    }
    acc
}

/// Multivariate beta `ln [Π Γ(α_k) / Γ(Σ α_k)]`.
pub fn log_mv_beta(alpha: &[f64]) -> Result<f64> {
    if alpha.len() < 2 {
        return Err(MimosaError::domain("multivariate beta needs at least two components"));
    }
    for &a in alpha {
        check_positive("alpha component", a)?;
    }
    Ok(ln_mv_beta_unchecked(alpha))
}

/// `ln Σ exp(x_i)` via max-shift.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(MimosaError::domain("log_sum_exp of an empty slice"));
    }
    Ok(log_sum_exp_unchecked(xs))
}

pub(crate) fn log_sum_exp_unchecked(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln C(n, k)`; `k` must not exceed `n`.
pub fn log_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    -((n + 1) as f64).ln() - ln_beta_unchecked((k + 1) as f64, (n - k + 1) as f64)
}

/// `ln [N! / Π n_k!]` with `N = Σ n_k`, accumulated as a chain of binomial coefficients.
pub fn log_multinomial_coef(counts: &[u64]) -> f64 {
    let mut acc = 0.0;
    let mut running = counts.first().copied().unwrap_or(0);
    for &n in counts.iter().skip(1) {
        running += n;
        acc += log_choose(running, n);
    }
    acc
}

/// Regularized incomplete beta with cached `ln B(a, b)`.
#[derive(Debug, Clone, Copy)]
pub struct IncBeta {
    a: f64,
    b: f64,
    ln_beta: f64,
}

impl IncBeta {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        Ok(Self::new_unchecked(a, b))
    }

    pub(crate) fn new_unchecked(a: f64, b: f64) -> Self {
        IncBeta { a, b, ln_beta: ln_beta_unchecked(a, b) }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn ln_beta(&self) -> f64 {
        self.ln_beta
    }

    /// Log density of Beta(a, b) at `x` in (0, 1).
    pub fn ln_pdf(&self, x: f64) -> f64 {
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_beta
    }

    /// Returns `(I_x(a, b), 1 - I_x(a, b))`. The tail on the side of the
    /// continued-fraction evaluation is computed directly, not by subtraction.
    pub fn eval_pair(&self, x: f64) -> (f64, f64) {
        if x <= 0.0 {
            return (0.0, 1.0);
        }
        if x >= 1.0 {
            return (1.0, 0.0);
        }
        let (a, b) = (self.a, self.b);
        let ln_front = a * x.ln() + b * (-x).ln_1p() - self.ln_beta;
        if x < (a + 1.0) / (a + b + 2.0) {
            let lower = (ln_front - a.ln()).exp() * beta_cf(a, b, x);
            (lower, 1.0 - lower)
        } else {
            let upper = (ln_front - b.ln()).exp() * beta_cf(b, a, 1.0 - x);
            (1.0 - upper, upper)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.eval_pair(x).0
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(MimosaError::domain(format!("x must lie in [0, 1], got {x}")));
    }
    Ok(IncBeta::new(a, b)?.cdf(x))
}
