//! `Pr(P1 > P2)` for independent beta variables.

use super::quadrature::integrate_breakpoints;
use super::special::{ln_beta_unchecked, IncBeta};
use crate::error::{MimosaError, Result};

const REL_TOL: f64 = 1e-9;
const ABS_TOL: f64 = 1e-300;
const MAX_SEGMENTS: usize = 200;

/// Both orderings of two independent beta variables, each accurate in the
/// relative sense when it is the smaller of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOrdering {
    /// `Pr(P1 > P2)`
    pub greater: f64,
    /// `Pr(P1 < P2)`
    pub less: f64,
}

impl BetaOrdering {
    pub fn ln_greater(&self) -> f64 {
        if self.greater < 0.5 {
            self.greater.ln()
        } else {
            (-self.less).ln_1p()
        }
    }
}

fn moments(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (a / s, (a * b / (s * s * (s + 1.0))).sqrt())
}

/// Computes both orderings of `P1 ~ Beta(a1, b1)` and `P2 ~ Beta(a2, b2)` by
/// integrating the density of `P1` against the CDF (or survival function) of `P2`.
pub fn beta_ordering(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<BetaOrdering> {
    let first = IncBeta::new(a1, b1)?;
    let second = IncBeta::new(a2, b2)?;
    Ok(beta_ordering_unchecked(&first, &second))
}

pub(crate) fn beta_ordering_unchecked(first: &IncBeta, second: &IncBeta) -> BetaOrdering {
    let (m1, _) = moments(first.a(), first.b());
    let (m2, _) = moments(second.a(), second.b());
    // Compute whichever ordering is the small one so it keeps relative accuracy.
    let small_is_greater = m1 <= m2;
    let small = if small_is_greater {
        series_greater(first, second)
    } else {
        series_greater(second, first)
    }
    .unwrap_or_else(|| quadrature_small(first, second, small_is_greater));
    let small = small.clamp(0.0, 1.0);
    if small_is_greater {
        BetaOrdering { greater: small, less: 1.0 - small }
    } else {
        BetaOrdering { greater: 1.0 - small, less: small }
    }
}

/// `Pr(P1 > P2)` alone, accurate in the relative sense whichever side of
/// one half it falls. When it is the larger ordering and `P1` is much more
/// concentrated, the series for it converges in a handful of terms, so the
/// tiny complement never has to be resolved.
pub(crate) fn beta_greater_unchecked(first: &IncBeta, second: &IncBeta) -> f64 {
    let (m1, _) = moments(first.a(), first.b());
    let (m2, _) = moments(second.a(), second.b());
    if m1 > m2 && second.b() >= 1000.0 && first.b() > 3.0 * second.b() {
        if let Some(p) = ordered_series(first, second) {
            return p.clamp(0.0, 1.0);
        }
    }
    beta_ordering_unchecked(first, second).greater
}

/// `Pr(X > Y)` from the series obtained by expanding the CDF of `Y` in powers
/// of `p` and integrating each term against the density of `X`:
///
/// `t_k = Γ(a_Y + b_Y + k) / (Γ(a_Y + k + 1) Γ(b_Y)) · B(a_X + a_Y + k, b_X + b_Y) / B(a_X, b_X)`.
///
/// All terms are positive and unimodal in `k`; they are summed outward from
/// the peak. Away from the peak they shrink by roughly `b_Y / (b_X + b_Y)` per
/// step while `k` is small against both `b`, so the series is used only when
/// both `b` are large. When `b_Y` dominates, the complementary series is
/// summed instead. Returns `None` outside the supported regime.
fn series_greater(x: &IncBeta, y: &IncBeta) -> Option<f64> {
    if x.b() < 1000.0 || y.b() < 1000.0 {
        return None;
    }
    if y.b() <= 3.0 * x.b() {
        return ordered_series(x, y);
    }
    // the subtraction keeps about 1e-16 absolute accuracy
    match ordered_series(y, x).map(|p| 1.0 - p) {
        Some(complement) if complement > 1e-7 => Some(complement),
        // direct summation decays too slowly to beat quadrature here
        _ => None,
    }
}

fn ordered_series(x: &IncBeta, y: &IncBeta) -> Option<f64> {
    const MAX_TERMS: usize = 20_000;
    let (ax, bx, ay, by) = (x.a(), x.b(), y.a(), y.b());
    let ln_term = |k: f64| {
        -ln_beta_unchecked(ay + k + 1.0, by) - (ay + by + k).ln() + ln_beta_unchecked(ax + ay + k, bx + by) - x.ln_beta()
    };
    // t_{k+1} / t_k
    let ratio = |k: f64| (ay + by + k) * (ax + ay + k) / ((ay + k + 1.0) * (ax + ay + bx + by + k));
    // the ratio crosses one where (A + k)(B + k) = (C + k)(D + k)
    let (a, b, c, d) = (ay + by, ax + ay, ay + 1.0, ax + ay + bx + by);
    let peak = ((a * b - c * d) / (1.0 + bx)).max(0.0).floor();
    if peak > 1e9 {
        return None;
    }
    let ln_peak = ln_term(peak);

    let mut sum = 1.0;
    let mut terms = 0;
    let mut term = 1.0;
    let mut k = peak;
    loop {
        let r = ratio(k);
        term *= r;
        sum += term;
        k += 1.0;
        terms += 1;
        if r < 0.9 && term < 1e-17 * sum {
            break;
        }
        if terms > MAX_TERMS {
            return None;
        }
    }
    let mut term = 1.0;
    let mut k = peak;
    while k >= 1.0 {
        term /= ratio(k - 1.0);
        sum += term;
        k -= 1.0;
        terms += 1;
        if term < 1e-17 * sum {
            break;
        }
        if terms > MAX_TERMS {
            return None;
        }
    }
    Some((ln_peak + sum.ln()).exp())
}

fn quadrature_small(first: &IncBeta, second: &IncBeta, small_is_greater: bool) -> f64 {
    // Integrating against the narrower density keeps the integrand inside
    // the central breakpoints even when the two bulks are far apart.
    if moments(second.a(), second.b()).1 < moments(first.a(), first.b()).1 {
        quadrature_over(second, first, !small_is_greater)
    } else {
        quadrature_over(first, second, small_is_greater)
    }
}

fn quadrature_over(first: &IncBeta, second: &IncBeta, small_is_greater: bool) -> f64 {
    let (m1, s1) = moments(first.a(), first.b());
    let (m2, s2) = moments(second.a(), second.b());

    let integrand = |p: f64| {
        if p <= 0.0 || p >= 1.0 {
            return 0.0;
        }
        let density = first.ln_pdf(p).exp();
        if density == 0.0 {
            return 0.0;
        }
        let (lower, upper) = second.eval_pair(p);
        density * if small_is_greater { lower } else { upper }
    };

    // Segments four standard deviations wide rarely need bisection, which keeps
    // the evaluation count near 15 per segment.
    let lo = (m1 - 8.0 * s1).max(0.0);
    let hi = (m1 + 8.0 * s1).min(1.0);
    let mut central_points: Vec<f64> = (-2..=2).map(|k| m1 + 4.0 * k as f64 * s1).filter(|&p| p > lo && p < hi).collect();
    central_points.extend([lo, hi]);
    if s2 < s1 {
        // the second CDF steps sharply inside the bulk of the first
        central_points.extend((-2..=2).map(|k| m2 + 4.0 * k as f64 * s2).filter(|&p| p > lo && p < hi));
    }
    central_points.sort_by(f64::total_cmp);
    central_points.dedup();

    let central = integrate_breakpoints(integrand, &central_points, ABS_TOL, REL_TOL, MAX_SEGMENTS);
    let mut small = central.value;

    // Tails of the first distribution matter only when they can move the
    // result. They are split at geometrically growing distances from the bulk
    // and cut where the remaining mass of the first distribution is negligible.
    let tail_mass = |p: f64, dir: f64| {
        let (lower, upper) = first.eval_pair(p);
        if dir < 0.0 {
            lower
        } else {
            upper
        }
    };
    let tail = |from: f64, to: f64, small: f64| {
        let dir = (to - from).signum();
        let mut points = vec![from];
        let mut step = 4.0 * s1;
        loop {
            let last = points[points.len() - 1];
            let p = last + dir * step;
            if (to - p) * dir <= 0.0 {
                points.push(to);
                break;
            }
            points.push(p);
            if tail_mass(p, dir) <= 1e-16 * small {
                break;
            }
            step *= 2.0;
        }
        if dir < 0.0 {
            points.reverse();
        }
        // accuracy is needed relative to the total, not to the tail itself
        integrate_breakpoints(integrand, &points, ABS_TOL.max(0.1 * REL_TOL * small), REL_TOL, MAX_SEGMENTS).value
    };
    if lo > 0.0 && tail_mass(lo, -1.0) > 1e-13 * small {
        small += tail(lo, 0.0, small);
    }
    if hi < 1.0 && tail_mass(hi, 1.0) > 1e-13 * small {
        small += tail(hi, 1.0, small);
    }
    small
}

/// `Pr(P1 > P2)` for independent `P1 ~ Beta(a1, b1)`, `P2 ~ Beta(a2, b2)`.
pub fn beta_gt_prob(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<f64> {
    for (name, v) in [("a1", a1), ("b1", b1), ("a2", a2), ("b2", b2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(MimosaError::domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(beta_ordering(a1, b1, a2, b2)?.greater)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_agrees_with_quadrature() {
        let cases = [
            (13.0, 45_000.0, 9.0, 45_000.0),
            (40.0, 4e4, 8.0, 4e4),
            (8.0, 4e4, 40.0, 4e4),
            (1.5, 2e3, 0.7, 5e3),
            (0.2, 1e4, 3.0, 2.5e4),
            (120.0, 9e4, 250.0, 1.1e5),
            (60.5, 3e4, 9.25, 8.5e4),
            (12.0, 5e3, 3e3, 2.8e6),
        ];
        for (a1, b1, a2, b2) in cases {
            let (x, y) = (IncBeta::new(a1, b1).unwrap(), IncBeta::new(a2, b2).unwrap());
            // the ordering with the smaller probability
            let (first, second) = if a1 / (a1 + b1) <= a2 / (a2 + b2) { (&x, &y) } else { (&y, &x) };
            let quad = quadrature_small(first, second, true);
            let Some(series) = series_greater(first, second) else { panic!("{a1} {b1} {a2} {b2} outside the series regime") };
            assert!(((series - quad) / quad).abs() < 1e-8, "{a1} {b1} {a2} {b2}: {series} vs {quad}");
        }
    }

    #[test]
    fn single_side_matches_full_ordering() {
        for (a1, b1, a2, b2) in [(9.3e3, 8.7e6, 9.0, 4.5e4), (3e3, 2.8e6, 12.0, 5e3), (2.0, 9e3, 8.0, 4e4), (40.0, 4e4, 8.0, 4e4)] {
            let (x, y) = (IncBeta::new(a1, b1).unwrap(), IncBeta::new(a2, b2).unwrap());
            let full = beta_ordering_unchecked(&x, &y);
            for (p, q) in [(beta_greater_unchecked(&x, &y), full.greater), (beta_greater_unchecked(&y, &x), full.less)] {
                assert!(((p - q) / q).abs() < 1e-9, "{a1} {b1} {a2} {b2}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn symmetric_case_is_half() {
        for &(a, b) in &[(1.0, 1.0), (0.3, 2.0), (8.0, 4e4), (55.5, 7.25)] {
            let p = beta_gt_prob(a, b, a, b).unwrap();
            assert!((p - 0.5).abs() < 1e-9, "({a},{b}) -> {p}");
        }
    }

    #[test]
    fn uniform_second_argument() {
        let p = beta_gt_prob(2.0, 1.0, 1.0, 1.0).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn complementary() {
        let cases = [(3.0, 9.0, 5.0, 2.0), (0.5, 0.7, 2.0, 30.0), (12.0, 5000.0, 3.0, 4000.0)];
        for &(a1, b1, a2, b2) in &cases {
            let p = beta_gt_prob(a1, b1, a2, b2).unwrap();
            let q = beta_gt_prob(a2, b2, a1, b1).unwrap();
            assert!((p + q - 1.0).abs() < 2e-8, "{p} + {q}");
        }
    }

    #[test]
    fn rejects_non_positive() {
        assert!(beta_gt_prob(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(beta_gt_prob(1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn integer_shapes_match_finite_sum() {
        // Pr(P1 > P2) = Σ_{i<a1} B(a2 + i, b1 + b2) / ((b1 + i) B(1 + i, b1) B(a2, b2))
        use crate::numerics::special::ln_beta_unchecked as lb;
        let (a1, b1, a2, b2) = (4.0f64, 6.0f64, 3.0f64, 9.0f64);
        let mut exact = 0.0;
        for i in 0..(a1 as i32) {
            let i = i as f64;
            exact += (lb(a2 + i, b1 + b2) - (b1 + i).ln() - lb(1.0 + i, b1) - lb(a2, b2)).exp();
        }
        let p = beta_gt_prob(a1, b1, a2, b2).unwrap();
        assert!((p - exact).abs() < 1e-10, "{p} vs {exact}");
    }

    #[test]
    fn tiny_probabilities_keep_relative_accuracy() {
        let o = beta_ordering(2.0, 5000.0, 60.0, 5000.0).unwrap();
        assert!(o.greater > 0.0 && o.greater < 1e-10);
        assert!(o.ln_greater().is_finite());
    }
}
