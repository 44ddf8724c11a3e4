//! Gaussian error function and the standard normal distribution.
//!
//! `erf` uses two Chebyshev expansions fitted offline at 50-digit precision:
//! `erf(x)/x` as a series in `x²` on `|x| ≤ 2`, and the scaled complement
//! `erfcx(x) = exp(x²)·erfc(x)` on `2 < |x| < 6`. Truncation error of both
//! is below 1e-17; the result is exactly odd because only `|x|` is evaluated.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Chebyshev coefficients of `erf(√u)/√u` for `u ∈ [0, 4]`.
const ERF_SMALL: [f64; 18] = [
    1.4831105640848037,
    -0.30107107338659495,
    0.06899483068983156,
    -0.013916271264722188,
    0.0024207995224334636,
    -0.0003658639685848086,
    4.862098443231905e-05,
    -5.749256558035685e-06,
    6.113243578434765e-07,
    -5.8991015312958435e-08,
    5.2070090920686485e-09,
    -4.2329758799655433e-10,
    3.188113506649175e-11,
    -2.2361550188326843e-12,
    1.467329847991085e-13,
    -9.044001985381747e-15,
    5.254813715470919e-16,
    -2.887426122284945e-17,
];

/// Chebyshev coefficients of `exp(x²)·erfc(x)` for `x ∈ [2, 6]`.
const ERFCX_LARGE: [f64; 22] = [
    0.30909786508822845,
    -0.07674006034821483,
    0.01849487416970198,
    -0.004337233595514166,
    0.0009916839077238056,
    -0.00022144890703087983,
    4.836760032122529e-05,
    -1.034609832664543e-05,
    2.1698719431920526e-06,
    -4.4664937548784355e-07,
    9.031674382673662e-08,
    -1.7955339488870227e-08,
    3.5120800624763815e-09,
    -6.763532420163472e-10,
    1.2831846446281688e-10,
    -2.3997023709710498e-11,
    4.425938010116817e-12,
    -8.054583827182102e-13,
    1.446990739131772e-13,
    -2.5671711791155715e-14,
    4.4996611900036674e-15,
    -7.794698095368683e-16,
];

/// Beyond this magnitude `erf` is ±1 to double precision (`erfc(6) ≈ 2e-17`).
pub const ERF_SATURATION: f64 = 6.0;

/// Clenshaw summation of `c₀/2 + Σ cₖ Tₖ(t)` for `t ∈ [-1, 1]`.
fn chebyshev(coeffs: &[f64], t: f64) -> f64 {
    let two_t = 2.0 * t;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let b0 = two_t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + 0.5 * coeffs[0]
}

/// The Gaussian error function `2/√π ∫₀ˣ exp(-t²) dt`.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    let magnitude = if ax <= 2.0 {
        // u = x² mapped from [0, 4] onto [-1, 1]
        let t = 0.5 * ax * ax - 1.0;
        ax * chebyshev(&ERF_SMALL, t)
    } else if ax < ERF_SATURATION {
        let t = 0.5 * ax - 2.0;
        1.0 - (-ax * ax).exp() * chebyshev(&ERFCX_LARGE, t)
    } else {
        1.0
    };
    magnitude.copysign(x)
}

/// The complement `1 - erf(x)`, accurate in relative terms for large positive `x`.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x <= 2.0 {
        1.0 - erf(x)
    } else if x < ERF_SATURATION {
        (-x * x).exp() * chebyshev(&ERFCX_LARGE, 0.5 * x - 2.0)
    } else {
        // asymptotic series; its smallest term at x ≥ 6 is far below 1e-17
        let inv = 1.0 / (2.0 * x * x);
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..20 {
            term *= -((2 * k - 1) as f64) * inv;
            sum += term;
        }
        (-x * x).exp() / (x * PI.sqrt()) * sum
    }
}

/// `Φ(x) = ½ erfc(-x/√2)`, keeping full relative precision in the lower tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `φ(x) = exp(-x²/2)/√(2π)`.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Series evaluation of `erf`, independent of the Chebyshev fit.

    /// `erf(x) = 2/√π · exp(-x²) · Σₙ 2ⁿ x²ⁿ⁺¹ / (1·3·…·(2n+1))`.
    ///
    /// Every term is positive, so unlike the alternating Maclaurin series this
    /// does not cancel catastrophically for large `|x|`.
    pub fn erf_series(x: f64) -> f64 {
        let ax = x.abs();
        let x2 = ax * ax;
        let mut term = ax;
        let mut sum = ax;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            if term <= sum * 1e-17 {
                break;
            }
        }
        let v = 2.0 / std::f64::consts::PI.sqrt() * (-x2).exp() * sum;
        v.min(1.0).copysign(x)
    }

    /// The alternating Maclaurin series, only trustworthy for `|x| ≲ 2`.
    pub fn erf_maclaurin(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::{erf_maclaurin, erf_series};
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=10_000).map(|i| -6.0 + 12.0 * i as f64 / 10_000.0)
    }

    #[test]
    fn series_oracles_agree_where_both_converge() {
        for i in 0..=200 {
            let x = -2.0 + 4.0 * i as f64 / 200.0;
            assert_abs_diff_eq!(erf_series(x), erf_maclaurin(x), epsilon = 1e-14);
        }
    }

    #[test]
    fn reference_values() {
        assert_eq!(erf(0.0), 0.0);
        assert_abs_diff_eq!(erf(1.0), 0.8427007929, epsilon = 1e-10);
        assert_abs_diff_eq!(erf(FRAC_1_SQRT_2), 0.6826894921, epsilon = 1e-10);
        assert_abs_diff_eq!(std_normal_cdf(1.0), 0.8413447461, epsilon = 1e-10);
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(std_normal_cdf(10.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_series_on_grid() {
        let worst = grid()
            .map(|x| (erf(x) - erf_series(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-7, "worst abs error {worst:e}");
        // the fit is far tighter than the contract
        assert!(worst <= 1e-14, "worst abs error {worst:e}");
    }

    #[test]
    fn erfc_tail_reference_values() {
        let cases = [
            (0.5, 0.47950012218695346),
            (3.0, 2.2090496998585441e-5),
            (5.0, 1.5374597944280349e-12),
            (7.0, 4.1838256077794144e-23),
            (10.0, 2.0884875837625448e-45),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(((got - want) / want).abs() < 1e-13, "erfc({x}) = {got:e}");
            assert!((erfc(-x) - (2.0 - want)).abs() < 1e-15);
        }
        for (x, want) in [(-5.0, 2.8665157187919391e-7), (-10.0, 7.6198530241605261e-24), (-30.0, 4.9067139271481871e-198)] {
            let got = std_normal_cdf(x);
            assert!(((got - want) / want).abs() < 1e-13, "cdf({x}) = {got:e}");
        }
    }

    #[test]
    fn odd_monotone_bounded() {
        let mut prev = -1.0;
        for x in grid() {
            let v = erf(x);
            assert!((v + erf(-x)).abs() <= 1e-15);
            assert!(v >= prev, "not monotone at {x}");
            assert!(v.abs() <= 1.0);
            prev = v;
        }
        // strictly inside (-1, 1) until rounding saturates
        assert!(erf(5.0) < 1.0);
        assert_eq!(erf(6.0), 1.0);
        assert_eq!(erf(-40.0), -1.0);
    }

    #[test]
    fn branch_seams_are_continuous() {
        for &s in &[2.0, ERF_SATURATION] {
            let below = erf(s - 1e-12);
            let above = erf(s + 1e-12);
            assert!((above - below).abs() < 1e-13, "seam at {s}");
        }
    }

    #[test]
    fn cdf_is_symmetric() {
        for x in grid() {
            assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() <= 1e-14);
            let p = std_normal_cdf(x);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn pdf_peak() {
        assert_abs_diff_eq!(std_normal_pdf(0.0), 0.3989422804014327, epsilon = 1e-16);
    }
}
