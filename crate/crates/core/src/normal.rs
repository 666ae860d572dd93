//! Standard-normal numerics: pdf, cdf, quantile, and the exceedance
//! corrections v(t) = pdf(t)/cdf(t) and w(t) = v(t)(v(t)+t) used by the
//! rating update.
//!
//! The error function is evaluated with the Cody rational-Chebyshev
//! approximations (max relative error within a few ulp), including the
//! scaled form erfcx(x) = exp(x^2) erfc(x). The scaled form is what makes
//! v total: for t < 0, v(t) = sqrt(2/pi) / erfcx(-t/sqrt(2)) cancels the
//! Gaussian factor analytically, so nothing underflows no matter how deep
//! the tail.

use statrs::function::erf::erf_inv;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// 1/sqrt(pi).
const SQRPI: f64 = 0.564_189_583_547_756_3;

// Cody's coefficient tables. Region boundaries: |x| <= 0.46875 (erf),
// 0.46875 < |x| <= 4 (erfc), |x| > 4 (erfc via 1/x^2 expansion).
const THRESH: f64 = 0.46875;
const A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// erfc underflows past this argument.
const XBIG: f64 = 26.543;
/// Above this, erfcx(x) = 1/(x sqrt(pi)) to full precision.
const XHUGE: f64 = 6.71e7;

/// Shared core: erfc(y) for y > THRESH, multiplied by exp(y^2) when
/// `scaled`. Only defined for positive y.
fn erfc_tail(y: f64, scaled: bool) -> f64 {
    let r = if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        (xnum + C[7]) / (xden + D[7])
    } else if !scaled && y >= XBIG {
        return 0.0;
    } else if y >= XHUGE {
        return SQRPI / y;
    } else {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let r = ysq * (xnum + P[4]) / (xden + Q[4]);
        (SQRPI - r) / y
    };
    if scaled {
        r
    } else {
        // exp(-y^2) split into an exactly representable square plus a
        // remainder keeps the product accurate for large y.
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    }
}

/// erf(x) for |x| <= THRESH.
fn erf_small(x: f64) -> f64 {
    let z = x * x;
    let mut xnum = A[4] * z;
    let mut xden = z;
    for i in 0..3 {
        xnum = (xnum + A[i]) * z;
        xden = (xden + B[i]) * z;
    }
    x * (xnum + A[3]) / (xden + B[3])
}

/// Complementary error function, accurate to a few ulp over the full line.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let r = if y <= THRESH {
        1.0 - erf_small(x.abs())
    } else {
        erfc_tail(y, false)
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 0.
fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= THRESH {
        (x * x).exp() * (1.0 - erf_small(x))
    } else {
        erfc_tail(x, true)
    }
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail P(Z > x), computed without the 1 - cdf cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal quantile (inverse cdf), 0 < p < 1.
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    SQRT_2 * erf_inv(2.0 * p - 1.0)
}

/// v(t) = pdf(t)/cdf(t): the mean shift applied to a Gaussian truncated
/// to exceed a threshold. Total and strictly positive for every finite t.
///
/// For t < 0 the ratio is evaluated through erfcx, which cancels the
/// exp(-t^2/2) factor analytically; the direct ratio would underflow past
/// t ~ -38. For large positive t the true value drops below the smallest
/// positive double, so it clamps there to honor positivity.
pub fn v_exceeds(t: f64) -> f64 {
    let v = if t < 0.0 {
        (2.0 / std::f64::consts::PI).sqrt() / erfcx(-t / SQRT_2)
    } else {
        pdf(t) / cdf(t)
    };
    v.max(f64::MIN_POSITIVE)
}

/// w(t) = v(t)(v(t)+t): the variance shrink factor paired with v.
///
/// The true value lies strictly inside (0, 1); the clamp keeps the float
/// there so the 1 - w denominator in the truncation update never reaches
/// zero. Deep in the left tail the v + t cancellation costs about |t| ulp
/// of absolute error, so relative accuracy degrades to ~1e-9 near t =
/// -300; rating updates never operate at such arguments.
pub fn w_exceeds(t: f64) -> f64 {
    let v = v_exceeds(t);
    let w = v * (v + t);
    w.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Frozen from 40-digit evaluations of pdf(t)/cdf(t).
    const V_CASES: [(f64, f64); 9] = [
        (0.0, 0.79788456080286535588),
        (-1.0, 1.5251352761609812091),
        (-6.0, 6.1584826045445989173),
        (-6.5, 6.6473013611904906913),
        (-10.0, 10.098093233962511963),
        (-30.0, 30.033259667433677037),
        (-300.0, 300.00333325926337415),
        (2.5, 0.017637825486916734788),
        (5.0, 1.4867199409049057124e-6),
    ];

    // Frozen from 40-digit evaluations of v(t)(v(t)+t).
    const W_CASES: [(f64, f64); 6] = [
        (0.0, 0.63661977236758134308),
        (-1.0, 0.80090233442965120845),
        (-6.0, 0.97601236321083322905),
        (-10.0, 0.99055462217434373884),
        (-300.0, 0.99998888962956105042),
        (2.5, 0.044405656605198766523),
    ];

    #[test]
    fn v_matches_reference() {
        for &(t, expected) in &V_CASES {
            assert_relative_eq!(v_exceeds(t), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn w_matches_reference() {
        for &(t, expected) in &W_CASES {
            // The v + t cancellation limits deep-tail relative accuracy.
            let tol = if t <= -100.0 { 1e-9 } else { 1e-11 };
            assert_relative_eq!(w_exceeds(t), expected, max_relative = tol);
        }
    }

    #[test]
    fn v_and_w_at_zero_have_closed_forms() {
        assert_relative_eq!(v_exceeds(0.0), 0.7978845608, max_relative = 1e-10);
        assert_relative_eq!(
            w_exceeds(0.0),
            2.0 / std::f64::consts::PI,
            max_relative = 1e-13
        );
    }

    #[test]
    fn scaled_and_direct_branches_agree() {
        // The scaled route (taken for t < 0) and the direct ratio must be
        // the same function wherever the direct ratio is well conditioned.
        for t in [-0.05, -0.5, -2.0, -6.0] {
            let direct = pdf(t) / cdf(t);
            assert_relative_eq!(v_exceeds(t), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn deep_tail_stays_finite_and_asymptotic() {
        for t in [-50.0, -1e3, -1e6] {
            let v = v_exceeds(t);
            let w = w_exceeds(t);
            assert!(v.is_finite() && w.is_finite());
            assert!(v > 0.0 && w > 0.0 && w < 1.0);
            // Mills-ratio asymptote: v(t) ~ -t + 1/(-t) as t -> -inf.
            let approx_v = -t + 1.0 / (-t);
            assert_relative_eq!(v, approx_v, max_relative = 1e-4);
        }
        // Extreme positive side: v underflows to the clamp, w to its floor.
        assert!(v_exceeds(1e9) > 0.0);
        assert!(w_exceeds(1e9) > 0.0);
    }

    #[test]
    fn erfc_matches_reference_values() {
        // Frozen from 40-digit evaluations.
        let cases = [
            (0.5, 0.47950012218695346231),
            (1.0, 0.15729920705028513066),
            (3.0, 2.2090496998585441373e-5),
            (8.0, 1.1224297172982927079e-29),
            (20.0, 5.3958656116079009289e-176),
            (-1.0, 1.8427007929497148693),
        ];
        for (x, expected) in cases {
            assert_relative_eq!(erfc(x), expected, max_relative = 1e-13);
        }
        assert_eq!(erfc(0.0), 1.0);
    }

    #[test]
    fn cdf_basics() {
        assert_relative_eq!(cdf(0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(cdf(1.0), 0.84134474606854292859, max_relative = 1e-13);
        assert_relative_eq!(sf(1.0), 1.0 - 0.84134474606854292859, max_relative = 1e-12);
        assert_relative_eq!(cdf(-6.0), 9.8658764503769814070e-10, max_relative = 1e-12);
        assert!(cdf(-40.0) >= 0.0 && cdf(40.0) <= 1.0);
        // sf avoids the cancellation that 1 - cdf would hit out here.
        assert_relative_eq!(sf(6.0), 9.8658764503769814070e-10, max_relative = 1e-12);
    }

    #[test]
    fn quantile_matches_reference_and_roundtrips() {
        assert_relative_eq!(quantile(0.75), 0.67448975019608174320, max_relative = 1e-12);
        assert_relative_eq!(quantile(0.55), 0.12566134685507403421, max_relative = 1e-10);
        assert_relative_eq!(quantile(0.5), 0.0, epsilon = 1e-15);
        for p in [0.001, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999] {
            assert_relative_eq!(cdf(quantile(p)), p, max_relative = 1e-10);
        }
    }

    #[test]
    fn pdf_is_symmetric_and_normalized_at_zero() {
        assert_relative_eq!(pdf(0.0), INV_SQRT_2PI, max_relative = 1e-15);
        assert_eq!(pdf(1.5), pdf(-1.5));
    }
}
