//! Scalar special functions used by the likelihoods and the Matérn family.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Numerically stable `log(1 + exp(x))` (softplus).
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of `p` in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trigamma function ψ'(x) for x > 0.
///
/// Recurrence to push the argument above 6, then the asymptotic series
/// with Bernoulli-number coefficients; absolute error below 1e-12 over
/// the range used by the Beta likelihood.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_{2n} / x^{2n+1}
    let series = inv
        + 0.5 * inv2
        + inv2
            * inv
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    acc + series
}

/// Modified Bessel function of the second kind, order one.
///
/// Polynomial approximations 9.8.3–9.8.8 of Abramowitz & Stegun; relative
/// error below ~3e-7, ample for correlation evaluation.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 requires x > 0, got {x}");
    if x <= 2.0 {
        let t = x * x / 4.0;
        // I1 via A&S 9.8.3 (argument x/3.75)
        let s = x / 3.75;
        let s2 = s * s;
        let i1 = x
            * (0.5
                + s2 * (0.87890594
                    + s2 * (0.51498869
                        + s2 * (0.15084934
                            + s2 * (0.02658733 + s2 * (0.00301532 + s2 * 0.00032411))))));
        // K1 via A&S 9.8.7
        let poly = 1.0
            + t * (0.15443144
                + t * (-0.67278579
                    + t * (-0.18156897
                        + t * (-0.01919402 + t * (-0.00110404 + t * (-0.00004686))))));
        (x / 2.0).ln() * i1 + poly / x
    } else {
        let t = 2.0 / x;
        let poly = 1.25331414
            + t * (0.23498619
                + t * (-0.03655620
                    + t * (0.01504268 + t * (-0.00780353 + t * (0.00325614 + t * (-0.00068245))))));
        (-x).exp() / x.sqrt() * poly
    }
}

/// Log-sum-exp of a slice, stable against overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}
