//! Standard normal distribution helpers used by the risk distribution.
//!
//! Everything that ends up in a likelihood goes through the log-space
//! functions here. The CDF is built on the fdlibm `erfc`, which keeps full
//! relative precision deep into both tails.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this point `erfc(-x / sqrt 2)` is close to underflow and the
/// asymptotic expansion of the Mills ratio takes over.
const LOG_CDF_ASYMPTOTIC: f64 = -35.0;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    log_pdf(x).exp()
}

pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF, Φ(x).
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Survival function 1 − Φ(x), accurate in the upper tail.
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// ln Φ(x) without underflow for very negative `x`.
pub fn log_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > LOG_CDF_ASYMPTOTIC {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Φ(x) = φ(x)/|x| · Σ (-1)^n (2n-1)!! / x^{2n}
        let inv_x2 = 1.0 / (x * x);
        let mut term = 1.0;
        let mut series = 1.0;
        for n in 1..12 {
            term *= -((2 * n - 1) as f64) * inv_x2;
            series += term;
        }
        log_pdf(x) - (-x).ln() + series.ln()
    }
}

/// ln(1 − e^x) for x ≤ 0.
pub fn log1mexp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// ln(e^a + e^b).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lo = a.min(b);
    hi + (lo - hi).exp().ln_1p()
}

/// ln(Φ(hi) − Φ(lo)) for `lo ≤ hi`; either bound may be infinite.
pub fn log_diff_cdf(lo: f64, hi: f64) -> f64 {
    debug_assert!(!(lo > hi), "log_diff_cdf: lo {lo} > hi {hi}");
    if lo >= hi {
        return f64::NEG_INFINITY;
    }
    if lo == f64::NEG_INFINITY {
        return log_cdf(hi);
    }
    if hi == f64::INFINITY {
        return log_cdf(-lo);
    }
    if lo >= 0.0 {
        // both in the upper tail: Φ(-lo) − Φ(-hi)
        let a = log_cdf(-lo);
        let b = log_cdf(-hi);
        a + log1mexp(b - a)
    } else if hi <= 0.0 {
        let a = log_cdf(hi);
        let b = log_cdf(lo);
        a + log1mexp(b - a)
    } else {
        // straddles zero; erf terms have the same sign so nothing cancels
        (0.5 * (libm::erf(hi * FRAC_1_SQRT_2) - libm::erf(lo * FRAC_1_SQRT_2))).ln()
    }
}

/// Value and partial derivatives of `ln(Φ(hi) − Φ(lo))`.
///
/// Returns `(value, d/dlo, d/dhi)`. Infinite bounds get a zero partial.
pub fn log_diff_cdf_grad(lo: f64, hi: f64) -> (f64, f64, f64) {
    let value = log_diff_cdf(lo, hi);
    if value == f64::NEG_INFINITY {
        return (value, 0.0, 0.0);
    }
    let d_lo = if lo.is_finite() {
        -(log_pdf(lo) - value).exp()
    } else {
        0.0
    };
    let d_hi = if hi.is_finite() {
        (log_pdf(hi) - value).exp()
    } else {
        0.0
    };
    (value, d_lo, d_hi)
}

/// ln σ(x) = −ln(1 + e^{−x}).
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(t / (1 − t)) for t in (0, 1), exact near both ends.
pub fn logit(t: f64) -> f64 {
    t.ln() - (-t).ln_1p()
}
