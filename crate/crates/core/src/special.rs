//! Scalar special functions shared by the likelihoods and diagnostics.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// `log(1 / (1 + exp(-x)))` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trigamma function for `x > 0`, via upward recurrence and the asymptotic
/// Bernoulli series.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    const SHIFT_TO: f64 = 12.0;
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_{2k} / x^{2k+1}
    let series = inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2
                        * (1.0 / 42.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + inv * series
}

/// `ln Γ(y + θ) − ln Γ(θ)` and its derivative in `θ`, exact for small
/// integer `y` by the rising-factorial product.
#[inline]
pub fn ln_rising_factorial(theta: f64, y: u64) -> (f64, f64) {
    if y < 64 {
        let mut value = 0.0;
        let mut deriv = 0.0;
        for j in 0..y {
            let t = theta + j as f64;
            value += t.ln();
            deriv += 1.0 / t;
        }
        (value, deriv)
    } else {
        let yf = y as f64;
        (
            ln_gamma(yf + theta) - ln_gamma(theta),
            digamma(yf + theta) - digamma(theta),
        )
    }
}

/// Log density of a location-scale Student-t and its derivative in `x`.
pub fn student_t_lpdf(x: f64, nu: f64, loc: f64, scale: f64) -> (f64, f64) {
    let z = (x - loc) / scale;
    let norm = ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - scale.ln();
    let q = 1.0 + z * z / nu;
    let lp = norm - (nu + 1.0) / 2.0 * q.ln();
    let d = -(nu + 1.0) * z / (nu * q * scale);
    (lp, d)
}

pub fn normal_lpdf(x: f64, loc: f64, scale: f64) -> (f64, f64) {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    let z = (x - loc) / scale;
    (-0.5 * z * z - scale.ln() - HALF_LN_2PI, -z / scale)
}

/// Gamma(shape, rate) log density and derivative in `x`.
pub fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> (f64, f64) {
    let lp = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x;
    (lp, (shape - 1.0) / x - rate)
}
