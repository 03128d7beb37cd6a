//! Observation-level likelihoods for the two outcome families.

use crate::error::{Error, Result};
use crate::special::{ln_gamma, ln_rising_factorial, log_sigmoid, sigmoid};

fn check_ordered(cutpoints: &[f64]) -> Result<()> {
    if cutpoints.iter().any(|c| !c.is_finite()) {
        return Err(Error::Validation("cutpoints must be finite".into()));
    }
    if cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Validation(format!(
            "cutpoints must be strictly increasing: {cutpoints:?}"
        )));
    }
    Ok(())
}

/// Log-probability of `category` (0-based) under the cumulative-logit model
/// `P(y <= c) = logistic(cutpoint[c] - eta)`.
pub fn ordered_logistic_logpmf(category: usize, eta: f64, cutpoints: &[f64]) -> Result<f64> {
    check_ordered(cutpoints)?;
    if category > cutpoints.len() {
        return Err(Error::Validation(format!(
            "category {category} outside 0..={}",
            cutpoints.len()
        )));
    }
    Ok(ordinal_term(category, eta, cutpoints).0)
}

/// Category probabilities at linear predictor `eta`.
pub fn ordered_logistic_probs(eta: f64, cutpoints: &[f64]) -> Result<Vec<f64>> {
    check_ordered(cutpoints)?;
    Ok(ordinal_probs_unchecked(eta, cutpoints))
}

pub(crate) fn ordinal_probs_unchecked(eta: f64, cutpoints: &[f64]) -> Vec<f64> {
    let k = cutpoints.len() + 1;
    let mut probs = Vec::with_capacity(k);
    let mut prev = 0.0;
    for c in cutpoints {
        let cdf = sigmoid(c - eta);
        probs.push(cdf - prev);
        prev = cdf;
    }
    probs.push(1.0 - prev);
    probs
}

/// Log-probability of one ordinal observation and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OrdinalTerm {
    /// d/d eta
    pub d_eta: f64,
    /// d/d cutpoint[category - 1], when that cutpoint exists.
    pub d_lower: f64,
    /// d/d cutpoint[category], when that cutpoint exists.
    pub d_upper: f64,
}

pub(crate) fn ordinal_term(category: usize, eta: f64, cutpoints: &[f64]) -> (f64, OrdinalTerm) {
    let last = cutpoints.len();
    if last == 0 {
        return (
            0.0,
            OrdinalTerm {
                d_eta: 0.0,
                d_lower: 0.0,
                d_upper: 0.0,
            },
        );
    }
    if category == 0 {
        let b = cutpoints[0] - eta;
        let d_upper = sigmoid(-b);
        (
            log_sigmoid(b),
            OrdinalTerm {
                d_eta: -d_upper,
                d_lower: 0.0,
                d_upper,
            },
        )
    } else if category == last {
        let a = cutpoints[last - 1] - eta;
        let d_lower = -sigmoid(a);
        (
            log_sigmoid(-a),
            OrdinalTerm {
                d_eta: -d_lower,
                d_lower,
                d_upper: 0.0,
            },
        )
    } else {
        let b = cutpoints[category] - eta;
        let a = cutpoints[category - 1] - eta;
        // F(b) - F(a) = F(b) (1 - F(a)) (1 - exp(a - b))
        let gap = -(a - b).exp_m1();
        let lp = log_sigmoid(b) + log_sigmoid(-a) + gap.ln();
        let d_upper = sigmoid(-b) / (sigmoid(-a) * gap);
        let d_lower = -sigmoid(a) / (sigmoid(b) * gap);
        (
            lp,
            OrdinalTerm {
                d_eta: -(d_upper + d_lower),
                d_lower,
                d_upper,
            },
        )
    }
}

/// NB2 log-pmf with mean `mu` and dispersion `theta` (variance `mu + mu^2/theta`).
pub fn negbin_logpmf(y: f64, mu: f64, theta: f64) -> Result<f64> {
    if !(y >= 0.0) || y.fract() != 0.0 || !y.is_finite() {
        return Err(Error::Validation(format!(
            "negative binomial outcome must be a nonnegative integer, got {y}"
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) || !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Validation(format!(
            "negative binomial needs mu > 0 and theta > 0, got mu={mu}, theta={theta}"
        )));
    }
    let y = y as u64;
    Ok(negbin_term(y, ln_gamma(y as f64 + 1.0), mu.ln(), theta).0)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NegBinTerm {
    pub d_eta: f64,
    pub d_theta: f64,
}

/// Log-pmf at `log(mu) = eta`, with `ln_fact_y = ln(y!)` supplied by the caller.
#[inline]
pub(crate) fn negbin_term(y: u64, ln_fact_y: f64, eta: f64, theta: f64) -> (f64, NegBinTerm) {
    let yf = y as f64;
    let ln_theta = theta.ln();
    // log(theta + mu)
    let ln_total = if eta < ln_theta {
        ln_theta + (eta - ln_theta).exp().ln_1p()
    } else {
        eta + (ln_theta - eta).exp().ln_1p()
    };
    let (rise, d_rise) = ln_rising_factorial(theta, y);
    let lp = rise - ln_fact_y + theta * (ln_theta - ln_total) + yf * (eta - ln_total);
    // mu / (theta + mu)
    let share = sigmoid(eta - ln_theta);
    let inv_total = (-ln_total).exp();
    let d_eta = yf - (yf + theta) * share;
    let d_theta = d_rise + (ln_theta - ln_total) + share - yf * inv_total;
    (lp, NegBinTerm { d_eta, d_theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_category_example() {
        let p = ordered_logistic_probs(0.0, &[-1.0, 1.0]).unwrap();
        assert!((p[0] - 0.268_941_421_369_995).abs() < 1e-12);
        assert!((p[1] - 0.462_117_157_260_010).abs() < 1e-12);
        assert!((p[2] - 0.268_941_421_369_995).abs() < 1e-12);
        for (c, pc) in p.iter().enumerate() {
            let lp = ordered_logistic_logpmf(c, 0.0, &[-1.0, 1.0]).unwrap();
            assert!((lp.exp() - pc).abs() < 1e-14);
        }
    }

    #[test]
    fn top_category_limit() {
        let lp = ordered_logistic_logpmf(2, 20.0, &[-1.0, 1.0]).unwrap();
        assert!(lp.exp() > 1.0 - 1e-8);
    }

    #[test]
    fn unordered_cutpoints_rejected() {
        assert!(ordered_logistic_logpmf(0, 0.0, &[1.0, -1.0]).is_err());
        assert!(ordered_logistic_logpmf(0, 0.0, &[1.0, 1.0]).is_err());
        assert!(ordered_logistic_logpmf(3, 0.0, &[-1.0, 1.0]).is_err());
    }

    #[test]
    fn geometric_case() {
        assert!((negbin_logpmf(0.0, 1.0, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn poisson_limit() {
        use statrs::distribution::{Discrete, Poisson};
        let pois = Poisson::new(3.0).unwrap();
        for y in 0..=10u64 {
            let nb = negbin_logpmf(y as f64, 3.0, 1e6).unwrap().exp();
            assert!((nb - pois.pmf(y)).abs() < 1e-5);
        }
    }

    #[test]
    fn negbin_rejects_bad_input() {
        assert!(negbin_logpmf(1.5, 2.0, 2.0).is_err());
        assert!(negbin_logpmf(-1.0, 2.0, 2.0).is_err());
        assert!(negbin_logpmf(1.0, 0.0, 2.0).is_err());
        assert!(negbin_logpmf(1.0, 2.0, -2.0).is_err());
    }

    #[test]
    fn term_derivatives_match_differences() {
        let h = 1e-6;
        for (y, eta, theta) in [(0u64, 0.3, 2.0), (7, 2.1, 0.7), (120, 4.0, 15.0)] {
            let lf = ln_gamma(y as f64 + 1.0);
            let (_, d) = negbin_term(y, lf, eta, theta);
            let fd_eta = (negbin_term(y, lf, eta + h, theta).0
                - negbin_term(y, lf, eta - h, theta).0)
                / (2.0 * h);
            let fd_theta = (negbin_term(y, lf, eta, theta + h).0
                - negbin_term(y, lf, eta, theta - h).0)
                / (2.0 * h);
            assert!((d.d_eta - fd_eta).abs() < 1e-6);
            assert!((d.d_theta - fd_theta).abs() < 1e-6);
        }
        let cuts = [-1.2, 0.1, 0.4, 2.0];
        for c in 0..5 {
            let (_, d) = ordinal_term(c, 0.35, &cuts);
            let fd = (ordinal_term(c, 0.35 + h, &cuts).0 - ordinal_term(c, 0.35 - h, &cuts).0)
                / (2.0 * h);
            assert!((d.d_eta - fd).abs() < 1e-7, "c={c}");
        }
    }
}
