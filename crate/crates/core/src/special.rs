//! Modified Bessel functions of the first kind, evaluated in the log domain.
//!
//! Below `SERIES_LIMIT` the ascending power series is summed directly (all
//! terms positive, so no cancellation). Above it the Hankel asymptotic
//! expansion is used, truncated at its smallest term; at `u = 20` that term
//! is ~1e-17 so both branches agree to double precision at the switchover.

use std::f64::consts::PI;

pub const SERIES_LIMIT: f64 = 20.0;

const MAX_SERIES_TERMS: usize = 500;
const MAX_ASYMPTOTIC_TERMS: usize = 60;

/// `sum_k (u^2/4)^k / (k! (k + nu)!)` for `nu` in {0, 1}.
fn ascending_sum(u: f64, nu: u32) -> f64 {
    let q = 0.25 * u * u;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..MAX_SERIES_TERMS {
        let k = k as f64;
        term *= q / (k * (k + nu as f64));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `sum_k (-1)^k a_k(nu) / u^k`, so that `I_nu(u) ~ e^u / sqrt(2 pi u) * sum`.
fn hankel_sum(u: f64, nu: u32) -> f64 {
    let mu = 4.0 * (nu * nu) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..MAX_ASYMPTOTIC_TERMS {
        let odd = (2 * k - 1) as f64;
        let next = term * -(mu - odd * odd) / (k as f64 * 8.0 * u);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `ln I0(u)`; `I0` is even so the sign of `u` is ignored.
pub fn log_i0(u: f64) -> f64 {
    let u = u.abs();
    if u < SERIES_LIMIT {
        ascending_sum(u, 0).ln()
    } else {
        u - 0.5 * (2.0 * PI * u).ln() + hankel_sum(u, 0).ln()
    }
}

/// Leading-order large-argument form `u - ln(2 pi u)/2`.
pub fn log_i0_leading(u: f64) -> f64 {
    u - 0.5 * (2.0 * PI * u).ln()
}

/// `I1(u) / (u I0(u))` for `u >= 0`; tends to 1/2 as `u -> 0`.
///
/// This is the factor that appears in the derivative of `ln I0(2 sqrt(s y) / sigma^2)`
/// with respect to `s`, and it stays finite when `s = 0`.
pub fn i1_over_u_i0(u: f64) -> f64 {
    let u = u.abs();
    if u < SERIES_LIMIT {
        0.5 * ascending_sum(u, 1) / ascending_sum(u, 0)
    } else {
        hankel_sum(u, 1) / hankel_sum(u, 0) / u
    }
}

/// `I1(u) / I0(u)`.
pub fn bessel_ratio(u: f64) -> f64 {
    u * i1_over_u_i0(u)
}
