//! Special functions evaluated in the log domain.

use statrs::function::gamma::ln_gamma;

/// Argument at which the modified Bessel function switches from the power
/// series to the large-argument expansion.
pub const BESSEL_SWITCH: f64 = 30.0;

/// `ln(n!)`, exact product for small `n`, log-gamma beyond.
pub fn ln_factorial(n: u64) -> f64 {
    if n <= 20 {
        (2..=n).map(|i| i as f64).product::<f64>().ln()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `n!` as a float; exact for `n <= 20`.
pub fn factorial(n: u64) -> f64 {
    if n <= 20 {
        (2..=n).map(|i| i as f64).product()
    } else {
        ln_gamma(n as f64 + 1.0).exp()
    }
}

/// `ln I_nu(x) - nu * ln(x / 2)`, the log of the modified Bessel function of
/// the first kind with its small-argument power removed.
///
/// The reduced form stays finite at `x = 0`, where it equals
/// `-ln Gamma(nu + 1)`.
pub fn ln_bessel_i_reduced(nu: u32, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < BESSEL_SWITCH {
        ln_reduced_series(nu, x)
    } else {
        ln_bessel_i_asymptotic(nu, x) - nu as f64 * (0.5 * x).ln()
    }
}

/// `ln I_nu(x)` for `x > 0`.
pub fn ln_bessel_i(nu: u32, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < BESSEL_SWITCH {
        ln_reduced_series(nu, x) + nu as f64 * (0.5 * x).ln()
    } else {
        ln_bessel_i_asymptotic(nu, x)
    }
}

fn ln_reduced_series(nu: u32, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let nu_f = nu as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut j = 0.0;
    loop {
        j += 1.0;
        term *= q / (j * (nu_f + j));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum.ln() - ln_gamma(nu_f + 1.0)
}

// Hankel expansion, truncated at its smallest term.
fn ln_bessel_i_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu as f64) * (nu as f64);
    let eight_x = 8.0 * x;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 1.0_f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * eight_x);
        if next == 0.0 || next.abs() >= term.abs() && k > 1.0 + (nu as f64) {
            break;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}
