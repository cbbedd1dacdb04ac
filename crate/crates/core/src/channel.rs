//! Channel law, Gaussian posteriors and the estimate-power transition kernel.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::linalg::{self, HERMITIAN_TOL};
use crate::special::ln_bessel_i_reduced;
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Generative law of the link: `h ~ CN(0, pathloss * R)`.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    covariance: CMatrix,
    noise_var: f64,
    pathloss: f64,
    sqrt_cov: CMatrix,
    uncorrelated: bool,
}

impl ChannelModel {
    pub fn new(covariance: CMatrix, noise_var: f64, pathloss: f64) -> Result<Self> {
        let m = covariance.nrows();
        if m == 0 {
            return Err(Error::invalid("antenna count must be at least 1"));
        }
        linalg::ensure_hermitian(&covariance, HERMITIAN_TOL)?;
        let min_eig = linalg::min_eigenvalue(&covariance);
        if min_eig <= 0.0 {
            return Err(Error::Singular(format!(
                "channel covariance must be positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        if !(pathloss >= 0.0) || !pathloss.is_finite() {
            return Err(Error::invalid(format!("path loss gain must be non-negative, got {pathloss}")));
        }
        let uncorrelated = linalg::scaled_identity(&covariance, HERMITIAN_TOL).is_some();
        let sqrt_cov = if pathloss == 0.0 {
            CMatrix::zeros(m, m)
        } else {
            linalg::sqrt_factor(&(&covariance * Complex64::new(pathloss, 0.0)))
        };
        Ok(Self {
            covariance,
            noise_var,
            pathloss,
            sqrt_cov,
            uncorrelated,
        })
    }

    /// `R = I_m`, unit path loss.
    pub fn uncorrelated(m: usize, noise_var: f64) -> Result<Self> {
        Self::new(CMatrix::identity(m, m), noise_var, 1.0)
    }

    /// Exponential correlation `[R]_ij = xi^|i-j|`, unit path loss.
    pub fn exponential(m: usize, xi: f64, noise_var: f64) -> Result<Self> {
        Self::new(make_exponential_covariance(m, xi)?, noise_var, 1.0)
    }

    pub fn with_pathloss(self, pathloss: f64) -> Result<Self> {
        Self::new(self.covariance, self.noise_var, pathloss)
    }

    pub fn antennas(&self) -> usize {
        self.covariance.nrows()
    }

    /// The normalized covariance `R`.
    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    /// `pathloss * R`, the covariance of the channel actually drawn.
    pub fn effective_covariance(&self) -> CMatrix {
        &self.covariance * Complex64::new(self.pathloss, 0.0)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn pathloss(&self) -> f64 {
        self.pathloss
    }

    /// True when `R` is a scaled identity.
    pub fn is_uncorrelated(&self) -> bool {
        self.uncorrelated
    }

    /// One channel draw.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let g = crate::rng::complex_normal_vector(rng, self.antennas(), 1.0);
        &self.sqrt_cov * g
    }
}

/// See [`ChannelModel::sample`].
pub fn sample_channel<R: rand::Rng + ?Sized>(model: &ChannelModel, rng: &mut R) -> CVector {
    model.sample(rng)
}

/// Frame layout: `T = m N` symbols split into `N` slots of `m` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub symbols: usize,
    pub slots: usize,
    pub antennas: usize,
}

impl FrameConfig {
    pub fn new(symbols: usize, antennas: usize) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::invalid("antenna count must be at least 1"));
        }
        if symbols == 0 || symbols % antennas != 0 {
            return Err(Error::invalid(format!(
                "symbol count T={symbols} must be a positive multiple of m={antennas}"
            )));
        }
        Ok(Self {
            symbols,
            slots: symbols / antennas,
            antennas,
        })
    }
}

/// Random draws for one frame: the channel, then the noise of every slot
/// that could be spent on estimation.
///
/// Drawing everything up front lets competing schemes share the same
/// realization.
#[derive(Debug, Clone)]
pub struct FrameDraw {
    pub h: CVector,
    /// `noise[i]` corrupts the `m` symbols of estimation slot `i + 1`.
    pub noise: Vec<CVector>,
}

impl FrameDraw {
    pub fn sample<R: rand::Rng + ?Sized>(model: &ChannelModel, slots: usize, rng: &mut R) -> Self {
        let h = model.sample(rng);
        let m = model.antennas();
        let noise = (0..slots.saturating_sub(1))
            .map(|_| crate::rng::complex_normal_vector(rng, m, model.noise_var()))
            .collect();
        Self { h, noise }
    }

    /// Received symbols of estimation slot `slot` (1-based) under the
    /// orthogonal preamble: `h / sqrt(m) + z`.
    pub fn slot_observation(&self, slot: usize) -> CVector {
        let m = self.h.len() as f64;
        &self.h * Complex64::new(1.0 / m.sqrt(), 0.0) + &self.noise[slot - 1]
    }
}

/// `[R]_ij = xi^|i-j|`.
pub fn make_exponential_covariance(m: usize, xi: f64) -> Result<CMatrix> {
    if m == 0 {
        return Err(Error::invalid("antenna count must be at least 1"));
    }
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::invalid(format!("correlation parameter must lie in [0, 1), got {xi}")));
    }
    Ok(CMatrix::from_fn(m, m, |i, j| {
        Complex64::new(xi.powi(i.abs_diff(j) as i32), 0.0)
    }))
}

/// Complex Gaussian law of the channel given an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: CVector,
    pub covariance: CMatrix,
}

/// Posterior of `h_q` given an unbiased estimate `h_q + e_q` with independent
/// Gaussian channel (`R_q`) and error (`Re_q`) covariances.
///
/// Mean `(Re_q R_q^-1 + I)^-1 h_hat`, covariance `(R_q^-1 + Re_q^-1)^-1`.
pub fn conditional_channel_stats(
    estimate: &CVector,
    r_q: &CMatrix,
    re_q: &CMatrix,
) -> Result<GaussianPosterior> {
    let q = estimate.len();
    for mat in [r_q, re_q] {
        if mat.nrows() != q || mat.ncols() != q {
            return Err(Error::Dimension {
                expected: q,
                got: mat.nrows(),
            });
        }
    }
    let r_inv = linalg::inverse_hpd(r_q)?;
    let re_inv = linalg::inverse_hpd(re_q)?;
    let shrink = linalg::inverse(&(re_q * &r_inv + linalg::identity(q)))?;
    let mean = shrink * estimate;
    let covariance = linalg::hermitian_part(&linalg::inverse_hpd(&(r_inv + re_inv))?);
    Ok(GaussianPosterior { mean, covariance })
}

/// `Sigma + mean mean^H`.
pub fn conditional_correlation(posterior: &GaussianPosterior) -> CMatrix {
    &posterior.covariance + linalg::outer(&posterior.mean)
}

/// Moments of `h_hat_{k+1} | h_hat_k ~ CN(scale * h_hat_k, var * I)` for LS
/// estimates on an uncorrelated channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub mean_scale: f64,
    pub var: f64,
}

/// Transition moments after `k` slots of estimation.
///
/// `k = 0` gives the marginal law of the first estimate (`scale = 0`,
/// `var = 1 + m sigma^2`).
pub fn estimate_transition_stats(k: usize, m: usize, noise_var: f64) -> TransitionStats {
    let k = k as f64;
    let ms = m as f64 * noise_var;
    TransitionStats {
        mean_scale: k * (k + 1.0 + ms) / ((k + 1.0) * (k + ms)),
        var: ms * (k + 1.0 + ms) / ((k + 1.0).powi(2) * (k + ms)),
    }
}

/// Law of `V_{k+1} = ||h_hat_{k+1}||^2` given `V_k = v`: `(var / 2) * X` with
/// `X` noncentral chi-square on `2m` degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct TransitionKernel {
    m: usize,
    stats: TransitionStats,
    ln_var: f64,
    // theta = theta_per_v * v
    theta_per_v: f64,
}

impl TransitionKernel {
    pub fn new(k: usize, m: usize, noise_var: f64) -> Self {
        let stats = estimate_transition_stats(k, m, noise_var);
        let theta_per_v = 2.0 * stats.mean_scale * stats.mean_scale / stats.var;
        Self {
            m,
            stats,
            ln_var: stats.var.ln(),
            theta_per_v,
        }
    }

    pub fn stats(&self) -> TransitionStats {
        self.stats
    }

    /// Noncentrality `theta_k(v)`.
    pub fn noncentrality(&self, v: f64) -> f64 {
        self.theta_per_v * v
    }

    /// `E[V_{k+1} | V_k = v] = var (m + theta / 2)`.
    pub fn mean(&self, v: f64) -> f64 {
        self.stats.var * (self.m as f64 + 0.5 * self.noncentrality(v))
    }

    /// `Var[V_{k+1} | V_k = v] = var^2 (m + theta)`.
    pub fn variance(&self, v: f64) -> f64 {
        self.stats.var * self.stats.var * (self.m as f64 + self.noncentrality(v))
    }

    /// Density of the next estimate power, conditioned on `v`.
    pub fn given(&self, v: f64) -> ConditionedKernel {
        let theta = self.noncentrality(v);
        ConditionedKernel {
            nu: (self.m - 1) as u32,
            inv_var: 1.0 / self.stats.var,
            offset: -self.ln_var - 0.5 * theta,
            bessel_coef: 2.0 * theta / self.stats.var,
        }
    }

    pub fn ln_pdf(&self, v_next: f64, v: f64) -> f64 {
        self.given(v).ln_pdf(v_next)
    }

    pub fn pdf(&self, v_next: f64, v: f64) -> f64 {
        self.given(v).pdf(v_next)
    }
}

/// [`TransitionKernel`] with the conditioning value fixed.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedKernel {
    nu: u32,
    inv_var: f64,
    offset: f64,
    bessel_coef: f64,
}

impl ConditionedKernel {
    pub fn ln_pdf(&self, u: f64) -> f64 {
        if u < 0.0 {
            return f64::NEG_INFINITY;
        }
        let scaled = u * self.inv_var;
        let power = if self.nu == 0 {
            0.0
        } else if u == 0.0 {
            return f64::NEG_INFINITY;
        } else {
            self.nu as f64 * scaled.ln()
        };
        let x = (self.bessel_coef * u).sqrt();
        self.offset - scaled + power + ln_bessel_i_reduced(self.nu, x)
    }

    pub fn pdf(&self, u: f64) -> f64 {
        self.ln_pdf(u).exp()
    }
}

/// Density of `V_{k+1}` at `v_next` given `V_k = v_k`, uncorrelated LS model.
pub fn estimate_power_pdf(v_next: f64, v_k: f64, k: usize, m: usize, noise_var: f64) -> Result<f64> {
    if v_next < 0.0 || v_k < 0.0 {
        return Err(Error::invalid("estimate powers must be non-negative"));
    }
    Ok(TransitionKernel::new(k, m, noise_var).pdf(v_next, v_k))
}

/// `E[V_{k+1} | V_k = v_k]`.
pub fn estimate_power_mean(v_k: f64, k: usize, m: usize, noise_var: f64) -> Result<f64> {
    if v_k < 0.0 {
        return Err(Error::invalid("estimate power must be non-negative"));
    }
    Ok(TransitionKernel::new(k, m, noise_var).mean(v_k))
}

/// Marginal law of `V_k` for `k >= 1`: Gamma with shape `m` and scale
/// `(k + m sigma^2) / k`.
pub fn estimate_power_marginal(k: usize, m: usize, noise_var: f64) -> Result<Gamma> {
    if k == 0 {
        return Err(Error::invalid("V_0 is identically zero"));
    }
    let scale = (k as f64 + m as f64 * noise_var) / k as f64;
    Gamma::new(m as f64, 1.0 / scale).map_err(|e| Error::invalid(e.to_string()))
}

/// Quantile of the marginal of `V_k` (bisection on the Gamma CDF).
pub fn estimate_power_quantile(k: usize, m: usize, noise_var: f64, p: f64) -> Result<f64> {
    let dist = estimate_power_marginal(k, m, noise_var)?;
    Ok(dist.inverse_cdf(p))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn exponential_covariance_entries() {
        let r = make_exponential_covariance(3, 0.0).unwrap();
        assert_eq!(r, CMatrix::identity(3, 3));
        let r = make_exponential_covariance(2, 0.8).unwrap();
        assert_eq!(r, CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.8), c(0.8), c(1.0)]));
        let r = make_exponential_covariance(3, 0.5).unwrap();
        assert!(linalg::eigenvalues(&r).iter().all(|&l| l > 0.0));
        assert!(make_exponential_covariance(3, 1.0).is_err());
        assert!(make_exponential_covariance(3, -0.1).is_err());
    }

    #[test]
    fn zero_pathloss_gives_zero_channel() {
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap().with_pathloss(0.0).unwrap();
        let mut rng = substream(3, 0);
        for _ in 0..10 {
            assert!(model.sample(&mut rng).norm() == 0.0);
        }
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(ChannelModel::uncorrelated(3, 0.0).is_err());
        let not_pd = CMatrix::from_element(2, 2, c(1.0));
        assert!(ChannelModel::new(not_pd, 1.0, 1.0).is_err());
        assert!(FrameConfig::new(125, 3).is_err());
        let cfg = FrameConfig::new(126, 3).unwrap();
        assert_eq!(cfg.slots, 42);
    }

    #[test]
    fn posterior_for_identity_prior() {
        let h = CVector::from_vec(vec![c(2.0), c(0.0)]);
        let s2 = 1.0;
        let post = conditional_channel_stats(&h, &CMatrix::identity(2, 2), &(CMatrix::identity(2, 2) * c(s2))).unwrap();
        assert!((post.mean[0] - c(1.0)).norm() < 1e-14);
        assert!((post.covariance.clone() - CMatrix::identity(2, 2) * c(0.5)).norm() < 1e-14);
        let corr = conditional_correlation(&post);
        assert!((corr[(0, 0)].re - 1.5).abs() < 1e-14);
        assert!((corr[(1, 1)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn posterior_with_vanishing_error() {
        let h = CVector::from_vec(vec![c(0.3), Complex64::new(-1.0, 0.2)]);
        let eps = CMatrix::identity(2, 2) * c(1e-12);
        let post = conditional_channel_stats(&h, &make_exponential_covariance(2, 0.5).unwrap(), &eps).unwrap();
        assert!((post.mean - &h).norm() < 1e-10);
        assert!(post.covariance.norm() < 1e-10);
    }

    #[test]
    fn posterior_rejects_singular_or_mismatched() {
        let h = CVector::from_vec(vec![c(1.0), c(1.0)]);
        let sing = CMatrix::from_element(2, 2, c(1.0));
        assert!(conditional_channel_stats(&h, &sing, &CMatrix::identity(2, 2)).is_err());
        assert!(conditional_channel_stats(&h, &CMatrix::identity(3, 3), &CMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn correlation_of_degenerate_posteriors() {
        let sigma = make_exponential_covariance(2, 0.3).unwrap();
        let zero_mean = GaussianPosterior { mean: CVector::zeros(2), covariance: sigma.clone() };
        assert_eq!(conditional_correlation(&zero_mean), sigma);
        let e1 = GaussianPosterior { mean: CVector::from_vec(vec![c(1.0), c(0.0)]), covariance: CMatrix::zeros(2, 2) };
        let corr = conditional_correlation(&e1);
        assert_eq!(corr[(0, 0)], c(1.0));
        assert_eq!(corr[(1, 1)], c(0.0));
    }

    #[test]
    fn transition_stats_values() {
        let s = estimate_transition_stats(1, 3, 1.0);
        assert!((s.mean_scale - 0.625).abs() < 1e-15);
        assert!((s.var - 0.9375).abs() < 1e-15);
        let s = estimate_transition_stats(5, 3, 1e-12);
        assert!((s.mean_scale - 1.0).abs() < 1e-9 && s.var < 1e-9);
        let s = estimate_transition_stats(1_000_000, 3, 1.0);
        assert!((s.mean_scale - 1.0).abs() < 1e-5 && s.var < 1e-5);
        let s0 = estimate_transition_stats(0, 3, 1.0);
        assert_eq!(s0.mean_scale, 0.0);
        assert!((s0.var - 4.0).abs() < 1e-15);
    }

    #[test]
    fn central_mean_and_total_expectation() {
        // v_k = 0: theta = 0, mean = var * m
        assert!((estimate_power_mean(0.0, 1, 3, 1.0).unwrap() - 2.8125).abs() < 1e-14);
        // E[V_2] = E_{V_1}[E[V_2 | V_1]] with E[V_1] = m (1 + m sigma^2); mean is affine in v.
        let k = TransitionKernel::new(1, 3, 1.0);
        let ev1 = 3.0 * 4.0;
        assert!((k.mean(ev1) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn pdf_matches_reference_noncentral_chi_square() {
        // (k=3, m=3, sigma^2=1, v_k=2): reference values from an independent
        // noncentral chi-square implementation, rescaled by 2 / var.
        let cases = [(0.5, 0.04535025496744719), (1.5, 0.41679501279766157), (3.0, 0.23912193735188764)];
        for (u, expected) in cases {
            let got = estimate_power_pdf(u, 2.0, 3, 3, 1.0).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected.max(1.0), "u={u}: {got} vs {expected}");
        }
        assert!(estimate_power_pdf(-1.0, 2.0, 3, 3, 1.0).is_err());
    }

    #[test]
    fn pdf_at_zero_noncentrality_is_gamma() {
        let k = TransitionKernel::new(0, 3, 1.0);
        let gamma = estimate_power_marginal(1, 3, 1.0).unwrap();
        use statrs::distribution::Continuous;
        for &u in &[0.1, 1.0, 7.5, 30.0] {
            assert!((k.pdf(u, 0.0) - gamma.pdf(u)).abs() < 1e-14);
        }
        assert_eq!(k.pdf(0.0, 0.0), 0.0);
        let k1 = TransitionKernel::new(0, 1, 1.0);
        assert!((k1.pdf(0.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_covariance_identity() {
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap();
        let mut rng = substream(11, 0);
        let n = 200_000;
        let mut acc = CMatrix::zeros(3, 3);
        for _ in 0..n {
            let h = model.sample(&mut rng);
            acc += linalg::outer(&h);
        }
        acc /= c(n as f64);
        assert!((acc - CMatrix::identity(3, 3)).norm() < 0.02);
    }
}
