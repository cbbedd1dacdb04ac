//! Conditional correlation matrices, eigenmode beamformers and the
//! closed-form harvested-energy expressions used by the stopping rule.

use crate::channel::{conditional_channel_stats, ChannelModel, FrameConfig, GaussianPosterior};
use crate::estimation::{Estimate, EstimatorKind};
use crate::linalg::{self, real_scalar};
use crate::{CMatrix, CVector, Error, Result};

/// Unit-norm transmit beamforming vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    w: CVector,
}

impl Beamformer {
    /// Normalizes `w`; fails on the zero vector.
    pub fn new(w: CVector) -> Result<Self> {
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("beamformer direction must be a nonzero finite vector"));
        }
        Ok(Self {
            w: w / real_scalar(norm),
        })
    }

    pub fn vector(&self) -> &CVector {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Lifts a beamformer on the antennas in `indices` to all `m` antennas,
    /// leaving the others silent.
    pub fn embed(&self, indices: &[usize], m: usize) -> Result<CVector> {
        if indices.len() != self.w.len() {
            return Err(Error::Dimension {
                expected: self.w.len(),
                got: indices.len(),
            });
        }
        let mut full = CVector::zeros(m);
        for (&i, &z) in indices.iter().zip(self.w.iter()) {
            if i >= m {
                return Err(Error::invalid(format!("antenna index {i} out of range for m={m}")));
            }
            full[i] = z;
        }
        Ok(full)
    }

    /// Per-symbol energy `|w^H h|^2` delivered over a realized channel.
    pub fn gain(&self, h: &CVector) -> f64 {
        self.w.dotc(h).norm_sqr()
    }
}

fn check_indices(est: &Estimate, indices: &[usize]) -> Result<()> {
    let m = est.antennas();
    if indices.is_empty() || indices.len() > m {
        return Err(Error::invalid(format!(
            "feedback index set of size {} must lie in [1, {m}]",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
        return Err(Error::invalid(format!("antenna index {bad} out of range for m={m}")));
    }
    Ok(())
}

/// Restricted channel covariance, estimate and error covariance on `indices`.
fn restrict(est: &Estimate, model: &ChannelModel, indices: &[usize]) -> Result<(CVector, CMatrix, CMatrix)> {
    check_indices(est, indices)?;
    if model.antennas() != est.antennas() {
        return Err(Error::Dimension {
            expected: model.antennas(),
            got: est.antennas(),
        });
    }
    let r = model.effective_covariance();
    Ok((
        linalg::subvector(&est.h_hat, indices),
        linalg::principal_submatrix(&r, indices),
        linalg::principal_submatrix(&est.error_cov, indices),
    ))
}

/// Posterior of `h_q` obtained by treating the estimate as `h_q + e_q` with
/// `e_q ~ CN(0, Re_q)` independent of the channel.
pub fn generic_posterior(est: &Estimate, model: &ChannelModel, indices: &[usize]) -> Result<GaussianPosterior> {
    let (h_q, r_q, re_q) = restrict(est, model, indices)?;
    conditional_channel_stats(&h_q, &r_q, &re_q)
}

/// Exact posterior of `h_q` given the estimate.
///
/// For LS this is [`generic_posterior`]. An LMMSE estimate is already the
/// posterior mean, so the channel is `CN(h_hat_q, Re_q)` around it.
pub fn exact_posterior(est: &Estimate, model: &ChannelModel, indices: &[usize]) -> Result<GaussianPosterior> {
    match est.kind {
        EstimatorKind::Ls => generic_posterior(est, model, indices),
        EstimatorKind::Lmmse => {
            let (h_q, _, re_q) = restrict(est, model, indices)?;
            Ok(GaussianPosterior {
                mean: h_q,
                covariance: re_q,
            })
        }
    }
}

/// `E[h_q h_q^H | h_hat_q]` in closed form, dispatched on estimator kind and
/// whether the channel is spatially white.
///
/// Every branch equals `conditional_correlation(generic_posterior(..))`.
pub fn conditional_correlation_matrix(est: &Estimate, model: &ChannelModel, indices: &[usize]) -> Result<CMatrix> {
    let (h_q, r_q, re_q) = restrict(est, model, indices)?;
    let q = h_q.len();
    let white_err = linalg::scaled_identity(&re_q, 1e-10);
    match (est.kind, model.is_uncorrelated(), white_err) {
        (EstimatorKind::Ls, true, Some(s)) => {
            // normalize the channel power to one, then rescale
            let rho = r_q[(0, 0)].re;
            let se2 = s / rho;
            let a = se2 / (1.0 + se2);
            let b = 1.0 / ((1.0 + se2) * (1.0 + se2));
            Ok((linalg::identity(q) * real_scalar(a) + linalg::outer(&h_q) * real_scalar(b / rho))
                * real_scalar(rho))
        }
        (EstimatorKind::Lmmse, true, Some(s)) => {
            let rho = r_q[(0, 0)].re;
            let s = s / rho;
            if s >= 1.0 {
                return Err(Error::invalid("LMMSE error variance must be below the channel power"));
            }
            let m = est.antennas() as f64;
            let se2 = m * s / (1.0 - s);
            let a = se2 / (m + 2.0 * se2);
            let b = ((m + se2) / (m + 2.0 * se2)).powi(2);
            Ok((linalg::identity(q) * real_scalar(a) + linalg::outer(&h_q) * real_scalar(b / rho))
                * real_scalar(rho))
        }
        (EstimatorKind::Ls, _, Some(s)) => {
            let r_inv = linalg::inverse_hpd(&r_q)?;
            let cov = linalg::inverse_hpd(&(&r_inv + linalg::identity(q) * real_scalar(1.0 / s)))?;
            let shrink = linalg::inverse(&(&r_inv * real_scalar(s) + linalg::identity(q)))?;
            let mean = shrink * &h_q;
            Ok(linalg::hermitian_part(&(cov + linalg::outer(&mean))))
        }
        _ => {
            // R_e,q general: factors (Re R^-1 + I)^-1 on the left and their
            // adjoint on the right
            let r_inv = linalg::inverse_hpd(&r_q)?;
            let re_inv = linalg::inverse_hpd(&re_q)?;
            let cov = linalg::inverse_hpd(&(&r_inv + re_inv))?;
            let b = linalg::inverse(&(&re_q * &r_inv + linalg::identity(q)))?;
            let bh = &b * &h_q;
            Ok(linalg::hermitian_part(&(cov + &bh * bh.adjoint())))
        }
    }
}

/// Top eigenvector of a conditional correlation matrix.
pub fn optimal_beamformer(r_cond: &CMatrix) -> Result<Beamformer> {
    linalg::ensure_hermitian(r_cond, 1e-9)?;
    if r_cond.nrows() == 0 {
        return Err(Error::invalid("empty correlation matrix"));
    }
    let (_, v) = linalg::top_eigenpair(r_cond);
    Beamformer::new(v)
}

/// `h_hat_q / ||h_hat_q||`.
pub fn matched_beamformer(h_hat_q: &CVector) -> Result<Beamformer> {
    Beamformer::new(h_hat_q.clone())
}

/// Expected per-symbol energy `w^H R_cond w`.
pub fn per_symbol_energy(w: &Beamformer, r_cond: &CMatrix) -> Result<f64> {
    if r_cond.nrows() != w.len() || r_cond.ncols() != w.len() {
        return Err(Error::Dimension {
            expected: w.len(),
            got: r_cond.nrows(),
        });
    }
    Ok(linalg::quadratic_form(w.vector(), r_cond).max(0.0))
}

/// Perfect-CSI per-symbol energy `||h||^2`.
pub fn mrt_energy(h: &CVector) -> f64 {
    h.norm_squared()
}

/// Coefficients of the stop and continue-once energies at slot `k`:
/// `E_stop(v) = A (B + C v)` and `E_next(v) = D (k^2 (k+1+m s) v + F) / G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopEnergyCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub f: f64,
    pub g: f64,
}

impl StopEnergyCoeffs {
    pub fn new(k: usize, cfg: &FrameConfig, noise_var: f64) -> Result<Self> {
        if k >= cfg.slots {
            return Err(Error::invalid(format!("slot {k} outside 0..{}", cfg.slots)));
        }
        if !(noise_var > 0.0) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        let m = cfg.antennas as f64;
        let n = cfg.slots as f64;
        let kf = k as f64;
        let ms = m * noise_var;
        let a = m * (n - kf);
        let b = ms / (kf + ms);
        let c = kf * kf / ((kf + ms) * (kf + ms));
        let d = m * (n - kf - 1.0);
        let f = ms * (kf + ms) * (kf + ms + m);
        let g = (kf + 1.0 + ms) * (kf + ms) * (kf + ms);
        Ok(Self { a, b, c, d, f, g })
    }

    /// `B + C v`, the per-symbol energy after stopping with estimate power `v`.
    pub fn efficiency(&self, v: f64) -> f64 {
        self.b + self.c * v
    }
}

fn check_power(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!("estimate power must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// Expected energy when stopping at slot `k` with estimate power `v`.
/// Slot 0 is isotropic transmission without an estimate.
pub fn expected_stop_energy(v: f64, k: usize, cfg: &FrameConfig, noise_var: f64) -> Result<f64> {
    check_power(v)?;
    let c = StopEnergyCoeffs::new(k, cfg, noise_var)?;
    Ok(c.a * c.efficiency(v))
}

/// Expected energy when estimating for one more slot and then stopping.
pub fn expected_next_stop_energy(v: f64, k: usize, cfg: &FrameConfig, noise_var: f64) -> Result<f64> {
    check_power(v)?;
    if k + 1 >= cfg.slots {
        return Err(Error::invalid(format!(
            "slot {k} has no successor in a frame of {} slots",
            cfg.slots
        )));
    }
    let c = StopEnergyCoeffs::new(k, cfg, noise_var)?;
    let kf = k as f64;
    let ms = cfg.antennas as f64 * noise_var;
    Ok(c.d * (kf * kf * (kf + 1.0 + ms) * v + c.f) / c.g)
}

/// Gain of estimating one more slot before stopping over stopping at slot
/// `r` and idling for one slot.
pub fn policy_gap(r: usize, m: usize, noise_var: f64) -> Result<f64> {
    if r == 0 || m == 0 {
        return Err(Error::invalid("policy gap needs r >= 1 and m >= 1"));
    }
    let (r, m) = (r as f64, m as f64);
    let ms = m * noise_var;
    Ok(m * m * (m - 1.0) * noise_var / ((r + ms) * (r + 1.0 + ms)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Complex64;
    use crate::channel::{conditional_correlation, TransitionKernel};
    use crate::estimation::partial_feedback;
    use crate::numerics::GaussLegendre;
    use crate::rng::{complex_normal_vector, substream};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit(q: usize, i: usize) -> CVector {
        CVector::from_fn(q, |j, _| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    fn ls_estimate(m: usize, k: usize, sigma2: f64, h_hat: CVector) -> Estimate {
        Estimate {
            h_hat,
            slots: k,
            kind: EstimatorKind::Ls,
            error_cov: linalg::identity(m) * real_scalar(m as f64 * sigma2 / k as f64),
        }
    }

    fn random_pd(rng: &mut impl Rng, q: usize) -> CMatrix {
        let a = CMatrix::from_fn(q, q, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        linalg::hermitian_part(&(&a * a.adjoint() + linalg::identity(q) * real_scalar(0.3)))
    }

    #[test]
    fn ls_white_zero_estimate_is_isotropic() {
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap();
        let est = ls_estimate(3, 3, 1.0, CVector::zeros(3));
        let r = conditional_correlation_matrix(&est, &model, &[0, 1, 2]).unwrap();
        assert!((r - linalg::identity(3) * c(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn ls_white_hand_example() {
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap();
        let est = ls_estimate(3, 3, 1.0, CVector::from_vec(vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]));
        let r = conditional_correlation_matrix(&est, &model, &[0, 1, 2]).unwrap();
        let diag: Vec<f64> = (0..3).map(|i| r[(i, i)].re).collect();
        assert!((diag[0] - 1.5).abs() < 1e-14 && (diag[1] - 0.5).abs() < 1e-14 && (diag[2] - 0.5).abs() < 1e-14);
        let w = optimal_beamformer(&r).unwrap();
        let gamma = per_symbol_energy(&w, &r).unwrap();
        assert!((gamma - (0.5 + 4.0 / 4.0)).abs() < 1e-12);
        let orth = Beamformer::new(CVector::from_vec(vec![c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)])).unwrap();
        assert!((per_symbol_energy(&orth, &r).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn four_closed_forms_match_generic_route() {
        let mut rng = substream(17, 0);
        for trial in 0..20 {
            let m = 2 + trial % 3;
            let sigma2 = 0.2 + rng.random::<f64>();
            let k = 1 + trial % 4;
            let pathloss = if trial % 2 == 0 { 1.0 } else { 0.3 + rng.random::<f64>() };
            let white = ChannelModel::uncorrelated(m, sigma2).unwrap().with_pathloss(pathloss).unwrap();
            let corr = ChannelModel::exponential(m, 0.6, sigma2).unwrap().with_pathloss(pathloss).unwrap();
            let h_hat = complex_normal_vector(&mut rng, m, 1.5);
            for model in [&white, &corr] {
                let ls = ls_estimate(m, k, sigma2, h_hat.clone());
                let re = if model.is_uncorrelated() {
                    let s = pathloss * m as f64 * sigma2 / (pathloss * k as f64 + m as f64 * sigma2);
                    linalg::identity(m) * real_scalar(s)
                } else {
                    random_pd(&mut rng, m) * real_scalar(0.5)
                };
                let lmmse = Estimate {
                    h_hat: h_hat.clone(),
                    slots: k,
                    kind: EstimatorKind::Lmmse,
                    error_cov: re,
                };
                for est in [&ls, &lmmse] {
                    let q = 1 + trial % m;
                    let idx = partial_feedback(est, q).unwrap().indices;
                    let closed = conditional_correlation_matrix(est, model, &idx).unwrap();
                    let generic = conditional_correlation(&generic_posterior(est, model, &idx).unwrap());
                    assert!(
                        (&closed - &generic).norm() < 1e-10 * generic.norm().max(1.0),
                        "trial {trial} kind {} white {}",
                        est.kind,
                        model.is_uncorrelated()
                    );
                    assert!(linalg::min_eigenvalue(&closed) >= -1e-10);
                }
            }
        }
    }

    #[test]
    fn white_forms_match_matched_beamformer() {
        let mut rng = substream(3, 3);
        let model = ChannelModel::uncorrelated(4, 0.5).unwrap();
        for _ in 0..10 {
            let h_hat = complex_normal_vector(&mut rng, 4, 1.0);
            let est = ls_estimate(4, 2, 0.5, h_hat.clone());
            let r = conditional_correlation_matrix(&est, &model, &[0, 1, 2, 3]).unwrap();
            let w = optimal_beamformer(&r).unwrap();
            let mut mf = matched_beamformer(&h_hat).unwrap().vector().clone();
            linalg::fix_phase(&mut mf);
            assert!((w.vector() - mf).norm() < 1e-10);
        }
    }

    #[test]
    fn lmmse_white_eigenvalue_form() {
        // sigma_e^2 parameterization: gamma = se2/(m+2se2) + ((m+se2)/(m+2se2))^2 ||h||^2
        let (m, sigma2, k) = (3usize, 1.0, 2usize);
        let s = m as f64 * sigma2 / (k as f64 + m as f64 * sigma2);
        let model = ChannelModel::uncorrelated(m, sigma2).unwrap();
        let h_hat = CVector::from_vec(vec![c(1.0, 1.0), c(0.5, 0.0), c(0.0, -2.0)]);
        let est = Estimate {
            h_hat: h_hat.clone(),
            slots: k,
            kind: EstimatorKind::Lmmse,
            error_cov: linalg::identity(m) * real_scalar(s),
        };
        let r = conditional_correlation_matrix(&est, &model, &[0, 1, 2]).unwrap();
        let w = matched_beamformer(&h_hat).unwrap();
        let se2 = m as f64 * s / (1.0 - s);
        let mf = m as f64;
        let expected = se2 / (mf + 2.0 * se2) + ((mf + se2) / (mf + 2.0 * se2)).powi(2) * h_hat.norm_squared();
        assert!((per_symbol_energy(&w, &r).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn optimal_beamformer_basics() {
        let d = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let w = optimal_beamformer(&d).unwrap();
        assert!((w.vector() - unit(2, 0)).norm() < 1e-14);
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(optimal_beamformer(&bad).is_err());
    }

    #[test]
    fn optimal_beamformer_beats_random_probes() {
        let mut rng = substream(8, 8);
        for _ in 0..5 {
            let r = random_pd(&mut rng, 4);
            let w = optimal_beamformer(&r).unwrap();
            let best = per_symbol_energy(&w, &r).unwrap();
            assert!((w.vector().norm() - 1.0).abs() < 1e-12);
            for _ in 0..1000 {
                let u = Beamformer::new(complex_normal_vector(&mut rng, 4, 1.0)).unwrap();
                assert!(per_symbol_energy(&u, &r).unwrap() <= best + 1e-12);
            }
        }
    }

    #[test]
    fn matched_beamformer_examples() {
        let w = matched_beamformer(&CVector::from_vec(vec![c(3.0, 0.0), c(0.0, 4.0)])).unwrap();
        assert!((w.vector() - CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)])).norm() < 1e-15);
        assert!((w.vector().norm() - 1.0).abs() < 1e-14);
        assert!(matched_beamformer(&CVector::zeros(3)).is_err());
    }

    #[test]
    fn mrt_examples() {
        assert_eq!(mrt_energy(&CVector::from_element(3, c(1.0, 0.0))), 3.0);
        assert_eq!(mrt_energy(&CVector::zeros(2)), 0.0);
    }

    #[test]
    fn embed_places_weights() {
        let w = matched_beamformer(&CVector::from_vec(vec![c(0.0, 2.0)])).unwrap();
        let full = w.embed(&[2], 3).unwrap();
        assert_eq!(full, CVector::from_vec(vec![c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)]));
        assert!(w.embed(&[3], 3).is_err());
    }

    #[test]
    fn stop_energy_constants() {
        let cfg = FrameConfig::new(126, 3).unwrap();
        let co = StopEnergyCoeffs::new(3, &cfg, 1.0).unwrap();
        assert_eq!((co.a, co.b, co.c), (117.0, 0.5, 0.25));
        assert!((expected_stop_energy(2.0, 3, &cfg, 1.0).unwrap() - 117.0).abs() < 1e-12);
        assert_eq!(expected_stop_energy(7.0, 0, &cfg, 1.0).unwrap(), 126.0);
        assert_eq!(expected_stop_energy(0.0, 5, &cfg, 1.0).unwrap(), {
            let co = StopEnergyCoeffs::new(5, &cfg, 1.0).unwrap();
            co.a * co.b
        });
        assert!(expected_stop_energy(-1.0, 1, &cfg, 1.0).is_err());
        assert!(expected_stop_energy(1.0, 42, &cfg, 1.0).is_err());
    }

    #[test]
    fn next_stop_energy_matches_quadrature() {
        let cfg = FrameConfig::new(30, 3).unwrap();
        let sigma2 = 0.8;
        let gl = GaussLegendre::new(20);
        for k in 0..cfg.slots - 1 {
            let kernel = TransitionKernel::new(k, 3, sigma2);
            for &v in &[0.0, 0.5, 2.0, 6.0, 15.0] {
                let cond = kernel.given(v);
                let mean = kernel.mean(v);
                let sd = kernel.variance(v).sqrt();
                let hi = mean + 40.0 * sd;
                let quad = gl.composite(
                    |u| cond.pdf(u) * expected_stop_energy(u, k + 1, &cfg, sigma2).unwrap(),
                    0.0,
                    hi,
                    64,
                );
                let closed = expected_next_stop_energy(v, k, &cfg, sigma2).unwrap();
                assert!((quad - closed).abs() <= 1e-6 * closed, "k={k} v={v}: {quad} vs {closed}");
            }
        }
        let co = StopEnergyCoeffs::new(4, &cfg, sigma2).unwrap();
        assert!((expected_next_stop_energy(0.0, 4, &cfg, sigma2).unwrap() - co.d * co.f / co.g).abs() < 1e-12);
        assert!(expected_next_stop_energy(1.0, cfg.slots - 1, &cfg, sigma2).is_err());
    }

    #[test]
    fn next_stop_from_slot_zero_is_marginal_mean() {
        // E[V_1] = m (1 + m sigma^2)
        let cfg = FrameConfig::new(24, 4).unwrap();
        let s2 = 0.5;
        let expected = expected_stop_energy(4.0 * (1.0 + 4.0 * s2), 1, &cfg, s2).unwrap();
        assert!((expected_next_stop_energy(0.0, 0, &cfg, s2).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn policy_gap_values() {
        for r in 1..20 {
            assert_eq!(policy_gap(r, 1, 0.7).unwrap(), 0.0);
        }
        assert!((policy_gap(1, 3, 1.0).unwrap() - 0.9).abs() < 1e-14);
        let mut prev = f64::INFINITY;
        for r in 1..50 {
            let g = policy_gap(r, 4, 0.5).unwrap();
            assert!(g > 0.0 && g < prev);
            prev = g;
        }
        assert!(policy_gap(0, 3, 1.0).is_err());
    }

    #[test]
    fn policy_gap_equals_energy_difference() {
        // one slot of CE then stop, against stopping now, both over one slot
        let (m, s2) = (3usize, 1.0);
        let cfg = FrameConfig::new(3 * 10, m).unwrap();
        for r in 1..8 {
            for &v in &[0.0, 1.0, 4.0] {
                let stop_now = expected_stop_energy(v, r, &cfg, s2).unwrap() / StopEnergyCoeffs::new(r, &cfg, s2).unwrap().a;
                let next = expected_next_stop_energy(v, r, &cfg, s2).unwrap()
                    / StopEnergyCoeffs::new(r + 1, &cfg, s2).unwrap().a;
                let gap = m as f64 * (next - stop_now);
                assert!((gap - policy_gap(r, m, s2).unwrap()).abs() < 1e-10);
            }
        }
    }
}
