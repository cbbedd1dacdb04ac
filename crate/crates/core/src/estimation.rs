//! LS and LMMSE channel estimation with their preamble designs.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::linalg::{self, real_scalar, HERMITIAN_TOL};
use crate::numerics::CompensatedSum;
use crate::{CMatrix, CVector, Complex64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ls,
    Lmmse,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Ls => f.write_str("ls"),
            EstimatorKind::Lmmse => f.write_str("lmmse"),
        }
    }
}

/// Known training matrix, one row per preamble symbol (`tau = k m` rows).
#[derive(Debug, Clone)]
pub struct Preamble {
    matrix: CMatrix,
    slots: usize,
    per_symbol_power: f64,
}

impl Preamble {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Number of preamble symbols `tau`.
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn antennas(&self) -> usize {
        self.matrix.ncols()
    }

    /// Average per-antenna transmit power per symbol.
    pub fn per_symbol_power(&self) -> f64 {
        self.per_symbol_power
    }

    /// `X^H X`.
    pub fn gram(&self) -> CMatrix {
        self.matrix.adjoint() * &self.matrix
    }

    /// Total transmitted preamble energy `tr(X^H X)`.
    pub fn energy(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Received training block `y = X h + z`.
    pub fn observe(&self, h: &CVector, noise: &CVector) -> Result<CVector> {
        if h.len() != self.antennas() {
            return Err(Error::Dimension {
                expected: self.antennas(),
                got: h.len(),
            });
        }
        if noise.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: noise.len(),
            });
        }
        Ok(&self.matrix * h + noise)
    }
}

/// Channel estimate after `slots` slots of training.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub h_hat: CVector,
    pub slots: usize,
    pub kind: EstimatorKind,
    pub error_cov: CMatrix,
}

impl Estimate {
    /// The estimate before any training: the prior mean, with the prior
    /// covariance as error covariance.
    pub fn prior(model: &ChannelModel, kind: EstimatorKind) -> Self {
        let m = model.antennas();
        Self {
            h_hat: CVector::zeros(m),
            slots: 0,
            kind,
            error_cov: model.effective_covariance(),
        }
    }

    /// Estimate power `||h_hat||^2`.
    pub fn power(&self) -> f64 {
        self.h_hat.norm_squared()
    }

    pub fn antennas(&self) -> usize {
        self.h_hat.len()
    }
}

/// Block-stacked `(1/sqrt(m)) I_m` over `k` slots.
pub fn ls_preamble(m: usize, k: usize) -> Result<Preamble> {
    if m == 0 {
        return Err(Error::invalid("antenna count must be at least 1"));
    }
    if k == 0 {
        return Err(Error::invalid("LS preamble needs at least one slot"));
    }
    let amp = real_scalar(1.0 / (m as f64).sqrt());
    let matrix = CMatrix::from_fn(k * m, m, |row, col| {
        if row % m == col {
            amp
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(Preamble {
        matrix,
        slots: k,
        per_symbol_power: 1.0 / m as f64,
    })
}

/// LS estimate `(X^H X)^-1 X^H y` with error covariance `sigma^2 (X^H X)^-1`.
pub fn ls_estimate(y: &CVector, preamble: &Preamble, noise_var: f64) -> Result<Estimate> {
    if y.len() != preamble.len() {
        return Err(Error::Dimension {
            expected: preamble.len(),
            got: y.len(),
        });
    }
    let gram_inv = linalg::inverse_hpd(&preamble.gram())?;
    let h_hat = &gram_inv * (preamble.matrix.adjoint() * y);
    Ok(Estimate {
        h_hat,
        slots: preamble.slots,
        kind: EstimatorKind::Ls,
        error_cov: gram_inv * real_scalar(noise_var),
    })
}

/// Folds one more slot of the orthogonal LS preamble into `est`.
///
/// `slot_observation` holds the `m` received symbols of the new slot,
/// `y_i = h / sqrt(m) + z_i`.
pub fn ls_recursive_update(est: &Estimate, slot_observation: &CVector, noise_var: f64) -> Result<Estimate> {
    if est.kind != EstimatorKind::Ls {
        return Err(Error::invalid("recursive update is defined for LS estimates only"));
    }
    let m = est.antennas();
    if slot_observation.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: slot_observation.len(),
        });
    }
    let k = est.slots as f64;
    let h_hat = (&est.h_hat * real_scalar(k) + slot_observation * real_scalar((m as f64).sqrt()))
        / real_scalar(k + 1.0);
    let slots = est.slots + 1;
    Ok(Estimate {
        h_hat,
        slots,
        kind: EstimatorKind::Ls,
        error_cov: CMatrix::identity(m, m) * real_scalar(m as f64 * noise_var / slots as f64),
    })
}

/// Water level and per-eigenmode preamble powers `sigma^2 [mu0 - 1/d_i]^+`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    pub water_level: f64,
    pub powers: Vec<f64>,
}

/// Solves `sum_i [mu0 - 1/d_i]^+ = k / sigma^2` by bisection.
pub fn lmmse_water_filling(eigenvalues: &[f64], k: usize, noise_var: f64) -> Result<WaterFilling> {
    if eigenvalues.is_empty() || eigenvalues.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Singular("covariance eigenvalues must be positive".into()));
    }
    if k == 0 {
        return Err(Error::invalid("LMMSE preamble needs at least one slot"));
    }
    let target = k as f64 / noise_var;
    let inv: Vec<f64> = eigenvalues.iter().map(|d| 1.0 / d).collect();
    let trace = |mu: f64| -> f64 {
        inv.iter()
            .map(|&x| (mu - x).max(0.0))
            .collect::<CompensatedSum>()
            .value()
    };
    let mut lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = inv.iter().copied().fold(0.0, f64::max) + k as f64 * eigenvalues.len() as f64 / noise_var;
    let tol = 1e-12 * target.max(1.0);
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..400 {
        mu = 0.5 * (lo + hi);
        let r = trace(mu) - target;
        if r.abs() <= tol {
            break;
        }
        if r < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    let residual = (trace(mu) - target).abs();
    assert!(residual <= tol * 10.0, "water-filling residual {residual:e} did not converge");
    Ok(WaterFilling {
        water_level: mu,
        powers: inv.iter().map(|&x| noise_var * (mu - x).max(0.0)).collect(),
    })
}

/// LMMSE-optimal preamble `sqrt(sigma^2) [P^(1/2); 0] B^H`, with the free
/// unitary factor fixed to the identity.
pub fn lmmse_preamble(r: &CMatrix, k: usize, noise_var: f64) -> Result<Preamble> {
    linalg::ensure_hermitian(r, HERMITIAN_TOL)?;
    let m = r.nrows();
    let eig = SymmetricEigen::new(linalg::hermitian_part(r));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let wf = lmmse_water_filling(&d, k, noise_var)?;
    let b = CMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
    let mut top = CMatrix::zeros(k * m, m);
    for (i, p) in wf.powers.iter().enumerate() {
        top[(i, i)] = real_scalar(p.sqrt());
    }
    let matrix = top * b.adjoint();
    Ok(Preamble {
        matrix,
        slots: k,
        per_symbol_power: 1.0 / m as f64,
    })
}

/// LMMSE estimate in the inner (Woodbury) form
/// `(sigma^2 R^-1 + X^H X)^-1 X^H y`, error covariance
/// `(R^-1 + X^H X / sigma^2)^-1`.
pub fn lmmse_estimate(y: &CVector, preamble: &Preamble, r: &CMatrix, noise_var: f64) -> Result<Estimate> {
    if y.len() != preamble.len() {
        return Err(Error::Dimension {
            expected: preamble.len(),
            got: y.len(),
        });
    }
    if r.nrows() != preamble.antennas() {
        return Err(Error::Dimension {
            expected: preamble.antennas(),
            got: r.nrows(),
        });
    }
    let r_inv = linalg::inverse_hpd(r)?;
    let gram = preamble.gram();
    let inner = linalg::inverse_hpd(&(&r_inv * real_scalar(noise_var) + &gram))?;
    let h_hat = &inner * (preamble.matrix.adjoint() * y);
    let error_cov = inner * real_scalar(noise_var);
    Ok(Estimate {
        h_hat,
        slots: preamble.slots,
        kind: EstimatorKind::Lmmse,
        error_cov,
    })
}

/// LMMSE estimate in the outer form `R X^H (X R X^H + sigma^2 I)^-1 y`.
pub fn lmmse_estimate_direct(y: &CVector, preamble: &Preamble, r: &CMatrix, noise_var: f64) -> Result<CVector> {
    let x = preamble.matrix();
    let tau = x.nrows();
    let gram = x * r * x.adjoint() + CMatrix::identity(tau, tau) * real_scalar(noise_var);
    let inv = linalg::inverse_hpd(&gram)?;
    Ok(r * x.adjoint() * inv * y)
}

/// The `q` largest-magnitude coefficients of an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFeedback {
    pub values: CVector,
    /// Antenna index (0-based) of each fed-back coefficient.
    pub indices: Vec<usize>,
}

/// Selects the `q` strongest coefficients in descending magnitude; equal
/// magnitudes keep ascending antenna order.
pub fn partial_feedback(est: &Estimate, q: usize) -> Result<PartialFeedback> {
    let m = est.antennas();
    if q == 0 || q > m {
        return Err(Error::invalid(format!("feedback dimension q={q} must lie in [1, {m}]")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| est.h_hat[b].norm_sqr().total_cmp(&est.h_hat[a].norm_sqr()));
    order.truncate(q);
    Ok(PartialFeedback {
        values: linalg::subvector(&est.h_hat, &order),
        indices: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_vector, substream};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ls_preamble_shape() {
        let p = ls_preamble(2, 1).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(p.matrix(), &CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]));
        let p = ls_preamble(3, 4).unwrap();
        assert_eq!(p.len(), 12);
        assert!((p.gram() - CMatrix::identity(3, 3) * c(4.0 / 3.0, 0.0)).norm() < 1e-14);
        assert!(ls_preamble(3, 0).is_err());
    }

    #[test]
    fn ls_preamble_energy_equals_slot_count() {
        for m in 1..6 {
            for k in 1..8 {
                assert!((ls_preamble(m, k).unwrap().energy() - k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_ls_recovers_channel() {
        let mut rng = substream(5, 0);
        let h = complex_normal_vector(&mut rng, 3, 1.0);
        let p = ls_preamble(3, 2).unwrap();
        let y = p.observe(&h, &CVector::zeros(6)).unwrap();
        let est = ls_estimate(&y, &p, 1.0).unwrap();
        assert!((est.h_hat - h).norm() < 1e-14);
        assert!((est.error_cov - CMatrix::identity(3, 3) * c(1.5, 0.0)).norm() < 1e-14);
        assert!(ls_estimate(&CVector::zeros(5), &p, 1.0).is_err());
    }

    #[test]
    fn recursive_update_matches_batch() {
        let m = 3;
        let sigma2 = 0.7;
        let mut rng = substream(9, 1);
        let h = complex_normal_vector(&mut rng, m, 1.0);
        let model = ChannelModel::uncorrelated(m, sigma2).unwrap();
        let mut est = Estimate::prior(&model, EstimatorKind::Ls);
        let mut all_noise = Vec::new();
        for k in 1..=10 {
            let z = complex_normal_vector(&mut rng, m, sigma2);
            all_noise.extend(z.iter().copied());
            let slot_obs = &h * c(1.0 / (m as f64).sqrt(), 0.0) + &z;
            est = ls_recursive_update(&est, &slot_obs, sigma2).unwrap();
            let p = ls_preamble(m, k).unwrap();
            let y = p.observe(&h, &CVector::from_vec(all_noise.clone())).unwrap();
            let batch = ls_estimate(&y, &p, sigma2).unwrap();
            assert!((&est.h_hat - &batch.h_hat).norm() < 1e-12, "k={k}");
            assert!((&est.error_cov - &batch.error_cov).norm() < 1e-12);
            if k == 1 {
                let first = &h + &z * c((m as f64).sqrt(), 0.0);
                assert!((&est.h_hat - first).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn recursive_update_rejects_lmmse() {
        let model = ChannelModel::uncorrelated(2, 1.0).unwrap();
        let est = Estimate::prior(&model, EstimatorKind::Lmmse);
        assert!(ls_recursive_update(&est, &CVector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn water_filling_hand_example() {
        let wf = lmmse_water_filling(&[2.0, 1.0], 1, 1.0).unwrap();
        assert!((wf.water_level - 1.25).abs() < 1e-11);
        assert!((wf.powers[0] - 0.75).abs() < 1e-11);
        assert!((wf.powers[1] - 0.25).abs() < 1e-11);
    }

    #[test]
    fn lmmse_preamble_identity_reduces_to_orthogonal() {
        for k in 1..5 {
            let p = lmmse_preamble(&CMatrix::identity(3, 3), k, 0.8).unwrap();
            assert!((p.gram() - CMatrix::identity(3, 3) * c(k as f64 / 3.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn lmmse_identity_prior_is_shrunk_ls() {
        let m = 3;
        let sigma2 = 0.5;
        let k = 2;
        let mut rng = substream(2, 2);
        let h = complex_normal_vector(&mut rng, m, 1.0);
        let z = complex_normal_vector(&mut rng, k * m, sigma2);
        let p = ls_preamble(m, k).unwrap();
        let y = p.observe(&h, &z).unwrap();
        let ls = ls_estimate(&y, &p, sigma2).unwrap();
        let lm = lmmse_estimate(&y, &p, &CMatrix::identity(m, m), sigma2).unwrap();
        let shrink = k as f64 / (k as f64 + m as f64 * sigma2);
        assert!((&ls.h_hat * c(shrink, 0.0) - &lm.h_hat).norm() < 1e-12);
        let expected = m as f64 * sigma2 / (k as f64 + m as f64 * sigma2);
        assert!((lm.error_cov - CMatrix::identity(m, m) * c(expected, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn partial_feedback_sorts_by_magnitude() {
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap();
        let mut est = Estimate::prior(&model, EstimatorKind::Ls);
        est.h_hat = CVector::from_vec(vec![c(3.0, 0.0), c(0.0, -5.0), c(1.0, 0.0)]);
        let fb = partial_feedback(&est, 2).unwrap();
        assert_eq!(fb.indices, vec![1, 0]);
        assert_eq!(fb.values, CVector::from_vec(vec![c(0.0, -5.0), c(3.0, 0.0)]));
        let full = partial_feedback(&est, 3).unwrap();
        assert!((full.values.norm() - est.h_hat.norm()).abs() < 1e-14);
        assert!(partial_feedback(&est, 0).is_err());
        assert!(partial_feedback(&est, 4).is_err());
    }

    #[test]
    fn partial_feedback_ties_keep_lowest_index() {
        let model = ChannelModel::uncorrelated(4, 1.0).unwrap();
        let mut est = Estimate::prior(&model, EstimatorKind::Ls);
        // every arrangement of two equal-magnitude pairs
        let mags = [[1.0, 1.0, 2.0, 2.0], [2.0, 1.0, 2.0, 1.0], [1.0, 2.0, 1.0, 2.0], [2.0, 2.0, 2.0, 2.0]];
        for pattern in mags {
            est.h_hat = CVector::from_iterator(4, pattern.iter().enumerate().map(|(i, &a)| {
                // same magnitude, different phase
                Complex64::from_polar(a, i as f64)
            }));
            let fb = partial_feedback(&est, 4).unwrap();
            for w in fb.indices.windows(2) {
                let (a, b) = (pattern[w[0]], pattern[w[1]]);
                assert!(a > b || (a == b && w[0] < w[1]), "{pattern:?} -> {:?}", fb.indices);
            }
        }
    }

    fn random_pd(rng: &mut impl Rng, m: usize) -> CMatrix {
        let a = CMatrix::from_fn(m, m, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        linalg::hermitian_part(&(&a * a.adjoint() + CMatrix::identity(m, m) * c(0.1, 0.0)))
    }

    #[test]
    fn water_filling_residual_on_random_covariances() {
        let mut rng = substream(21, 0);
        for trial in 0..20 {
            let m = 2 + trial % 4;
            let r = random_pd(&mut rng, m);
            let k = 1 + trial % 5;
            let sigma2 = 0.1 + rng.random::<f64>();
            let p = lmmse_preamble(&r, k, sigma2).unwrap();
            let energy = p.energy();
            assert!((energy - k as f64).abs() < 1e-10, "trial {trial}: {energy}");
        }
    }

    #[test]
    fn lmmse_forms_agree() {
        let mut rng = substream(22, 0);
        for trial in 0..20 {
            let m = 2 + trial % 3;
            let k = 1 + trial % 3;
            let sigma2 = 0.2 + rng.random::<f64>();
            let r = random_pd(&mut rng, m);
            let p = lmmse_preamble(&r, k, sigma2).unwrap();
            let h = complex_normal_vector(&mut rng, m, 1.0);
            let z = complex_normal_vector(&mut rng, k * m, sigma2);
            let y = p.observe(&h, &z).unwrap();
            let inner = lmmse_estimate(&y, &p, &r, sigma2).unwrap();
            let outer = lmmse_estimate_direct(&y, &p, &r, sigma2).unwrap();
            assert!((&inner.h_hat - &outer).norm() < 1e-10 * outer.norm().max(1.0));
            assert!(linalg::min_eigenvalue(&inner.error_cov) > 0.0);
        }
    }

    #[test]
    fn lmmse_error_trace_decreases_with_slots() {
        let mut rng = substream(23, 0);
        let r = random_pd(&mut rng, 3);
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let p = lmmse_preamble(&r, k, 0.5).unwrap();
            let est = lmmse_estimate(&CVector::zeros(3 * k), &p, &r, 0.5).unwrap();
            let tr = est.error_cov.trace().re;
            assert!(tr <= prev + 1e-12);
            prev = tr;
        }
    }

    #[test]
    fn lmmse_noiseless_limit() {
        let mut rng = substream(24, 0);
        let r = random_pd(&mut rng, 3);
        let p = lmmse_preamble(&r, 2, 1e-12).unwrap();
        let h = complex_normal_vector(&mut rng, 3, 1.0);
        let y = p.observe(&h, &CVector::zeros(6)).unwrap();
        let est = lmmse_estimate(&y, &p, &r, 1e-12).unwrap();
        assert!((est.h_hat - h).norm() < 1e-4);
    }
}
