//! Offline choice of a fixed preamble length.

use rayon::prelude::*;
use serde::Serialize;

use crate::beamforming::{conditional_correlation_matrix, exact_posterior};
use crate::channel::{conditional_correlation, ChannelModel, FrameConfig};
use crate::estimation::{
    lmmse_estimate, lmmse_preamble, ls_estimate, ls_preamble, partial_feedback, Estimate, EstimatorKind,
};
use crate::linalg;
use crate::numerics::{mean_and_se, CompensatedSum};
use crate::rng::{complex_normal_vector, substream};
use crate::special::factorial;
use crate::{Error, Result};

// Above this the alternating sum loses too many digits to cancellation.
const ALTERNATING_SUM_MAX_M: usize = 15;

fn check_mq(m: usize, q: usize) -> Result<()> {
    if m == 0 || q == 0 || q > m {
        return Err(Error::invalid(format!("need 1 <= q <= m, got m={m}, q={q}")));
    }
    Ok(())
}

/// Mean of the `r`-th largest of `m` independent chi-square(2) variables.
pub fn order_stat_mean(m: usize, r: usize) -> Result<f64> {
    check_mq(m, r)?;
    if m > ALTERNATING_SUM_MAX_M {
        // Renyi representation: 2 (H_m - H_{r-1})
        return Ok(2.0 * (r..=m).map(|j| 1.0 / j as f64).collect::<CompensatedSum>().value());
    }
    let lead = 2.0 * factorial(m as u64) / factorial((r - 1) as u64);
    let mut sum = CompensatedSum::default();
    for s in 1..=(m - r + 1) {
        let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
        let denom = factorial((m - r + 1 - s) as u64) * factorial(s as u64) * ((r + s - 1) as f64).powi(2);
        sum.add(sign * s as f64 / denom);
    }
    Ok(lead * sum.value())
}

/// `G_{m,q}`: sum of the `q` largest order-statistic means.
pub fn g_factor(m: usize, q: usize) -> Result<f64> {
    check_mq(m, q)?;
    let mut sum = CompensatedSum::default();
    for r in 1..=q {
        sum.add(order_stat_mean(m, r)?);
    }
    Ok(sum.value())
}

/// Lower-triangular table of `G_{m,q}` for `1 <= q <= m <= m_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GTable {
    rows: Vec<Vec<f64>>,
}

impl GTable {
    pub fn new(m_max: usize) -> Result<Self> {
        if m_max == 0 {
            return Err(Error::invalid("table needs m_max >= 1"));
        }
        let rows = (1..=m_max)
            .map(|m| (1..=m).map(|q| g_factor(m, q)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn m_max(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, m: usize, q: usize) -> Option<f64> {
        self.rows.get(m.checked_sub(1)?)?.get(q.checked_sub(1)?).copied()
    }

    /// Row `m`, entries `q = 1..=m`.
    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m - 1]
    }

    /// CSV with one row per `m` and columns `m, q1, ..., q{m_max}`; cells
    /// above the diagonal are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["m".to_string()];
        header.extend((1..=self.m_max()).map(|q| format!("q{q}")));
        wtr.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            for q in 0..self.m_max() {
                rec.push(row.get(q).map(|g| format!("{g:.4}")).unwrap_or_default());
            }
            wtr.write_record(&rec)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Expected energy over a frame of `T` symbols with a preamble of `tau`
/// symbols, LS estimation, `q`-dimensional feedback and unit power.
pub fn energy_of_tau(tau: f64, t: usize, m: usize, q: usize, noise_var: f64) -> Result<f64> {
    let g = g_factor(m, q)?;
    energy_with_g(tau, t, m, g, noise_var)
}

fn energy_with_g(tau: f64, t: usize, m: usize, g: f64, noise_var: f64) -> Result<f64> {
    let t = t as f64;
    if !(0.0..=t).contains(&tau) {
        return Err(Error::invalid(format!("preamble length {tau} outside [0, {t}]")));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let mm = (m * m) as f64 * noise_var;
    Ok((t - tau) * (g * tau + 2.0 * mm) / (2.0 * (tau + mm)))
}

/// Optimal fixed preamble length and its energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauChoice {
    pub tau: usize,
    pub energy: f64,
    /// Stationary point of the continuous relaxation (0 when estimation
    /// never pays off).
    pub tau_continuous: f64,
}

/// Closed-form optimal preamble length for LS estimation on a white
/// channel.
///
/// With `multiple_of_m` the candidates are the two multiples of `m` around
/// the continuous optimum, otherwise its floor and ceiling. Ties go to the
/// shorter preamble.
pub fn optimal_tau(t: usize, m: usize, q: usize, noise_var: f64, multiple_of_m: bool) -> Result<TauChoice> {
    let g = g_factor(m, q)?;
    if t == 0 {
        return Err(Error::invalid("frame length must be positive"));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let mm = (m * m) as f64 * noise_var;
    let tf = t as f64;
    // G = 2 only for m = 1, where estimating never helps
    if g - 2.0 <= 1e-12 || noise_var > tf * (g - 2.0) / (2.0 * (m * m) as f64) {
        return Ok(TauChoice {
            tau: 0,
            energy: tf,
            tau_continuous: 0.0,
        });
    }
    let tau1 = -mm + m as f64 * (noise_var * (mm + tf) * (g - 2.0) / g).sqrt();
    let tau1 = tau1.clamp(0.0, tf);
    let (lo, hi) = if multiple_of_m {
        let base = (tau1 / m as f64).floor() as usize * m;
        (base, (base + m).min(t))
    } else {
        (tau1.floor() as usize, (tau1.ceil() as usize).min(t))
    };
    let e_lo = energy_with_g(lo as f64, t, m, g, noise_var)?;
    let e_hi = energy_with_g(hi as f64, t, m, g, noise_var)?;
    let (tau, energy) = if e_hi > e_lo { (hi, e_hi) } else { (lo, e_lo) };
    Ok(TauChoice {
        tau,
        energy,
        tau_continuous: tau1,
    })
}

/// Exhaustive argmax of [`energy_of_tau`] over `tau = 0..=T` (or multiples
/// of `m`), ties to the smaller length.
pub fn optimal_tau_exhaustive(t: usize, m: usize, q: usize, noise_var: f64, multiple_of_m: bool) -> Result<TauChoice> {
    let g = g_factor(m, q)?;
    let step = if multiple_of_m { m } else { 1 };
    let mut best = TauChoice {
        tau: 0,
        energy: f64::NEG_INFINITY,
        tau_continuous: f64::NAN,
    };
    for tau in (0..=t).step_by(step) {
        let e = energy_with_g(tau as f64, t, m, g, noise_var)?;
        if e > best.energy {
            best.tau = tau;
            best.energy = e;
        }
    }
    Ok(best)
}

/// Monte Carlo energy curve over preamble lengths `tau = k m`.
#[derive(Debug, Clone, Serialize)]
pub struct TauSweep {
    pub taus: Vec<usize>,
    pub energy: Vec<f64>,
    pub std_err: Vec<f64>,
    pub tau_star: usize,
}

/// Per-length Monte Carlo estimate of `(T - tau) E[gamma_1]`, where
/// `gamma_1` is the top eigenvalue of the channel's conditional correlation
/// given the fed-back estimate.
///
/// Sample `i` uses the same channel and noise at every length.
pub fn optimal_tau_numeric(
    model: &ChannelModel,
    kind: EstimatorKind,
    q: usize,
    cfg: &FrameConfig,
    n_samples: usize,
    seed: u64,
) -> Result<TauSweep> {
    check_mq(cfg.antennas, q)?;
    if model.antennas() != cfg.antennas {
        return Err(Error::Dimension {
            expected: cfg.antennas,
            got: model.antennas(),
        });
    }
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let m = cfg.antennas;
    let results: Vec<(f64, f64)> = (0..cfg.slots)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let samples = per_symbol_energies(model, kind, q, k, n_samples, seed)?;
            let (mean, se) = mean_and_se(&samples);
            let remaining = (cfg.symbols - k * m) as f64;
            Ok((remaining * mean, remaining * se))
        })
        .collect::<Result<_>>()?;
    let taus: Vec<usize> = (0..cfg.slots).map(|k| k * m).collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    Ok(TauSweep {
        tau_star: taus[best],
        taus,
        energy: results.iter().map(|r| r.0).collect(),
        std_err: results.iter().map(|r| r.1).collect(),
    })
}

fn per_symbol_energies(
    model: &ChannelModel,
    kind: EstimatorKind,
    q: usize,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = model.antennas();
    let sigma2 = model.noise_var();
    if k == 0 {
        // no estimate: the prior's top eigenvalue
        let (top, _) = linalg::top_eigenpair(&model.effective_covariance());
        return Ok(vec![top; n_samples]);
    }
    let r = model.effective_covariance();
    let preamble = match kind {
        EstimatorKind::Ls => ls_preamble(m, k)?,
        EstimatorKind::Lmmse => lmmse_preamble(&r, k, sigma2)?,
    };
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = substream(seed, i as u64);
        let h = model.sample(&mut rng);
        let noise = complex_normal_vector(&mut rng, preamble.len(), sigma2);
        let y = preamble.observe(&h, &noise)?;
        let est = match kind {
            EstimatorKind::Ls => ls_estimate(&y, &preamble, sigma2)?,
            EstimatorKind::Lmmse => lmmse_estimate(&y, &preamble, &r, sigma2)?,
        };
        out.push(top_conditional_eigenvalue(&est, model, q)?);
    }
    Ok(out)
}

/// `gamma_1` of the exact conditional correlation on the `q` fed-back
/// antennas.
pub fn top_conditional_eigenvalue(est: &Estimate, model: &ChannelModel, q: usize) -> Result<f64> {
    let fb = partial_feedback(est, q)?;
    let r_cond = match est.kind {
        EstimatorKind::Ls => conditional_correlation_matrix(est, model, &fb.indices)?,
        EstimatorKind::Lmmse => conditional_correlation(&exact_posterior(est, model, &fb.indices)?),
    };
    Ok(linalg::top_eigenpair(&r_cond).0)
}

/// `E(k, m) = m (T - k m)(sigma^2 + k) / (m sigma^2 + k)`: energy with `k`
/// slots of LS estimation on `m` antennas and full feedback.
pub fn antenna_energy(k: usize, m: f64, t: usize, noise_var: f64) -> f64 {
    let k = k as f64;
    m * (t as f64 - k * m) * (noise_var + k) / (m * noise_var + k)
}

/// Optimal antenna count with the estimation slot count that supports it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AntennaChoice {
    pub m_star: usize,
    pub k1: usize,
    pub energy: f64,
}

/// Continuous maximizer of `E(k, m)` over `m` for fixed `k >= 1`.
pub fn antenna_relaxation(k: usize, t: usize, noise_var: f64) -> f64 {
    let kf = k as f64;
    let tf = t as f64;
    (tf / kf).min((-kf + (kf * kf + tf * noise_var).sqrt()) / noise_var)
}

/// Picks `k1` from the continuous relaxation over `k = 1..=T`, then the
/// better of the two integers around `m*(k1)`. Returns `k1 = 0, m = 1` when
/// no estimation beats isotropic transfer.
pub fn optimal_antennas(t: usize, noise_var: f64) -> Result<AntennaChoice> {
    if t == 0 {
        return Err(Error::invalid("frame length must be positive"));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let mut k1 = 0;
    let mut best = t as f64;
    for k in 1..=t {
        let e = antenna_energy(k, antenna_relaxation(k, t, noise_var), t, noise_var);
        if e > best {
            best = e;
            k1 = k;
        }
    }
    if k1 == 0 {
        return Ok(AntennaChoice {
            m_star: 1,
            k1: 0,
            energy: t as f64,
        });
    }
    let m_cont = antenna_relaxation(k1, t, noise_var);
    let lo = (m_cont.floor() as usize).max(1);
    let hi = (m_cont.ceil() as usize).max(1);
    let e_lo = antenna_energy(k1, lo as f64, t, noise_var);
    let e_hi = antenna_energy(k1, hi as f64, t, noise_var);
    let (m_star, energy) = if e_hi > e_lo { (hi, e_hi) } else { (lo, e_lo) };
    Ok(AntennaChoice { m_star, k1, energy })
}

/// Per-coefficient LS error variance `m^2 sigma^2 / tau`.
pub fn ls_error_variance(tau: usize, m: usize, noise_var: f64) -> f64 {
    (m * m) as f64 * noise_var / tau as f64
}
