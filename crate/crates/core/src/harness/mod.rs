//! Monte Carlo frame simulator comparing the power-transfer schemes.
//!
//! Every scheme sees the same channel and noise draws: frame `i` is drawn
//! from `substream(seed, i)` no matter which schemes run or how many
//! threads are used.

mod output;

pub use output::{write_comparison, write_curve, write_tau_curve, CurveFile};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::beamforming::{conditional_correlation_matrix, exact_posterior, mrt_energy, optimal_beamformer};
use crate::channel::{conditional_correlation, ChannelModel, FrameConfig, FrameDraw};
use crate::dp_policy::{run_policy_on, run_stopping_rule, solve_bellman, Decision, GridSpec, PolicyOutcome, PolicyTable};
use crate::estimation::{lmmse_estimate, lmmse_preamble, ls_estimate, ls_preamble, partial_feedback, EstimatorKind, Preamble};
use crate::fixed_length::{energy_of_tau, optimal_tau, optimal_tau_numeric, TauChoice};
use crate::numerics::mean_and_se;
use crate::power_alloc::{
    allocate_cpa, allocate_lcpa, allocate_lpa, stopping_distribution_forward, AllocationPlan, StoppingDistribution,
};
use crate::rng::substream;
use crate::{CVector, Error, Result};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "WPT_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Mrt,
    Fwopa,
    Dyn,
    Lcpa,
    Lpa,
    Cpa,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Mrt, Scheme::Fwopa, Scheme::Dyn, Scheme::Lcpa, Scheme::Lpa, Scheme::Cpa];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mrt => "MRT",
            Scheme::Fwopa => "FwoPA",
            Scheme::Dyn => "DYN",
            Scheme::Lcpa => "LCPA",
            Scheme::Lpa => "LPA",
            Scheme::Cpa => "CPA",
        }
    }

    /// Schemes whose preamble length depends on the channel.
    pub fn is_dynamic(self) -> bool {
        matches!(self, Scheme::Dyn | Scheme::Lcpa | Scheme::Lpa)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Physical interpretation of the normalized quantities: symbol period
/// `1 / bandwidth`, received noise `N0 B`, large-scale gain
/// `10^(-ref_loss_db/10) D^-exponent`.
///
/// The simulation still runs in normalized units with the effective noise
/// variance `N0 B / (P0 beta)`; energies are scaled back to joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalUnits {
    pub p0_watts: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub distance_m: f64,
    pub ref_loss_db: f64,
    pub pathloss_exponent: f64,
}

impl Default for PhysicalUnits {
    fn default() -> Self {
        Self {
            p0_watts: 1.0,
            noise_psd_dbm_hz: -63.0,
            bandwidth_hz: 1e5,
            distance_m: 5.0,
            ref_loss_db: 20.0,
            pathloss_exponent: 2.0,
        }
    }
}

impl PhysicalUnits {
    pub fn pathloss(&self) -> f64 {
        10f64.powf(-self.ref_loss_db / 10.0) * self.distance_m.powf(-self.pathloss_exponent)
    }

    pub fn noise_watts(&self) -> f64 {
        1e-3 * 10f64.powf(self.noise_psd_dbm_hz / 10.0) * self.bandwidth_hz
    }

    /// Noise variance relative to the received signal power `P0 beta`.
    pub fn effective_noise_var(&self) -> f64 {
        self.noise_watts() / (self.p0_watts * self.pathloss())
    }

    /// Joules per normalized energy unit.
    pub fn energy_scale(&self) -> f64 {
        self.p0_watts * self.pathloss() / self.bandwidth_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Frame length `T` in symbols.
    pub symbols: usize,
    pub antennas: usize,
    /// Exponential correlation coefficient of the channel covariance.
    pub xi: f64,
    /// Noise variance in normalized units; ignored when `physical` is set.
    pub noise_var: f64,
    pub estimator: EstimatorKind,
    /// Fed-back coefficients; `None` means all `m`.
    pub feedback: Option<usize>,
    pub schemes: Vec<Scheme>,
    /// Baseline transmit power per symbol.
    pub p0: f64,
    /// Per-symbol power cap as a multiple of `p0`.
    pub p1_multiple: f64,
    pub frames: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub distribution_cells: usize,
    pub physical: Option<PhysicalUnits>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            symbols: 126,
            antennas: 3,
            xi: 0.0,
            noise_var: 1.0,
            estimator: EstimatorKind::Ls,
            feedback: None,
            schemes: Scheme::ALL.to_vec(),
            p0: 1.0,
            p1_multiple: 4.0,
            frames: 10_000,
            seed: 1,
            grid_points: crate::dp_policy::DEFAULT_GRID_POINTS,
            distribution_cells: crate::power_alloc::DEFAULT_DISTRIBUTION_CELLS,
            physical: None,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.antennas == 0 || self.symbols == 0 || self.symbols % self.antennas != 0 {
            return bad(format!("T = {} must be a positive multiple of m = {}", self.symbols, self.antennas));
        }
        if !(0.0..1.0).contains(&self.xi) {
            return bad(format!("xi = {} must lie in [0, 1)", self.xi));
        }
        if self.physical.is_none() && !(self.noise_var > 0.0) {
            return bad("noise_var must be positive".into());
        }
        let q = self.feedback_dim();
        if q == 0 || q > self.antennas {
            return bad(format!("feedback dimension {q} must lie in 1..={}", self.antennas));
        }
        if !(self.p0 > 0.0) {
            return bad("p0 must be positive".into());
        }
        if !(self.p1_multiple >= 1.0) || !self.p1_multiple.is_finite() {
            return bad("p1_multiple must be at least 1 (P1 >= P0)".into());
        }
        if self.frames < 2 {
            return bad("need at least two frames".into());
        }
        if self.grid_points < 2 || self.distribution_cells == 0 {
            return bad("grid_points and distribution_cells must be positive".into());
        }
        if let Some(p) = &self.physical {
            let fields = [p.p0_watts, p.bandwidth_hz, p.distance_m];
            if fields.iter().any(|x| !(*x > 0.0)) || !p.noise_psd_dbm_hz.is_finite() {
                return bad("physical units need positive power, bandwidth and distance".into());
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<FrameConfig> {
        FrameConfig::new(self.symbols, self.antennas).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn feedback_dim(&self) -> usize {
        self.feedback.unwrap_or(self.antennas)
    }

    /// Noise variance the simulation actually uses.
    pub fn effective_noise_var(&self) -> f64 {
        match &self.physical {
            Some(p) => p.effective_noise_var(),
            None => self.noise_var,
        }
    }

    /// Factor converting normalized energies to reported ones.
    pub fn energy_scale(&self) -> f64 {
        match &self.physical {
            Some(p) => p.energy_scale(),
            None => 1.0,
        }
    }

    pub fn energy_unit(&self) -> &'static str {
        if self.physical.is_some() {
            "J"
        } else {
            "normalized"
        }
    }

    pub fn model(&self) -> Result<ChannelModel> {
        let sigma2 = self.effective_noise_var();
        if self.xi == 0.0 {
            ChannelModel::uncorrelated(self.antennas, sigma2)
        } else {
            ChannelModel::exponential(self.antennas, self.xi, sigma2)
        }
    }

    /// Power cap `P1`, in units of `p0 = 1` when physical units are on.
    pub fn p1(&self) -> f64 {
        self.p1_multiple * self.sim_p0()
    }

    fn sim_p0(&self) -> f64 {
        if self.physical.is_some() {
            1.0
        } else {
            self.p0
        }
    }
}

/// Everything the schemes need that does not depend on the frame draws.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub frame: FrameConfig,
    pub model: ChannelModel,
    /// Fixed preamble length (a whole number of slots).
    pub tau: TauChoice,
    /// Energy budget per frame: what the fixed-length scheme spends at `p0`.
    pub p2: f64,
    pub policy: Option<PolicyTable>,
    pub distribution: Option<StoppingDistribution>,
    pub lcpa: Option<AllocationPlan>,
    pub lpa: Option<AllocationPlan>,
    pub cpa: Option<AllocationPlan>,
    /// Perfect-CSI frames get `p1` when `||h||^2` exceeds this, else nothing.
    pub mrt_threshold: f64,
}

impl Artifacts {
    /// Builds the precomputations required by `config.schemes`.
    pub fn prepare(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let frame = config.frame()?;
        let model = config.model()?;
        let sigma2 = model.noise_var();
        let q = config.feedback_dim();
        let tau = optimal_tau(frame.symbols, frame.antennas, q, sigma2, true)?;
        let p2 = config.sim_p0() * (frame.symbols - tau.tau) as f64;
        let mut art = Self {
            frame,
            model,
            tau,
            p2,
            policy: None,
            distribution: None,
            lcpa: None,
            lpa: None,
            cpa: None,
            mrt_threshold: 0.0,
        };
        let needs = |s: Scheme| config.schemes.contains(&s);
        let dynamic = config.schemes.iter().any(|s| s.is_dynamic());
        if dynamic || needs(Scheme::Cpa) {
            if !art.model.is_uncorrelated() || config.estimator != EstimatorKind::Ls || q != frame.antennas {
                return Err(Error::Config(
                    "dynamic-length and CPA schemes need an uncorrelated channel, LS estimation and full feedback".into(),
                ));
            }
        }
        if dynamic {
            let grid = GridSpec::covering(frame.antennas, sigma2, config.grid_points)?;
            let (_, policy) = solve_bellman(&frame, &art.model, grid)?;
            art.distribution = Some(stopping_distribution_forward(&policy, config.distribution_cells)?);
            art.policy = Some(policy);
        }
        art.allocate(config)?;
        Ok(art)
    }

    /// (Re)computes the allocation plans for the cap in `config`.
    pub fn allocate(&mut self, config: &SimConfig) -> Result<()> {
        let needs = |s: Scheme| config.schemes.contains(&s);
        let p1 = config.p1();
        let funded = self.p2 / (p1 * self.frame.symbols as f64);
        self.mrt_threshold = if funded >= 1.0 {
            0.0
        } else {
            channel_power_quantile(&self.model, 1.0 - funded, config.seed)?
        };
        if let Some(dist) = &self.distribution {
            self.lcpa = if needs(Scheme::Lcpa) { Some(allocate_lcpa(dist, p1, self.p2)?) } else { None };
            self.lpa = if needs(Scheme::Lpa) { Some(allocate_lpa(dist, p1, self.p2)?) } else { None };
        }
        if needs(Scheme::Cpa) {
            let kappa = self.tau.tau / self.frame.antennas;
            let cells = config.distribution_cells;
            let delta = StoppingDistribution::default_delta(self.frame.antennas, self.model.noise_var(), cells)?;
            let dist = StoppingDistribution::fixed_kappa(&self.frame, self.model.noise_var(), kappa, delta, cells)?;
            self.cpa = Some(allocate_cpa(&dist, p1, self.p2)?);
        }
        Ok(())
    }

    fn fixed_slots(&self) -> usize {
        self.tau.tau / self.frame.antennas
    }
}

const CHANNEL_POWER_SAMPLES: usize = 1 << 16;

// Quantile of ||h||^2: exact Gamma for white channels, otherwise from a
// fixed presample drawn on a stream the frames never use.
fn channel_power_quantile(model: &ChannelModel, p: f64, seed: u64) -> Result<f64> {
    let eigs = crate::linalg::eigenvalues(&model.effective_covariance());
    let (lo, hi) = eigs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if hi - lo <= 1e-12 * hi {
        let law = Gamma::new(model.antennas() as f64, 1.0 / hi).map_err(|e| Error::invalid(e.to_string()))?;
        return Ok(law.inverse_cdf(p));
    }
    let mut rng = substream(seed, u64::MAX);
    let mut powers: Vec<f64> = (0..CHANNEL_POWER_SAMPLES).map(|_| model.sample(&mut rng).norm_squared()).collect();
    powers.sort_by(f64::total_cmp);
    let idx = ((p * CHANNEL_POWER_SAMPLES as f64) as usize).min(CHANNEL_POWER_SAMPLES - 1);
    Ok(powers[idx])
}

/// Outcome of one scheme on one frame, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub energy: f64,
    pub spend: f64,
    pub kappa: usize,
}

fn missing(what: &str, scheme: Scheme) -> Error {
    Error::MissingArtifact(format!("{what} (needed by {scheme})"))
}

fn fixed_outcome(draw: &FrameDraw, art: &Artifacts, config: &SimConfig) -> Result<PolicyOutcome> {
    let kappa = art.fixed_slots();
    let q = config.feedback_dim();
    if art.model.is_uncorrelated() && config.estimator == EstimatorKind::Ls && q == art.frame.antennas {
        // same recursion as the dynamic schemes, so draws are shared exactly
        return Ok(run_stopping_rule(draw, &art.frame, |k, _| {
            if k >= kappa {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }));
    }
    let m = art.frame.antennas;
    let remaining = (art.frame.symbols - kappa * m) as f64;
    if kappa == 0 {
        let r = art.model.effective_covariance();
        let (_, top) = crate::linalg::top_eigenpair(&r);
        let gain = top.dotc(&draw.h).norm_sqr();
        return Ok(PolicyOutcome {
            kappa,
            v_stop: 0.0,
            energy: remaining * gain,
        });
    }
    let sigma2 = art.model.noise_var();
    let r = art.model.effective_covariance();
    let preamble: Preamble = match config.estimator {
        EstimatorKind::Ls => ls_preamble(m, kappa)?,
        EstimatorKind::Lmmse => lmmse_preamble(&r, kappa, sigma2)?,
    };
    let noise = CVector::from_iterator(kappa * m, draw.noise[..kappa].iter().flat_map(|z| z.iter().copied()));
    let y = preamble.observe(&draw.h, &noise)?;
    let est = match config.estimator {
        EstimatorKind::Ls => ls_estimate(&y, &preamble, sigma2)?,
        EstimatorKind::Lmmse => lmmse_estimate(&y, &preamble, &r, sigma2)?,
    };
    let fb = partial_feedback(&est, q)?;
    let r_cond = match est.kind {
        EstimatorKind::Ls => conditional_correlation_matrix(&est, &art.model, &fb.indices)?,
        EstimatorKind::Lmmse => conditional_correlation(&exact_posterior(&est, &art.model, &fb.indices)?),
    };
    let w = optimal_beamformer(&r_cond)?.embed(&fb.indices, m)?;
    Ok(PolicyOutcome {
        kappa,
        v_stop: est.power(),
        energy: remaining * w.dotc(&draw.h).norm_sqr(),
    })
}

/// Runs `scheme` on one pre-drawn frame.
pub fn evaluate_frame(scheme: Scheme, draw: &FrameDraw, art: &Artifacts, config: &SimConfig) -> Result<FrameResult> {
    let p0 = config.sim_p0();
    let m = art.frame.antennas as f64;
    let symbols_left = |kappa: usize| m * (art.frame.slots - kappa) as f64;
    let with_power = |out: PolicyOutcome, power: f64| FrameResult {
        energy: power * out.energy,
        spend: power * symbols_left(out.kappa),
        kappa: out.kappa,
    };
    Ok(match scheme {
        Scheme::Mrt => {
            let gain = mrt_energy(&draw.h);
            let power = if gain > art.mrt_threshold { config.p1() } else { 0.0 };
            FrameResult {
                energy: power * art.frame.symbols as f64 * gain,
                spend: power * art.frame.symbols as f64,
                kappa: 0,
            }
        }
        Scheme::Fwopa => with_power(fixed_outcome(draw, art, config)?, p0),
        Scheme::Dyn => {
            let policy = art.policy.as_ref().ok_or_else(|| missing("policy table", scheme))?;
            with_power(run_policy_on(policy, draw), p0)
        }
        Scheme::Lcpa | Scheme::Lpa => {
            let policy = art.policy.as_ref().ok_or_else(|| missing("policy table", scheme))?;
            let plan = if scheme == Scheme::Lcpa { &art.lcpa } else { &art.lpa };
            let plan = plan.as_ref().ok_or_else(|| missing("allocation plan", scheme))?;
            let out = run_policy_on(policy, draw);
            with_power(out, plan.power_for(out.kappa, out.v_stop))
        }
        Scheme::Cpa => {
            let plan = art.cpa.as_ref().ok_or_else(|| missing("allocation plan", scheme))?;
            let out = fixed_outcome(draw, art, config)?;
            with_power(out, plan.power_for(out.kappa, out.v_stop))
        }
    })
}

/// Per-scheme summary in reported units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub frames: usize,
    pub mean_energy: f64,
    pub std_err: f64,
    pub mean_spend: f64,
    pub spend_std_err: f64,
    /// Frames stopping at each slot.
    pub stop_histogram: Vec<u64>,
    pub energy_unit: String,
}

impl SchemeReport {
    fn from_results(scheme: Scheme, results: &[FrameResult], slots: usize, config: &SimConfig) -> Self {
        let scale = config.energy_scale();
        let energy: Vec<f64> = results.iter().map(|r| r.energy * scale).collect();
        let spend: Vec<f64> = results.iter().map(|r| r.spend * scale).collect();
        let (mean_energy, std_err) = mean_and_se(&energy);
        let (mean_spend, spend_std_err) = mean_and_se(&spend);
        let mut stop_histogram = vec![0u64; slots];
        for r in results {
            stop_histogram[r.kappa] += 1;
        }
        Self {
            scheme,
            frames: results.len(),
            mean_energy,
            std_err,
            mean_spend,
            spend_std_err,
            stop_histogram,
            energy_unit: config.energy_unit().into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub config: SimConfig,
    pub tau_star: usize,
    pub p2: f64,
    pub reports: Vec<SchemeReport>,
    /// Per-frame energies in reported units, `samples[scheme][frame]`.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn report(&self, scheme: Scheme) -> Option<&SchemeReport> {
        self.reports.iter().find(|r| r.scheme == scheme)
    }

    /// Mean and standard error of the per-frame difference `a - b`.
    pub fn difference(&self, a: Scheme, b: Scheme) -> Option<(f64, f64)> {
        let pos = |s: Scheme| self.reports.iter().position(|r| r.scheme == s);
        let (ia, ib) = (pos(a)?, pos(b)?);
        let diff: Vec<f64> = self.samples[ia].iter().zip(&self.samples[ib]).map(|(x, y)| x - y).collect();
        Some(mean_and_se(&diff))
    }
}

/// Simulates one scheme alone (same draws as in [`compare_schemes`]).
pub fn run_scheme(scheme: Scheme, config: &SimConfig, art: &Artifacts) -> Result<SchemeReport> {
    let results = simulate(&[scheme], config, art)?;
    Ok(SchemeReport::from_results(scheme, &results[0], art.frame.slots, config))
}

// results[scheme][frame]
fn simulate(schemes: &[Scheme], config: &SimConfig, art: &Artifacts) -> Result<Vec<Vec<FrameResult>>> {
    let per_frame: Vec<Vec<FrameResult>> = (0..config.frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(config.seed, i as u64);
            let draw = FrameDraw::sample(&art.model, art.frame.slots, &mut rng);
            schemes.iter().map(|&s| evaluate_frame(s, &draw, art, config)).collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..schemes.len()).map(|j| per_frame.iter().map(|row| row[j]).collect()).collect())
}

/// Runs every scheme of `config` on the same frames.
pub fn compare_schemes(config: &SimConfig) -> Result<Comparison> {
    let art = Artifacts::prepare(config)?;
    compare_with(config, &art)
}

/// [`compare_schemes`] with precomputed artifacts.
pub fn compare_with(config: &SimConfig, art: &Artifacts) -> Result<Comparison> {
    let results = simulate(&config.schemes, config, art)?;
    let reports = config
        .schemes
        .iter()
        .zip(&results)
        .map(|(&s, r)| SchemeReport::from_results(s, r, art.frame.slots, config))
        .collect();
    let scale = config.energy_scale();
    let samples = results.iter().map(|r| r.iter().map(|x| x.energy * scale).collect()).collect();
    Ok(Comparison {
        config: config.clone(),
        tau_star: art.tau.tau,
        p2: art.p2 * scale,
        reports,
        samples,
    })
}

/// Reruns the comparison for several power caps, reusing the policy.
pub fn power_cap_sweep(config: &SimConfig, multiples: &[f64]) -> Result<Vec<Comparison>> {
    let mut art = Artifacts::prepare(config)?;
    multiples
        .iter()
        .map(|&mult| {
            let cfg = SimConfig {
                p1_multiple: mult,
                ..config.clone()
            };
            cfg.validate()?;
            art.allocate(&cfg)?;
            compare_with(&cfg, &art)
        })
        .collect()
}

/// Fixed-length energy against preamble length, simulated and analytic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauCurve {
    pub taus: Vec<usize>,
    pub energy: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Closed-form energy for an uncorrelated channel with LS estimation.
    pub analytic: Vec<f64>,
    pub tau_star: usize,
}

/// Expected fixed-length energy at every whole-slot preamble length,
/// at power `p0`.
pub fn fixed_length_curve(config: &SimConfig, samples: usize) -> Result<TauCurve> {
    config.validate()?;
    let frame = config.frame()?;
    let model = config.model()?;
    let q = config.feedback_dim();
    let sweep = optimal_tau_numeric(&model, config.estimator, q, &frame, samples, config.seed)?;
    let scale = config.sim_p0() * config.energy_scale();
    let analytic = sweep
        .taus
        .iter()
        .map(|&t| energy_of_tau(t as f64, frame.symbols, frame.antennas, q, model.noise_var()).map(|e| e * scale))
        .collect::<Result<_>>()?;
    Ok(TauCurve {
        taus: sweep.taus,
        energy: sweep.energy.iter().map(|e| e * scale).collect(),
        std_err: sweep.std_err.iter().map(|e| e * scale).collect(),
        analytic,
        tau_star: sweep.tau_star,
    })
}
