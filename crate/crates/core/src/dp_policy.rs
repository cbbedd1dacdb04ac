//! Finite-horizon stopping rule for the preamble length.
//!
//! The state is reduced to the slot index and the estimate power
//! `v = ||h_hat_k||^2`. Value functions live on the grid `v_i = i * delta`,
//! `i = 0..=points`, and the continuation value is a quadrature of the
//! interpolated next-slot value against the transition density.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{expected_next_stop_energy, StopEnergyCoeffs};
use crate::channel::{estimate_power_marginal, ChannelModel, ConditionedKernel, FrameConfig, FrameDraw, TransitionKernel};
use crate::linalg;
use crate::numerics::{bisect, GaussLegendre};
use crate::{CVector, Complex64, Error, Result};
use statrs::distribution::{ContinuousCDF, Gamma};

pub const POLICY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_GRID_POINTS: usize = 2000;
/// Probability mass of every estimate-power marginal the grid must cover.
pub const GRID_COVERAGE: f64 = 0.9999;

const QUAD_NODES: usize = 8;
const QUAD_PANELS: usize = 24;
const WINDOW_BELOW_SD: f64 = 10.0;
const WINDOW_ABOVE_SD: f64 = 16.0;
const FAR_SEARCH_LIMIT: f64 = 1e4;

/// Uniform estimate-power grid `{0, delta, ..., points * delta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta: f64,
    pub points: usize,
}

impl GridSpec {
    /// `points` steps up to the covering quantile of the widest marginal.
    pub fn covering(m: usize, noise_var: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid("value grid needs at least 2 points"));
        }
        let v_max = coverage_quantile(m, noise_var)?;
        Ok(Self {
            delta: v_max / points as f64,
            points,
        })
    }

    pub fn default_for(m: usize, noise_var: f64) -> Result<Self> {
        Self::covering(m, noise_var, DEFAULT_GRID_POINTS)
    }

    pub fn v_max(&self) -> f64 {
        self.delta * self.points as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.delta * i as f64
    }

    /// Fails with the required number of points when the grid misses more
    /// than `1 - GRID_COVERAGE` of some estimate-power marginal.
    pub fn check_coverage(&self, cfg: &FrameConfig, noise_var: f64) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() || self.points < 2 {
            return Err(Error::invalid("grid step must be positive and the grid must have 2+ points"));
        }
        let v_max = self.v_max();
        let mut worst = 1.0f64;
        for k in 1..cfg.slots {
            let dist = estimate_power_marginal(k, cfg.antennas, noise_var)?;
            worst = worst.min(dist.cdf(v_max));
        }
        if worst < GRID_COVERAGE - 1e-9 {
            let needed = coverage_quantile(cfg.antennas, noise_var)?;
            return Err(Error::Coverage {
                coverage: worst,
                required_points: (needed / self.delta).ceil() as usize,
            });
        }
        Ok(())
    }
}

// The first estimate has the widest marginal: Gamma(m, 1 + m sigma^2).
fn coverage_quantile(m: usize, noise_var: f64) -> Result<f64> {
    if m == 0 || !(noise_var > 0.0) {
        return Err(Error::invalid("need m >= 1 and a positive noise variance"));
    }
    let dist = Gamma::new(m as f64, 1.0 / (1.0 + m as f64 * noise_var)).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(GRID_COVERAGE))
}

/// Sampled value functions.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub grid: GridSpec,
    /// `values[k][i] = J_k(v_i)`.
    pub values: Vec<Vec<f64>>,
    /// `continuation[k][i]`: expected value of continuing at slot `k`,
    /// for `k = 0..N-2`.
    pub continuation: Vec<Vec<f64>>,
}

impl ValueGrid {
    /// Linearly interpolated `J_k(v)`, extended linearly beyond the grid.
    pub fn value_at(&self, k: usize, v: f64) -> f64 {
        interpolate(&self.values[k], self.grid.delta, v)
    }
}

// Linear interpolation, extended linearly past the last grid point. Above
// the top threshold the value is the affine stop energy, so the extension
// is exact there.
fn interpolate(row: &[f64], delta: f64, v: f64) -> f64 {
    let last = row.len() - 1;
    let x = (v / delta).max(0.0);
    let i = (x as usize).min(last - 1);
    let t = x - i as f64;
    row[i] + t * (row[i + 1] - row[i])
}

/// Stop/continue decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Stop,
}

/// Per-slot thresholds. At slot `k`, estimate power `v` lies in the stop
/// region iff an odd number of thresholds are `<= v`; the regions are
/// `[l1, l2) U [l3, l4) U ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub version: u32,
    pub symbols: usize,
    pub slots: usize,
    pub antennas: usize,
    pub noise_var: f64,
    pub grid: Option<GridSpec>,
    pub thresholds: Vec<Vec<f64>>,
}

impl PolicyTable {
    /// Validates and wraps threshold lists (one per slot, each sorted).
    pub fn from_thresholds(cfg: &FrameConfig, noise_var: f64, thresholds: Vec<Vec<f64>>) -> Result<Self> {
        let table = Self {
            version: POLICY_FORMAT_VERSION,
            symbols: cfg.symbols,
            slots: cfg.slots,
            antennas: cfg.antennas,
            noise_var,
            grid: None,
            thresholds,
        };
        table.validate()?;
        Ok(table)
    }

    /// Estimate for exactly `kappa` slots, then stop.
    pub fn fixed_length(cfg: &FrameConfig, noise_var: f64, kappa: usize) -> Result<Self> {
        if kappa >= cfg.slots {
            return Err(Error::invalid(format!("stopping slot {kappa} outside 0..{}", cfg.slots)));
        }
        let thresholds = (0..cfg.slots)
            .map(|k| if k < kappa { Vec::new() } else { vec![0.0] })
            .collect();
        Self::from_thresholds(cfg, noise_var, thresholds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != POLICY_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "policy format version {} is not supported (expected {POLICY_FORMAT_VERSION})",
                self.version
            )));
        }
        let cfg = FrameConfig::new(self.symbols, self.antennas)?;
        if cfg.slots != self.slots || self.thresholds.len() != self.slots {
            return Err(Error::Config(format!(
                "policy has {} threshold lists for {} slots",
                self.thresholds.len(),
                cfg.slots
            )));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Config("policy noise variance must be positive".into()));
        }
        for (k, list) in self.thresholds.iter().enumerate() {
            if list.iter().any(|&x| x.is_nan() || x < 0.0) {
                return Err(Error::Config(format!("slot {k} has a negative or NaN threshold")));
            }
            if list.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config(format!("slot {k} thresholds are not sorted")));
            }
        }
        if self.thresholds[self.slots - 1] != [0.0] {
            return Err(Error::Config("the last slot must always stop".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> FrameConfig {
        FrameConfig {
            symbols: self.symbols,
            slots: self.slots,
            antennas: self.antennas,
        }
    }

    pub fn thresholds(&self, k: usize) -> &[f64] {
        &self.thresholds[k]
    }

    /// Stop-region membership at slot `k`, ignoring earlier decisions.
    pub fn in_stop_region(&self, k: usize, v: f64) -> bool {
        let count = self.thresholds[k].iter().filter(|&&l| l <= v).count();
        count % 2 == 1
    }

    /// The single threshold of each slot `1..N`, if every such slot has one.
    pub fn single_thresholds(&self) -> Option<Vec<f64>> {
        self.thresholds[1..]
            .iter()
            .map(|l| if l.len() == 1 { Some(l[0]) } else { None })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Decision at slot `k` for estimate power `v`. A previous stop is final and
/// the last slot always stops.
pub fn decide(policy: &PolicyTable, v: f64, k: usize, prev: Decision) -> Decision {
    if prev == Decision::Stop || k + 1 >= policy.slots || policy.in_stop_region(k, v) {
        Decision::Stop
    } else {
        Decision::Continue
    }
}

struct Expectation<'a> {
    gl: &'a GaussLegendre,
    delta: f64,
}

impl Expectation<'_> {
    /// `E[J(V_{k+1}) | V_k = v]` for the grid row `next`.
    fn eval(&self, kernel: &TransitionKernel, v: f64, next: &[f64]) -> f64 {
        let cond: ConditionedKernel = kernel.given(v);
        let mean = kernel.mean(v);
        let sd = kernel.variance(v).sqrt();
        let lo = (mean - WINDOW_BELOW_SD * sd).max(0.0);
        let hi = mean + WINDOW_ABOVE_SD * sd;
        let width = (hi - lo) / QUAD_PANELS as f64;
        let mut mass = 0.0;
        let mut acc = 0.0;
        for p in 0..QUAD_PANELS {
            let a = lo + p as f64 * width;
            for (u, w) in self.gl.mapped(a, a + width) {
                let f = w * cond.pdf(u);
                mass += f;
                acc += f * interpolate(next, self.delta, u);
            }
        }
        acc + (1.0 - mass).max(0.0) * interpolate(next, self.delta, mean)
    }
}

/// Backward induction over slots `N-1, ..., 0`.
pub fn solve_bellman(cfg: &FrameConfig, model: &ChannelModel, grid: GridSpec) -> Result<(ValueGrid, PolicyTable)> {
    let sigma2 = model.noise_var();
    match linalg::scaled_identity(&model.effective_covariance(), 1e-12) {
        Some(c) if (c - 1.0).abs() < 1e-12 => {}
        _ => {
            return Err(Error::invalid(
                "the stopping rule is defined for a spatially white, unit-power channel",
            ))
        }
    }
    grid.check_coverage(cfg, sigma2)?;
    let n = cfg.slots;
    let m = cfg.antennas;
    let xs: Vec<f64> = (0..=grid.points).map(|i| grid.value(i)).collect();
    let gl = GaussLegendre::new(QUAD_NODES);
    let expect = Expectation {
        gl: &gl,
        delta: grid.delta,
    };

    let mut values = vec![Vec::new(); n];
    let mut continuation = vec![Vec::new(); n.saturating_sub(1)];
    let mut thresholds = vec![Vec::new(); n];

    let last = StopEnergyCoeffs::new(n - 1, cfg, sigma2)?;
    values[n - 1] = xs.iter().map(|&v| last.a * last.efficiency(v)).collect();
    thresholds[n - 1] = vec![0.0];

    for k in (0..n - 1).rev() {
        let coeffs = StopEnergyCoeffs::new(k, cfg, sigma2)?;
        let kernel = TransitionKernel::new(k, m, sigma2);
        let next = &values[k + 1];
        let cont: Vec<f64> = xs.par_iter().map(|&v| expect.eval(&kernel, v, next)).collect();
        let stop_energy = |v: f64| coeffs.a * coeffs.efficiency(v);
        let row: Vec<f64> = xs.iter().zip(&cont).map(|(&v, &c)| stop_energy(v).max(c)).collect();

        let stops: Vec<bool> = xs.iter().zip(&cont).map(|(&v, &c)| stop_energy(v) >= c).collect();
        let mut list = Vec::new();
        if stops[0] {
            list.push(0.0);
        }
        if k > 0 {
            let gap = |v: f64| stop_energy(v) - expect.eval(&kernel, v, next);
            for i in 1..xs.len() {
                if stops[i] != stops[i - 1] {
                    let root = bisect(gap, xs[i - 1], xs[i], 1e-12 * grid.v_max())?;
                    list.push(root);
                }
            }
            // the crossover can lie past the covered range
            if !stops[xs.len() - 1] {
                let mut a = grid.v_max();
                let mut b = 2.0 * a;
                while gap(b) < 0.0 && b < FAR_SEARCH_LIMIT * grid.v_max() {
                    a = b;
                    b *= 2.0;
                }
                if gap(b) >= 0.0 {
                    list.push(bisect(gap, a, b, 1e-12 * b)?);
                }
            }
        }
        thresholds[k] = list;
        continuation[k] = cont;
        values[k] = row;
    }

    let policy = PolicyTable {
        version: POLICY_FORMAT_VERSION,
        symbols: cfg.symbols,
        slots: n,
        antennas: m,
        noise_var: sigma2,
        grid: Some(grid),
        thresholds,
    };
    Ok((
        ValueGrid {
            grid,
            values,
            continuation,
        },
        policy,
    ))
}

/// Thresholds of the last two slots in closed form: `(lambda_{N-1},
/// lambda_{N-2})`.
///
/// At slot `N-2` both the stop energy and the one-step continuation are
/// affine in `v`, so the threshold is the root of their difference, clamped
/// at zero. A vanishing slope (only possible when `N = 2`) yields zero.
pub fn threshold_closed_form_last_two(cfg: &FrameConfig, noise_var: f64) -> Result<(f64, f64)> {
    let n = cfg.slots;
    if n < 2 {
        return Err(Error::invalid("need at least two slots"));
    }
    let k = n - 2;
    let c = StopEnergyCoeffs::new(k, cfg, noise_var)?;
    let kf = k as f64;
    let ms = cfg.antennas as f64 * noise_var;
    let numerator = c.a * c.b * c.g - c.d * c.f;
    let denominator = c.d * kf * kf * (kf + 1.0 + ms) - c.a * c.g * c.c;
    if denominator == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((0.0, (numerator / denominator).max(0.0)))
}

/// Result of running a stopping rule over one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutcome {
    /// Number of estimation slots used.
    pub kappa: usize,
    /// Estimate power when stopping (0 for `kappa = 0`).
    pub v_stop: f64,
    /// Energy harvested over the remaining `m (N - kappa)` symbols with unit
    /// transmit power.
    pub energy: f64,
}

/// Runs the LS recursion slot by slot and stops when `rule(k, v)` says so.
/// The last slot always stops.
pub fn run_stopping_rule<F>(draw: &FrameDraw, cfg: &FrameConfig, mut rule: F) -> PolicyOutcome
where
    F: FnMut(usize, f64) -> Decision,
{
    let n = cfg.slots;
    let m = cfg.antennas as f64;
    let mut h_hat = CVector::zeros(cfg.antennas);
    let mut v = 0.0;
    let mut kappa = n - 1;
    for k in 0..n {
        if k > 0 {
            // h_hat_k = ((k-1) h_hat_{k-1} + h + sqrt(m) z_k) / k
            let prev = (k - 1) as f64;
            h_hat = (&h_hat * Complex64::new(prev, 0.0) + &draw.h + &draw.noise[k - 1] * Complex64::new(m.sqrt(), 0.0))
                / Complex64::new(k as f64, 0.0);
            v = h_hat.norm_squared();
        }
        if k + 1 == n || rule(k, v) == Decision::Stop {
            kappa = k;
            break;
        }
    }
    let remaining = m * (n - kappa) as f64;
    let per_symbol = if kappa == 0 || v == 0.0 {
        draw.h.norm_squared() / m
    } else {
        h_hat.dotc(&draw.h).norm_sqr() / v
    };
    PolicyOutcome {
        kappa,
        v_stop: v,
        energy: remaining * per_symbol,
    }
}

/// Applies `policy` to a pre-drawn frame.
pub fn run_policy_on(policy: &PolicyTable, draw: &FrameDraw) -> PolicyOutcome {
    let cfg = policy.frame();
    run_stopping_rule(draw, &cfg, |k, v| decide(policy, v, k, Decision::Continue))
}

/// Draws one frame from `model` and applies `policy` to it.
pub fn simulate_policy<R: rand::Rng + ?Sized>(
    policy: &PolicyTable,
    model: &ChannelModel,
    cfg: &FrameConfig,
    rng: &mut R,
) -> Result<PolicyOutcome> {
    if policy.frame() != *cfg {
        return Err(Error::invalid("policy was solved for a different frame layout"));
    }
    if model.antennas() != cfg.antennas {
        return Err(Error::Dimension {
            expected: cfg.antennas,
            got: model.antennas(),
        });
    }
    let draw = FrameDraw::sample(model, cfg.slots, rng);
    Ok(run_policy_on(policy, &draw))
}

/// Expected energy of stopping now against continuing once at `(v, k)`,
/// without further lookahead.
pub fn one_step_gain(v: f64, k: usize, cfg: &FrameConfig, noise_var: f64) -> Result<f64> {
    let c = StopEnergyCoeffs::new(k, cfg, noise_var)?;
    Ok(expected_next_stop_energy(v, k, cfg, noise_var)? - c.a * c.efficiency(v))
}
