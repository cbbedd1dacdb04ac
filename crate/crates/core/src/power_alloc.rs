//! Joint law of the stopping slot and stopping estimate power, and the
//! greedy transmit-power allocators built on it.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::beamforming::StopEnergyCoeffs;
use crate::channel::{estimate_power_marginal, ChannelModel, FrameConfig, FrameDraw, TransitionKernel};
use crate::dp_policy::{run_policy_on, PolicyTable, GRID_COVERAGE};
use crate::numerics::{CompensatedSum, GaussLegendre};
use crate::rng::substream;
use crate::{Error, Result};

pub const DEFAULT_DISTRIBUTION_CELLS: usize = 600;

const QUAD_NODES: usize = 8;
const WINDOW_BELOW_SD: f64 = 10.0;
const WINDOW_ABOVE_SD: f64 = 16.0;
const VERTEX_ENUMERATION_MAX_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionMethod {
    Forward,
    MonteCarlo,
    Marginal,
}

/// Probability mass of stopping at slot `kappa` with estimate power in cell
/// `[i delta, (i+1) delta)`; the last cell also holds everything above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingDistribution {
    pub delta: f64,
    pub cells: usize,
    pub slots: usize,
    pub antennas: usize,
    pub noise_var: f64,
    pub method: DistributionMethod,
    /// `mass[kappa][cell]`.
    pub mass: Vec<Vec<f64>>,
}

impl StoppingDistribution {
    fn empty(cfg: &FrameConfig, noise_var: f64, delta: f64, cells: usize, method: DistributionMethod) -> Result<Self> {
        if !(delta > 0.0) || cells == 0 {
            return Err(Error::invalid("distribution cells must have positive width"));
        }
        Ok(Self {
            delta,
            cells,
            slots: cfg.slots,
            antennas: cfg.antennas,
            noise_var,
            method,
            mass: vec![vec![0.0; cells]; cfg.slots],
        })
    }

    /// Cell width covering the estimate-power marginals with `cells` cells.
    pub fn default_delta(m: usize, noise_var: f64, cells: usize) -> Result<f64> {
        let dist = Gamma::new(m as f64, 1.0 / (1.0 + m as f64 * noise_var)).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(dist.inverse_cdf(GRID_COVERAGE) / cells as f64)
    }

    pub fn frame(&self) -> FrameConfig {
        FrameConfig {
            symbols: self.slots * self.antennas,
            slots: self.slots,
            antennas: self.antennas,
        }
    }

    pub fn cell_of(&self, v: f64) -> usize {
        ((v / self.delta).max(0.0) as usize).min(self.cells - 1)
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        let lo = cell as f64 * self.delta;
        let hi = if cell + 1 == self.cells {
            f64::INFINITY
        } else {
            lo + self.delta
        };
        (lo, hi)
    }

    /// Representative estimate power of a cell (its midpoint; `0` for the
    /// isotropic slot).
    pub fn cell_value(&self, kappa: usize, cell: usize) -> f64 {
        if kappa == 0 {
            0.0
        } else {
            (cell as f64 + 0.5) * self.delta
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().flatten().copied().collect::<CompensatedSum>().value()
    }

    /// `q_kappa`, the probability of stopping at each slot.
    pub fn slot_masses(&self) -> Vec<f64> {
        self.mass.iter().map(|row| row.iter().sum()).collect()
    }

    /// Merges groups of `factor` adjacent cells.
    pub fn coarsen(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let cells = self.cells.div_ceil(factor);
        let mass = self
            .mass
            .iter()
            .map(|row| {
                let mut out = vec![0.0; cells];
                for (i, &x) in row.iter().enumerate() {
                    out[i / factor] += x;
                }
                out
            })
            .collect();
        Self {
            delta: self.delta * factor as f64,
            cells,
            mass,
            ..self.clone()
        }
    }

    /// Total-variation distance to a distribution on the same cells.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        if self.cells != other.cells || self.slots != other.slots || (self.delta - other.delta).abs() > 1e-12 * self.delta {
            return Err(Error::invalid("distributions live on different cells"));
        }
        let sum: f64 = self
            .mass
            .iter()
            .flatten()
            .zip(other.mass.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * sum)
    }

    /// Non-zero cells as `kappa,v_bin_low,v_bin_high,mass` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["kappa", "v_bin_low", "v_bin_high", "mass"])?;
        for (kappa, row) in self.mass.iter().enumerate() {
            for (cell, &x) in row.iter().enumerate() {
                if x > 0.0 {
                    let (lo, hi) = self.cell_bounds(cell);
                    wtr.write_record([kappa.to_string(), lo.to_string(), hi.to_string(), x.to_string()])?;
                }
            }
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Stopping law of the fixed-length rule at `kappa`: the marginal of the
    /// estimate power after `kappa` slots.
    pub fn fixed_kappa(cfg: &FrameConfig, noise_var: f64, kappa: usize, delta: f64, cells: usize) -> Result<Self> {
        if kappa >= cfg.slots {
            return Err(Error::invalid(format!("stopping slot {kappa} outside 0..{}", cfg.slots)));
        }
        let mut dist = Self::empty(cfg, noise_var, delta, cells, DistributionMethod::Marginal)?;
        if kappa == 0 {
            dist.mass[0][0] = 1.0;
            return Ok(dist);
        }
        let law = estimate_power_marginal(kappa, cfg.antennas, noise_var)?;
        for cell in 0..cells {
            let (lo, hi) = dist.cell_bounds(cell);
            let upper = if hi.is_finite() { law.cdf(hi) } else { 1.0 };
            dist.mass[kappa][cell] = upper - law.cdf(lo);
        }
        Ok(dist)
    }
}

// A piece of a cell on one side of every threshold of its slot.
#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    cell: usize,
    stop: bool,
}

fn pieces(policy: &PolicyTable, k: usize, delta: f64, cells: usize) -> Vec<Piece> {
    let forced_stop = k + 1 >= policy.slots;
    let cuts = policy.thresholds(k);
    let mut out = Vec::with_capacity(cells + cuts.len());
    for cell in 0..cells {
        let lo = cell as f64 * delta;
        let hi = if cell + 1 == cells { f64::INFINITY } else { lo + delta };
        let mut edges = vec![lo];
        edges.extend(cuts.iter().copied().filter(|&c| c > lo && c < hi));
        edges.push(hi);
        for w in edges.windows(2) {
            let probe = if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { w[0] + 0.5 * delta };
            out.push(Piece {
                lo: w[0],
                hi: w[1],
                cell,
                stop: forced_stop || policy.in_stop_region(k, probe),
            });
        }
    }
    out
}

/// Forward propagation of the continuation mass through the transition
/// kernel, peeling off the stop-region mass slot by slot.
///
/// Mass that continues from a piece of a cell is carried on to the next
/// slot as a point mass at the piece midpoint.
pub fn stopping_distribution_forward(policy: &PolicyTable, cells: usize) -> Result<StoppingDistribution> {
    let cfg = policy.frame();
    let sigma2 = policy.noise_var;
    let delta = StoppingDistribution::default_delta(cfg.antennas, sigma2, cells)?;
    stopping_distribution_forward_with(policy, delta, cells)
}

/// [`stopping_distribution_forward`] on explicit cells.
pub fn stopping_distribution_forward_with(policy: &PolicyTable, delta: f64, cells: usize) -> Result<StoppingDistribution> {
    let cfg = policy.frame();
    let m = cfg.antennas;
    let sigma2 = policy.noise_var;
    let mut dist = StoppingDistribution::empty(&cfg, sigma2, delta, cells, DistributionMethod::Forward)?;
    if cfg.slots == 1 || policy.in_stop_region(0, 0.0) {
        dist.mass[0][0] = 1.0;
        return Ok(dist);
    }
    let gl = GaussLegendre::new(QUAD_NODES);

    // slot 1 from the exact marginal
    let first = estimate_power_marginal(1, m, sigma2)?;
    let mut sources: Vec<(f64, f64)> = Vec::new();
    for piece in pieces(policy, 1, delta, cells) {
        let upper = if piece.hi.is_finite() { first.cdf(piece.hi) } else { 1.0 };
        let w = upper - first.cdf(piece.lo);
        settle(&mut dist, &mut sources, 1, piece, w, delta);
    }

    for k in 1..cfg.slots - 1 {
        if sources.is_empty() {
            break;
        }
        let kernel = TransitionKernel::new(k, m, sigma2);
        let targets = pieces(policy, k + 1, delta, cells);
        let arrivals: Vec<Vec<(usize, f64)>> = sources
            .par_iter()
            .map(|&(u, w)| spread(&kernel, &gl, u, w, &targets))
            .collect();
        let mut incoming = vec![0.0; targets.len()];
        for list in arrivals {
            for (j, x) in list {
                incoming[j] += x;
            }
        }
        sources.clear();
        for (piece, w) in targets.iter().zip(incoming) {
            settle(&mut dist, &mut sources, k + 1, *piece, w, delta);
        }
    }
    Ok(dist)
}

fn settle(dist: &mut StoppingDistribution, sources: &mut Vec<(f64, f64)>, k: usize, piece: Piece, w: f64, delta: f64) {
    if w <= 0.0 {
        return;
    }
    if piece.stop {
        dist.mass[k][piece.cell] += w;
    } else {
        let mid = if piece.hi.is_finite() {
            0.5 * (piece.lo + piece.hi)
        } else {
            piece.lo + 0.5 * delta
        };
        sources.push((mid, w));
    }
}

// Splits mass `w` sitting at `u` over the target pieces, normalizing the
// quadrature so that no mass is created or lost.
fn spread(kernel: &TransitionKernel, gl: &GaussLegendre, u: f64, w: f64, targets: &[Piece]) -> Vec<(usize, f64)> {
    let cond = kernel.given(u);
    let mean = kernel.mean(u);
    let sd = kernel.variance(u).sqrt();
    let lo = (mean - WINDOW_BELOW_SD * sd).max(0.0);
    let hi = mean + WINDOW_ABOVE_SD * sd;
    let start = targets.partition_point(|p| p.hi <= lo);
    let mut parts = Vec::new();
    let mut total = 0.0;
    for (j, p) in targets.iter().enumerate().skip(start) {
        if p.lo >= hi {
            break;
        }
        let a = p.lo.max(lo);
        let b = p.hi.min(hi);
        if b <= a {
            continue;
        }
        let x = gl.integrate(|v| cond.pdf(v), a, b);
        if x > 0.0 {
            total += x;
            parts.push((j, x));
        }
    }
    if total <= 0.0 {
        // the window fell between quadrature nodes: keep the mass at the mean
        let j = targets.partition_point(|p| p.hi <= mean).min(targets.len() - 1);
        return vec![(j, w)];
    }
    parts.into_iter().map(|(j, x)| (j, w * x / total)).collect()
}

/// Histogram of `frames` simulated stopping outcomes on the given cells.
/// Frame `i` draws from `substream(seed, i)`.
pub fn stopping_distribution_mc(
    policy: &PolicyTable,
    model: &ChannelModel,
    frames: usize,
    seed: u64,
    delta: f64,
    cells: usize,
) -> Result<StoppingDistribution> {
    let cfg = policy.frame();
    if model.antennas() != cfg.antennas {
        return Err(Error::Dimension {
            expected: cfg.antennas,
            got: model.antennas(),
        });
    }
    if frames == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    let mut dist = StoppingDistribution::empty(&cfg, policy.noise_var, delta, cells, DistributionMethod::MonteCarlo)?;
    let outcomes: Vec<(usize, f64)> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let draw = FrameDraw::sample(model, cfg.slots, &mut rng);
            let out = run_policy_on(policy, &draw);
            (out.kappa, out.v_stop)
        })
        .collect();
    let unit = 1.0 / frames as f64;
    for (kappa, v) in outcomes {
        let cell = dist.cell_of(v);
        dist.mass[kappa][cell] += unit;
    }
    Ok(dist)
}

/// Power-transfer efficiency `B_kappa + C_kappa v`: expected harvested
/// energy per symbol and unit power after stopping at `kappa`.
pub fn efficiency(v: f64, kappa: usize, cfg: &FrameConfig, noise_var: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::invalid("estimate power must be non-negative"));
    }
    Ok(StopEnergyCoeffs::new(kappa, cfg, noise_var)?.efficiency(v))
}

/// One decision variable of the allocation LP: probability mass, energy cost
/// per unit power (`m (N - kappa)` symbols) and efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpBin {
    pub mass: f64,
    pub cost: f64,
    pub eta: f64,
}

/// Optimal powers and objective of an allocation LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub power: Vec<f64>,
    pub objective: f64,
    pub spend: f64,
}

fn check_caps(p1: f64, p2: f64) -> Result<()> {
    if !(p1 > 0.0) || !p1.is_finite() {
        return Err(Error::invalid("per-frame power cap P1 must be positive"));
    }
    if !(p2 > 0.0) {
        return Err(Error::invalid("average energy budget P2 must be positive"));
    }
    Ok(())
}

fn objective_of(bins: &[LpBin], power: &[f64]) -> (f64, f64) {
    let mut obj = CompensatedSum::default();
    let mut spend = CompensatedSum::default();
    for (b, &p) in bins.iter().zip(power) {
        obj.add(b.mass * b.cost * b.eta * p);
        spend.add(b.mass * b.cost * p);
    }
    (obj.value(), spend.value())
}

// Fills bins in `order` at P1 until the budget runs out; the bin that
// exhausts it gets the fractional remainder.
fn greedy_fill(bins: &[LpBin], order: &[usize], p1: f64, p2: f64) -> LpSolution {
    let mut power = vec![0.0; bins.len()];
    let mut left = p2;
    for &i in order {
        let unit = bins[i].mass * bins[i].cost;
        if unit <= 0.0 {
            // free bins (zero mass) take the cap
            power[i] = p1;
            continue;
        }
        if left <= 0.0 {
            break;
        }
        let p = (left / unit).min(p1);
        power[i] = p;
        left -= p * unit;
    }
    let (objective, spend) = objective_of(bins, &power);
    LpSolution {
        power,
        objective,
        spend,
    }
}

fn eta_order(bins: &[LpBin]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bins.len()).collect();
    // stable: equal efficiencies keep their (slot, cell) order
    order.sort_by(|&a, &b| bins[b].eta.total_cmp(&bins[a].eta));
    order
}

/// Exact LP optimum: vertex enumeration for up to 16 bins, bisection on
/// the budget multiplier beyond.
pub fn brute_force_lp(bins: &[LpBin], p1: f64, p2: f64) -> Result<LpSolution> {
    check_caps(p1, p2)?;
    if bins.iter().any(|b| !(b.mass >= 0.0) || !(b.cost >= 0.0) || !b.eta.is_finite()) {
        return Err(Error::invalid("LP bins need non-negative mass and cost and a finite efficiency"));
    }
    if bins.len() <= VERTEX_ENUMERATION_MAX_BINS {
        Ok(vertex_enumeration(bins, p1, p2))
    } else {
        dual_bisection(bins, p1, p2)
    }
}

// Every vertex of {0 <= p <= P1, spend <= P2} has at most one coordinate
// strictly between its bounds.
fn vertex_enumeration(bins: &[LpBin], p1: f64, p2: f64) -> LpSolution {
    let n = bins.len();
    let unit: Vec<f64> = bins.iter().map(|b| b.mass * b.cost).collect();
    let tol = 1e-12 * p2.max(1.0);
    let mut best: Option<LpSolution> = None;
    let mut consider = |power: Vec<f64>| {
        let (objective, spend) = objective_of(bins, &power);
        if spend > p2 + tol {
            return;
        }
        if best.as_ref().is_none_or(|b| objective > b.objective + 1e-15 * objective.abs()) {
            best = Some(LpSolution {
                power,
                objective,
                spend,
            });
        }
    };
    for pattern in 0u64..(1u64 << n) {
        let at_cap = |i: usize| pattern >> i & 1 == 1;
        let base: Vec<f64> = (0..n).map(|i| if at_cap(i) { p1 } else { 0.0 }).collect();
        consider(base.clone());
        let fixed: f64 = (0..n).filter(|&i| at_cap(i)).map(|i| unit[i] * p1).sum();
        for free in 0..n {
            if at_cap(free) || unit[free] <= 0.0 {
                continue;
            }
            let p = (p2 - fixed) / unit[free];
            if p > 0.0 && p < p1 {
                let mut power = base.clone();
                power[free] = p;
                consider(power);
            }
        }
    }
    best.expect("the zero allocation is always feasible")
}

// Maximizes the Lagrangian sum (eta - mu) x over the box for a multiplier
// mu found by bisection; bins exactly at mu split the leftover budget.
fn dual_bisection(bins: &[LpBin], p1: f64, p2: f64) -> Result<LpSolution> {
    let unit: Vec<f64> = bins.iter().map(|b| b.mass * b.cost).collect();
    let spend_above = |mu: f64| -> f64 {
        bins.iter()
            .zip(&unit)
            .filter(|(b, _)| b.eta > mu)
            .map(|(_, u)| u * p1)
            .sum()
    };
    let full: f64 = unit.iter().map(|u| u * p1).sum();
    let mut power = vec![0.0; bins.len()];
    if full <= p2 {
        power.iter_mut().for_each(|p| *p = p1);
    } else {
        // spend_above(lo) > p2 >= spend_above(hi) throughout
        let mut lo = bins.iter().map(|b| b.eta).fold(f64::INFINITY, f64::min) - 1.0;
        let mut hi = bins.iter().map(|b| b.eta).fold(f64::NEG_INFINITY, f64::max) + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spend_above(mid) > p2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if !(spend_above(hi) <= p2) {
            return Err(Error::Convergence("budget multiplier bisection".into()));
        }
        let mut left = p2;
        for (i, b) in bins.iter().enumerate() {
            if b.eta > hi {
                power[i] = p1;
                left -= unit[i] * p1;
            }
        }
        // the marginal bins sit inside the final bracket
        for (i, b) in bins.iter().enumerate() {
            if b.eta > lo && b.eta <= hi && left > 0.0 && unit[i] > 0.0 {
                let p = (left / unit[i]).min(p1);
                power[i] = p;
                left -= unit[i] * p;
            }
        }
    }
    let (objective, spend) = objective_of(bins, &power);
    Ok(LpSolution {
        power,
        objective,
        spend,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    Lcpa,
    Lpa,
    Cpa,
}

impl fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocationMode::Lcpa => "LCPA",
            AllocationMode::Lpa => "LPA",
            AllocationMode::Cpa => "CPA",
        })
    }
}

/// Transmit power for frames stopping at `kappa` with estimate power in
/// `[v_low, v_high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub kappa: usize,
    pub v_bin_low: f64,
    pub v_bin_high: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub mode: AllocationMode,
    pub p1: f64,
    pub p2: f64,
    /// Expected harvested energy per frame.
    pub objective: f64,
    /// Expected energy spent per frame.
    pub spend: f64,
    pub slots: usize,
    pub antennas: usize,
    pub noise_var: f64,
    pub delta: f64,
    pub cells: usize,
    pub entries: Vec<PlanEntry>,
    /// Efficiency of the bin that exhausted the budget; bins never seen by
    /// the allocator get `p1` above it and nothing below.
    pub eta_cutoff: f64,
}

impl AllocationPlan {
    /// Power for a frame that stopped at `kappa` with estimate power `v`.
    pub fn power_for(&self, kappa: usize, v: f64) -> f64 {
        let covering = |e: &&PlanEntry| e.kappa == kappa && (kappa == 0 || (v >= e.v_bin_low && v < e.v_bin_high));
        if let Some(e) = self.entries.iter().find(covering) {
            return e.power;
        }
        let cfg = FrameConfig {
            symbols: self.slots * self.antennas,
            slots: self.slots,
            antennas: self.antennas,
        };
        let v_rep = match self.mode {
            AllocationMode::Lpa => return 0.0,
            _ => {
                let cell = ((v / self.delta).max(0.0) as usize).min(self.cells - 1);
                (cell as f64 + 0.5) * self.delta
            }
        };
        match efficiency(v_rep, kappa, &cfg, self.noise_var) {
            Ok(eta) if eta > self.eta_cutoff => self.p1,
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["kappa", "v_bin_low", "v_bin_high", "power"])?;
        for e in &self.entries {
            wtr.write_record([
                e.kappa.to_string(),
                e.v_bin_low.to_string(),
                e.v_bin_high.to_string(),
                e.power.to_string(),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct BinIndex {
    kappa: usize,
    cell: usize,
}

fn bins_of(dist: &StoppingDistribution) -> Result<(Vec<LpBin>, Vec<BinIndex>)> {
    let cfg = dist.frame();
    let mut bins = Vec::new();
    let mut index = Vec::new();
    for (kappa, row) in dist.mass.iter().enumerate() {
        let coeffs = StopEnergyCoeffs::new(kappa, &cfg, dist.noise_var)?;
        for (cell, &mass) in row.iter().enumerate() {
            if mass <= 0.0 {
                continue;
            }
            bins.push(LpBin {
                mass,
                cost: coeffs.a,
                eta: coeffs.efficiency(dist.cell_value(kappa, cell)),
            });
            index.push(BinIndex { kappa, cell });
        }
    }
    Ok((bins, index))
}

fn marginal_eta(bins: &[LpBin], order: &[usize], sol: &LpSolution, p1: f64) -> f64 {
    // efficiency of the last bin that received any power below the cap,
    // or of the last full bin when the budget is slack
    let mut cutoff = f64::NEG_INFINITY;
    for &i in order {
        if sol.power[i] <= 0.0 {
            break;
        }
        cutoff = bins[i].eta;
        if sol.power[i] < p1 {
            break;
        }
    }
    cutoff
}

fn plan_from(
    mode: AllocationMode,
    dist: &StoppingDistribution,
    p1: f64,
    p2: f64,
    sol: &LpSolution,
    entries: Vec<PlanEntry>,
    eta_cutoff: f64,
) -> AllocationPlan {
    AllocationPlan {
        mode,
        p1,
        p2,
        objective: sol.objective,
        spend: sol.spend,
        slots: dist.slots,
        antennas: dist.antennas,
        noise_var: dist.noise_var,
        delta: dist.delta,
        cells: dist.cells,
        entries,
        eta_cutoff,
    }
}

/// Greedy allocation over (stopping slot, estimate-power cell) pairs.
pub fn allocate_lcpa(dist: &StoppingDistribution, p1: f64, p2: f64) -> Result<AllocationPlan> {
    check_caps(p1, p2)?;
    let (bins, index) = bins_of(dist)?;
    let order = eta_order(&bins);
    let sol = greedy_fill(&bins, &order, p1, p2);
    let entries = index
        .iter()
        .zip(&sol.power)
        .map(|(ix, &power)| {
            let (lo, hi) = dist.cell_bounds(ix.cell);
            PlanEntry {
                kappa: ix.kappa,
                v_bin_low: lo,
                v_bin_high: hi,
                power,
            }
        })
        .collect();
    let cutoff = marginal_eta(&bins, &order, &sol, p1);
    Ok(plan_from(AllocationMode::Lcpa, dist, p1, p2, &sol, entries, cutoff))
}

/// Per-slot bins with the mass-averaged efficiency of each slot.
pub fn slot_bins(dist: &StoppingDistribution) -> Result<(Vec<LpBin>, Vec<usize>)> {
    let cfg = dist.frame();
    let mut bins = Vec::new();
    let mut kappas = Vec::new();
    for (kappa, row) in dist.mass.iter().enumerate() {
        let q: f64 = row.iter().sum();
        if q <= 0.0 {
            continue;
        }
        let coeffs = StopEnergyCoeffs::new(kappa, &cfg, dist.noise_var)?;
        let harvest: f64 = row
            .iter()
            .enumerate()
            .map(|(cell, &x)| x * coeffs.efficiency(dist.cell_value(kappa, cell)))
            .sum();
        bins.push(LpBin {
            mass: q,
            cost: coeffs.a,
            eta: harvest / q,
        });
        kappas.push(kappa);
    }
    Ok((bins, kappas))
}

/// Greedy allocation over stopping slots only; the power does not depend
/// on the estimate power.
pub fn allocate_lpa(dist: &StoppingDistribution, p1: f64, p2: f64) -> Result<AllocationPlan> {
    check_caps(p1, p2)?;
    let (bins, kappas) = slot_bins(dist)?;
    let order = eta_order(&bins);
    let sol = greedy_fill(&bins, &order, p1, p2);
    let entries = kappas
        .iter()
        .zip(&sol.power)
        .map(|(&kappa, &power)| PlanEntry {
            kappa,
            v_bin_low: 0.0,
            v_bin_high: f64::INFINITY,
            power,
        })
        .collect();
    let cutoff = marginal_eta(&bins, &order, &sol, p1);
    Ok(plan_from(AllocationMode::Lpa, dist, p1, p2, &sol, entries, cutoff))
}

/// Greedy allocation over estimate-power cells for a fixed preamble length.
/// `dist` must be supported on a single stopping slot.
pub fn allocate_cpa(dist: &StoppingDistribution, p1: f64, p2: f64) -> Result<AllocationPlan> {
    check_caps(p1, p2)?;
    let support: Vec<usize> = dist
        .slot_masses()
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > 0.0)
        .map(|(k, _)| k)
        .collect();
    if support.len() != 1 {
        return Err(Error::invalid("CPA needs a distribution supported on one stopping slot"));
    }
    let (bins, index) = bins_of(dist)?;
    // within one slot the efficiency is increasing in v, so sort by cell
    let mut order: Vec<usize> = (0..bins.len()).collect();
    order.sort_by(|&a, &b| index[b].cell.cmp(&index[a].cell));
    let sol = greedy_fill(&bins, &order, p1, p2);
    let entries = index
        .iter()
        .zip(&sol.power)
        .map(|(ix, &power)| {
            let (lo, hi) = dist.cell_bounds(ix.cell);
            PlanEntry {
                kappa: ix.kappa,
                v_bin_low: lo,
                v_bin_high: hi,
                power,
            }
        })
        .collect();
    let cutoff = marginal_eta(&bins, &order, &sol, p1);
    Ok(plan_from(AllocationMode::Cpa, dist, p1, p2, &sol, entries, cutoff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp_policy::{solve_bellman, GridSpec};
    use rand::Rng;

    fn random_bins(rng: &mut impl Rng, n: usize) -> Vec<LpBin> {
        (0..n)
            .map(|_| LpBin {
                mass: rng.random::<f64>(),
                cost: rng.random_range(1..40) as f64,
                eta: rng.random_range(0.05..3.0),
            })
            .collect()
    }

    fn direct_dist(cfg: &FrameConfig, rows: Vec<Vec<f64>>) -> StoppingDistribution {
        let cells = rows[0].len();
        let mut d = StoppingDistribution::empty(cfg, 1.0, 1.0, cells, DistributionMethod::Forward).unwrap();
        d.mass = rows;
        d
    }

    #[test]
    fn efficiency_examples() {
        let cfg = FrameConfig::new(126, 3).unwrap();
        assert!((efficiency(4.0, 3, &cfg, 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((efficiency(0.0, 3, &cfg, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(efficiency(1.0, 42, &cfg, 1.0).is_err());
        for k in 1..42 {
            assert!(efficiency(2.0, k, &cfg, 1.0).unwrap() > efficiency(1.0, k, &cfg, 1.0).unwrap());
        }
    }

    #[test]
    fn three_bin_example() {
        let bins = [
            LpBin { mass: 0.5, cost: 10.0, eta: 0.9 },
            LpBin { mass: 0.3, cost: 20.0, eta: 0.5 },
            LpBin { mass: 0.2, cost: 30.0, eta: 0.2 },
        ];
        let g = greedy_fill(&bins, &eta_order(&bins), 2.0, 12.0);
        assert_eq!(g.power[0], 2.0);
        assert!((g.power[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.power[2], 0.0);
        assert!((g.spend - 12.0).abs() < 1e-12);
        let lp = brute_force_lp(&bins, 2.0, 12.0).unwrap();
        assert!((lp.objective - g.objective).abs() < 1e-12);
        assert!((lp.objective - (0.9 * 10.0 + 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_bin_lp() {
        let bins = [LpBin { mass: 0.5, cost: 4.0, eta: 1.0 }];
        for p2 in [0.5, 1.0, 10.0] {
            let lp = brute_force_lp(&bins, 3.0, p2).unwrap();
            assert!((lp.power[0] - (3.0f64).min(p2 / 2.0)).abs() < 1e-14);
        }
        assert!(brute_force_lp(&bins, 3.0, 0.0).is_err());
    }

    #[test]
    fn greedy_matches_lp_oracles() {
        let mut rng = substream(31, 0);
        for _ in 0..200 {
            let n = rng.random_range(1..=12);
            let bins = random_bins(&mut rng, n);
            let p1 = rng.random_range(0.5..5.0);
            let p2 = rng.random_range(0.1..60.0);
            let g = greedy_fill(&bins, &eta_order(&bins), p1, p2);
            let v = vertex_enumeration(&bins, p1, p2);
            let d = dual_bisection(&bins, p1, p2).unwrap();
            assert!((g.objective - v.objective).abs() <= 1e-9 * v.objective.max(1.0));
            assert!((d.objective - v.objective).abs() <= 1e-9 * v.objective.max(1.0));
            assert!(g.spend <= p2 + 1e-9);
        }
    }

    #[test]
    fn lp_is_permutation_invariant() {
        let mut rng = substream(32, 0);
        let bins = random_bins(&mut rng, 9);
        let a = brute_force_lp(&bins, 2.0, 10.0).unwrap();
        let mut rev = bins.clone();
        rev.reverse();
        let b = brute_force_lp(&rev, 2.0, 10.0).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-12);
    }

    #[test]
    fn slack_budget_fills_everything() {
        let cfg = FrameConfig::new(9, 3).unwrap();
        let d = direct_dist(&cfg, vec![vec![0.2, 0.0], vec![0.3, 0.1], vec![0.1, 0.3]]);
        for plan in [allocate_lcpa(&d, 2.0, 1e6).unwrap(), allocate_lpa(&d, 2.0, 1e6).unwrap()] {
            assert!(plan.entries.iter().all(|e| e.power == 2.0));
        }
    }

    #[test]
    fn lpa_never_beats_lcpa() {
        let mut rng = substream(33, 0);
        let cfg = FrameConfig::new(15, 3).unwrap();
        for _ in 0..50 {
            let mut rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
            rows[0] = vec![rng.random::<f64>(), 0.0, 0.0, 0.0];
            let total: f64 = rows.iter().flatten().sum();
            rows.iter_mut().flatten().for_each(|x| *x /= total);
            let d = direct_dist(&cfg, rows);
            let p2 = rng.random_range(0.5..20.0);
            let lcpa = allocate_lcpa(&d, 3.0, p2).unwrap();
            let lpa = allocate_lpa(&d, 3.0, p2).unwrap();
            assert!(lpa.objective <= lcpa.objective + 1e-12);
            let (bins, _) = slot_bins(&d).unwrap();
            let restricted = brute_force_lp(&bins, 3.0, p2).unwrap();
            assert!((restricted.objective - lpa.objective).abs() <= 1e-9 * lpa.objective.max(1.0));
        }
    }

    #[test]
    fn single_slot_support_makes_lpa_equal_cpa_and_lcpa() {
        let cfg = FrameConfig::new(30, 3).unwrap();
        let d = StoppingDistribution::fixed_kappa(&cfg, 1.0, 4, 0.1, 300).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        let cpa = allocate_cpa(&d, 4.0, 60.0).unwrap();
        let lcpa = allocate_lcpa(&d, 4.0, 60.0).unwrap();
        assert!((cpa.objective - lcpa.objective).abs() < 1e-9 * lcpa.objective);
        assert!(cpa.spend <= 60.0 + 1e-9);
        // with the budget fully used, v-aware allocation beats flat power
        let lpa = allocate_lpa(&d, 4.0, 60.0).unwrap();
        assert!(lpa.objective < cpa.objective);
        assert!(allocate_cpa(&direct_dist(&cfg, vec![vec![0.5; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]), 1.0, 1.0).is_ok());
    }

    #[test]
    fn plan_lookup_and_csv() {
        let cfg = FrameConfig::new(30, 3).unwrap();
        let d = StoppingDistribution::fixed_kappa(&cfg, 1.0, 4, 0.5, 40).unwrap();
        let plan = allocate_cpa(&d, 4.0, 30.0).unwrap();
        let high = plan.power_for(4, 19.9);
        let low = plan.power_for(4, 0.1);
        assert!(high >= low);
        assert_eq!(plan.power_for(4, 1e6), plan.power_for(4, 19.9));
        let csv = plan.to_csv().unwrap();
        assert!(csv.starts_with("kappa,v_bin_low,v_bin_high,power\n"));
        assert_eq!(csv.lines().count(), plan.entries.len() + 1);
    }

    #[test]
    fn forward_always_stop_at_one() {
        let cfg = FrameConfig::new(30, 3).unwrap();
        let p = PolicyTable::fixed_length(&cfg, 1.0, 1).unwrap();
        let d = stopping_distribution_forward(&p, 200).unwrap();
        let q = d.slot_masses();
        assert!((q[1] - 1.0).abs() < 1e-12);
        let marginal = StoppingDistribution::fixed_kappa(&cfg, 1.0, 1, d.delta, d.cells).unwrap();
        assert!(d.total_variation(&marginal).unwrap() < 1e-12);
    }

    #[test]
    fn forward_fixed_length_matches_marginal() {
        // continuing everywhere up to kappa reproduces the exact marginal
        let cfg = FrameConfig::new(30, 3).unwrap();
        let p = PolicyTable::fixed_length(&cfg, 1.0, 5).unwrap();
        let d = stopping_distribution_forward(&p, 300).unwrap();
        let marginal = StoppingDistribution::fixed_kappa(&cfg, 1.0, 5, d.delta, d.cells).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        let tv = d.coarsen(10).total_variation(&marginal.coarsen(10)).unwrap();
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn forward_mass_only_in_stop_regions() {
        let cfg = FrameConfig::new(36, 3).unwrap();
        let model = ChannelModel::uncorrelated(3, 1.0).unwrap();
        let (_, policy) = solve_bellman(&cfg, &model, GridSpec::covering(3, 1.0, 300).unwrap()).unwrap();
        let d = stopping_distribution_forward(&policy, 300).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        for (k, row) in d.mass.iter().enumerate().take(cfg.slots - 1) {
            for (cell, &x) in row.iter().enumerate() {
                if x > 0.0 {
                    let (lo, hi) = d.cell_bounds(cell);
                    let any_stop = policy.in_stop_region(k, lo) || policy.in_stop_region(k, hi.min(lo + d.delta) - 1e-12);
                    assert!(any_stop, "mass in continue region at k={k}, cell={cell}");
                }
            }
        }
    }
}
