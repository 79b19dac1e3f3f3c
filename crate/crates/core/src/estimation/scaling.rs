//! M-step by parallel iterative scaling.
//!
//! Each round solves, for every feature `i` independently,
//!
//! ```text
//! g_i(γ) = Σ_x f_i(x) exp(γ f#(x)) p(x) = η_i
//! ```
//!
//! where `f#(x)` counts the active pairs of `x`. With only pairwise features,
//! `f#(x) = k(k-1)/2` for a state with `k` active nodes, so `g_i` collapses to a
//! short sum over `k` once the mass of each feature is binned by `k`.

use crate::distribution::ExactDistribution;
use crate::error::{LmeError, Result};
use crate::estimation::config::{EmisConfig, RootFinderConfig};
use crate::estimation::targets::ConstraintTargets;
use crate::machine::{MachineSpec, WeightMatrix};
use crate::numeric::log_sum_exp_iter;

/// Which clamp bound a saturated update was driven to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Saturation {
    Lower,
    Upper,
}

/// Result of one scaling root solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOutcome {
    pub gamma: f64,
    pub saturation: Option<Saturation>,
    pub iterations: usize,
}

/// Mass of each feature binned by the number of active nodes.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    width: usize,
    mass: Vec<f64>,
}

impl ScalingTable {
    pub fn new(dist: &ExactDistribution) -> Self {
        let spec = dist.spec();
        let m = spec.nodes();
        let width = m + 1;
        let mut pair_index = vec![usize::MAX; m * m];
        for (i, f) in spec.features().iter().enumerate() {
            pair_index[f.a * m + f.b] = i;
        }
        let mut mass = vec![0.0; spec.feature_count() * width];
        for (x, &p) in dist.probs().iter().enumerate() {
            let k = x.count_ones() as usize;
            if k < 2 || p == 0.0 {
                continue;
            }
            let mut outer = x;
            while outer != 0 {
                let a = outer.trailing_zeros() as usize;
                outer &= outer - 1;
                let mut inner = outer;
                while inner != 0 {
                    let b = inner.trailing_zeros() as usize;
                    inner &= inner - 1;
                    mass[pair_index[a * m + b] * width + k] += p;
                }
            }
        }
        Self { width, mass }
    }

    /// Binned mass of feature `i`; entry `k` is `Σ_{x: f_i(x)=1, |x|=k} p(x)`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.mass[i * self.width..(i + 1) * self.width]
    }

    /// `E[f_i]`.
    pub fn expectation(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// `g_i(γ)`.
    pub fn g(&self, i: usize, gamma: f64) -> f64 {
        log_g(&terms(self.row(i)), gamma).exp()
    }
}

#[inline]
fn pair_count(k: usize) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

/// Non-empty `(f#, ln mass)` bins.
fn terms(row: &[f64]) -> Vec<(f64, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, &h)| h > 0.0)
        .map(|(k, &h)| (pair_count(k), h.ln()))
        .collect()
}

fn log_g(terms: &[(f64, f64)], gamma: f64) -> f64 {
    log_sum_exp_iter(terms.iter().map(|&(c, lh)| lh + gamma * c))
}

/// `ln g(γ)` and its derivative, the `g`-weighted mean of `f#`.
fn log_g_and_slope(terms: &[(f64, f64)], gamma: f64) -> (f64, f64) {
    let lg = log_g(terms, gamma);
    let slope = terms
        .iter()
        .map(|&(c, lh)| c * (lh + gamma * c - lg).exp())
        .sum();
    (lg, slope)
}

/// Solves `g(γ) = target` for `target > 0` on the log scale, where `ln g` is
/// increasing and convex in `γ`.
fn solve_root(
    row: &[f64],
    target: f64,
    cfg: &RootFinderConfig,
    feature: usize,
) -> Result<(f64, usize)> {
    let terms = terms(row);
    let log_target = target.ln();
    let phi = |g: f64| log_g(&terms, g) - log_target;

    let f0 = phi(0.0);
    if f0 == 0.0 {
        return Ok((0.0, 0));
    }
    let (mut lo, mut hi);
    let mut expansions = 0;
    if f0 > 0.0 {
        hi = 0.0;
        lo = -cfg.bracket_start;
        while !(phi(lo) <= 0.0) {
            expansions += 1;
            if expansions > cfg.max_expansions {
                return Err(bracket_error(feature, expansions - 1, lo, hi, &terms, target));
            }
            hi = lo;
            lo *= cfg.bracket_expansion;
        }
    } else {
        lo = 0.0;
        hi = cfg.bracket_start;
        while !(phi(hi) >= 0.0) {
            expansions += 1;
            if expansions > cfg.max_expansions {
                return Err(bracket_error(feature, expansions - 1, lo, hi, &terms, target));
            }
            lo = hi;
            hi *= cfg.bracket_expansion;
        }
    }

    let mut gamma = if f0 > 0.0 { hi } else { lo };
    let mut iterations = 0;
    let max_iterations = 200;
    while iterations < max_iterations {
        iterations += 1;
        let (lg, slope) = log_g_and_slope(&terms, gamma);
        let f = lg - log_target;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = gamma;
        } else {
            lo = gamma;
        }
        let mut next = if cfg.newton && slope > 0.0 {
            gamma - f / slope
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - gamma).abs();
        gamma = next;
        if step <= cfg.root_tolerance * 1e-3 || hi - lo <= cfg.root_tolerance * 1e-3 {
            break;
        }
        // Newton converges quadratically; one more pass after a sub-tolerance
        // step pins the residual at rounding level.
        if cfg.newton && step <= cfg.root_tolerance {
            let (lg, slope) = log_g_and_slope(&terms, gamma);
            let refined = gamma - (lg - log_target) / slope;
            if refined.is_finite() {
                gamma = refined;
            }
            iterations += 1;
            break;
        }
    }
    Ok((gamma, iterations))
}

fn bracket_error(
    feature: usize,
    expansions: usize,
    lo: f64,
    hi: f64,
    terms: &[(f64, f64)],
    target: f64,
) -> LmeError {
    LmeError::RootNotBracketed {
        feature,
        expansions,
        lo,
        hi,
        g_lo: log_g(terms, lo).exp(),
        g_hi: log_g(terms, hi).exp(),
        target,
    }
}

/// Scaling step for one feature given its binned mass and current weight.
///
/// A zero target drives the weight to `-clamp`; any update that would leave
/// `[-clamp, clamp]` is cut at the bound. Both cases are flagged.
pub fn scaling_step(
    row: &[f64],
    feature: usize,
    current: f64,
    target: f64,
    cfg: &RootFinderConfig,
    clamp: f64,
) -> Result<RootOutcome> {
    if !(0.0..=1.0).contains(&target) {
        return Err(LmeError::Shape(format!(
            "target {target} for feature {feature} is outside [0, 1]"
        )));
    }
    if target == 0.0 {
        return Ok(RootOutcome {
            gamma: -clamp - current,
            saturation: Some(Saturation::Lower),
            iterations: 0,
        });
    }
    let (gamma, iterations) = solve_root(row, target, cfg, feature)?;
    let proposed = current + gamma;
    let outcome = if proposed > clamp {
        RootOutcome {
            gamma: clamp - current,
            saturation: Some(Saturation::Upper),
            iterations,
        }
    } else if proposed < -clamp {
        RootOutcome {
            gamma: -clamp - current,
            saturation: Some(Saturation::Lower),
            iterations,
        }
    } else {
        RootOutcome {
            gamma,
            saturation: None,
            iterations,
        }
    };
    Ok(outcome)
}

/// Solves the scaling root for a single feature against `weights`.
pub fn is_update_root(
    spec: &MachineSpec,
    weights: &WeightMatrix,
    feature: usize,
    target: f64,
    config: &EmisConfig,
) -> Result<RootOutcome> {
    spec.feature(feature)?;
    let dist = ExactDistribution::enumerate(spec, weights)?;
    let table = ScalingTable::new(&dist);
    scaling_step(
        table.row(feature),
        feature,
        weights.values()[feature],
        target,
        &config.root,
        config.weight_clamp,
    )
}

/// Outcome of a full M-step.
#[derive(Debug, Clone)]
pub struct MStep {
    pub weights: WeightMatrix,
    /// `Q(λ, snapshot)` before the first round and after each round.
    pub q_values: Vec<f64>,
    /// Largest `|E[f_i] - η_i|` before the first round and after each round.
    pub residuals: Vec<f64>,
    /// Features whose update hit the weight clamp in any round.
    pub saturated: Vec<usize>,
    pub(crate) distribution: ExactDistribution,
}

impl MStep {
    /// Distribution at the output weights.
    pub fn distribution(&self) -> &ExactDistribution {
        &self.distribution
    }
}

/// `Q(λ, snapshot) = -ln Φ_λ + Σ_i λ_i η_i` with `η` taken at the snapshot.
pub(crate) fn q_from(dist: &ExactDistribution, targets: &ConstraintTargets) -> f64 {
    -dist.log_partition()
        + dist
            .weights()
            .values()
            .iter()
            .zip(targets.values())
            .map(|(l, e)| l * e)
            .sum::<f64>()
}

pub(crate) fn m_step_from(
    start: ExactDistribution,
    targets: &ConstraintTargets,
    config: &EmisConfig,
) -> Result<MStep> {
    let spec = start.spec().clone();
    let n = spec.feature_count();
    let mut dist = start;
    let mut weights = dist.weights().clone();
    let mut q_values = Vec::with_capacity(config.inner_steps + 1);
    let mut residuals = Vec::with_capacity(config.inner_steps + 1);
    let mut saturated = vec![false; n];
    let mut gammas = vec![0.0; n];

    for _ in 0..config.inner_steps {
        let table = ScalingTable::new(&dist);
        q_values.push(q_from(&dist, targets));
        residuals.push(residual_from_table(&table, targets));
        // Every root is computed against the same frozen distribution.
        for (i, gamma) in gammas.iter_mut().enumerate() {
            let out = scaling_step(
                table.row(i),
                i,
                weights.values()[i],
                targets.get(i),
                &config.root,
                config.weight_clamp,
            )?;
            if out.saturation.is_some() {
                saturated[i] = true;
            }
            *gamma = out.gamma;
        }
        for (w, g) in weights.values_mut().iter_mut().zip(&gammas) {
            *w = (*w + g).clamp(-config.weight_clamp, config.weight_clamp);
        }
        dist = ExactDistribution::enumerate(&spec, &weights)?;
    }
    q_values.push(q_from(&dist, targets));
    residuals.push(targets.max_residual(&dist.feature_expectations()));

    Ok(MStep {
        weights,
        q_values,
        residuals,
        saturated: saturated
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect(),
        distribution: dist,
    })
}

fn residual_from_table(table: &ScalingTable, targets: &ConstraintTargets) -> f64 {
    (0..targets.len()).fold(0.0f64, |m, i| m.max((table.expectation(i) - targets.get(i)).abs()))
}

/// Runs `config.inner_steps` parallel scaling rounds from `weights` towards
/// `targets` (computed at `weights` by the E-step).
pub fn m_step(
    spec: &MachineSpec,
    weights: &WeightMatrix,
    targets: &ConstraintTargets,
    config: &EmisConfig,
) -> Result<MStep> {
    config.validate()?;
    if targets.len() != spec.feature_count() {
        return Err(LmeError::Shape(format!(
            "{} targets for {} features",
            targets.len(),
            spec.feature_count()
        )));
    }
    let dist = ExactDistribution::enumerate(spec, weights)?;
    m_step_from(dist, targets, config)
}
