//! Generalized EM baseline: one controlled gradient-ascent step on `Q` per
//! outer iteration.

use crate::dataset::Dataset;
use crate::distribution::ExactDistribution;
use crate::error::{LmeError, Result};
use crate::estimation::config::EmisConfig;
use crate::estimation::emis::{snapshot, StopRule, Termination, TrainTrace, TraceRecord};
use crate::estimation::objective::q_gradient_with;
use crate::estimation::scaling::q_from;
use crate::machine::{MachineSpec, WeightMatrix, DEFAULT_WEIGHT_CLAMP};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEmConfig {
    /// Step applied to the matrix gradient before any halving.
    pub step_size: f64,
    pub outer_iteration_cap: usize,
    pub ll_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub stall_window: usize,
    /// Halvings tried before an outer iteration gives up on improving `Q`.
    pub max_halvings: usize,
    pub weight_clamp: f64,
}

impl Default for GradientEmConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            outer_iteration_cap: 500,
            ll_tolerance: 1e-8,
            feasibility_tolerance: 1e-10,
            stall_window: 20,
            max_halvings: 30,
            weight_clamp: DEFAULT_WEIGHT_CLAMP,
        }
    }
}

impl GradientEmConfig {
    /// Takes the stopping rule and clamp shared with EM-IS from `emis`.
    pub fn from_emis(emis: &EmisConfig, step_size: f64) -> Self {
        Self {
            step_size,
            outer_iteration_cap: emis.outer_iteration_cap,
            ll_tolerance: emis.ll_tolerance,
            feasibility_tolerance: emis.feasibility_tolerance,
            stall_window: emis.stall_window,
            weight_clamp: emis.weight_clamp,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step_size", self.step_size),
            ("ll_tolerance", self.ll_tolerance),
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("weight_clamp", self.weight_clamp),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LmeError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.stall_window == 0 {
            return Err(LmeError::Config("stall_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gradient-ascent EM from `init`.
///
/// Each outer iteration recomputes the E-step at the current weights, then
/// proposes `Λ + step · ∇Q` on the off-diagonal entries, halving `step` until
/// `Q` does not decrease. The step restarts from `config.step_size` every
/// outer iteration.
pub fn gradient_em(
    spec: &MachineSpec,
    init: &WeightMatrix,
    data: &Dataset,
    config: &GradientEmConfig,
) -> Result<(WeightMatrix, TrainTrace)> {
    gradient_em_observed(spec, init, data, config, |_| {})
}

/// [`gradient_em`] with a callback invoked on every trace record.
pub fn gradient_em_observed<F: FnMut(&TraceRecord)>(
    spec: &MachineSpec,
    init: &WeightMatrix,
    data: &Dataset,
    config: &GradientEmConfig,
    mut observe: F,
) -> Result<(WeightMatrix, TrainTrace)> {
    config.validate()?;
    init.check_spec(spec)?;
    init.check_clamp(config.weight_clamp)?;
    if data.width() != spec.visible() {
        return Err(LmeError::Shape(format!(
            "dataset width {} does not match {} visible nodes",
            data.width(),
            spec.visible()
        )));
    }

    let mut dist = ExactDistribution::enumerate(spec, init)?;
    let mut records = Vec::new();
    let mut inner_q = Vec::new();
    let mut stop = StopRule::new(config.ll_tolerance, config.feasibility_tolerance, config.stall_window);
    let mut outer = 0;
    let termination = loop {
        let snap = snapshot(&dist, data, outer)?;
        observe(&snap.record);
        let decision = stop.check(records.last(), &snap.record);
        let q_current = snap.record.q_value;
        records.push(snap.record);
        if let Some(t) = decision {
            break t;
        }
        if outer == config.outer_iteration_cap {
            break Termination::IterationCap;
        }

        let grad = q_gradient_with(&dist, &dist, data)?;
        let mut step = config.step_size;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut proposal = dist.weights().clone();
            for (value, f) in proposal.values_mut().iter_mut().zip(spec.features()) {
                *value = (*value + step * grad.get(f.a, f.b))
                    .clamp(-config.weight_clamp, config.weight_clamp);
            }
            let candidate = ExactDistribution::enumerate(spec, &proposal)?;
            let q_new = q_from(&candidate, &snap.targets);
            if q_new >= q_current {
                accepted = Some((candidate, q_new));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, q_new)) => {
                inner_q.push(vec![q_current, q_new]);
                dist = candidate;
            }
            // No improving step at any scale: the weights stay put and the
            // stall rule decides.
            None => inner_q.push(vec![q_current, q_current]),
        }
        outer += 1;
    };

    let trace = TrainTrace {
        records,
        termination,
        saturated: dist
            .weights()
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (v.abs() >= config.weight_clamp).then_some(i))
            .collect(),
        inner_q,
    };
    Ok((dist.weights().clone(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_never_decreases() {
        let spec = MachineSpec::new(3, 1).unwrap();
        let data = Dataset::from_rows(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 0], vec![1, 1, 1]]).unwrap();
        let mut cfg = GradientEmConfig::default();
        cfg.outer_iteration_cap = 50;
        let init = WeightMatrix::from_values(4, vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2]).unwrap();
        let (_, trace) = gradient_em(&spec, &init, &data, &cfg).unwrap();
        assert!(trace.max_likelihood_drop() <= 1e-9);
        assert!(trace.max_inner_q_drop() <= 0.0);
        assert!(trace.records.iter().all(|r| r.q_value.is_finite()));
    }

    #[test]
    fn rejects_bad_step() {
        let spec = MachineSpec::new(2, 0).unwrap();
        let data = Dataset::from_rows(&[vec![1, 1]]).unwrap();
        let cfg = GradientEmConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(gradient_em(&spec, &WeightMatrix::zeros(2), &data, &cfg).is_err());
    }
}
