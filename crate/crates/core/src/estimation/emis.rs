//! EM with iterative-scaling M-steps.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::dataset::Dataset;
use crate::distribution::ExactDistribution;
use crate::error::{LmeError, Result};
use crate::estimation::config::EmisConfig;
use crate::estimation::scaling::{m_step_from, q_from};
use crate::estimation::targets::e_step_with;
use crate::machine::{MachineSpec, WeightMatrix};

/// Why a training run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Likelihood change and constraint residual both under tolerance.
    Converged,
    IterationCap,
    /// Likelihood flat for a full stall window while still infeasible.
    Stalled,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::IterationCap => "iteration_cap",
            Termination::Stalled => "stalled",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics at one outer-iteration parameter value `λ^(j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub outer_iter: usize,
    pub log_likelihood: f64,
    pub entropy: f64,
    /// `max_i |E_p[f_i] - η_i(λ)|`, both sides at `λ^(j)`.
    pub max_residual: f64,
    /// `Q(λ^(j), λ^(j))`.
    pub q_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    /// Features whose weight hit the clamp at some point.
    pub saturated: Vec<usize>,
    /// Per M-step, `Q(·, λ^(j))` before and after each inner round.
    pub inner_q: Vec<Vec<f64>>,
}

impl TrainTrace {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has at least one record")
    }

    /// Number of parameter updates performed.
    pub fn outer_iterations(&self) -> usize {
        self.last().outer_iter
    }

    /// Largest drop between consecutive log-likelihoods (0 if non-decreasing).
    pub fn max_likelihood_drop(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].log_likelihood - w[1].log_likelihood)
            .fold(0.0f64, f64::max)
    }

    /// Largest drop of `Q` between consecutive inner rounds of any M-step.
    pub fn max_inner_q_drop(&self) -> f64 {
        self.inner_q
            .iter()
            .flat_map(|q| q.windows(2).map(|w| w[0] - w[1]))
            .fold(0.0f64, f64::max)
    }

    /// First outer iteration whose log-likelihood is within `gap` of the final value.
    pub fn iterations_to_within(&self, gap: f64) -> usize {
        let last = self.last().log_likelihood;
        self.records
            .iter()
            .find(|r| last - r.log_likelihood <= gap)
            .map(|r| r.outer_iter)
            .unwrap_or(self.outer_iterations())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outer_iter", "log_likelihood", "entropy", "max_residual", "q_value"])?;
        for r in &self.records {
            w.write_record([
                r.outer_iter.to_string(),
                r.log_likelihood.to_string(),
                r.entropy.to_string(),
                r.max_residual.to_string(),
                r.q_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the `(outer_iter, log_likelihood, entropy, max_residual, q_value)` rows.
    pub fn read_csv_records(path: &Path) -> Result<Vec<TraceRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| LmeError::Shape(format!("bad trace field {i} in {row:?}")))
            };
            out.push(TraceRecord {
                outer_iter: field(0)? as usize,
                log_likelihood: field(1)?,
                entropy: field(2)?,
                max_residual: field(3)?,
                q_value: field(4)?,
            });
        }
        Ok(out)
    }
}

/// Snapshot quantities at one parameter value.
pub(crate) struct Snapshot {
    pub record: TraceRecord,
    pub targets: crate::estimation::targets::ConstraintTargets,
}

pub(crate) fn snapshot(dist: &ExactDistribution, data: &Dataset, outer_iter: usize) -> Result<Snapshot> {
    let targets = e_step_with(dist, data)?;
    let record = TraceRecord {
        outer_iter,
        log_likelihood: dist.log_likelihood(data)?,
        entropy: dist.entropy(),
        max_residual: targets.max_residual(&dist.feature_expectations()),
        q_value: q_from(dist, &targets),
    };
    Ok(Snapshot { record, targets })
}

/// Stopping rule shared by the EM variants.
pub(crate) struct StopRule {
    ll_tolerance: f64,
    feasibility_tolerance: f64,
    stall_window: usize,
    flat_infeasible: usize,
    best_residual: f64,
}

impl StopRule {
    pub fn new(ll_tolerance: f64, feasibility_tolerance: f64, stall_window: usize) -> Self {
        Self {
            ll_tolerance,
            feasibility_tolerance,
            stall_window,
            flat_infeasible: 0,
            best_residual: f64::INFINITY,
        }
    }

    /// A flat likelihood alone is not a stall: near a feasible point the
    /// likelihood change is second order in the residual, so it goes flat long
    /// before the constraints are met. Only flat iterations that also fail to
    /// lower the best residual seen so far count towards the stall window.
    pub fn check(&mut self, previous: Option<&TraceRecord>, current: &TraceRecord) -> Option<Termination> {
        let improved = current.max_residual < self.best_residual;
        self.best_residual = self.best_residual.min(current.max_residual);
        let prev = previous?;
        let flat = (current.log_likelihood - prev.log_likelihood).abs() < self.ll_tolerance;
        if !flat || improved {
            self.flat_infeasible = 0;
        }
        if !flat {
            return None;
        }
        if current.max_residual <= self.feasibility_tolerance {
            return Some(Termination::Converged);
        }
        if improved {
            return None;
        }
        self.flat_infeasible += 1;
        (self.flat_infeasible >= self.stall_window).then_some(Termination::Stalled)
    }
}

fn validate_inputs(spec: &MachineSpec, init: &WeightMatrix, data: &Dataset, clamp: f64) -> Result<()> {
    init.check_spec(spec)?;
    init.check_clamp(clamp)?;
    if data.width() != spec.visible() {
        return Err(LmeError::Shape(format!(
            "dataset width {} does not match {} visible nodes",
            data.width(),
            spec.visible()
        )));
    }
    Ok(())
}

/// Alternates E-steps and `S`-round scaling M-steps from `init` until the
/// likelihood is flat and the constraints are satisfied, or a cap is hit.
pub fn em_is(
    spec: &MachineSpec,
    init: &WeightMatrix,
    data: &Dataset,
    config: &EmisConfig,
) -> Result<(WeightMatrix, TrainTrace)> {
    em_is_observed(spec, init, data, config, |_| {})
}

/// [`em_is`] with a callback invoked on every trace record as it is produced.
pub fn em_is_observed<F: FnMut(&TraceRecord)>(
    spec: &MachineSpec,
    init: &WeightMatrix,
    data: &Dataset,
    config: &EmisConfig,
    mut observe: F,
) -> Result<(WeightMatrix, TrainTrace)> {
    config.validate()?;
    validate_inputs(spec, init, data, config.weight_clamp)?;

    let mut dist = ExactDistribution::enumerate(spec, init)?;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut inner_q = Vec::new();
    let mut saturated = vec![false; spec.feature_count()];
    let mut stop = StopRule::new(config.ll_tolerance, config.feasibility_tolerance, config.stall_window);
    let mut outer = 0;
    let termination = loop {
        let snap = snapshot(&dist, data, outer)?;
        observe(&snap.record);
        let decision = stop.check(records.last(), &snap.record);
        records.push(snap.record);
        if let Some(t) = decision {
            break t;
        }
        if outer == config.outer_iteration_cap {
            break Termination::IterationCap;
        }
        let step = m_step_from(dist, &snap.targets, config)?;
        for &i in &step.saturated {
            saturated[i] = true;
        }
        inner_q.push(step.q_values);
        dist = step.distribution;
        outer += 1;
    };

    let trace = TrainTrace {
        records,
        termination,
        saturated: saturated
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect(),
        inner_q,
    };
    Ok((dist.weights().clone(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_uniform_data_converges_immediately() {
        let spec = MachineSpec::new(3, 2).unwrap();
        let data = Dataset::from_patterns(3, (0..8).collect()).unwrap();
        let (w, trace) = em_is(&spec, &WeightMatrix::zeros(5), &data, &EmisConfig::default()).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert_eq!(trace.outer_iterations(), 1);
        assert!(w.max_abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let spec = MachineSpec::new(3, 1).unwrap();
        let data = Dataset::from_rows(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 0]]).unwrap();
        let mut cfg = EmisConfig::default();
        cfg.outer_iteration_cap = 3;
        let (_, trace) = em_is(&spec, &WeightMatrix::zeros(4), &data, &cfg).unwrap();
        assert_eq!(trace.termination, Termination::IterationCap);
        assert_eq!(trace.records.len(), 4);
        assert_eq!(trace.outer_iterations(), 3);
    }

    #[test]
    fn rejects_out_of_clamp_init() {
        let spec = MachineSpec::new(2, 0).unwrap();
        let data = Dataset::from_rows(&[vec![1, 1]]).unwrap();
        let w = WeightMatrix::from_values(2, vec![31.0]).unwrap();
        assert!(em_is(&spec, &w, &data, &EmisConfig::default()).is_err());
    }

    #[test]
    fn trace_csv_has_expected_header() {
        let spec = MachineSpec::new(2, 1).unwrap();
        let data = Dataset::from_rows(&[vec![1, 1], vec![0, 1], vec![1, 0], vec![0, 0]]).unwrap();
        let (_, trace) = em_is(&spec, &WeightMatrix::zeros(3), &data, &EmisConfig::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("outer_iter,log_likelihood,entropy,max_residual,q_value\n"));
        assert_eq!(text.lines().count(), trace.records.len() + 1);
    }

    #[test]
    fn stop_rule_stalls_after_window() {
        let mut rule = StopRule::new(1e-8, 1e-6, 3);
        let rec = |ll| TraceRecord {
            outer_iter: 0,
            log_likelihood: ll,
            entropy: 0.0,
            max_residual: 1.0,
            q_value: 0.0,
        };
        assert_eq!(rule.check(None, &rec(-1.0)), None);
        assert_eq!(rule.check(Some(&rec(-1.0)), &rec(-1.0)), None);
        assert_eq!(rule.check(Some(&rec(-1.0)), &rec(-1.0)), None);
        assert_eq!(rule.check(Some(&rec(-1.0)), &rec(-1.0)), Some(Termination::Stalled));
    }
}
