//! Multi-restart EM-IS and selection among the feasible candidates by maximum
//! entropy (LME) or maximum likelihood (MLE).

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::distribution::ExactDistribution;
use crate::error::{LmeError, Result};
use crate::estimation::{em_is, EmisConfig, Termination};
use crate::machine::{MachineSpec, WeightMatrix};

/// How restarts are initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartPlan {
    pub restarts: usize,
    /// Each initial weight is uniform on `[-init_width, init_width]`.
    pub init_width: f64,
    /// Restart `r` is seeded with `master_seed + r`.
    pub master_seed: u64,
}

impl Default for RestartPlan {
    fn default() -> Self {
        Self {
            restarts: 100,
            init_width: 1.0,
            master_seed: 0,
        }
    }
}

impl RestartPlan {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(LmeError::Config("restart count must be at least 1".into()));
        }
        if !(self.init_width.is_finite() && self.init_width >= 0.0) {
            return Err(LmeError::Config(format!(
                "init width must be finite and non-negative, got {}",
                self.init_width
            )));
        }
        Ok(())
    }

    pub fn seed_for(&self, restart: usize) -> u64 {
        self.master_seed.wrapping_add(restart as u64)
    }
}

/// Which candidates may be selected.
///
/// `Converged` admits only runs that met both stopping tolerances.
/// `Completed` also admits runs that ended at the iteration cap or stalled,
/// i.e. every run that finished without a numerical error. Whenever the
/// likelihood supremum lies at infinite weights, EM-IS never meets the
/// feasibility tolerance, and `Completed` is the only policy that selects
/// anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eligibility {
    Converged,
    #[default]
    Completed,
}

impl Eligibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Eligibility::Converged => "converged",
            Eligibility::Completed => "completed",
        }
    }

    pub fn admits(self, candidate: &CandidateModel) -> bool {
        match self {
            Eligibility::Converged => candidate.converged,
            Eligibility::Completed => {
                candidate.failure.is_none() && candidate.log_likelihood.is_finite() && candidate.entropy.is_finite()
            }
        }
    }
}

impl std::str::FromStr for Eligibility {
    type Err = LmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(Eligibility::Converged),
            "completed" => Ok(Eligibility::Completed),
            other => Err(LmeError::Config(format!(
                "unknown eligibility {other:?}; expected converged or completed"
            ))),
        }
    }
}

impl std::fmt::Display for Eligibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The end point of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateModel {
    pub weights: WeightMatrix,
    pub log_likelihood: f64,
    /// Joint entropy `H(p_λ*)` by direct summation.
    pub entropy: f64,
    /// `-Q(λ*, λ*)`, the entropy as a by-product of the last E-step.
    pub q_entropy: f64,
    pub residual: f64,
    pub converged: bool,
    pub termination: Option<Termination>,
    pub seed: u64,
    pub outer_iters: usize,
    /// Set when the run aborted with an error instead of terminating.
    pub failure: Option<String>,
}

impl CandidateModel {
    /// `|H(p_λ*) + Q(λ*, λ*)|`.
    pub fn entropy_gap(&self) -> f64 {
        (self.entropy - self.q_entropy).abs()
    }
}

/// Runs EM-IS once from `init`, annotated as a candidate.
pub fn run_single(
    spec: &MachineSpec,
    data: &Dataset,
    init: &WeightMatrix,
    seed: u64,
    config: &EmisConfig,
) -> CandidateModel {
    match em_is(spec, init, data, config) {
        Ok((weights, trace)) => {
            let last = *trace.last();
            CandidateModel {
                weights,
                log_likelihood: last.log_likelihood,
                entropy: last.entropy,
                q_entropy: -last.q_value,
                residual: last.max_residual,
                converged: trace.converged(),
                termination: Some(trace.termination),
                seed,
                outer_iters: trace.outer_iterations(),
                failure: None,
            }
        }
        Err(e) => {
            let (ll, h) = ExactDistribution::enumerate(spec, init)
                .and_then(|d| Ok((d.log_likelihood(data)?, d.entropy())))
                .unwrap_or((f64::NAN, f64::NAN));
            CandidateModel {
                weights: init.clone(),
                log_likelihood: ll,
                entropy: h,
                q_entropy: f64::NAN,
                residual: f64::NAN,
                converged: false,
                termination: None,
                seed,
                outer_iters: 0,
                failure: Some(e.to_string()),
            }
        }
    }
}

/// Runs `plan.restarts` EM-IS fits from random initial weights.
///
/// The returned list is ordered by restart index whatever order the restarts
/// finish in.
pub fn run_restarts(
    spec: &MachineSpec,
    data: &Dataset,
    plan: &RestartPlan,
    config: &EmisConfig,
) -> Result<Vec<CandidateModel>> {
    plan.validate()?;
    config.validate()?;
    if data.width() != spec.visible() {
        return Err(LmeError::Shape(format!(
            "dataset width {} does not match {} visible nodes",
            data.width(),
            spec.visible()
        )));
    }
    Ok((0..plan.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = plan.seed_for(r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = WeightMatrix::random_uniform(spec.nodes(), plan.init_width, &mut rng);
            run_single(spec, data, &init, seed, config)
        })
        .collect())
}

fn pick<F>(candidates: &[CandidateModel], eligibility: Eligibility, order: F) -> Result<&CandidateModel>
where
    F: Fn(&CandidateModel, &CandidateModel) -> Ordering,
{
    candidates
        .iter()
        .filter(|c| eligibility.admits(c))
        .max_by(|a, b| order(a, b))
        .ok_or(LmeError::NoEligibleCandidate {
            policy: eligibility.as_str(),
            total: candidates.len(),
        })
}

/// The converged candidate of highest entropy; ties go to higher likelihood,
/// then to the lower seed.
pub fn select_lme(candidates: &[CandidateModel]) -> Result<&CandidateModel> {
    select_lme_with(candidates, Eligibility::Converged)
}

/// The converged candidate of highest likelihood; ties go to higher entropy,
/// then to the lower seed.
pub fn select_mle(candidates: &[CandidateModel]) -> Result<&CandidateModel> {
    select_mle_with(candidates, Eligibility::Converged)
}

/// [`select_lme`] over the candidates admitted by `eligibility`.
pub fn select_lme_with(candidates: &[CandidateModel], eligibility: Eligibility) -> Result<&CandidateModel> {
    pick(candidates, eligibility, |a, b| {
        a.entropy
            .total_cmp(&b.entropy)
            .then(a.log_likelihood.total_cmp(&b.log_likelihood))
            .then(b.seed.cmp(&a.seed))
    })
}

/// [`select_mle`] over the candidates admitted by `eligibility`.
pub fn select_mle_with(candidates: &[CandidateModel], eligibility: Eligibility) -> Result<&CandidateModel> {
    pick(candidates, eligibility, |a, b| {
        a.log_likelihood
            .total_cmp(&b.log_likelihood)
            .then(a.entropy.total_cmp(&b.entropy))
            .then(b.seed.cmp(&a.seed))
    })
}

/// Groups eligible candidates whose weights agree elementwise within
/// `tolerance`; returns one representative index per group.
pub fn distinct_basins(candidates: &[CandidateModel], eligibility: Eligibility, tolerance: f64) -> Vec<usize> {
    let mut reps: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate().filter(|(_, c)| eligibility.admits(c)) {
        if !reps
            .iter()
            .any(|&r| candidates[r].weights.max_abs_diff(&c.weights) <= tolerance)
        {
            reps.push(i);
        }
    }
    reps
}

pub fn write_candidates_csv<W: Write>(candidates: &[CandidateModel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "converged", "log_likelihood", "entropy", "residual", "outer_iters"])?;
    for c in candidates {
        w.write_record([
            c.seed.to_string(),
            c.converged.to_string(),
            c.log_likelihood.to_string(),
            c.entropy.to_string(),
            c.residual.to_string(),
            c.outer_iters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_candidates_csv(candidates: &[CandidateModel], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_candidates_csv(candidates, std::io::BufWriter::new(file))
}
