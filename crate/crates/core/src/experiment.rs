//! LME versus MLE on data drawn from known machines, scored by the KL
//! divergence between observed marginals.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distribution::ExactDistribution;
use crate::error::{LmeError, Result};
use crate::estimation::EmisConfig;
use crate::machine::{MachineSpec, WeightMatrix};
use crate::model_file::ModelFile;
use crate::numeric::mean_and_sample_std;
use crate::seed::derive;
use crate::selection::{
    distinct_basins, run_restarts, select_lme_with, select_mle_with, CandidateModel, Eligibility, RestartPlan,
};

/// Half-width of the uniform draw for ground-truth weights.
pub const DEFAULT_TRUTH_WIDTH: f64 = 2.0;
/// Accepted range for every single-bit visible marginal of a drawn ground truth.
pub const TRUTH_MARGINAL_RANGE: (f64, f64) = (0.02, 0.98);
pub const DEFAULT_SAMPLE_SIZES: [usize; 5] = [50, 100, 200, 500, 1000];

/// `D(p*(y) ‖ p(y)) = Σ_y p*(y) ln(p*(y) / p(y))` over the visible patterns.
/// Hidden counts may differ.
pub fn cross_entropy_observed(truth: &ExactDistribution, estimate: &ExactDistribution) -> Result<f64> {
    let j = truth.spec().visible();
    if estimate.spec().visible() != j {
        return Err(LmeError::Shape(format!(
            "visible counts differ: truth {} vs estimate {}",
            j,
            estimate.spec().visible()
        )));
    }
    Ok(truth
        .log_marginal_table()
        .iter()
        .zip(estimate.log_marginal_table())
        .map(|(&lt, &le)| {
            let p = lt.exp();
            if p > 0.0 {
                p * (lt - le)
            } else {
                0.0
            }
        })
        .sum())
}

/// One experiment: a generating machine, an estimator architecture, and the
/// sampling/restart schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub truth_spec: MachineSpec,
    pub truth_weights: WeightMatrix,
    pub estimator: MachineSpec,
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    /// Restart count and init width; the restart seed is derived per trial.
    pub plan: RestartPlan,
    pub emis: EmisConfig,
    /// Which restarts may be selected as the LME and MLE picks.
    pub eligibility: Eligibility,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimator.visible() != self.truth_spec.visible() {
            return Err(LmeError::Config(format!(
                "estimator has {} visible nodes but the ground truth has {}",
                self.estimator.visible(),
                self.truth_spec.visible()
            )));
        }
        self.truth_weights.check_spec(&self.truth_spec)?;
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(LmeError::Config("sample sizes must be a non-empty list of positive counts".into()));
        }
        if self.trials == 0 {
            return Err(LmeError::Config("trials must be at least 1".into()));
        }
        self.plan.validate()?;
        self.emis.validate()
    }

    /// Reads `key = value` lines. Recognized keys: `name`, `truth_model`
    /// (a model file path, relative to `base`), or `truth_hidden` with optional
    /// `truth_visible`/`truth_width`/`truth_seed`; `estimator_hidden`,
    /// `sample_sizes` (comma separated), `trials`, `restarts`, `init_width`,
    /// `eligibility`, `seed`, and any EM-IS configuration key.
    pub fn parse(text: &str, source: &str, base: &Path) -> Result<Self> {
        let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LmeError::Parse {
                path: source.into(),
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let err = |line: usize, message: String| LmeError::Parse {
            path: source.into(),
            line,
            message,
        };
        let take = |fields: &mut BTreeMap<String, (usize, String)>, key: &str| fields.remove(key);
        fn num<T: std::str::FromStr>(
            v: Option<(usize, String)>,
            default: T,
            key: &str,
            err: &dyn Fn(usize, String) -> LmeError,
        ) -> Result<T> {
            match v {
                None => Ok(default),
                Some((line, s)) => s
                    .parse()
                    .map_err(|_| err(line, format!("cannot parse {s:?} for {key}"))),
            }
        }

        let seed: u64 = num(take(&mut fields, "seed"), 0, "seed", &err)?;
        let name = take(&mut fields, "name").map(|(_, v)| v).unwrap_or_else(|| "custom".into());
        let estimator_hidden: usize = num(take(&mut fields, "estimator_hidden"), 3, "estimator_hidden", &err)?;
        let trials: usize = num(take(&mut fields, "trials"), 5, "trials", &err)?;
        let restarts: usize = num(take(&mut fields, "restarts"), 100, "restarts", &err)?;
        let init_width: f64 = num(take(&mut fields, "init_width"), 1.0, "init_width", &err)?;
        let eligibility = match take(&mut fields, "eligibility") {
            None => Eligibility::default(),
            Some((line, s)) => s.parse().map_err(|e: LmeError| err(line, e.to_string()))?,
        };
        let sample_sizes = match take(&mut fields, "sample_sizes") {
            None => DEFAULT_SAMPLE_SIZES.to_vec(),
            Some((line, s)) => parse_sizes(&s).map_err(|m| err(line, m))?,
        };

        let (truth_spec, truth_weights) = if let Some((line, path)) = take(&mut fields, "truth_model") {
            let file = ModelFile::read(&base.join(&path)).map_err(|e| err(line, e.to_string()))?;
            file.to_model().map_err(|e| err(line, e.to_string()))?
        } else {
            let visible: usize = num(take(&mut fields, "truth_visible"), 5, "truth_visible", &err)?;
            let hidden: usize = num(take(&mut fields, "truth_hidden"), 3, "truth_hidden", &err)?;
            let width: f64 = num(take(&mut fields, "truth_width"), DEFAULT_TRUTH_WIDTH, "truth_width", &err)?;
            let truth_seed: u64 = num(take(&mut fields, "truth_seed"), derive(seed, "truth", 0), "truth_seed", &err)?;
            let spec = MachineSpec::new(visible, hidden)?;
            let weights = draw_ground_truth(&spec, width, truth_seed)?;
            (spec, weights)
        };

        let mut emis = EmisConfig::default();
        for (key, (line, value)) in fields {
            emis.set(&key, &value).map_err(|e| {
                err(
                    line,
                    format!(
                        "{e}; experiment keys: name, truth_model, truth_visible, truth_hidden, truth_width, \
                         truth_seed, estimator_hidden, sample_sizes, trials, restarts, init_width, eligibility, seed"
                    ),
                )
            })?;
        }

        let config = Self {
            name,
            estimator: MachineSpec::new(truth_spec.visible(), estimator_hidden)?,
            truth_spec,
            truth_weights,
            sample_sizes,
            trials,
            plan: RestartPlan {
                restarts,
                init_width,
                master_seed: 0,
            },
            emis,
            eligibility,
            master_seed: seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }
}

/// Parses a comma separated list of positive sample sizes.
pub fn parse_sizes(s: &str) -> std::result::Result<Vec<usize>, String> {
    let sizes: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("invalid sample size {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err("sample sizes must be positive".into());
    }
    Ok(sizes)
}

/// Draws ground-truth weights uniform on `[-width, width]`, redrawing until
/// every visible bit has marginal probability inside [`TRUTH_MARGINAL_RANGE`].
pub fn draw_ground_truth(spec: &MachineSpec, width: f64, seed: u64) -> Result<WeightMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = TRUTH_MARGINAL_RANGE;
    for _ in 0..10_000 {
        let w = WeightMatrix::random_uniform(spec.nodes(), width, &mut rng);
        let dist = ExactDistribution::enumerate(spec, &w)?;
        let means = dist.node_means();
        if means[..spec.visible()].iter().all(|m| (lo..=hi).contains(m)) {
            return Ok(w);
        }
    }
    Err(LmeError::Config(format!(
        "no ground truth with non-degenerate visible marginals after 10000 draws at width {width}"
    )))
}

/// Scenario names accepted by [`scenario`].
pub const SCENARIO_NAMES: [&str; 3] = ["exp1", "exp2", "exp3"];
const SCENARIO_TRUE_HIDDEN: [usize; 3] = [3, 5, 1];

/// One named scenario: five visible nodes, an estimator with three hidden
/// nodes, and a ground truth with 3 (`exp1`), 5 (`exp2`), or 1 (`exp3`) hidden nodes.
pub fn scenario(name: &str, master_seed: u64) -> Result<ExperimentConfig> {
    let idx = SCENARIO_NAMES.iter().position(|n| *n == name).ok_or_else(|| {
        LmeError::Config(format!(
            "unknown scenario {name:?}; valid scenarios: {}",
            SCENARIO_NAMES.join(", ")
        ))
    })?;
    let scenario_seed = derive(master_seed, "scenario", idx as u64);
    let truth_spec = MachineSpec::new(5, SCENARIO_TRUE_HIDDEN[idx])?;
    let truth_weights = draw_ground_truth(&truth_spec, DEFAULT_TRUTH_WIDTH, derive(scenario_seed, "truth", 0))?;
    Ok(ExperimentConfig {
        name: name.to_string(),
        truth_spec,
        truth_weights,
        estimator: MachineSpec::new(5, 3)?,
        sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
        trials: 5,
        plan: RestartPlan::default(),
        emis: EmisConfig::default(),
        eligibility: Eligibility::default(),
        master_seed: scenario_seed,
    })
}

/// The three architecture scenarios, in order `exp1`, `exp2`, `exp3`.
pub fn make_scenarios(master_seed: u64) -> Result<Vec<ExperimentConfig>> {
    SCENARIO_NAMES.iter().map(|n| scenario(n, master_seed)).collect()
}

/// Score of one selected estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodResult {
    pub cross_entropy: f64,
    pub log_likelihood: f64,
    pub entropy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Lme,
    Mle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lme => "lme",
            Method::Mle => "mle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub scenario: String,
    pub sample_size: usize,
    pub trial: usize,
    /// `None` when no restart was eligible for selection.
    pub lme: Option<MethodResult>,
    pub mle: Option<MethodResult>,
    /// Restarts that met both stopping tolerances.
    pub converged_candidates: usize,
    /// Restarts admitted by the configured eligibility policy.
    pub eligible_candidates: usize,
    pub total_candidates: usize,
    /// Distinct eligible basins (weights within 1e-4 elementwise).
    pub basins: usize,
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        match m {
            Method::Lme => self.lme.as_ref(),
            Method::Mle => self.mle.as_ref(),
        }
    }
}

fn score(truth: &ExactDistribution, spec: &MachineSpec, c: &CandidateModel) -> Result<MethodResult> {
    let dist = ExactDistribution::enumerate(spec, &c.weights)?;
    Ok(MethodResult {
        cross_entropy: cross_entropy_observed(truth, &dist)?,
        log_likelihood: c.log_likelihood,
        entropy: c.entropy,
        seed: c.seed,
    })
}

/// Seed of trial `trial` at sample-size position `size_index`.
pub fn trial_seed(master_seed: u64, size_index: usize, trial: usize) -> u64 {
    derive(derive(master_seed, "size", size_index as u64), "trial", trial as u64)
}

/// Runs one trial: sample, restart, select, and score.
pub fn run_trial(
    config: &ExperimentConfig,
    truth: &ExactDistribution,
    size_index: usize,
    trial: usize,
) -> Result<TrialResult> {
    let sample_size = config.sample_sizes[size_index];
    let seed = trial_seed(config.master_seed, size_index, trial);
    let data = truth.sample_observed(sample_size, derive(seed, "sample", 0))?;
    let plan = RestartPlan {
        master_seed: derive(seed, "restarts", 0),
        ..config.plan.clone()
    };
    let candidates = run_restarts(&config.estimator, &data, &plan, &config.emis)?;
    let converged = candidates.iter().filter(|c| c.converged).count();
    let eligible = candidates.iter().filter(|c| config.eligibility.admits(c)).count();
    let basins = distinct_basins(&candidates, config.eligibility, 1e-4).len();
    let mut result = TrialResult {
        scenario: config.name.clone(),
        sample_size,
        trial,
        lme: None,
        mle: None,
        converged_candidates: converged,
        eligible_candidates: eligible,
        total_candidates: candidates.len(),
        basins,
        failure: None,
    };
    match (
        select_lme_with(&candidates, config.eligibility),
        select_mle_with(&candidates, config.eligibility),
    ) {
        (Ok(lme), Ok(mle)) => {
            result.lme = Some(score(truth, &config.estimator, lme)?);
            result.mle = Some(score(truth, &config.estimator, mle)?);
        }
        (Err(e), _) | (_, Err(e)) => result.failure = Some(e.to_string()),
    }
    Ok(result)
}

/// Runs every (sample size, trial) pair in index order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    run_experiment_observed(config, |_| {})
}

/// [`run_experiment`] with a callback after each finished trial.
pub fn run_experiment_observed<F: FnMut(&TrialResult)>(
    config: &ExperimentConfig,
    mut observe: F,
) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let truth = ExactDistribution::enumerate(&config.truth_spec, &config.truth_weights)?;
    let mut out = Vec::with_capacity(config.sample_sizes.len() * config.trials);
    for size_index in 0..config.sample_sizes.len() {
        for trial in 0..config.trials {
            let r = run_trial(config, &truth, size_index, trial)?;
            observe(&r);
            out.push(r);
        }
    }
    Ok(out)
}

/// Per scenario, sample size, and method averages.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub scenario: String,
    pub sample_size: usize,
    pub method: Method,
    pub mean_ce: f64,
    pub std_ce: f64,
    pub mean_ll: f64,
    pub mean_entropy: f64,
    /// Trials that produced a selection.
    pub trials: usize,
}

/// Means and sample standard deviations over trials, grouped by scenario and
/// sample size in first-appearance order. Failed trials are skipped.
pub fn aggregate(results: &[TrialResult]) -> Vec<AggregateRow> {
    let mut groups: Vec<((String, usize), Vec<&TrialResult>)> = Vec::new();
    for r in results {
        let key = (r.scenario.clone(), r.sample_size);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut rows = Vec::new();
    for ((scenario, sample_size), trials) in groups {
        for method in [Method::Lme, Method::Mle] {
            let picks: Vec<&MethodResult> = trials.iter().filter_map(|t| t.method(method)).collect();
            let ce: Vec<f64> = picks.iter().map(|p| p.cross_entropy).collect();
            let ll: Vec<f64> = picks.iter().map(|p| p.log_likelihood).collect();
            let h: Vec<f64> = picks.iter().map(|p| p.entropy).collect();
            let (mean_ce, std_ce) = mean_and_sample_std(&ce);
            rows.push(AggregateRow {
                scenario: scenario.clone(),
                sample_size,
                method,
                mean_ce,
                std_ce,
                mean_ll: mean_and_sample_std(&ll).0,
                mean_entropy: mean_and_sample_std(&h).0,
                trials: picks.len(),
            });
        }
    }
    rows
}

/// Mean cross entropies `(lme, mle)` for one scenario and size.
pub fn verdict(rows: &[AggregateRow], scenario: &str, sample_size: usize) -> Option<(f64, f64)> {
    let find = |m: Method| {
        rows.iter()
            .find(|r| r.scenario == scenario && r.sample_size == sample_size && r.method == m)
            .map(|r| r.mean_ce)
    };
    Some((find(Method::Lme)?, find(Method::Mle)?))
}

pub fn write_results_csv<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "sample_size",
        "trial",
        "method",
        "cross_entropy",
        "log_likelihood",
        "entropy",
        "converged_candidates",
    ])?;
    for r in results {
        for method in [Method::Lme, Method::Mle] {
            let (ce, ll, h) = match r.method(method) {
                Some(m) => (m.cross_entropy, m.log_likelihood, m.entropy),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            w.write_record([
                r.scenario.clone(),
                r.sample_size.to_string(),
                r.trial.to_string(),
                method.as_str().to_string(),
                ce.to_string(),
                ll.to_string(),
                h.to_string(),
                r.converged_candidates.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "sample_size", "method", "mean_ce", "std_ce", "mean_ll", "mean_entropy"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.sample_size.to_string(),
            r.method.as_str().to_string(),
            r.mean_ce.to_string(),
            r.std_ce.to_string(),
            r.mean_ll.to_string(),
            r.mean_entropy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
