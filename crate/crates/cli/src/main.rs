use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lme_core::estimation::{em_is_observed, gradient_em_observed, TraceRecord};
use lme_core::experiment::{self, ExperimentConfig, SCENARIO_NAMES};
use lme_core::model_file::{ModelFile, SelectionTag};
use lme_core::selection::{self, Eligibility, RestartPlan};
use lme_core::{Dataset, EmisConfig, ExactDistribution, GradientEmConfig, MachineSpec, WeightMatrix};

/// Boltzmann machines with hidden units, estimated by latent maximum entropy.
#[derive(Parser)]
#[command(name = "lme", version)]
struct Cli {
    /// Stream per-iteration progress to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model from a single initialization.
    Train(TrainArgs),
    /// Fit from many random initializations and pick the LME and MLE models.
    Select(SelectArgs),
    /// Compare an estimate with a ground-truth model.
    Eval(EvalArgs),
    /// Run an LME versus MLE experiment.
    Experiment(ExperimentArgs),
    /// Draw observations from a model's visible marginal.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    EmIs,
    GradientEm,
}

#[derive(Clone, Copy, ValueEnum)]
enum EligibilityArg {
    Converged,
    Completed,
}

impl From<EligibilityArg> for Eligibility {
    fn from(e: EligibilityArg) -> Self {
        match e {
            EligibilityArg::Converged => Eligibility::Converged,
            EligibilityArg::Completed => Eligibility::Completed,
        }
    }
}

#[derive(Args)]
struct FitOptions {
    /// EM-IS configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Iterative-scaling rounds per M-step.
    #[arg(long)]
    inner_steps: Option<usize>,
}

impl FitOptions {
    fn emis(&self) -> Result<EmisConfig> {
        let mut config = match &self.config {
            Some(path) => EmisConfig::read(path)?,
            None => EmisConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            config.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.inner_steps {
            config.inner_steps = s;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file, one observation per line.
    #[arg(long)]
    data: PathBuf,
    /// Initial model file; its node counts define the architecture.
    #[arg(long, conflicts_with = "hidden")]
    init: Option<PathBuf>,
    /// Hidden node count for a random initialization.
    #[arg(long)]
    hidden: Option<usize>,
    /// Half-width of the uniform random initialization.
    #[arg(long, default_value_t = 1.0)]
    init_width: f64,
    #[arg(long, env = "LME_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "em-is")]
    optimizer: Optimizer,
    /// Gradient-EM step size.
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    #[command(flatten)]
    fit: FitOptions,
    /// Output directory for `model.json` and `trace.csv`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 1.0)]
    init_width: f64,
    #[arg(long, env = "LME_SEED", default_value_t = 0)]
    seed: u64,
    /// Which restarts may be selected.
    #[arg(long, value_enum, default_value = "completed")]
    eligibility: EligibilityArg,
    /// Worker threads for the restarts (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    fit: FitOptions,
    /// Output directory for `candidates.csv`, `lme.json`, and `mle.json`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    truth: PathBuf,
    estimate: PathBuf,
    /// Also report each model's log-likelihood on this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `exp1`, `exp2`, `exp3`, or the path of an experiment config file.
    scenario: String,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma separated sample sizes.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, env = "LME_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    eligibility: Option<EligibilityArg>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    inner_steps: Option<usize>,
    /// Output directory for `results.csv` and `aggregate.csv`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    model: PathBuf,
    /// Number of observations.
    #[arg(long, short = 'n')]
    count: i64,
    #[arg(long, env = "LME_SEED", default_value_t = 0)]
    seed: u64,
    /// Output dataset file.
    #[arg(long, short)]
    out: PathBuf,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Train(args) => train(args, verbose),
        Command::Select(args) => select(args, verbose),
        Command::Eval(args) => eval(args),
        Command::Experiment(args) => run_experiment(args, verbose),
        Command::Sample(args) => sample(args),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

fn log_record(r: &TraceRecord) {
    eprintln!(
        "iter {:>5}  ll {:.10}  entropy {:.10}  residual {:.3e}  q {:.10}",
        r.outer_iter, r.log_likelihood, r.entropy, r.max_residual, r.q_value
    );
}

fn train(args: TrainArgs, verbose: bool) -> Result<Status> {
    let data = Dataset::read(&args.data)?;
    let config = args.fit.emis()?;
    let (spec, init) = match (&args.init, args.hidden) {
        (Some(path), _) => ModelFile::read(path)?.to_model()?,
        (None, Some(hidden)) => {
            let spec = MachineSpec::new(data.width(), hidden)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let init = WeightMatrix::random_uniform(spec.nodes(), args.init_width, &mut rng);
            (spec, init)
        }
        (None, None) => bail!("give either --init MODEL or --hidden L"),
    };
    if spec.visible() != data.width() {
        bail!(
            "model has {} visible nodes but the dataset has width {}",
            spec.visible(),
            data.width()
        );
    }

    let observe = |r: &TraceRecord| {
        if verbose {
            log_record(r)
        }
    };
    let (weights, trace) = match args.optimizer {
        Optimizer::EmIs => em_is_observed(&spec, &init, &data, &config, observe)?,
        Optimizer::GradientEm => {
            let g = GradientEmConfig::from_emis(&config, args.step_size);
            gradient_em_observed(&spec, &init, &data, &g, observe)?
        }
    };

    create_dir(&args.out)?;
    ModelFile::from_model(&spec, &weights).write(&args.out.join("model.json"))?;
    trace.save_csv(&args.out.join("trace.csv"))?;
    let last = trace.last();
    println!("termination {}", trace.termination);
    println!("outer_iterations {}", trace.outer_iterations());
    println!("log_likelihood {}", last.log_likelihood);
    println!("entropy {}", last.entropy);
    println!("max_residual {}", last.max_residual);
    Ok(if trace.converged() { Status::Ok } else { Status::NotConverged })
}

fn select(args: SelectArgs, verbose: bool) -> Result<Status> {
    let data = Dataset::read(&args.data)?;
    let config = args.fit.emis()?;
    let spec = MachineSpec::new(data.width(), args.hidden)?;
    let plan = RestartPlan {
        restarts: args.restarts,
        init_width: args.init_width,
        master_seed: args.seed,
    };
    let candidates = with_jobs(args.jobs, || selection::run_restarts(&spec, &data, &plan, &config))??;
    if verbose {
        for c in &candidates {
            eprintln!(
                "seed {}  {}  ll {:.10}  entropy {:.10}  residual {:.3e}",
                c.seed,
                c.termination.map(|t| t.as_str()).unwrap_or("failed"),
                c.log_likelihood,
                c.entropy,
                c.residual
            );
        }
    }
    create_dir(&args.out)?;
    selection::save_candidates_csv(&candidates, &args.out.join("candidates.csv"))?;

    let eligibility = Eligibility::from(args.eligibility);
    let converged = candidates.iter().filter(|c| c.converged).count();
    let eligible = candidates.iter().filter(|c| eligibility.admits(c)).count();
    println!("candidates {}", candidates.len());
    println!("converged {converged}");
    println!("eligible {eligible}");
    let (lme, mle) = match (
        selection::select_lme_with(&candidates, eligibility),
        selection::select_mle_with(&candidates, eligibility),
    ) {
        (Ok(l), Ok(m)) => (l, m),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return Ok(Status::NotConverged);
        }
    };
    for (tag, c, file) in [(SelectionTag::Lme, lme, "lme.json"), (SelectionTag::Mle, mle, "mle.json")] {
        ModelFile::from_model(&spec, &c.weights)
            .with_selection(tag)
            .write(&args.out.join(file))?;
    }
    println!("lme_seed {}", lme.seed);
    println!("lme_log_likelihood {}", lme.log_likelihood);
    println!("lme_entropy {}", lme.entropy);
    println!("mle_seed {}", mle.seed);
    println!("mle_log_likelihood {}", mle.log_likelihood);
    println!("mle_entropy {}", mle.entropy);
    Ok(Status::Ok)
}

fn load_distribution(path: &Path) -> Result<ExactDistribution> {
    let (spec, weights) = ModelFile::read(path)?.to_model()?;
    Ok(ExactDistribution::enumerate(&spec, &weights)?)
}

fn eval(args: EvalArgs) -> Result<Status> {
    let truth = load_distribution(&args.truth)?;
    let estimate = load_distribution(&args.estimate)?;
    let ce = experiment::cross_entropy_observed(&truth, &estimate)?;
    println!("cross_entropy {ce}");
    println!("truth_entropy {}", truth.entropy());
    println!("estimate_entropy {}", estimate.entropy());
    if let Some(path) = &args.data {
        let data = Dataset::read(path)?;
        println!("truth_log_likelihood {}", truth.log_likelihood(&data)?);
        println!("estimate_log_likelihood {}", estimate.log_likelihood(&data)?);
    }
    Ok(Status::Ok)
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = if SCENARIO_NAMES.contains(&args.scenario.as_str()) {
        experiment::scenario(&args.scenario, args.seed.unwrap_or(0))?
    } else {
        let path = Path::new(&args.scenario);
        if !path.is_file() {
            bail!(
                "unknown scenario {:?}; valid scenarios: {} (or an experiment config file)",
                args.scenario,
                SCENARIO_NAMES.join(", ")
            );
        }
        let mut c = ExperimentConfig::read(path)?;
        if let Some(seed) = args.seed {
            c.master_seed = seed;
        }
        c
    };
    if let Some(r) = args.restarts {
        config.plan.restarts = r;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = &args.sizes {
        config.sample_sizes = experiment::parse_sizes(s).map_err(anyhow::Error::msg)?;
    }
    if let Some(e) = args.eligibility {
        config.eligibility = e.into();
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        config.emis.set(k.trim(), v.trim())?;
    }
    if let Some(s) = args.inner_steps {
        config.emis.inner_steps = s;
    }
    config.validate()?;
    Ok(config)
}

fn run_experiment(args: ExperimentArgs, verbose: bool) -> Result<Status> {
    let config = experiment_config(&args)?;
    let results = with_jobs(args.jobs, || {
        experiment::run_experiment_observed(&config, |r| {
            if verbose {
                eprintln!(
                    "{} T={} trial {}: {} of {} restarts eligible{}",
                    r.scenario,
                    r.sample_size,
                    r.trial,
                    r.eligible_candidates,
                    r.total_candidates,
                    r.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
                );
            }
        })
    })??;
    let rows = experiment::aggregate(&results);

    create_dir(&args.out)?;
    let results_path = args.out.join("results.csv");
    let file = std::fs::File::create(&results_path)
        .with_context(|| format!("cannot write {}", results_path.display()))?;
    experiment::write_results_csv(&results, std::io::BufWriter::new(file))?;
    let aggregate_path = args.out.join("aggregate.csv");
    let file = std::fs::File::create(&aggregate_path)
        .with_context(|| format!("cannot write {}", aggregate_path.display()))?;
    experiment::write_aggregate_csv(&rows, std::io::BufWriter::new(file))?;

    let mut failed = 0;
    for &size in &config.sample_sizes {
        let ok = results
            .iter()
            .filter(|r| r.sample_size == size && r.failure.is_none())
            .count();
        failed += config.trials - ok;
        match experiment::verdict(&rows, &config.name, size) {
            Some((lme, mle)) if ok > 0 => {
                let verdict = if lme <= mle { "lme<=mle" } else { "lme>mle" };
                println!(
                    "{} T={size} mean_ce lme {lme:.6} mle {mle:.6} {verdict} ({ok}/{} trials)",
                    config.name, config.trials
                );
            }
            _ => println!("{} T={size} no trial produced a selection", config.name),
        }
    }
    Ok(if failed == 0 { Status::Ok } else { Status::NotConverged })
}

fn sample(args: SampleArgs) -> Result<Status> {
    if args.count <= 0 {
        bail!("--count must be positive, got {}", args.count);
    }
    let dist = load_distribution(&args.model)?;
    let data = dist.sample_observed(args.count as usize, args.seed)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    data.write(&args.out)?;
    Ok(Status::Ok)
}
