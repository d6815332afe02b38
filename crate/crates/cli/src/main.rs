use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meld::presets::TraitKind;
use meld::{
    compute_stats, contaminate, fit, presets, rank_variables_by_kl, sample_dataset, sample_two_group_dataset,
    sweep_k, ConvergenceScale, Criterion, Dataset, DirichletPrior, FitConfig, FitReport, GenerativeSpec, MeldError,
    MomentOrder, Schema,
};

#[derive(Debug, Parser)]
#[command(name = "meld", version, about = "Moment-based estimation for latent Dirichlet models over mixed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dataset from a generative spec or a preset study.
    Simulate(SimulateArgs),
    /// Fit component parameters for one k.
    Fit(FitArgs),
    /// Fit a range of k and pick the best by fitness index.
    Select(SelectArgs),
    /// Rank categorical variables by averaged KL distance of a fit.
    Score(ScoreArgs),
    /// Dump the moment statistics of a dataset.
    Moments(MomentsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// 20 four-level variables, k = 3, mixed memberships.
    Categorical,
    /// 50 loci plus a Gaussian trait, two pure groups.
    TraitGaussian,
    /// 50 loci plus a Poisson trait, two pure groups.
    TraitPoisson,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Generative spec (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Seed for drawing a preset's component parameters.
    #[arg(long, default_value_t = 1)]
    preset_seed: u64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of categorical cells replaced by uniform draws.
    #[arg(long, default_value_t = 0.0)]
    contaminate: f64,
    /// First half of the samples pure component 1, second half pure component 2.
    #[arg(long)]
    two_group: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Convergence {
    Sample,
    Unscaled,
}

#[derive(Debug, Args)]
struct EstimationArgs {
    /// Moment order, 2 or 3.
    #[arg(long, default_value_t = 2)]
    order: u8,
    /// Dirichlet α: one value (used for every component) or k comma-separated values.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = meld::estimator::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, value_enum, default_value = "sample")]
    convergence: Convergence,
    #[arg(long, default_value_t = meld::estimator::DEFAULT_MAX_SWEEPS)]
    max_sweeps: usize,
    /// 1 for the identity-weight stage only, 2 to add the reweighted stage.
    #[arg(long, default_value_t = 1)]
    stages: u8,
    /// Bounds for a scalar variable as NAME=LO:HI; repeatable.
    #[arg(long = "bounds")]
    bounds: Vec<String>,
    #[arg(long, default_value_t = meld::gmm::DEFAULT_VARIANCE_FLOOR)]
    variance_floor: f64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    estimation: EstimationArgs,
    /// Fit report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write one component table per variable into this directory.
    #[arg(long)]
    phi_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Stage1,
    Stage2,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Candidate numbers of components, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    k_list: Vec<usize>,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[arg(long, value_enum, default_value = "stage1")]
    criterion: CriterionArg,
    /// Selection table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Also write the selection summary as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Fit report produced by `meld fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value_t = 1)]
    stage: u8,
    /// Ranking table (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long, default_value_t = 2)]
    order: u8,
    /// Number of components, used for the default α.
    #[arg(long, required_unless_present = "alpha")]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<MeldError> for CliError {
    fn from(err: MeldError) -> Self {
        match err {
            MeldError::Numerical(_) | MeldError::Io(_) => CliError::Runtime(err.to_string()),
            _ => CliError::Usage(err.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn io_context(path: &Path, err: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {err}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_context(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_context(path, e))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_context(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialisation cannot fail");
    text.push('\n');
    text
}

fn load(input: &DataArgs) -> CliResult<Dataset> {
    let schema = meld::parse_schema(&read_file(&input.schema)?)?;
    Ok(meld::load_dataset(&read_file(&input.data)?, &schema)?)
}

fn parse_order(order: u8) -> CliResult<MomentOrder> {
    MomentOrder::try_from(order).or_else(|_| usage(format!("--order must be 2 or 3, got {order}")))
}

fn parse_bounds(specs: &[String]) -> CliResult<BTreeMap<String, (f64, f64)>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let parsed = spec.split_once('=').and_then(|(name, range)| {
            let (lo, hi) = range.split_once(':')?;
            Some((name.to_string(), lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?))
        });
        match parsed {
            Some((name, lo, hi)) => {
                out.insert(name, (lo, hi));
            }
            None => return usage(format!("--bounds expects NAME=LO:HI, got {spec:?}")),
        }
    }
    Ok(out)
}

fn fit_config(k: usize, args: &EstimationArgs) -> CliResult<FitConfig> {
    if k < 1 {
        return usage("--k must be at least 1");
    }
    if !matches!(args.stages, 1 | 2) {
        return usage(format!("--stages must be 1 or 2, got {}", args.stages));
    }
    if !(args.tol > 0.0) {
        return usage(format!("--tol must be positive, got {}", args.tol));
    }
    if args.max_sweeps < 1 {
        return usage("--max-sweeps must be at least 1");
    }
    let mut config = FitConfig::new(k, parse_order(args.order)?)
        .with_seed(args.seed)
        .with_two_stage(args.stages == 2);
    config.tolerance = args.tol;
    config.max_sweeps = args.max_sweeps;
    config.variance_floor = args.variance_floor;
    config.convergence = match args.convergence {
        Convergence::Sample => ConvergenceScale::Sample,
        Convergence::Unscaled => ConvergenceScale::Unscaled,
    };
    config.scalar_bounds = parse_bounds(&args.bounds)?;
    config.alpha = match &args.alpha {
        None => None,
        Some(a) if a.len() == 1 => Some(vec![a[0]; k]),
        Some(a) if a.len() == k => Some(a.clone()),
        Some(a) => return usage(format!("--alpha has {} values but k = {k}", a.len())),
    };
    config.validate()?;
    Ok(config)
}

fn check_order(order: MomentOrder, schema: &Schema) -> CliResult {
    if schema.len() < order.min_variables() {
        return usage(format!(
            "order-{order} moments need at least {} variables, the schema has {}",
            order.min_variables(),
            schema.len()
        ));
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult {
    if !(0.0..=1.0).contains(&args.contaminate) {
        return usage(format!("--contaminate must lie in [0, 1], got {}", args.contaminate));
    }
    if args.n < 1 {
        return usage("--n must be at least 1");
    }
    let (spec, two_group) = match (&args.spec, args.preset) {
        (Some(path), _) => (GenerativeSpec::from_toml(&read_file(path)?)?, args.two_group),
        (None, Some(Preset::Categorical)) => (presets::categorical_study(args.preset_seed)?, args.two_group),
        (None, Some(Preset::TraitGaussian)) => (presets::trait_study(TraitKind::Gaussian, args.preset_seed)?, true),
        (None, Some(Preset::TraitPoisson)) => (presets::trait_study(TraitKind::Poisson, args.preset_seed)?, true),
        (None, None) => return usage("one of --spec or --preset is required"),
    };
    let mut sim = if two_group {
        sample_two_group_dataset(&spec, args.n, args.seed)?
    } else {
        sample_dataset(&spec, args.n, args.seed)?
    };
    if args.contaminate > 0.0 {
        // separate stream from the sampler
        sim = contaminate(&sim, args.contaminate, args.seed ^ 0x5eed_c0de)?;
    }

    let mut csv = Vec::new();
    sim.dataset.write_csv(&mut csv)?;
    write_file(&args.out.join("data.csv"), csv)?;
    write_file(&args.out.join("schema.toml"), sim.dataset.schema().to_toml())?;
    write_file(&args.out.join("spec.toml"), spec.to_toml())?;
    write_file(&args.out.join("truth.json"), to_json(&sim.ground_truth()?))?;
    println!(
        "simulated n = {}, p = {}, k = {}, contaminated cells = {}",
        sim.dataset.n(),
        sim.dataset.p(),
        spec.k(),
        sim.contaminated_cells
    );
    Ok(())
}

fn print_stages(report: &FitReport) {
    for stage in &report.stages {
        println!(
            "stage {}: Q = {:e}, FI = {:.6}, sweeps = {}, converged = {}",
            stage.stage,
            stage.final_objective(),
            stage.fitness_index,
            stage.sweeps,
            stage.converged
        );
    }
}

fn fit_cmd(args: FitArgs) -> CliResult {
    let config = fit_config(args.k, &args.estimation)?;
    let data = load(&args.input)?;
    check_order(config.order, data.schema())?;
    let report = fit(&data, &config)?;
    write_file(&args.out, to_json(&report))?;
    if let Some(dir) = &args.phi_dir {
        for (j, var) in data.schema().variables().iter().enumerate() {
            for stage in &report.stages {
                let table = report.phi_table(stage.stage, data.schema(), j)?;
                write_file(&dir.join(format!("stage{}_{}.csv", stage.stage, var.name)), table)?;
            }
        }
    }
    print_stages(&report);
    Ok(())
}

fn select_cmd(args: SelectArgs) -> CliResult {
    let mut config = fit_config(1, &args.estimation)?;
    // per-k α is resolved by the sweep
    config.alpha = args.estimation.alpha.clone();
    if args.k_list.contains(&0) {
        return usage("--k-list entries must be at least 1");
    }
    let criterion = match args.criterion {
        CriterionArg::Stage1 => Criterion::Stage1,
        CriterionArg::Stage2 => Criterion::Stage2,
    };
    let data = load(&args.input)?;
    check_order(config.order, data.schema())?;
    let report = sweep_k(&data, &args.k_list, &config, criterion)?;
    write_file(&args.out, report.to_table())?;
    if let Some(path) = &args.report {
        write_file(path, to_json(&report))?;
    }
    for entry in &report.entries {
        match (entry.fi_stage1, &entry.error) {
            (Some(fi), _) => println!("k = {}: FI stage 1 = {fi:.6}", entry.k),
            (None, Some(err)) => println!("k = {}: failed: {err}", entry.k),
            (None, None) => {}
        }
    }
    println!("chosen k = {}", report.chosen_k);
    Ok(())
}

fn score_cmd(args: ScoreArgs) -> CliResult {
    let text = read_file(&args.fit)?;
    let report: FitReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: not a fit report: {e}", args.fit.display())))?;
    let data = load(&args.input)?;
    let names: Vec<&str> = data.schema().variables().iter().map(|v| v.name.as_str()).collect();
    if report.variables != names {
        return usage("fit report variables do not match the schema");
    }
    let stage = report
        .stage(args.stage)
        .ok_or_else(|| CliError::Usage(format!("fit report has no stage {}", args.stage)))?;
    let ranking = rank_variables_by_kl(&stage.phi, &data)?;
    if ranking.is_empty() {
        log::warn!("no categorical variables to score");
    }
    let mut out = String::from("rank,variable,name,ave_kl\n");
    for (r, score) in ranking.iter().enumerate() {
        let value = if score.is_degenerate() { "inf".to_string() } else { format!("{:?}", score.ave_kl) };
        out.push_str(&format!("{},{},{},{}\n", r + 1, score.variable + 1, score.name, value));
    }
    write_file(&args.out, out)?;
    for score in ranking.iter().take(10) {
        println!("{}\t{:.6}", score.name, score.ave_kl);
    }
    Ok(())
}

fn moments_cmd(args: MomentsArgs) -> CliResult {
    let order = parse_order(args.order)?;
    let alpha = match (&args.alpha, args.k) {
        (Some(a), Some(k)) if a.len() == 1 => vec![a[0]; k],
        (Some(a), Some(k)) if a.len() != k => return usage(format!("--alpha has {} values but k = {k}", a.len())),
        (Some(a), _) => a.clone(),
        (None, Some(k)) if k >= 1 => vec![meld::estimator::DEFAULT_ALPHA; k],
        (None, _) => return usage("--k must be at least 1"),
    };
    let prior = DirichletPrior::new(alpha)?;
    let data = load(&args.input)?;
    check_order(order, data.schema())?;
    let stats = compute_stats(&data, &prior, order)?;
    write_file(&args.out, to_json(&stats.to_dump()))?;
    println!("n = {}, moment vector length = {}", stats.n(), stats.layout().len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit_cmd(args),
        Command::Select(args) => select_cmd(args),
        Command::Score(args) => score_cmd(args),
        Command::Moments(args) => moments_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
