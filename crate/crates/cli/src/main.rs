use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use infobound::baselines::{li_lipschitz_bound, negrea_lipschitz_bound, BaselineKind};
use infobound::bounds_finite::{
    compute_report, fano_lower_bound, improved_constant_bound, improved_constant_bound_limit, SuperSampleSpec,
};
use infobound::mc_lab::{optimize_theta, run_experiment, run_repetitions, ThetaFamily, ThetaSearch};
use infobound::{DecisionFunction, Error, ExperimentConfig, FiniteLearningProblem, LDSchedule, NATS_TO_BITS};

/// Exact finite-problem bounds and Monte Carlo hypothesis-test bounds for
/// Langevin dynamics.
#[derive(Parser, Debug)]
#[command(name = "infobound", version, about)]
struct Cli {
    /// Cap on worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate a finite problem and check every exact bound
    VerifyExact(ExactArgs),
    /// Monte Carlo curve of the hypothesis-test bound
    LdBound(RunArgs),
    /// Like ld-bound, with every comparison bound enabled by default
    Compare(RunArgs),
    /// Held-out search over the decision-function scale
    ThetaOpt(RunArgs),
    /// Evaluate a closed-form bound
    Info {
        #[command(subcommand)]
        formula: Formula,
    },
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[arg(long)]
    config: PathBuf,
    /// Supersample width for the CMI^k column (overrides the config)
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report information quantities in bits instead of nats
    #[arg(long)]
    bits: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment JSON; the built-in desk configuration when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decision function, `KIND[:a]` with KIND in erf, tanh, sign, constant-half
    #[arg(long)]
    theta: Option<DecisionFunction>,
    /// `all`, `none`, or a comma list such as `li_lip,negrea_dd`
    #[arg(long)]
    baselines: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Formula {
    /// Fano-type lower bound on the membership-inference error
    Fano {
        #[arg(long)]
        cmi: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
    },
    /// Bound with the improved constant; the k → ∞ limit without `--k`
    ImprovedConstant {
        #[arg(long)]
        cmi: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Lipschitz-constant baselines for a constant schedule
    Lipschitz {
        #[arg(long)]
        lipschitz: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        beta: f64,
    },
}

#[derive(Deserialize)]
struct ExactConfig {
    problem: FiniteLearningProblem,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    2
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
    .context("reading config")
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn verify_exact(args: &ExactArgs) -> Result<()> {
    let text = read_to_string(&args.config)?;
    let config: ExactConfig = serde_json::from_str(&text).map_err(Error::from)?;
    let k = args.k.unwrap_or(config.k);
    let spec = SuperSampleSpec::for_problem(&config.problem, k)?;
    let report = compute_report(&config.problem, &spec)?;
    let mut value = serde_json::to_value(&report)?;
    let scale = if args.bits { NATS_TO_BITS } else { 1.0 };
    for key in ["iomi", "cmi_k", "cmi_2", "supersample_mi"] {
        if let Some(v) = value.get_mut(key) {
            *v = json!(v.as_f64().unwrap_or(f64::NAN) * scale);
        }
    }
    value["units"] = json!(if args.bits { "bits" } else { "nats" });
    value["all_hold"] = json!(report.all_hold());
    if let Some(out) = &args.out {
        write_json(&out.join("report.json"), &value)?;
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(failed) = report.first_failure() {
        return Err(Error::InvariantViolated {
            name: failed.name.clone(),
            detail: format!("lhs {} > rhs {}", failed.lhs, failed.rhs),
        }
        .into());
    }
    Ok(())
}

fn parse_baselines(list: &str) -> Result<Vec<BaselineKind>> {
    match list {
        "all" => Ok(BaselineKind::ALL.to_vec()),
        "none" | "" => Ok(vec![]),
        _ => list
            .split(',')
            .map(|s| BaselineKind::parse(s.trim()).map_err(Into::into))
            .collect(),
    }
}

fn load_experiment(args: &RunArgs, default_baselines: Vec<BaselineKind>) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = read_to_string(path)?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(Error::from)?
        }
        None => ExperimentConfig::default(),
    };
    if args.config.is_none() {
        config.baselines.which = default_baselines;
    }
    if let Some(list) = &args.baselines {
        config.baselines.which = parse_baselines(list)?;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(theta) = args.theta {
        config.theta = theta;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    config.validate()?;
    Ok(config)
}

fn output_paths(config: &ExperimentConfig, out: Option<&Path>) -> (PathBuf, PathBuf) {
    match out {
        Some(dir) => (dir.join("curve.csv"), dir.join("summary.json")),
        None => (
            config.output.csv.clone().unwrap_or_else(|| PathBuf::from("curve.csv")),
            config.output.summary.clone().unwrap_or_else(|| PathBuf::from("summary.json")),
        ),
    }
}

fn ld_bound(args: &RunArgs, default_baselines: Vec<BaselineKind>) -> Result<()> {
    let config = load_experiment(args, default_baselines)?;
    let out = run_experiment(&config)?;
    let (csv, summary) = output_paths(&config, args.out.as_deref());
    for path in [&csv, &summary] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    out.curve.write_csv(&csv)?;
    let value = serde_json::to_value(&out.summary)?;
    write_json(&summary, &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    eprintln!("wrote {} and {}", csv.display(), summary.display());
    Ok(())
}

fn theta_opt(args: &RunArgs) -> Result<()> {
    let mut config = load_experiment(args, vec![])?;
    let search = match args.theta {
        Some(theta) => ThetaSearch::only(ThetaFamily::of(&theta)),
        None => config.theta_search.clone().unwrap_or_default(),
    };
    config.theta_search = Some(search.clone());
    config.validate()?;
    let reps = run_repetitions(&config)?;
    let opt = optimize_theta(&reps, &search, config.n)?;
    let value = json!({
        "theta": opt.theta.to_string(),
        "train_bound": opt.train_bound,
        "test_bound": opt.test_bound,
        "train_reps": opt.train_reps,
        "test_reps": opt.test_reps,
        "candidates": opt.candidates.iter().map(|(t, v)| json!({"theta": t.to_string(), "train_bound": v})).collect::<Vec<_>>(),
    });
    if let Some(dir) = &args.out {
        write_json(&dir.join("theta_opt.json"), &value)?;
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn info(formula: &Formula) -> Result<()> {
    let value = match *formula {
        Formula::Fano { cmi, n, k } => json!({ "fano_lower": fano_lower_bound(cmi, n, k)? }),
        Formula::ImprovedConstant { cmi, n, k } => match k {
            Some(k) => json!({ "improved_constant": improved_constant_bound(cmi, n, k)?, "k": k }),
            None => json!({ "improved_constant_limit": improved_constant_bound_limit(cmi, n)? }),
        },
        Formula::Lipschitz {
            lipschitz,
            n,
            steps,
            eta,
            beta,
        } => {
            let schedule = LDSchedule::constant(steps, eta, beta)?;
            if !(lipschitz.is_finite() && lipschitz > 0.0) {
                bail!(Error::Validation(format!("Lipschitz constant must be positive, got {lipschitz}")));
            }
            json!({
                "li_lip": li_lipschitz_bound(&schedule, lipschitz, n),
                "negrea_lip": negrea_lipschitz_bound(&schedule, lipschitz, n)?,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!(Error::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::VerifyExact(args) => verify_exact(args),
        Command::LdBound(args) => ld_bound(args, vec![]),
        Command::Compare(args) => ld_bound(args, BaselineKind::ALL.to_vec()),
        Command::ThetaOpt(args) => theta_opt(args),
        Command::Info { formula } => info(formula),
    }
}

/// 1 for a failed invariant, 2 for bad input, 3 when the problem is too large.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvariantViolated { .. } => 1,
                Error::Resource { .. } | Error::InsufficientData { .. } => 3,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
