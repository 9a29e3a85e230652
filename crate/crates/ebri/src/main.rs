use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebri::example::{WorkedExample, DEFAULT_SEED};
use ebri::harness::{self, Design, ExperimentConfig, HarnessError, MechanismSpec};
use ebri::io::{self, FitExplanation, FormatError, ImputeReport, SurveyFile};
use ebri_core::cube::flight_phase_traced;
use ebri_core::imputation::{
    generate_response, impute_dri, impute_ebri, impute_from_cells, impute_rri, CellPopulation, Method,
};
use ebri_core::population::generate_population;
use ebri_core::regression::{fit, ModelSpec, Regularization};
use ebri_core::sampling::{pips_probabilities, rejective_sample, srswor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ebri", version, about = "Exact balanced random imputation for survey data")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population from a JSON recipe.
    Generate {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a sample from a population file and generate nonresponse.
    Sample {
        #[arg(long)]
        population: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = DesignArg::Rejective)]
        design: DesignArg,
        /// `full`, `mcar:PHI0` or `mar:MEAN[:LAMBDA1]`.
        #[arg(long, default_value = "full", value_parser = parse_mechanism)]
        response: MechanismSpec,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute the missing `y` values of a sample file.
    Impute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Required for `rri` and `ebri`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// JSON report with balance and donor details.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Population size when the file carries no `pi` or `d` column.
        #[arg(long)]
        population_size: Option<usize>,
        /// Absolute spectral floor `a`; defaults to 1% of the mean eigenvalue.
        #[arg(long)]
        regularization: Option<f64>,
        /// Balance on the residual variable only.
        #[arg(long)]
        no_purity_vars: bool,
        /// Print the fitted model as JSON.
        #[arg(long)]
        explain: bool,
        /// Write the flight-phase trace of `--method ebri` as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Defaults to the config value, then `EBRI_WORKERS`, then all cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the ten-unit worked example.
    Example {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Rejective,
    Srswor,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dri,
    Rri,
    Ebri,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dri => Method::Dri,
            MethodArg::Rri => Method::Rri,
            MethodArg::Ebri => Method::Ebri,
        }
    }
}

fn parse_mechanism(s: &str) -> Result<MechanismSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    let spec = match parts.as_slice() {
        ["full"] => MechanismSpec::Full,
        ["mcar", p] => MechanismSpec::Mcar { phi0: num(p)? },
        ["mar", m] => MechanismSpec::Mar { mean: num(m)?, lambda1: 0.1 },
        ["mar", m, l] => MechanismSpec::Mar { mean: num(m)?, lambda1: num(l)? },
        _ => return Err("expected `full`, `mcar:PHI0` or `mar:MEAN[:LAMBDA1]`".into()),
    };
    match spec {
        MechanismSpec::Mcar { phi0: p } | MechanismSpec::Mar { mean: p, .. } if !(p > 0.0 && p < 1.0) => {
            Err(format!("response probability {p} outside (0, 1)"))
        }
        _ => Ok(spec),
    }
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<ebri_core::Error> for Failure {
    fn from(e: ebri_core::Error) -> Self {
        use ebri_core::Error::*;
        match e {
            Shape(_) | InvalidParameter(_) | SampleTooLarge { .. } | NoRespondents => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Pool(_) => Failure::Usage(e.to_string()),
            HarnessError::Core(inner) => inner.into(),
            HarnessError::TooManyAborts { .. } => Failure::Numerical(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { recipe, seed, out } => cmd_generate(&recipe, seed, &out),
        Command::Sample { population, n, design, response, seed, out } => {
            cmd_sample(&population, n, design, response, seed, &out)
        }
        Command::Impute {
            input,
            method,
            seed,
            out,
            report,
            population_size,
            regularization,
            no_purity_vars,
            explain,
            trace,
        } => {
            cmd_impute(ImputeArgs {
                input,
                method: method.into(),
                seed,
                out,
                report,
                population_size,
                regularization,
                purity_vars: !no_purity_vars,
                explain,
                trace,
            })
        }
        Command::Simulate { config, out, seed, replications, workers, dry_run } => {
            cmd_simulate(&config, &out, seed, replications, workers, dry_run)
        }
        Command::Example { seed } => cmd_example(seed),
    }
}

fn cmd_generate(recipe: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let recipe = io::read_recipe(recipe)?;
    let pop = generate_population(&recipe, &mut ChaCha8Rng::seed_from_u64(seed))?;
    log::info!("generated {} units, total {:.3}", pop.len(), pop.total());
    let file = SurveyFile::from_population(&pop, vec![false; pop.len()]);
    io::write_survey_csv(out, &file)?;
    Ok(())
}

fn cmd_sample(
    population: &Path,
    n: usize,
    design: DesignArg,
    response: MechanismSpec,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let file = io::read_survey_csv(population)?;
    let design = match design {
        DesignArg::Rejective => Design::Rejective,
        DesignArg::Srswor => Design::Srswor,
    };
    let sample = match design {
        Design::Rejective => {
            let pi = pips_probabilities(&file.z1, n)?;
            rejective_sample(&pi, n, &mut harness::stream_rng(seed, 0, 0, 1, 0))?
        }
        Design::Srswor => srswor(file.len(), n, &mut harness::stream_rng(seed, 0, 0, 1, 0))?,
    };
    let phi: Option<Vec<f64>> = match response {
        MechanismSpec::Full => None,
        MechanismSpec::Mcar { phi0 } => Some(vec![phi0; sample.len()]),
        MechanismSpec::Mar { mean, lambda1 } => {
            let lambda0 = ebri_core::imputation::calibrate_mar(&file.z1, lambda1, mean)?;
            let all = ebri_core::imputation::ResponseMechanism::Mar { lambda0, lambda1 }.probabilities(&file.z1)?;
            Some(sample.indices.iter().map(|&k| all[k]).collect())
        }
    };
    let responds = match phi {
        None => vec![true; sample.len()],
        Some(phi) => generate_response(&phi, &mut harness::stream_rng(seed, 0, 0, 2, 0)),
    };
    let out_file = SurveyFile {
        ids: sample.indices.iter().map(|&k| file.ids[k].clone()).collect(),
        y: sample.indices.iter().map(|&k| file.y[k]).collect(),
        z1: sample.indices.iter().map(|&k| file.z1[k]).collect(),
        v: sample.indices.iter().map(|&k| file.v[k]).collect(),
        missing: sample.indices.iter().zip(&responds).map(|(&k, &r)| file.missing[k] || !r).collect(),
        pi: Some(sample.pi.clone()),
        d: Some(sample.d.clone()),
    };
    log::info!("sampled {} units, {} missing", out_file.len(), out_file.missing.iter().filter(|&&m| m).count());
    io::write_survey_csv(out, &out_file)?;
    Ok(())
}

struct ImputeArgs {
    input: PathBuf,
    method: Method,
    seed: Option<u64>,
    out: PathBuf,
    report: Option<PathBuf>,
    population_size: Option<usize>,
    regularization: Option<f64>,
    purity_vars: bool,
    explain: bool,
    trace: Option<PathBuf>,
}

fn cmd_impute(args: ImputeArgs) -> Result<(), Failure> {
    let file = io::read_survey_csv(&args.input)?;
    let pop = file.population()?;
    let sample = file.sample(args.population_size)?;
    let mut spec = ModelSpec::ratio();
    if let Some(a) = args.regularization {
        spec.regularization = Regularization::Absolute(a);
    }
    let fitted = fit(&sample, &pop, &spec)?;
    if args.explain {
        let text = serde_json::to_string_pretty(&FitExplanation::new(&file, &fitted))
            .map_err(|e| Failure::Numerical(e.to_string()))?;
        println!("{text}");
    }
    let seed = || {
        args.seed
            .ok_or_else(|| Failure::Usage(format!("--seed is required for --method {}", args.method.label().to_lowercase())))
    };
    let ds = match args.method {
        Method::Dri => impute_dri(&fitted, &sample)?,
        Method::Rri => impute_rri(&fitted, &sample, &mut ChaCha8Rng::seed_from_u64(seed()?))?,
        Method::Ebri => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed()?);
            match &args.trace {
                None => impute_ebri(&fitted, &sample, &mut rng, args.purity_vars)?,
                Some(path) => {
                    let cells = CellPopulation::build(&fitted, &sample, args.purity_vars);
                    let mut rows = Vec::new();
                    let itilde = if cells.n_m() == 0 {
                        Vec::new()
                    } else {
                        flight_phase_traced(&cells.balance_problem()?, &mut rng, &mut rows)?.itilde
                    };
                    io::write_trace_csv(path, &rows)?;
                    impute_from_cells(&fitted, &sample, &cells, &itilde)?
                }
            }
        }
    };
    if args.trace.is_some() && args.method != Method::Ebri {
        log::warn!("--trace only applies to --method ebri");
    }
    let report = ImputeReport::new(&file, &fitted, &sample, &ds);
    io::write_imputed_csv(&args.out, &file, &ds)?;
    if let Some(path) = &args.report {
        io::write_json(path, &report)?;
    }
    log::info!(
        "{}: {} imputed, target {:.6}, achieved {:.6}",
        report.method,
        report.nonrespondents,
        report.balance_target,
        report.achieved_balance
    );
    if args.method == Method::Ebri {
        let gap = (report.achieved_balance - report.balance_target).abs();
        if gap > 1e-8 * report.balance_target.abs().max(1e-300) && gap > 1e-12 {
            return Err(Failure::Numerical(format!(
                "balance identity failed: target {} achieved {}",
                report.balance_target, report.achieved_balance
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Versions {
    ebri: &'static str,
    ebri_core: &'static str,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    seed: u64,
    versions: Versions,
    config: &'a ExperimentConfig,
    aborts: &'a [harness::AbortCount],
    timings_file: &'static str,
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    replications: Option<usize>,
    workers: Option<usize>,
    dry_run: bool,
) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = io::read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    cfg.validate()?;
    if dry_run {
        let text = serde_json::to_string_pretty(&cfg).map_err(|e| Failure::Numerical(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let result = harness::run_experiment(&cfg)?;
    let total_path = out.join("table_total.csv");
    harness::write_table(&total_path, &harness::total_table(&result)).map_err(|e| io_failure(&total_path, e))?;
    let df_path = out.join("table_df.csv");
    harness::write_table(&df_path, &harness::df_table(&result)).map_err(|e| io_failure(&df_path, e))?;
    let meta = RunMeta {
        seed: cfg.seed,
        versions: Versions { ebri: env!("CARGO_PKG_VERSION"), ebri_core: ebri_core::VERSION },
        config: &cfg,
        aborts: &result.aborts,
        timings_file: "timings.json",
    };
    io::write_json(&out.join("run_meta.json"), &meta)?;
    io::write_json(&out.join("timings.json"), &result.timings)?;
    if let Some(reps) = &result.replicates {
        io::write_json(&out.join("replicates.json"), reps)?;
    }
    log::info!("finished in {:.2} s", result.timings.total_seconds);
    Ok(())
}

fn cmd_example(seed: u64) -> Result<(), Failure> {
    let ex = WorkedExample::run(seed)?;
    print!("{}", ex.render());
    if ex.balanced() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "balance identity violated: target {} achieved {}",
            ex.target,
            ex.achieved()
        )))
    }
}
