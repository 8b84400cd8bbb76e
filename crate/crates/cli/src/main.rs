use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use bayes_joinpoint::baseline::{select_bic, DEFAULT_GRID_STEP};
use bayes_joinpoint::io::{self, SeriesInput};
use bayes_joinpoint::simstudy::{
    self, default_scenarios, generate_series, parse_scenarios, replicate_seed, Method, Scenario,
};
use bayes_joinpoint::summaries::build_report;
use bayes_joinpoint::{
    plot, run_chains, Error, FitConfig, FitReport, PosteriorDraws, PriorKind,
    SamplerConfig, StudyConfig,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "joinpoint", version, about = "Bayesian joinpoint regression for count series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior and write draws plus summary tables.
    Fit(FitArgs),
    /// Maximum-likelihood fits for 0..=jmax joinpoints scored by BIC.
    Baseline(BaselineArgs),
    /// Write synthetic series for every scenario and replicate.
    Simulate(SimulateArgs),
    /// Compare the two priors against BIC on replicated synthetic series.
    Study(StudyArgs),
    /// Rebuild the report of an earlier fit from its draw files.
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Bayes1,
    Bayes2,
}

impl From<PriorArg> for PriorKind {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Bayes1 => PriorKind::Bayes1,
            PriorArg::Bayes2 => PriorKind::Bayes2,
        }
    }
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 50_000)]
    iters: usize,
    #[arg(long, default_value_t = 10_000)]
    burnin: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Iterations of burn-in used to tune proposal scales.
    #[arg(long, default_value_t = 5_000)]
    adapt: usize,
}

impl SamplerArgs {
    fn config(&self, seed: u64, prior_only: bool) -> SamplerConfig {
        SamplerConfig {
            n_chains: self.chains,
            n_iter: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed,
            adapt_window: self.adapt.min(self.burnin),
            prior_only,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns year,deaths,population[,forecast_population].
    input: PathBuf,
    /// Maximum number of joinpoints.
    #[arg(long, default_value_t = 5)]
    jstar: usize,
    /// Minimum distance between joinpoints and from the ends.
    #[arg(long, default_value_t = 2.0)]
    gap: f64,
    #[arg(long, value_enum, default_value = "bayes1")]
    prior: PriorArg,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Years to forecast past the last observation.
    #[arg(long, default_value_t = 5)]
    forecast_years: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Drop the likelihood and sample the prior.
    #[arg(long)]
    prior_only: bool,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct BaselineArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    jmax: usize,
    #[arg(long, default_value_t = 2.0)]
    gap: f64,
    /// Spacing of candidate joinpoint locations.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario file; the bundled scenarios when omitted.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    jstar: usize,
    #[arg(long, default_value_t = 3)]
    jmax: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Comma-separated subset of bayes1,bayes2,bic.
    #[arg(long, value_delimiter = ',', default_value = "bayes1,bayes2,bic")]
    methods: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write wall-clock seconds per fit to study_timing.csv.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Input series the fit was run on.
    input: PathBuf,
    /// Output directory of the fit.
    #[arg(long)]
    run_dir: PathBuf,
    /// Forecast horizon; the fit's own when omitted.
    #[arg(long)]
    forecast_years: Option<usize>,
    /// Where to write the rebuilt report; the run directory when omitted.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

/// Settings of a fit, stored next to its draws.
#[derive(Serialize, Deserialize)]
struct RunRecord {
    provenance: String,
    fit: FitConfig,
    sampler: SamplerConfig,
    forecast_years: usize,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse { .. } | Error::InvalidData(_) | Error::Io(_) => Failure::Input(msg),
            Error::InvalidConfig(_)
            | Error::InvalidGrid(_)
            | Error::DegeneratePrior(_)
            | Error::InvalidScenario(_)
            | Error::EmptyGrid
            | Error::MissingForecastPopulation
            | Error::UnknownParameter(_)
            | Error::OutOfRange { .. }
            | Error::OutsideOmega(_) => Failure::Config(msg),
            _ => Failure::Numeric(msg),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn read_input(path: &Path) -> Result<SeriesInput, Failure> {
    io::read_series_path(path).map_err(|e| match e {
        Error::Parse { line, message } => {
            Failure::Input(format!("{}:{line}: {message}", path.display()))
        }
        other => io_failure(path, other),
    })
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    std::fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_failure(&path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_report(dir: &Path, report: &FitReport, svg: bool) -> Result<(), Failure> {
    io::write_json(create(dir, "report.json")?, report)?;
    io::write_trend_csv(create(dir, "trend.csv")?, report)?;
    io::write_pmf_csv(create(dir, "pmf.csv")?, report)?;
    io::write_cumprob_csv(create(dir, "cumprob.csv")?, report)?;
    for cond in &report.conditional_locations {
        let k = cond.k;
        io::write_conditional_csv(create(dir, &format!("cond_tau_{k}.csv"))?, report, k)?;
        io::write_conditional_histogram_csv(
            create(dir, &format!("cond_tau_{k}_hist.csv"))?,
            report,
            k,
        )?;
        if cond.insufficient {
            eprintln!(
                "warning: only {} draws with {k} joinpoints; cond_tau_{k} is unreliable",
                cond.samples.len()
            );
        }
    }
    if svg {
        for (name, text) in [
            ("trend.svg", plot::trend_svg(report)),
            ("pmf.svg", plot::pmf_svg(report)),
            ("cumprob.svg", plot::cumprob_svg(report)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        }
    }
    Ok(())
}

fn print_pmf(report: &FitReport) {
    let cells: Vec<String> = report
        .joinpoint_pmf
        .iter()
        .enumerate()
        .map(|(k, p)| format!("{k}:{p:.3}"))
        .collect();
    println!("P(joinpoints | data) {}", cells.join(" "));
    println!(
        "beta0 mean {:.5} 95% [{:.5}, {:.5}]",
        report.beta0.mean, report.beta0.lower, report.beta0.upper
    );
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let input = read_input(&a.input)?;
    let fit = FitConfig {
        jstar: a.jstar,
        gap: a.gap,
        prior: a.prior.into(),
    };
    let sampler = a.sampler.config(a.seed, a.prior_only);
    sampler.validate()?;
    fit.validate(input.data.grid())?;
    let provenance = format!(
        "joinpoint {VERSION} fit input={} seed={} jstar={} gap={} prior={} chains={} iters={} burnin={} thin={} adapt={} forecast_years={} prior_only={}",
        file_name(&a.input),
        a.seed,
        fit.jstar,
        fit.gap,
        fit.prior.name(),
        sampler.n_chains,
        sampler.n_iter,
        sampler.burn_in,
        sampler.thin,
        sampler.adapt_window,
        a.forecast_years,
        a.prior_only
    );
    let draws = run_chains(&input.data, &fit, &sampler)?;
    for chain in &draws.chains {
        io::write_draws_csv(
            create(&a.out_dir, &format!("draws_chain_{}.csv", chain.chain))?,
            chain,
            fit.jstar,
            &provenance,
        )?;
    }
    let record = RunRecord {
        provenance: provenance.clone(),
        fit,
        sampler,
        forecast_years: a.forecast_years,
    };
    io::write_json(create(&a.out_dir, "run.json")?, &record)?;
    let report = build_report(
        &draws,
        &input.data,
        a.forecast_years,
        Some(&input.forecast),
        provenance,
    )?;
    write_report(&a.out_dir, &report, a.svg)?;
    print_pmf(&report);
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs) -> Result<(), Failure> {
    let input = read_input(&a.input)?;
    let run_path = a.run_dir.join("run.json");
    let text = std::fs::read_to_string(&run_path).map_err(|e| io_failure(&run_path, e))?;
    let record: RunRecord =
        serde_json::from_str(&text).map_err(|e| io_failure(&run_path, e))?;
    let mut chains = Vec::with_capacity(record.sampler.n_chains);
    for i in 0..record.sampler.n_chains {
        let path = a.run_dir.join(format!("draws_chain_{i}.csv"));
        let file = std::fs::File::open(&path).map_err(|e| io_failure(&path, e))?;
        let chain = io::read_draws_csv(std::io::BufReader::new(file), i).map_err(|e| io_failure(&path, e))?;
        if chain.states.iter().any(|s| s.delta.len() != record.fit.jstar) {
            return Err(io_failure(&path, "draws do not match the recorded jstar"));
        }
        chains.push(chain);
    }
    let draws = PosteriorDraws {
        fit: record.fit,
        sampler: record.sampler,
        chains,
    };
    let horizon = a.forecast_years.unwrap_or(record.forecast_years);
    let provenance = format!(
        "joinpoint {VERSION} summarize input={} forecast_years={horizon} from [{}]",
        file_name(&a.input),
        record.provenance
    );
    let report = build_report(&draws, &input.data, horizon, Some(&input.forecast), provenance)?;
    write_report(a.out_dir.as_deref().unwrap_or(&a.run_dir), &report, a.svg)?;
    print_pmf(&report);
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs) -> Result<(), Failure> {
    let input = read_input(&a.input)?;
    if !(a.gap > 0.0 && a.grid_step > 0.0) {
        return Err(Failure::Config("gap and grid step must be positive".into()));
    }
    let sel = select_bic(&input.data, a.jmax, a.gap, a.grid_step)?;
    let provenance = format!(
        "joinpoint {VERSION} baseline input={} jmax={} gap={} grid_step={}",
        file_name(&a.input),
        a.jmax,
        a.gap,
        a.grid_step
    );
    io::write_bic_csv(create(&a.out_dir, "bic.csv")?, &sel, &provenance)?;
    for (i, row) in sel.rows.iter().enumerate() {
        let taus: Vec<String> = row.fit.taus.iter().map(|t| t.to_string()).collect();
        println!(
            "J={} loglik {:.4} BIC {:.4} tau [{}]{}",
            row.j,
            row.fit.log_likelihood,
            row.bic,
            taus.join(", "),
            if i == sel.chosen { "  <- chosen" } else { "" }
        );
    }
    Ok(())
}

fn load_scenarios(path: Option<&Path>) -> Result<Vec<Scenario>, Failure> {
    match path {
        None => Ok(default_scenarios()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            Ok(parse_scenarios(&text)?)
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let scenarios = load_scenarios(a.scenarios.as_deref())?;
    if a.replicates == 0 {
        return Err(Failure::Config("replicates must be at least 1".into()));
    }
    for (s, sc) in scenarios.iter().enumerate() {
        for r in 0..a.replicates {
            let seed = replicate_seed(a.seed, s, r);
            let data = generate_series(sc, seed)?;
            let provenance = format!(
                "joinpoint {VERSION} simulate scenario={} replicate={r} master_seed={} seed={seed}",
                sc.name, a.seed
            );
            io::write_series_csv(
                create(&a.out_dir, &format!("{}_rep{r}.csv", sc.name))?,
                &data,
                &provenance,
            )?;
        }
    }
    println!(
        "wrote {} series to {}",
        scenarios.len() * a.replicates,
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_study(a: &StudyArgs) -> Result<(), Failure> {
    let scenarios = load_scenarios(a.scenarios.as_deref())?;
    let methods = a
        .methods
        .iter()
        .map(|m| match m.trim() {
            "bayes1" => Ok(Method::Bayes1),
            "bayes2" => Ok(Method::Bayes2),
            "bic" => Ok(Method::Bic),
            other => Err(Failure::Config(format!("unknown method `{other}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = StudyConfig {
        replicates: a.replicates,
        master_seed: a.seed,
        jstar: a.jstar,
        gap: 2.0,
        sampler: a.sampler.config(0, false),
        jmax: a.jmax,
        grid_step: a.grid_step,
        methods,
    };
    let outcomes = simstudy::run_study(&scenarios, &config)?;
    let rows = simstudy::summarize(&scenarios, &config, &outcomes);
    let names: Vec<&str> = config.methods.iter().map(|m| m.name()).collect();
    let provenance = format!(
        "joinpoint {VERSION} study scenarios={} replicates={} seed={} jstar={} jmax={} grid_step={} chains={} iters={} burnin={} thin={} adapt={} methods={}",
        a.scenarios.as_deref().map(file_name).unwrap_or_else(|| "default".into()),
        config.replicates,
        config.master_seed,
        config.jstar,
        config.jmax,
        config.grid_step,
        config.sampler.n_chains,
        config.sampler.n_iter,
        config.sampler.burn_in,
        config.sampler.thin,
        config.sampler.adapt_window,
        names.join(",")
    );
    io::write_study_csv(create(&a.out_dir, "study.csv")?, &outcomes, config.jstar, &provenance)?;
    io::write_study_summary_csv(create(&a.out_dir, "study_summary.csv")?, &rows, &provenance)?;
    if a.timing {
        io::write_study_timing_csv(create(&a.out_dir, "study_timing.csv")?, &outcomes, &provenance)?;
    }
    let text = format!("# {provenance}\n{}", simstudy::summary_text(&rows));
    let path = a.out_dir.join("summary.txt");
    std::fs::write(&path, &text).map_err(|e| io_failure(&path, e))?;
    print!("{}", simstudy::summary_text(&rows));
    for o in outcomes.iter().filter(|o| o.error.is_some()) {
        eprintln!(
            "warning: {} replicate {} {} failed: {}",
            o.scenario,
            o.replicate,
            o.method.name(),
            o.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Study(a) => cmd_study(a),
        Command::Summarize(a) => cmd_summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(msg) | Failure::Config(msg) | Failure::Numeric(msg)) = &f;
            eprintln!("joinpoint: {msg}");
            ExitCode::from(f.code())
        }
    }
}
