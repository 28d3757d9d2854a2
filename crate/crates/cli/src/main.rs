use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seedvote::ingest::{fixture_stats, prepare, FilterSpec, PrepareConfig};
use seedvote::runner::{self, render_lift_table, render_simulation, simulate};
use seedvote::{build_backend, AggregationStrategy, BackendConfig, Label, LabelHistogram, NoiseModel, RunConfig};

#[derive(Parser)]
#[command(
    name = "seedvote",
    version,
    about = "Seed-varied LLM ensembles with median voting for 1-5 star review scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a fixture from business.json / review.json dumps.
    Prepare {
        #[arg(long)]
        business: PathBuf,
        #[arg(long)]
        review: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Required category tag (repeatable; replaces the default "Restaurants").
        #[arg(long = "include")]
        include: Vec<String>,
        /// Excluded category tag (repeatable; replaces the default list).
        #[arg(long = "exclude")]
        exclude: Vec<String>,
    },
    /// Run K seeded workers per sample and aggregate their votes.
    Run(RunArgs),
    /// Re-score a finished run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Lift of one run over a baseline run on the same fixture.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Score labels drawn from a label distribution (chance-level baseline).
    Chance {
        #[arg(long)]
        fixture: PathBuf,
        /// Relative frequencies of labels 1..5.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact and Monte-Carlo RMSE of single vs median-of-K mock workers.
    Simulate {
        /// Noise model, e.g. p_correct=0.8,p_uniform_error=0.2 (repeatable).
        #[arg(long, required = true)]
        noise: Vec<NoiseModel>,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        truth: Vec<i64>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendArg,
    /// Base URL of an OpenAI-compatible server.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// median, majority or single:<worker>
    #[arg(long, default_value = "median")]
    aggregate: AggregationStrategy,
    #[arg(long, default_value_t = 5)]
    concurrency: usize,
    #[arg(long)]
    out: PathBuf,
    /// Use /v1/chat/completions instead of /v1/completions.
    #[arg(long)]
    chat: bool,
    #[arg(long, default_value_t = 4)]
    max_tokens: u32,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Mock noise model.
    #[arg(long, default_value = "p_correct=1")]
    noise: NoiseModel,
    /// Latency in seconds the mock reports per call.
    #[arg(long, default_value_t = 0.0)]
    mock_latency: f64,
    /// Exit with status 2 if any sample ends with no valid vote.
    #[arg(long)]
    strict: bool,
}

fn run_command(args: RunArgs) -> seedvote::Result<()> {
    let mut backend = match args.backend {
        BackendArg::Http => {
            let endpoint = args.endpoint.ok_or_else(|| seedvote::Error::Validation("--endpoint is required".into()))?;
            let model = args.model.ok_or_else(|| seedvote::Error::Validation("--model is required".into()))?;
            BackendConfig::http(endpoint, model)
        }
        BackendArg::Mock => {
            let mut c = BackendConfig::mock(args.noise);
            if let Some(model) = args.model {
                c.model_name = model;
            }
            c
        }
    };
    backend.chat = args.chat;
    backend.max_tokens = args.max_tokens;
    backend.temperature = args.temperature;
    backend.timeout_secs = args.timeout;
    backend.retry_limit = args.retries;
    backend.max_in_flight = args.concurrency.max(1);
    backend.mock_latency = args.mock_latency;

    let mut config = RunConfig::new(args.fixture, backend, args.out);
    config.seeds = args.seeds;
    config.aggregation = args.aggregate;
    config.concurrency = args.concurrency;
    config.strict = args.strict;
    config.validate()?;
    let client = build_backend(&config.backend)?;
    let outcome = runner::run(&config, client.as_ref())?;
    if outcome.resumed_from > 0 {
        eprintln!("resumed after {} completed samples", outcome.resumed_from);
    }
    print!("{}", outcome.report.render_table());
    Ok(())
}

fn execute(command: Command) -> seedvote::Result<()> {
    match command {
        Command::Prepare { business, review, n, seed, out, include, exclude } => {
            let defaults = FilterSpec::default();
            let filter = FilterSpec {
                include: if include.is_empty() { defaults.include } else { include },
                exclude: if exclude.is_empty() { defaults.exclude } else { exclude },
            };
            let prepared = prepare(&PrepareConfig { business_path: business, review_path: review, n, seed, filter })?;
            prepared.fixture.save(&out)?;
            print!("{prepared}");
            print!("{}", fixture_stats(&prepared.fixture)?);
            println!("wrote {}", out.display());
        }
        Command::Run(args) => run_command(args)?,
        Command::Evaluate { run } => print!("{}", runner::evaluate(&run)?.render_table()),
        Command::Compare { baseline, run } => print!("{}", render_lift_table(&runner::compare(&baseline, &run)?)),
        Command::Chance { fixture, weights, seed, out } => {
            let weights: [f64; 5] = weights.try_into().map_err(|w: Vec<f64>| {
                seedvote::Error::Validation(format!("--weights needs 5 values, got {}", w.len()))
            })?;
            let report = runner::chance_report(&fixture, &LabelHistogram::new(weights)?, seed, &out)?;
            print!("{}", report.render_table());
        }
        Command::Simulate { noise, k, truth, samples } => {
            let truths = truth.into_iter().map(Label::new).collect::<seedvote::Result<Vec<_>>>()?;
            print!("{}", render_simulation(&simulate(&noise, &k, &truths, samples)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
