use std::fs::File;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use impact_core::accounting::{AccountingParams, IntensityMode, Method};
use impact_core::carbon::{IntensityBook, DEFAULT_ANNUAL_RATE, DEFAULT_LIFETIME_YEARS};
use impact_core::config::{profiles_from_trace, SimulateConfig, WorkloadConfig};
use impact_core::game::{FixtureShape, GameFixture, GameService, SystemClock};
use impact_core::machine::{self, Machine, MachineId};
use impact_core::report::{self, Format, Table};
use impact_core::sim::{self, compare_policies};
use impact_core::workload::synth::{generate_trace, TraceParams};
use impact_core::workload::{load_trace, save_profiles, write_trace, LoadOptions};

#[derive(Debug, Parser)]
#[command(
    name = "impact",
    version,
    about = "Impact-based accounting for heterogeneous HPC allocations"
)]
struct Cli {
    /// Configuration file (required by `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format.
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// Output file, or directory for `simulate`. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Price executions under each accounting method.
    Quote(QuoteArgs),
    /// Replay a workload under every policy and write summary, timeline and distribution reports.
    Simulate,
    /// Generate a synthetic reference-machine trace.
    GenTrace(GenTraceArgs),
    /// Compare linear and accelerated embodied-carbon depreciation.
    EmbodiedCompare(EmbodiedArgs),
    /// Extrapolate a reference trace to per-machine job profiles (JSON).
    Profiles(ProfilesArgs),
    /// Build a scheduling-game fixture (JSON) from a reference trace.
    GameFixture(GameFixtureArgs),
    /// Run the scheduling-game HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct AccountingArgs {
    /// Carbon-intensity fixture files, one per region.
    #[arg(long = "intensity", num_args = 1..)]
    intensity: Vec<PathBuf>,
    /// EBA weight on the potential-energy term.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Use the duration-weighted mean intensity instead of the start hour's.
    #[arg(long)]
    integrated: bool,
    /// Annual rate of the accelerated depreciation schedule.
    #[arg(long, default_value_t = DEFAULT_ANNUAL_RATE)]
    rate: f64,
}

impl AccountingArgs {
    fn params(&self) -> AccountingParams {
        AccountingParams {
            beta: self.beta,
            mode: if self.integrated {
                IntensityMode::Integrated
            } else {
                IntensityMode::AtStart
            },
            annual_rate: self.rate,
        }
    }
}

#[derive(Debug, Args)]
struct QuoteArgs {
    #[arg(long)]
    machines: PathBuf,
    /// CSV with job_id,machine_id,duration_s,energy_j,cores_used,start_time.
    #[arg(long)]
    executions: PathBuf,
    /// Methods to report; all five by default.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Divide each method column by its per-job minimum.
    #[arg(long)]
    normalize: bool,
    #[command(flatten)]
    accounting: AccountingArgs,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    #[arg(long, default_value_t = 1000)]
    jobs: usize,
    #[arg(long, default_value_t = 20)]
    users: usize,
    /// Largest core request.
    #[arg(long)]
    max_cores: Option<u32>,
    /// Cap core requests at the largest machine in this fixture.
    #[arg(long)]
    machines: Option<PathBuf>,
    #[arg(long)]
    mean_interarrival_s: Option<f64>,
    #[arg(long)]
    median_runtime_s: Option<f64>,
}

#[derive(Debug, Args)]
struct EmbodiedArgs {
    #[arg(long)]
    machines: PathBuf,
    /// Machine ages in years.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    ages: Vec<i64>,
    #[arg(long, default_value_t = DEFAULT_LIFETIME_YEARS)]
    lifetime: u32,
    /// Report per-execution operational and embodied carbon instead.
    #[arg(long)]
    executions: Option<PathBuf>,
    #[command(flatten)]
    accounting: AccountingArgs,
}

#[derive(Debug, Args)]
struct TraceSource {
    #[arg(long)]
    machines: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Machine the trace was measured on.
    #[arg(long)]
    reference: MachineId,
}

#[derive(Debug, Args)]
struct ProfilesArgs {
    #[command(flatten)]
    source: TraceSource,
    #[arg(long, default_value_t = 2)]
    repeat: u32,
}

#[derive(Debug, Args)]
struct GameFixtureArgs {
    #[command(flatten)]
    source: TraceSource,
    #[arg(long, default_value_t = 20)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Game fixture (JSON).
    #[arg(long)]
    game: PathBuf,
    /// Append-only results log; in-memory when omitted.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

/// Exit status classes.
enum Failure {
    Usage(String),
    Fixture(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Fixture(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn fixture<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Fixture(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Fixture(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let seed = cli.seed;
    match cli.command {
        Command::Quote(a) => quote(&a, cli.format, cli.out.as_deref()),
        Command::Simulate => {
            let config = cli
                .config
                .ok_or_else(|| Failure::Usage("simulate needs --config".into()))?;
            simulate(&config, seed, cli.format, cli.out.as_deref())
        }
        Command::GenTrace(a) => gen_trace(&a, seed.unwrap_or(0), cli.out.as_deref()),
        Command::EmbodiedCompare(a) => embodied(&a, cli.format, cli.out.as_deref()),
        Command::Profiles(a) => profiles(&a, seed.unwrap_or(0), cli.out.as_deref()),
        Command::GameFixture(a) => game_fixture(&a, seed.unwrap_or(0), cli.out.as_deref()),
        Command::Serve(a) => serve(&a),
    }
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => {
            Box::new(io::BufWriter::new(File::create(p).map_err(|e| {
                runtime(anyhow::anyhow!("creating {}: {e}", p.display()))
            })?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(table: &Table, format: Format, out: Option<&Path>) -> Outcome {
    let mut w = open_out(out)?;
    table.write(format, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn load_machines(path: &Path) -> Result<Vec<Machine>, Failure> {
    machine::load_machines(path).map_err(fixture)
}

fn load_book(paths: &[PathBuf]) -> Result<IntensityBook, Failure> {
    IntensityBook::load_files(paths).map_err(fixture)
}

fn quote(a: &QuoteArgs, format: Format, out: Option<&Path>) -> Outcome {
    let machines = load_machines(&a.machines)?;
    let book = load_book(&a.accounting.intensity)?;
    let file = File::open(&a.executions)
        .map_err(|e| fixture(anyhow::anyhow!("{}: {e}", a.executions.display())))?;
    let executions = report::read_executions(file).map_err(fixture)?;
    let methods = if a.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.methods.clone()
    };
    let t = report::quote_table(
        &executions,
        &machines,
        &methods,
        &book,
        &a.accounting.params(),
        a.normalize,
    )
    .map_err(fixture)?;
    emit(&t, format, out)
}

fn simulate(config: &Path, seed: Option<u64>, format: Format, out: Option<&Path>) -> Outcome {
    let mut cfg = SimulateConfig::load(config).map_err(fixture)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let prep = cfg.prepare().map_err(fixture)?;
    let runs = compare_policies(
        &prep.profiles,
        &prep.machines,
        &prep.policies,
        &prep.sim,
        prep.budget,
        &prep.book,
    )
    .map_err(runtime)?;
    for r in &runs {
        let audit = sim::audit(&r.result, &prep.machines);
        if !audit.is_clean() {
            return Err(runtime(anyhow::anyhow!(
                "policy {} failed the event-log audit: {}",
                r.policy,
                audit.violations.join("; ")
            )));
        }
    }

    let dir = out.unwrap_or(Path::new("results"));
    std::fs::create_dir_all(dir)
        .map_err(|e| runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    let ext = format.extension();
    for table in [
        report::policy_summary(&runs),
        report::timeline(&runs),
        report::distribution(&runs),
    ] {
        let path = dir.join(format!("{}.{ext}", table.name));
        emit(&table, format, Some(&path))?;
    }

    println!("seed {}", cfg.seed);
    println!("method {}  jobs {}", prep.sim.method, prep.profiles.len());
    if let Some(b) = runs.first().and_then(|r| r.result.budget) {
        println!("budget {b}");
    }
    for r in &runs {
        let s = &r.result;
        println!(
            "{:<14} completed {:>6}  work {:>12.3} core-h  energy {:>12.3} kWh  attributed {:>14.3} g",
            r.policy.to_string(),
            s.jobs_completed,
            s.work_core_h,
            s.energy_kwh,
            s.attributed_g
        );
    }
    println!("reports written to {}", dir.display());
    Ok(())
}

fn gen_trace(a: &GenTraceArgs, seed: u64, out: Option<&Path>) -> Outcome {
    let mut params = TraceParams {
        jobs: a.jobs,
        users: a.users,
        ..TraceParams::default()
    };
    if let Some(c) = a.max_cores {
        params.max_cores = c;
    }
    if let Some(path) = &a.machines {
        let largest = load_machines(path)?
            .iter()
            .map(Machine::total_cores)
            .max()
            .unwrap_or(1);
        params.max_cores = params
            .max_cores
            .min(u32::try_from(largest).unwrap_or(u32::MAX));
    }
    if let Some(x) = a.mean_interarrival_s {
        params.mean_interarrival_s = x;
    }
    if let Some(x) = a.median_runtime_s {
        params.median_runtime_s = x;
    }
    let records = generate_trace(&params, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut w = open_out(out)?;
    write_trace(&mut w, &records).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn embodied(a: &EmbodiedArgs, format: Format, out: Option<&Path>) -> Outcome {
    let machines = load_machines(&a.machines)?;
    let t = match &a.executions {
        None => report::embodied_comparison(&machines, &a.ages, a.accounting.rate, a.lifetime),
        Some(path) => {
            let book = load_book(&a.accounting.intensity)?;
            let file = File::open(path)
                .map_err(|e| fixture(anyhow::anyhow!("{}: {e}", path.display())))?;
            let executions = report::read_executions(file).map_err(fixture)?;
            report::job_carbon(
                &executions,
                &machines,
                &book,
                &a.accounting.params(),
                a.lifetime,
            )
        }
    }
    .map_err(fixture)?;
    emit(&t, format, out)
}

fn extrapolate(
    src: &TraceSource,
    repeat: u32,
    seed: u64,
) -> Result<(Vec<Machine>, Vec<impact_core::workload::JobProfile>), Failure> {
    let machines = load_machines(&src.machines)?;
    let trace = load_trace(&src.trace, LoadOptions::default()).map_err(fixture)?;
    let w = WorkloadConfig {
        repeat,
        ..WorkloadConfig::default()
    };
    let profiles = profiles_from_trace(&trace.records, &machines, &src.reference, &w, seed)
        .map_err(fixture)?;
    Ok((machines, profiles))
}

fn profiles(a: &ProfilesArgs, seed: u64, out: Option<&Path>) -> Outcome {
    let (_, profiles) = extrapolate(&a.source, a.repeat, seed)?;
    match out {
        Some(p) => save_profiles(p, &profiles).map_err(runtime),
        None => {
            let mut w = open_out(None)?;
            serde_json::to_writer_pretty(&mut w, &profiles).map_err(runtime)?;
            writeln!(w).map_err(runtime)
        }
    }
}

fn game_fixture(a: &GameFixtureArgs, seed: u64, out: Option<&Path>) -> Outcome {
    let (machines, profiles) = extrapolate(&a.source, 1, seed)?;
    let shape = FixtureShape {
        jobs: a.jobs,
        ..FixtureShape::default()
    };
    let f =
        GameFixture::from_profiles(machines, &profiles, a.source.reference.clone(), shape, seed)
            .map_err(fixture)?;
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, &f).map_err(runtime)?;
    writeln!(w).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn serve(a: &ServeArgs) -> Outcome {
    let f = GameFixture::load(&a.game).map_err(fixture)?;
    let clock = Arc::new(SystemClock);
    let svc = match &a.store {
        Some(p) => GameService::open(f, clock, p),
        None => GameService::new(f, clock),
    }
    .map_err(fixture)?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        tokio::select! {
            r = impact_core::game::serve(listener, Arc::new(svc)) => r,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
    .map_err(runtime)
}
