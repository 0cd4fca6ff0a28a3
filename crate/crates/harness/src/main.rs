use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use resjoin::reservoir::{derive_seed, Mutation};
use resjoin::{Interner, JoinQuery, StreamEvent};
use resjoin_harness::bench::{bench, BenchConfig, BenchReport, Method};
use resjoin_harness::checks::{self, CHECKS};
use resjoin_harness::gen::{chung_lu, erdos_renyi, graph_stream, instance_stream, qz_spec, rng, InstanceSpec};
use resjoin_harness::ingest::{read_stream, write_stream};
use resjoin_harness::rswp::{self, Predicate, RswpConfig};
use resjoin_harness::runner::{self, RunConfig};
use resjoin_harness::validate::{checkpoints_at, validate_uniformity, UniformityConfig, UniformityReport};
use resjoin_harness::queries;

#[derive(Parser)]
#[command(name = "resjoin", version, about = "Uniform samples over streaming joins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream a file through the sampler, writing sample snapshots and metrics.
    Run(RunArgs),
    /// Check sample uniformity against the brute-force oracle, or run named checks.
    Validate(ValidateArgs),
    /// Compare the sampler with the materializing baselines.
    Bench(BenchArgs),
    /// Reservoir sampling with a predicate across stream densities.
    Rswp(RswpArgs),
    /// Generate a synthetic stream.
    Gen(GenArgs),
}

#[derive(Args)]
struct Source {
    /// Built-in query name or path to a query file.
    #[arg(long)]
    query: String,
    /// Stream file, one `relation,value,...` line per event.
    #[arg(long)]
    stream: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn flag(t: Option<Toggle>) -> Option<bool> {
        t.map(|t| matches!(t, Toggle::On))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: usize,
    /// Override the per-node grouping flags of the query.
    #[arg(long)]
    grouping: Option<Toggle>,
    /// Output directory for samples.csv and metrics.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    FreezeWeight,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Oracle search-step cap.
    #[arg(long, default_value_t = 50_000_000)]
    cap: u64,
    /// Stream fractions at which samples are tallied.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1")]
    checkpoints: Vec<f64>,
    #[arg(long)]
    grouping: Option<Toggle>,
    /// Plant a known defect in the reservoir.
    #[arg(long)]
    mutation: Option<MutationArg>,
    /// Run one named check instead of a uniformity study.
    #[arg(long, conflicts_with = "all")]
    check: Option<String>,
    /// Run every named check.
    #[arg(long)]
    all: bool,
    /// List the named checks.
    #[arg(long)]
    list: bool,
    /// Output directory for uniformity.csv or checks.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to a tenth of the stream.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Methods to run besides the sampler.
    #[arg(long, value_delimiter = ',', default_value = "rebuild,materialized")]
    baseline: Vec<Method>,
    /// Work budget per baseline, in visited items.
    #[arg(long, default_value_t = 100_000_000)]
    cap: u64,
    /// Search-step cap for exact join sizes on cyclic queries.
    #[arg(long, default_value_t = 10_000_000)]
    oracle_cap: u64,
    /// Skip exact join sizes.
    #[arg(long)]
    no_oracle: bool,
    #[arg(long)]
    grouping: Option<Toggle>,
    /// Output directory for bench.csv and timing.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredicateArg {
    Busy,
    Edit,
}

#[derive(Args)]
struct RswpArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    density: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PredicateArg::Busy)]
    predicate: PredicateArg,
    /// Mixing rounds per evaluation of the busy predicate.
    #[arg(long, default_value_t = 64)]
    cost: u32,
    /// Edit-distance threshold.
    #[arg(long, default_value_t = 16)]
    threshold: usize,
    /// Output directory for rswp.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Er,
    Powerlaw,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    query: String,
    /// Edge stream over a random graph; every relation gets each edge once.
    #[arg(long, requires = "edges")]
    graph: Option<GraphKind>,
    #[arg(long, default_value_t = 1000)]
    nodes: u64,
    #[arg(long)]
    edges: Option<usize>,
    /// Degree exponent of power-law graphs.
    #[arg(long, default_value_t = 2.5)]
    gamma: f64,
    /// Rows per relation of a schema-shaped instance.
    #[arg(long, conflicts_with = "graph")]
    n: Option<usize>,
    /// Value domain of schema-shaped instances; defaults to the row count.
    #[arg(long)]
    domain: Option<i64>,
    /// Retail proportions: `--n` sales rows, a tenth as many customers.
    #[arg(long, requires = "n")]
    retail: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(source: &Source) -> anyhow::Result<(Arc<JoinQuery>, Vec<StreamEvent>, Interner)> {
    let q = queries::resolve(&source.query)?;
    let mut interner = Interner::new();
    let events = read_stream(&source.stream, &q, &mut interner)
        .with_context(|| format!("reading {}", source.stream.display()))?;
    Ok((Arc::new(q), events, interner))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_run(a: RunArgs) -> anyhow::Result<bool> {
    let (q, events, interner) = load(&a.source)?;
    let cfg = RunConfig {
        k: a.k,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        grouping: Toggle::flag(a.grouping),
    };
    let m = runner::run(q, &events, &interner, &cfg, create(&a.out, "samples.csv")?, create(&a.out, "metrics.csv")?)?;
    eprintln!("{} events, padded delta total {}", m.events, m.join_total);
    Ok(true)
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<bool> {
    if a.list {
        for c in CHECKS {
            println!("{:32} {}", c.name, c.about);
        }
        return Ok(true);
    }
    if a.all || a.check.is_some() {
        let selected: Vec<_> = match &a.check {
            Some(name) => vec![checks::find(name).with_context(|| format!("unknown check {name}"))?],
            None => CHECKS.iter().collect(),
        };
        let mut csv = String::from("check,status,detail\n");
        let mut all_ok = true;
        for c in selected {
            let (ok, detail) = (c.run)(a.seed)?;
            all_ok &= ok;
            let status = if ok { "PASS" } else { "FAIL" };
            println!("{status} {}: {detail}", c.name);
            csv.push_str(&format!("{},{status},\"{}\"\n", c.name, detail.replace('"', "'")));
        }
        if let Some(dir) = &a.out {
            create(dir, "checks.csv")?.write_all(csv.as_bytes())?;
        }
        return Ok(all_ok);
    }
    let (Some(query), Some(stream)) = (a.query, a.stream) else {
        anyhow::bail!("uniformity validation needs --query and --stream, or use --check/--all");
    };
    let (q, events, _) = load(&Source { query, stream })?;
    let mut cfg = UniformityConfig::new(a.k, a.trials, a.seed, checkpoints_at(events.len(), &a.checkpoints));
    cfg.cap = a.cap;
    cfg.grouping = Toggle::flag(a.grouping);
    cfg.mutation = a.mutation.map(|MutationArg::FreezeWeight| Mutation::FreezeWeight);
    let r = validate_uniformity(q, &events, &cfg)?;
    let csv = format!("{}\n{}", UniformityReport::HEADER, r.to_csv());
    match &a.out {
        Some(dir) => create(dir, "uniformity.csv")?.write_all(csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let ok = r.passes(0.001);
    eprintln!("{}", if ok { "uniform at every checkpoint" } else { "uniformity rejected" });
    Ok(ok)
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<bool> {
    let (q, events, _) = load(&a.source)?;
    let every = a.checkpoint_every.unwrap_or(events.len().div_ceil(10).max(1));
    let mut cfg = BenchConfig::new(a.k, a.seed, every);
    cfg.budget = a.cap;
    cfg.cap = a.oracle_cap;
    cfg.oracle = !a.no_oracle;
    cfg.grouping = Toggle::flag(a.grouping);
    cfg.methods = std::iter::once(Method::Engine)
        .chain(a.baseline.into_iter().filter(|&m| m != Method::Engine))
        .collect();
    let r = bench(q, &events, &cfg)?;
    let mut out = create(&a.out, "bench.csv")?;
    writeln!(out, "{}", BenchReport::HEADER)?;
    out.write_all(r.to_csv().as_bytes())?;
    out.flush()?;
    let mut t = create(&a.out, "timing.csv")?;
    writeln!(t, "{}", BenchReport::TIMING_HEADER)?;
    t.write_all(r.timing_csv().as_bytes())?;
    t.flush()?;
    eprintln!(
        "max propagation loops in one event: {} (event {})",
        r.max_event_propagation, r.max_event_propagation_at
    );
    Ok(true)
}

fn cmd_rswp(a: RswpArgs) -> anyhow::Result<bool> {
    let mut cfg = RswpConfig::new(a.n, a.k, a.density, a.trials, a.seed);
    cfg.predicate = match a.predicate {
        PredicateArg::Busy => Predicate::Busy { cost: a.cost },
        PredicateArg::Edit => Predicate::EditDistance { threshold: a.threshold },
    };
    let rows = rswp::run(&cfg);
    let csv = format!("{}\n{}", rswp::HEADER, rswp::to_csv(&rows));
    match &a.out {
        Some(dir) => create(dir, "rswp.csv")?.write_all(csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(true)
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<bool> {
    let q = queries::resolve(&a.query)?;
    let events = match (a.graph, a.n) {
        (Some(kind), _) => {
            let m = a.edges.expect("clap requires --edges");
            let mut r = rng(a.seed);
            let edges = match kind {
                GraphKind::Er => erdos_renyi(a.nodes, m, &mut r),
                GraphKind::Powerlaw => chung_lu(a.nodes, m, a.gamma, &mut r),
            };
            graph_stream(&q, &edges, &mut rng(derive_seed(a.seed, 1)))?
        }
        (None, Some(n)) => {
            let spec = if a.retail {
                qz_spec(&q, n)
            } else {
                InstanceSpec::uniform(&q, n, a.domain.unwrap_or(n as i64))
            };
            instance_stream(&q, &spec, &mut rng(a.seed))
        }
        (None, None) => anyhow::bail!("give --graph with --edges, or --n"),
    };
    let interner = Interner::new();
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_stream(BufWriter::new(File::create(path)?), &events, &q, &interner)?
        }
        None => write_stream(io::stdout().lock(), &events, &q, &interner)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Rswp(a) => cmd_rswp(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
