use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trafsim::demand::{load_trips, save_trips, DemandError};
use trafsim::engine::EngineError;
use trafsim::metrics::{cdf_csv, partition_load_report, trip_time_cdf};
use trafsim::netmodel::{load_network, save_network, NetError};
use trafsim::partition::{edge_access_counts, load_assignment, save_assignment, PartitionError, VertexWeights};
use trafsim::sync::SyncError;
use trafsim::*;

mod config;

/// Microscopic traffic simulation with partitioned parallel runs and
/// congestion grouping.
#[derive(Parser, Debug)]
#[command(name = "trafsim", version, args_override_self = true)]
struct Cli {
    /// key=value file with default flag values for the subcommand; flags
    /// given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a rectangular grid network.
    GenerateGrid(GridArgs),
    /// Write a random trip table for a network.
    GenerateTrips(TripArgs),
    /// Split a network's junctions into partitions.
    Partition(PartitionArgs),
    /// Simulate, sequentially or on several partitions.
    Run(RunArgs),
    /// Compare two trip logs.
    Compare(CompareArgs),
    /// Time one scenario at several partition counts, with and without grouping.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Junction columns.
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Junction rows.
    #[arg(long, default_value_t = 10)]
    rows: usize,
    /// Length of east-west edges, meters.
    #[arg(long, default_value_t = 100.0)]
    hlen: f64,
    /// Length of north-south edges, meters.
    #[arg(long, default_value_t = 300.0)]
    vlen: f64,
    /// Lanes per edge.
    #[arg(long, default_value_t = 1)]
    lanes: usize,
    /// Speed limit, m/s.
    #[arg(long, default_value_t = 13.9)]
    speed_limit: f64,
    /// Leave junctions unsignalized.
    #[arg(long)]
    no_signals: bool,
    /// Output network file.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TripArgs {
    /// Network file.
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Vehicles inserted per second.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Insertion period, seconds.
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    /// Random seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output trip file.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct PartitionOpts {
    /// Allowed excess of the heaviest partition over the mean weight.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Maximum refinement passes.
    #[arg(long, default_value_t = 16)]
    refine_passes: usize,
    /// Partitioner seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Ignore the trips and weight every junction equally.
    #[arg(long)]
    topology_only: bool,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    /// Network file.
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Trip file for traffic-aware weights.
    #[arg(long, value_name = "FILE")]
    trips: Option<PathBuf>,
    /// Number of partitions.
    #[arg(short = 'k', long, default_value_t = 2)]
    partitions: usize,
    #[command(flatten)]
    opts: PartitionOpts,
    /// Output assignment file.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// Network file.
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Trip file.
    #[arg(long, value_name = "FILE")]
    trips: PathBuf,
    /// Simulated seconds.
    #[arg(long, default_value_t = 3600.0)]
    end_time: f64,
    /// Seconds per step.
    #[arg(long, default_value_t = 0.5)]
    step_length: f64,
    /// Exchange transport between partition workers.
    #[arg(long, value_enum, default_value_t = Transport::Loopback)]
    transport: Transport,
    #[command(flatten)]
    grouping: GroupArgs,
    #[command(flatten)]
    partition: PartitionOpts,
}

#[derive(Args, Debug, Clone)]
struct GroupArgs {
    /// Simulate congested queues as leader/follower groups.
    #[arg(long)]
    group: bool,
    /// Congestion threshold as a fraction of the speed limit; 0 groups only
    /// stopped vehicles.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Body zones per lane.
    #[arg(long, default_value_t = 3)]
    zones: usize,
    /// Exit zone length as a fraction of the lane length.
    #[arg(long, default_value_t = 0.10)]
    exit_fraction: f64,
    /// Upper bound on the exit zone length, meters.
    #[arg(long, default_value_t = 50.0)]
    exit_cap: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Number of partitions; 1 runs the sequential engine.
    #[arg(short = 'k', long, default_value_t = 1)]
    partitions: usize,
    /// Assignment file; computed from the trips when absent.
    #[arg(long, value_name = "FILE")]
    assignment: Option<PathBuf>,
    /// Directory for triplog.csv, run.csv, cdf.csv and load.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Transport {
    Loopback,
    Tcp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    /// Pair records of the same vehicle.
    Id,
    /// Pair the i-th smallest values of each log.
    Rank,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Base trip log; differences are relative to it.
    #[arg(long, value_name = "FILE")]
    base: PathBuf,
    /// Trip log to compare.
    #[arg(long, value_name = "FILE")]
    other: PathBuf,
    /// How vehicles are paired.
    #[arg(long, value_enum, default_value_t = Mode::Id)]
    mode: Mode,
    /// Per-vehicle differences CSV.
    #[arg(short, long, value_name = "FILE", default_value = "compare.csv")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Partition counts to time, comma separated.
    #[arg(short = 'k', long, value_delimiter = ',', default_value = "1", action = clap::ArgAction::Set)]
    partitions: Vec<usize>,
    /// Timed runs per configuration; the fastest counts.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Speedup table CSV.
    #[arg(short, long, value_name = "FILE", default_value = "bench.csv")]
    output: PathBuf,
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DemandError> for CliError {
    fn from(e: DemandError) -> Self {
        match e {
            DemandError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::InvalidK { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::Usage(e.to_string()),
            EngineError::Format(_) | EngineError::Io(_) => CliError::Input(e.to_string()),
            EngineError::Collision { .. } | EngineError::Invariant { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SyncError> for CliError {
    fn from(e: SyncError) -> Self {
        match e {
            SyncError::Setup(_) => CliError::Input(e.to_string()),
            SyncError::Engine { source, .. } => source.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Prefixes an error with the file it concerns.
fn at<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Usage(m) => CliError::Usage(m),
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn generate_grid_cmd(a: GridArgs) -> Result<(), CliError> {
    let net = generate_grid(&GridSpec {
        cols: a.cols,
        rows: a.rows,
        h_len: a.hlen,
        v_len: a.vlen,
        lanes_per_edge: a.lanes,
        speed_limit: a.speed_limit,
        signalized: !a.no_signals,
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;
    at(&a.output, save_network(&net, &a.output))?;
    println!("{} junctions, {} edges -> {}", net.junctions.len(), net.edges.len(), a.output.display());
    Ok(())
}

fn generate_trips_cmd(a: TripArgs) -> Result<(), CliError> {
    let net = at(&a.network, load_network(&a.network))?;
    let trips = generate_random_trips(&net, a.rate, a.duration, a.seed)?;
    at(&a.output, save_trips(&net, &trips, &a.output))?;
    println!("{} vehicles -> {}", trips.len(), a.output.display());
    Ok(())
}

fn weights(net: &RoadNetwork, trips: Option<&TripTable>, opts: &PartitionOpts) -> Result<VertexWeights, CliError> {
    match trips {
        Some(t) if !opts.topology_only => Ok(vertex_weights(net, &edge_access_counts(net, t)?)),
        _ => Ok(VertexWeights::uniform(net.junctions.len())),
    }
}

fn partition_with(net: &RoadNetwork, trips: Option<&TripTable>, k: usize, opts: &PartitionOpts) -> Result<PartitionAssignment, CliError> {
    if !(opts.epsilon >= 0.0 && opts.epsilon.is_finite()) {
        return Err(CliError::Usage(format!("epsilon must be >= 0, got {}", opts.epsilon)));
    }
    let w = weights(net, trips, opts)?;
    let params = PartitionParams {
        epsilon: opts.epsilon,
        refine_passes: opts.refine_passes,
        seed: opts.seed,
    };
    let out = partition(net, &w, k, &params)?;
    log::info!(
        "k = {k}: {} cut adjacencies, border-edge ratio {:.4}, imbalance {:.3}",
        out.cut,
        out.assignment.border_edge_ratio(net),
        out.imbalance
    );
    Ok(out.assignment)
}

fn partition_cmd(a: PartitionArgs) -> Result<(), CliError> {
    let net = at(&a.network, load_network(&a.network))?;
    let trips = a.trips.as_ref().map(|p| at(p, load_trips(&net, p))).transpose()?;
    let assignment = partition_with(&net, trips.as_ref(), a.partitions, &a.opts)?;
    at(&a.output, save_assignment(&net, &assignment, &a.output))?;
    println!(
        "k = {}, border-edge ratio {:.4} -> {}",
        a.partitions,
        assignment.border_edge_ratio(&net),
        a.output.display()
    );
    Ok(())
}

fn sim_config(a: &SimArgs) -> Result<SimulationConfig, CliError> {
    let g = &a.grouping;
    let grouping = GroupingConfig {
        alpha: g.alpha,
        zones: g.zones,
        exit_fraction: g.exit_fraction,
        exit_cap: g.exit_cap,
    };
    grouping.check().map_err(CliError::Usage)?;
    let config = SimulationConfig {
        step_length: a.step_length,
        end_time: a.end_time,
        grouping: g.group.then_some(grouping),
        ..SimulationConfig::default()
    };
    config.check()?;
    Ok(config)
}

struct Scenario {
    net: Arc<RoadNetwork>,
    trips: TripTable,
    config: SimulationConfig,
    transport: TransportKind,
}

impl Scenario {
    fn load(a: &SimArgs) -> Result<Self, CliError> {
        let config = sim_config(a)?;
        let net = Arc::new(at(&a.network, load_network(&a.network))?);
        let trips = at(&a.trips, load_trips(&net, &a.trips))?;
        let transport = match a.transport {
            Transport::Loopback => TransportKind::Loopback,
            Transport::Tcp => TransportKind::Tcp,
        };
        Ok(Self { net, trips, config, transport })
    }

    fn run(&self, config: &SimulationConfig, assignment: Option<&PartitionAssignment>) -> Result<(TripLog, RunMetrics), CliError> {
        match assignment {
            None => Ok(run(Arc::clone(&self.net), &self.trips, config)?),
            Some(a) => Ok(run_parallel(Arc::clone(&self.net), &self.trips, config, a, self.transport)?),
        }
    }
}

fn run_cmd(a: RunArgs) -> Result<(), CliError> {
    let s = Scenario::load(&a.sim)?;
    if a.partitions == 0 {
        return Err(CliError::Usage("partitions must be at least 1".into()));
    }
    let assignment = match (&a.assignment, a.partitions) {
        (Some(p), k) => Some(at(p, load_assignment(&s.net, p, k))?),
        (None, 1) => None,
        (None, k) => Some(partition_with(&s.net, Some(&s.trips), k, &a.sim.partition)?),
    };
    let (log, metrics) = s.run(&s.config, assignment.as_ref())?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Input(format!("{}: {e}", a.out_dir.display())))?;
    write_file(&a.out_dir.join("triplog.csv"), &log.to_csv())?;
    write_file(&a.out_dir.join("run.csv"), &metrics.to_csv())?;
    write_file(&a.out_dir.join("load.csv"), &partition_load_report(&metrics).to_csv())?;
    match trip_time_cdf(&log) {
        Ok(cdf) => write_file(&a.out_dir.join("cdf.csv"), &cdf_csv(&cdf))?,
        Err(e) => log::warn!("cdf.csv not written: {e}"),
    }
    println!(
        "{} arrived, {} en route, {} waiting, {:.3} s wall -> {}",
        metrics.arrivals,
        metrics.en_route,
        metrics.waiting,
        metrics.wall_time,
        a.out_dir.display()
    );
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<(), CliError> {
    let base = at(&a.base, TripLog::load(&a.base))?;
    let other = at(&a.other, TripLog::load(&a.other))?;
    let mode = match a.mode {
        Mode::Id => CompareMode::Id,
        Mode::Rank => CompareMode::Rank,
    };
    let r = compare(&base, &other, mode);
    write_file(&a.output, &r.to_csv())?;
    println!("mean_trip_time_diff,max_trip_time_diff,mean_distance_diff,max_distance_diff,matched_arrived,matched_en_route,unmatched");
    println!(
        "{},{},{},{},{},{},{}",
        r.mean_trip_time_diff,
        r.max_trip_time_diff,
        r.mean_distance_diff,
        r.max_distance_diff,
        r.matched_arrived,
        r.matched_en_route,
        r.unmatched
    );
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<(), CliError> {
    let s = Scenario::load(&a.sim)?;
    if a.partitions.contains(&0) || a.repeat == 0 {
        return Err(CliError::Usage("partition counts and --repeat must be at least 1".into()));
    }
    let plain = SimulationConfig { grouping: None, ..s.config };
    let grouped = SimulationConfig {
        grouping: Some(s.config.grouping.unwrap_or_default()),
        ..s.config
    };
    let grouping_cfg = grouped.grouping;
    let time = |config: &SimulationConfig, assignment: Option<&PartitionAssignment>| -> Result<f64, CliError> {
        let mut best = f64::INFINITY;
        for _ in 0..a.repeat {
            let t = Instant::now();
            s.run(config, assignment)?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let mut rows = Vec::new();
    for &k in &a.partitions {
        let assignment = (k > 1)
            .then(|| partition_with(&s.net, Some(&s.trips), k, &a.sim.partition))
            .transpose()?;
        for (grouping, config) in [(false, &plain), (true, &grouped)] {
            rows.push((k, grouping, time(config, assignment.as_ref())?));
        }
    }
    // The baseline is the ungrouped sequential engine.
    let baseline = match rows.iter().find(|r| r.0 == 1 && !r.1) {
        Some(r) => r.2,
        None => time(&plain, None)?,
    };
    let mut csv = String::from("partitions,grouping,wall_time,speedup\n");
    for (k, grouping, wall) in &rows {
        csv.push_str(&format!("{k},{grouping},{wall},{}\n", baseline / wall));
    }
    write_file(&a.output, &csv)?;
    print!("{csv}");
    log::debug!("grouping parameters {grouping_cfg:?}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateGrid(a) => generate_grid_cmd(a),
        Command::GenerateTrips(a) => generate_trips_cmd(a),
        Command::Partition(a) => partition_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::merge(std::env::args().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("trafsim: {e}");
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trafsim: {e}");
            ExitCode::from(e.code())
        }
    }
}
