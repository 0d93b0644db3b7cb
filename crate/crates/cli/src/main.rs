//! `lorafield`: airtime planner, uplink simulator and log analyzer.
//!
//! Exit codes: 0 success, 1 validation or configuration error, 2 I/O error.
//! Results go to stdout, diagnostics to stderr.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lorafield::fieldlog::{self, GatewayRegistry, LogError};
use lorafield::metrics::{self, MetricsError, ReportConfig};
use lorafield::netsim::{self, Scenario, SimError, BUNDLED_SCENARIOS};
use lorafield::phy::{
    self, AppMessageSpec, DutyCyclePolicy, LowDataRateOptimize, PhyParams, SpreadingFactor,
};

#[derive(Parser)]
#[command(
    name = "lorafield",
    version,
    about = "LoRaWAN airtime planning, uplink simulation and log analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-on-air and duty-cycle minimum interval of one packet
    Airtime(AirtimeArgs),
    /// Highest spreading factor that meets a target send interval
    Plan(PlanArgs),
    /// Run a scenario and write the uplink log and ground truth
    Simulate(SimulateArgs),
    /// Compute reach, gateway share, inter-arrival and loss tables from a log
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct AirtimeArgs {
    #[arg(long)]
    sf: u8,
    /// Bandwidth in Hz
    #[arg(long, default_value_t = 125_000)]
    bw: u32,
    /// Coding rate 1..=4 (4/5..4/8)
    #[arg(long, default_value_t = 1)]
    cr: u8,
    /// Application payload in bytes
    #[arg(long)]
    payload: usize,
    #[arg(long, default_value_t = 8)]
    preamble: u16,
    /// MAC overhead added to the payload, bytes
    #[arg(long, default_value_t = phy::DEFAULT_MAC_OVERHEAD)]
    overhead: usize,
    #[arg(long, default_value_t = 0.01)]
    duty: f64,
    #[arg(long)]
    implicit_header: bool,
    #[arg(long)]
    no_crc: bool,
    /// Low data rate optimization: auto, on or off
    #[arg(long, default_value = "auto", value_parser = parse_ldro)]
    ldro: LowDataRateOptimize,
}

#[derive(Args)]
struct PlanArgs {
    /// Application payload in bytes
    #[arg(long)]
    payload: usize,
    /// Target send interval in seconds
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 0.01)]
    duty: f64,
    #[arg(long, default_value_t = phy::DEFAULT_MAC_OVERHEAD)]
    overhead: usize,
    /// Also write the per-SF table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML file, or the name of a bundled scenario
    #[arg(long)]
    scenario: String,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Override the channel's shadowing standard deviation, dB
    #[arg(long)]
    shadowing_sigma: Option<f64>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Uplink log (JSON Lines)
    #[arg(long)]
    log: PathBuf,
    /// Gateway registry CSV (gateway_id,lat,lon)
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Target send interval in seconds
    #[arg(long, default_value_t = 30.0)]
    target_interval: f64,
    /// Inter-arrival guard as a fraction of the target interval
    #[arg(long, default_value_t = metrics::DEFAULT_GUARD_FRACTION)]
    guard: f64,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

fn parse_ldro(s: &str) -> Result<LowDataRateOptimize, String> {
    match s {
        "auto" => Ok(LowDataRateOptimize::Auto),
        "on" => Ok(LowDataRateOptimize::On),
        "off" => Ok(LowDataRateOptimize::Off),
        _ => Err(format!("expected auto, on or off, got {s:?}")),
    }
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl From<phy::PhyError> for Failure {
    fn from(e: phy::PhyError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => Failure::Io(e.to_string()),
            SimError::Csv(e) if e.is_io_error() => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io(e) => Failure::Io(e.to_string()),
            LogError::Csv(e) if e.is_io_error() => Failure::Io(e.to_string()),
            LogError::Json(e) if e.is_io() => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(e) => Failure::Io(e.to_string()),
            MetricsError::Csv(e) if e.is_io_error() => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn io_context(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn airtime(args: AirtimeArgs) -> CmdResult {
    let params = PhyParams {
        sf: SpreadingFactor::new(args.sf)?,
        bandwidth_hz: args.bw,
        coding_rate: args.cr,
        preamble_symbols: args.preamble,
        explicit_header: !args.implicit_header,
        crc_on: !args.no_crc,
        low_data_rate_optimize: args.ldro,
        phy_payload_bytes: args.payload + args.overhead,
    };
    let policy = DutyCyclePolicy::new(args.duty)?;
    let toa = phy::time_on_air(&params)?;
    let interval = phy::min_interval(&params, &policy)?;
    let symbols = phy::payload_symbol_count(&params)?;

    let mut out = io::stdout().lock();
    writeln!(out, "spreading factor   {}", params.sf)?;
    writeln!(out, "bandwidth          {} Hz", params.bandwidth_hz)?;
    writeln!(
        out,
        "phy payload        {} B ({} app + {} overhead)",
        params.phy_payload_bytes, args.payload, args.overhead
    )?;
    writeln!(out, "payload symbols    {symbols}")?;
    writeln!(
        out,
        "low data rate opt  {}",
        if params.low_data_rate_enabled() {
            "on"
        } else {
            "off"
        }
    )?;
    writeln!(out, "time on air        {:.3} ms", toa * 1000.0)?;
    writeln!(out, "duty cycle         {} %", policy.duty_cycle * 100.0)?;
    writeln!(out, "minimal interval   {:.2} s", interval)?;
    writeln!(out, "toa_s={:.2} min_interval_s={:.2}", toa, interval)?;
    Ok(())
}

fn plan(args: PlanArgs) -> CmdResult {
    let spec = AppMessageSpec {
        app_payload_bytes: args.payload,
        mac_overhead_bytes: args.overhead,
        target_interval_s: args.target,
    };
    let policy = DutyCyclePolicy::new(args.duty)?;
    let result = phy::plan_spreading_factor(&spec, &policy)?;

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "phy payload {} B, target interval {} s, duty cycle {} %",
        result.phy_payload_bytes,
        result.target_interval_s,
        policy.duty_cycle * 100.0
    )?;
    writeln!(
        out,
        "{:<5} {:>10} {:>16} {:>9}",
        "sf", "toa_s", "min_interval_s", "feasible"
    )?;
    for c in &result.candidates {
        writeln!(
            out,
            "{:<5} {:>10.3} {:>16.2} {:>9}",
            c.sf.to_string(),
            c.time_on_air_s,
            c.min_interval_s,
            if c.feasible { "yes" } else { "no" }
        )?;
    }
    match result.chosen {
        Some(sf) => {
            writeln!(out, "chosen: {sf}")?;
            writeln!(out, "chosen_sf={}", sf.value())?;
        }
        None => {
            let fastest = result.fastest();
            writeln!(
                out,
                "verdict: infeasible, {} needs at least {:.2} s",
                fastest.sf, fastest.min_interval_s
            )?;
            writeln!(
                out,
                "chosen_sf=none min_interval_s={:.2}",
                fastest.min_interval_s
            )?;
        }
    }

    if let Some(path) = args.csv {
        let file = File::create(&path).map_err(io_context(&path))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "sf,toa_s,min_interval_s,feasible,chosen")?;
        for c in &result.candidates {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.sf.value(),
                c.time_on_air_s,
                c.min_interval_s,
                c.feasible,
                result.chosen == Some(c.sf)
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn load_scenario(spec: &str) -> Result<Scenario, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(io_context(path))?;
        return Scenario::from_toml_str(&text)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())));
    }
    Scenario::bundled(spec).ok_or_else(|| {
        Failure::Io(format!(
            "{spec}: no such file (bundled scenarios: {})",
            BUNDLED_SCENARIOS.join(", ")
        ))
    })
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(sigma) = args.shadowing_sigma {
        scenario.channel.shadowing_sigma_db = sigma;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let output = netsim::run_scenario(&scenario)?;

    fs::create_dir_all(&args.out).map_err(io_context(&args.out))?;
    let create = |name: &str| {
        let path = args.out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(io_context(&path))
    };
    fieldlog::write_log(&output.records, create("uplink.jsonl")?)?;
    output.ground_truth.write_csv(create("ground_truth.csv")?)?;
    scenario
        .gateway_registry()
        .write_csv(create("gateways.csv")?)?;

    let gt = &output.ground_truth;
    let mut out = io::stdout().lock();
    writeln!(out, "scenario       {}", scenario.name)?;
    writeln!(out, "devices        {}", scenario.devices.len())?;
    writeln!(out, "gateways       {}", scenario.gateways.len())?;
    writeln!(out, "transmissions  {}", gt.transmissions())?;
    writeln!(out, "records        {}", output.records.len())?;
    writeln!(out, "loss           {:.4}", gt.schedule_loss())?;
    writeln!(
        out,
        "transmissions={} records={} loss={}",
        gt.transmissions(),
        output.records.len(),
        gt.schedule_loss()
    )?;
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> CmdResult {
    let file = File::open(&args.log).map_err(io_context(&args.log))?;
    let parsed = fieldlog::parse_log(BufReader::new(file))?;
    let mut stderr = io::stderr().lock();
    for d in &parsed.diagnostics {
        writeln!(stderr, "{}: {d}", args.log.display())?;
    }
    if parsed.records.is_empty() {
        return Err(Failure::Invalid(format!(
            "{}: no valid records",
            args.log.display()
        )));
    }

    let mut config = ReportConfig::new(args.target_interval);
    config.interarrival.guard_fraction = args.guard;
    if let Some(path) = &args.registry {
        let file = File::open(path).map_err(io_context(path))?;
        config.registry = GatewayRegistry::from_csv(BufReader::new(file))?;
    }

    let records = fieldlog::merge_duplicates(parsed.records);
    let partitions = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = metrics::report_parallel(&records, &config, partitions)?;
    for d in report.diagnostics() {
        writeln!(stderr, "{d}")?;
    }

    fs::create_dir_all(&args.out).map_err(io_context(&args.out))?;
    report.write_csv_files(&args.out)?;

    let mut out = io::stdout().lock();
    writeln!(out, "records            {}", report.records)?;
    writeln!(out, "rejected lines     {}", parsed.diagnostics.len())?;
    writeln!(out, "devices            {}", report.loss.per_device.len())?;
    if let Some(reach) = report.reach.overall {
        writeln!(
            out,
            "gateways/message   min {} mean {:.2} max {}",
            reach.min, reach.mean, reach.max
        )?;
    }
    for row in &report.share.rows {
        let distance = row
            .distance_m
            .map_or("?".to_string(), |d| format!("{:.0} m", d));
        writeln!(
            out,
            "  {:<24} {:>10}  share {:.3}",
            row.gateway_id, distance, row.share
        )?;
    }
    let first = report.interarrival.fraction_within(1);
    writeln!(out, "first interval     {:.4}", first)?;
    let overall_loss = report.loss.overall.map_or(0.0, |l| l.loss);
    writeln!(out, "loss               {:.4}", overall_loss)?;
    writeln!(
        out,
        "records={} first_interval_fraction={} loss={}",
        report.records, first, overall_loss
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Airtime(a) => airtime(a),
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
