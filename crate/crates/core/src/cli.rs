//! Command-line front end: `synth`, `pairs`, `stats`, `matrix`, `simulate`.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::metrics::global_distance;
use crate::model::save_customers;
use crate::model::{load_customers, CustomerDataset};
use crate::pairing::{
    aggregate_matrix, attach_kpis, build_pairs, join_pair_table, load_pair_table, save_pair_table,
    slice_row, CodeMap, IdentificationStats,
};
use crate::simulate::{
    accumulate_curve, baseline_band, greedy_sequence, power_sequence, reduction_curve,
    write_reduction, Granularity, PowerKey, Strategy,
};
use crate::synth::{generate, write_mappings, SynthConfig};
use crate::targets::{
    complement_target, flat_target, load_aggregate, load_solar_table, national_solar_target,
    solar_target, ProvinceTargets, SolarTable, TargetProfile, TargetResolver,
    DEFAULT_SOLAR_AMPLITUDE,
};

const TARGET_HELP: &str = "Target profile: flat | custom:<12 comma-separated values> | \
complement:<aggregate.csv> | solar-default[:<amplitude>] | \
solar:<table.csv>[,<location_province.csv>][@<province>]";

#[derive(Debug, Parser)]
#[command(
    name = "retail-profiler",
    version,
    about = "Target-fit KPIs and acquisition simulation for monthly load profiles"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "RETAIL_PROFILER_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic customer dataset with planted ground truth.
    Synth(SynthArgs),
    /// Build the NACE-location pair table with KPIs.
    Pairs(PairsArgs),
    /// Pair cardinality histogram and identification ratios.
    Stats(StatsArgs),
    /// Province x division indicator matrix.
    Matrix(MatrixArgs),
    /// Simulate acquisition strategies and the random baseline.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON generator configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub customers: PathBuf,
    #[arg(long, help = TARGET_HELP)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub customers: PathBuf,
    #[arg(long, help = TARGET_HELP)]
    pub target: String,
    /// `location,province` CSV; defaults to the leading alphanumeric prefix of the location.
    #[arg(long)]
    pub province_map: Option<PathBuf>,
    /// `nace,division` CSV; defaults to the first three characters of the NACE code.
    #[arg(long)]
    pub division_map: Option<PathBuf>,
    /// Also write the sorted non-empty cells of these provinces.
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Pair,
    Customer,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub customers: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, help = TARGET_HELP)]
    pub target: String,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "eid,contracted,demanded,random"
    )]
    pub strategies: Vec<Strategy>,
    /// Customers to acquire.
    #[arg(long)]
    pub n: usize,
    /// Random-baseline repetitions.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Steps at which to report the reduction; defaults to powers of ten up to `n`, and `n`.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<usize>,
    /// Rank power strategies by pair average (default) or by customer.
    #[arg(long, value_enum, default_value = "pair")]
    pub power_granularity: GranularityArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidTarget { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: BTreeMap<&'static str, String>,
    pub target: Option<String>,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<&'static str, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &'static str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs: BTreeMap::new(),
            target: None,
            seed: None,
            parameters: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, name: &'static str, path: &Path) -> &mut Self {
        self.inputs.insert(name, path.display().to_string());
        self
    }

    fn param(&mut self, name: &'static str, value: impl ToString) -> &mut Self {
        self.parameters.insert(name, value.to_string());
        self
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parsed `--target` value.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Flat,
    Custom([f64; crate::MONTHS]),
    Complement(PathBuf),
    SolarDefault(f64),
    Solar {
        table: PathBuf,
        provinces: Option<PathBuf>,
        province: Option<String>,
    },
}

impl std::str::FromStr for TargetSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidTarget {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        match (kind, arg) {
            ("flat", None) => Ok(TargetSpec::Flat),
            ("custom", Some(values)) => {
                let parsed: Vec<f64> = values
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| invalid("custom values must be numbers"))?;
                let arr: [f64; crate::MONTHS] = parsed
                    .try_into()
                    .map_err(|_| invalid("custom target needs exactly 12 values"))?;
                Ok(TargetSpec::Custom(arr))
            }
            ("complement", Some(path)) if !path.is_empty() => {
                Ok(TargetSpec::Complement(PathBuf::from(path)))
            }
            ("solar-default", None) => Ok(TargetSpec::SolarDefault(DEFAULT_SOLAR_AMPLITUDE)),
            ("solar-default", Some(a)) => a
                .parse()
                .map(TargetSpec::SolarDefault)
                .map_err(|_| invalid("amplitude must be a number")),
            ("solar", Some(rest)) if !rest.is_empty() => {
                let (files, province) = match rest.rsplit_once('@') {
                    Some((f, p)) => (f, Some(p.to_string())),
                    None => (rest, None),
                };
                let (table, provinces) = match files.split_once(',') {
                    Some((t, m)) => (t, Some(PathBuf::from(m))),
                    None => (files, None),
                };
                Ok(TargetSpec::Solar {
                    table: PathBuf::from(table),
                    provinces,
                    province,
                })
            }
            _ => Err(invalid("unrecognized form")),
        }
    }
}

/// Per-pair resolver plus the single target the aggregate demand is
/// compared against.
pub struct ResolvedTarget {
    pub resolver: Box<dyn TargetResolver<f64>>,
    pub aggregate: TargetProfile<f64>,
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<ResolvedTarget> {
        let global = |g: TargetProfile<f64>| ResolvedTarget {
            resolver: Box::new(g),
            aggregate: g,
        };
        Ok(match self {
            TargetSpec::Flat => global(flat_target()),
            TargetSpec::Custom(v) => global(TargetProfile::custom(*v)?),
            TargetSpec::Complement(path) => global(complement_target(&load_aggregate(path)?)?),
            TargetSpec::SolarDefault(a) => {
                let table = SolarTable::with_default(["default"], *a)?;
                global(solar_target("default", &table)?)
            }
            TargetSpec::Solar {
                table,
                provinces,
                province,
            } => {
                let table: SolarTable<f64> = load_solar_table(table)?;
                match province {
                    Some(p) => global(solar_target(p, &table)?),
                    None => {
                        let map = match provinces {
                            Some(path) => CodeMap::load(path, ["location", "province"])?,
                            None => CodeMap::default_province(),
                        };
                        ResolvedTarget {
                            aggregate: national_solar_target(&table)?,
                            resolver: Box::new(ProvinceTargets::solar(&table, map)?),
                        }
                    }
                }
            }
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv_file(
    path: &Path,
    body: impl FnOnce(&mut csv::Writer<std::fs::File>) -> csv::Result<()>,
) -> Result<()> {
    let mut w = csvio::writer_to_path(path)?;
    body(&mut w).map_err(|e| Error::csv(path, e))?;
    csvio::finish(path, w)
}

fn load_reporting(path: &Path) -> Result<CustomerDataset<f64>> {
    let ds = load_customers::<f64>(path)?;
    for d in ds.diagnostics() {
        log::warn!("{}: {d}", path.display());
    }
    let c = ds.counts();
    log::info!(
        "{}: {} customers, {} with pair keys, {} excluded, {} zero-demand",
        path.display(),
        c.total,
        c.with_pair_keys,
        c.excluded,
        c.zero_demand
    );
    Ok(ds)
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut config = SynthConfig::load(&args.config)?;
    config.seed = args.seed;
    let spec: TargetSpec = config.target.parse()?;
    let target = spec.resolve()?.aggregate;
    let (dataset, truth) = generate(&config, &target)?;
    create_dir(&args.out)?;
    save_customers(&args.out.join("customers.csv"), &dataset)?;
    truth.save(&args.out.join("ground_truth.csv"))?;
    write_mappings(&config, &args.out)?;

    let mut m = RunManifest::new("synth");
    m.input("config", &args.config);
    m.target = Some(config.target.clone());
    m.seed = Some(config.seed);
    m.param("n_customers", config.n_customers)
        .param("planted", truth.planted_count());
    m.outputs = [
        "customers.csv",
        "ground_truth.csv",
        "location_province.csv",
        "nace_division.csv",
    ]
    .map(String::from)
    .to_vec();
    m.write(&args.out)?;
    println!(
        "generated {} customers ({} planted) in {}",
        dataset.len(),
        truth.planted_count(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_pairs(args: &PairsArgs) -> CliResult<()> {
    let spec: TargetSpec = args.target.parse()?;
    let target = spec.resolve()?;
    let dataset = load_reporting(&args.customers)?;
    let d_star = global_distance(&dataset, target.resolver.as_ref())?;
    let mut table = build_pairs(&dataset);
    attach_kpis(&mut table, &dataset, target.resolver.as_ref(), d_star)?;
    create_dir(&args.out)?;
    save_pair_table(&args.out.join("pairs.csv"), &table)?;

    let mut m = RunManifest::new("pairs");
    m.input("customers", &args.customers);
    m.target = Some(args.target.clone());
    m.param("d_star", d_star.value());
    m.outputs = vec!["pairs.csv".into()];
    m.write(&args.out)?;

    let stats = IdentificationStats::from_pairs(table.pairs().iter().map(|p| (&p.key, p.len())));
    println!("d* = {}", d_star.value());
    println!(
        "customers: {} total, {} paired into {} pairs ({} singletons)",
        dataset.counts().total,
        table.member_count(),
        table.len(),
        stats
            .pair_cardinality_histogram
            .get(&1)
            .copied()
            .unwrap_or(0)
    );
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> CliResult<()> {
    let rows = load_pair_table::<f64>(&args.pairs)?;
    let stats = IdentificationStats::from_pairs(rows.iter().map(|r| (&r.key, r.n_k)));
    create_dir(&args.out)?;
    write_csv_file(&args.out.join("identification.csv"), |w| {
        stats.write_histogram(w)
    })?;
    write_csv_file(&args.out.join("ratio.csv"), |w| stats.write_ratio(w))?;

    let mut m = RunManifest::new("stats");
    m.input("pairs", &args.pairs);
    m.outputs = vec!["identification.csv".into(), "ratio.csv".into()];
    m.write(&args.out)?;

    println!(
        "{} non-empty pairs out of {} possible; {} customers uniquely identified, {} in sets of <= 10",
        stats.nonempty_pair_count,
        stats.total_pair_space,
        stats.customers_leq(1),
        stats.customers_leq(10)
    );
    Ok(())
}

pub fn cmd_matrix(args: &MatrixArgs) -> CliResult<()> {
    let spec: TargetSpec = args.target.parse()?;
    let target = spec.resolve()?;
    let dataset = load_reporting(&args.customers)?;
    let rows = load_pair_table::<f64>(&args.pairs)?;
    let table = join_pair_table(&rows, &dataset)?;
    let d_star = global_distance(&dataset, target.resolver.as_ref())?;
    let provinces = match &args.province_map {
        Some(p) => CodeMap::load(p, ["location", "province"])?,
        None => CodeMap::default_province(),
    };
    let divisions = match &args.division_map {
        Some(p) => CodeMap::load(p, ["nace", "division"])?,
        None => CodeMap::default_division(),
    };
    let matrix = aggregate_matrix(
        &table,
        &dataset,
        &provinces,
        &divisions,
        target.resolver.as_ref(),
        d_star,
    )?;
    create_dir(&args.out)?;
    write_csv_file(&args.out.join("matrix.csv"), |w| matrix.write_long(w))?;
    let mut outputs = vec!["matrix.csv".to_string()];
    for province in &args.rows {
        let row = slice_row(&matrix, province)?;
        let name = format!("row_{province}.csv");
        write_csv_file(&args.out.join(&name), |w| {
            w.write_record(["division", "customers", "E"])?;
            for (division, cell) in &row {
                w.write_record([
                    division.as_str(),
                    &cell.customers.to_string(),
                    &csvio::fmt(cell.indicator.value()),
                ])?;
            }
            Ok(())
        })?;
        outputs.push(name);
    }

    let mut m = RunManifest::new("matrix");
    m.input("pairs", &args.pairs)
        .input("customers", &args.customers);
    if let Some(p) = &args.province_map {
        m.input("province_map", p);
    }
    if let Some(p) = &args.division_map {
        m.input("division_map", p);
    }
    m.target = Some(args.target.clone());
    m.param("d_star", d_star.value());
    m.outputs = outputs;
    m.write(&args.out)?;
    for (code, n) in &matrix.unmapped {
        eprintln!("warning: {code} unmapped, {n} customers excluded");
    }
    println!(
        "{} provinces x {} divisions written to {}",
        matrix.provinces.len(),
        matrix.divisions.len(),
        args.out.display()
    );
    Ok(())
}

fn default_checkpoints(n: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = std::iter::successors(Some(10usize), |c| c.checked_mul(10))
        .take_while(|c| *c < n)
        .collect();
    if n > 0 {
        cps.push(n);
    }
    cps
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if args.strategies.is_empty() {
        return Err(CliError::Usage(
            "--strategies must name at least one strategy".into(),
        ));
    }
    let spec: TargetSpec = args.target.parse()?;
    let target = spec.resolve()?.aggregate;
    let dataset = load_reporting(&args.customers)?;
    let rows = load_pair_table::<f64>(&args.pairs)?;
    let table = join_pair_table(&rows, &dataset)?;
    let granularity = match args.power_granularity {
        GranularityArg::Pair => Granularity::Pair,
        GranularityArg::Customer => Granularity::Customer,
    };
    let checkpoints = if args.checkpoints.is_empty() {
        default_checkpoints(args.n)
    } else {
        args.checkpoints.clone()
    };
    create_dir(&args.out)?;

    let mut outputs = Vec::new();
    let mut curves = Vec::new();
    let mut baseline = None;
    for &strategy in &args.strategies {
        match strategy {
            Strategy::Random => {
                let band = baseline_band(&dataset, &target, args.n, args.reps, args.seed)?;
                write_csv_file(&args.out.join("baseline_random.csv"), |w| band.write_csv(w))?;
                outputs.push("baseline_random.csv".to_string());
                baseline = Some(band);
            }
            _ => {
                let mut seq = match strategy {
                    Strategy::Eid => greedy_sequence(&table, args.seed)?,
                    Strategy::Contracted => power_sequence(
                        &table,
                        &dataset,
                        PowerKey::Contracted,
                        granularity,
                        args.seed,
                    )?,
                    Strategy::Demanded => power_sequence(
                        &table,
                        &dataset,
                        PowerKey::Demanded,
                        granularity,
                        args.seed,
                    )?,
                    Strategy::Random => unreachable!(),
                };
                seq.truncate(args.n);
                let curve = accumulate_curve(&seq, &dataset, &target)?;
                let name = format!("curve_{strategy}.csv");
                write_csv_file(&args.out.join(&name), |w| curve.write_csv(w))?;
                outputs.push(name);
                curves.push((strategy, curve));
            }
        }
    }
    if let Some(band) = &baseline {
        for (strategy, curve) in &curves {
            let usable: Vec<usize> = checkpoints
                .iter()
                .copied()
                .filter(|c| *c <= curve.len())
                .collect();
            let rows = reduction_curve(curve, band, &usable)?;
            let name = format!("reduction_{strategy}.csv");
            write_csv_file(&args.out.join(&name), |w| write_reduction(w, &rows))?;
            outputs.push(name);
            for (n, r) in &rows {
                println!("{strategy}: N = {n}, reduction = {r:.3}");
            }
        }
    }

    let mut m = RunManifest::new("simulate");
    m.input("customers", &args.customers)
        .input("pairs", &args.pairs);
    m.target = Some(args.target.clone());
    m.seed = Some(args.seed);
    let names: Vec<String> = args.strategies.iter().map(|s| s.to_string()).collect();
    m.param("strategies", names.join(","))
        .param("n", args.n)
        .param("reps", args.reps)
        .param(
            "checkpoints",
            checkpoints
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .param(
            "power_granularity",
            format!("{:?}", granularity).to_lowercase(),
        );
    m.outputs = outputs;
    m.write(&args.out)?;
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pairs(a) => cmd_pairs(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}
