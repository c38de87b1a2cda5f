//! Command-line front end: synthesize pricing curves, generate instance
//! traces, run mechanisms on single points or sweeps, and score traces
//! against the offline oracles.
//!
//! Exit codes: 0 on success, 2 on a validation or usage error, 1 on I/O
//! failure.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use postedprice::harness::{
    run_sweep, write_agg_csv, write_rows_csv, write_util_csv, DataRow, ExperimentConfig,
    HarnessError, MechanismKind, SetupSource, SweepAxis,
};
use postedprice::instances::{
    generate, load_trace, preset, save_trace, validate, CaseKind, GeneratorConfig, Setup,
};
use postedprice::mechanism::run as run_mechanism;
use postedprice::oracle::{
    brute_force_opt, dual_upper_bound, empirical_ratio, within_enumeration_budget,
};
use postedprice::pricing::{
    benchmark_pricing, capacity_price, classify, deployment_pricing, optimal_ratio,
    synthesize_optimal, BenchmarkKind,
    Knots, PricingFunction, RegimeTag, ResourceSetup, DEFAULT_TABLE_NODES,
};
use postedprice::CostModel;

#[derive(Parser)]
#[command(
    name = "ppm",
    about = "posted-price mechanisms for capacitated resources with convex supply costs",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the optimal pricing curve for one resource and print its
    /// regime, guaranteed ratio, and knots
    Synthesize(SynthesizeArgs),
    /// Generate a seeded arrival instance and save it as trace + catalog CSVs
    Gen(GenArgs),
    /// Run mechanisms at a single sweep point (generated batch or one trace)
    Run(RunArgs),
    /// Sweep the price ceiling or the estimation error over seeded batches
    Sweep(SweepArgs),
    /// Score a saved trace against the exact and dual offline oracles
    Oracle(OracleArgs),
}

enum CliError {
    Usage(String),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(e) => CliError::Io(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn usage<T: fmt::Display>(msg: T) -> CliError {
    CliError::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synthesize(args) => cmd_synthesize(args),
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SynthesizeArgs {
    /// cost scale of f(y) = a * y^s
    #[arg(long, default_value_t = 0.223)]
    a: f64,
    /// cost exponent of f(y) = a * y^s
    #[arg(long, default_value_t = 3.0)]
    s: f64,
    /// absolute valuation ceiling (per unit per slot)
    #[arg(long, conflicts_with = "p_bar_mult")]
    p_bar: Option<f64>,
    /// valuation ceiling as a multiple of the marginal cap a * s
    #[arg(long)]
    p_bar_mult: Option<f64>,
    /// family member in [0, 1]; 0 is the most conservative curve
    #[arg(long, default_value_t = 0.0)]
    choice: f64,
    /// write curve samples (y,phi over [0, 1]) to this CSV
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// sample count for --curve-out
    #[arg(long, default_value_t = 512)]
    points: usize,
}

fn build_resource(a: f64, s: f64, p_bar: Option<f64>, p_bar_mult: Option<f64>) -> Result<ResourceSetup, CliError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(usage(format!("cost scale a = {a} must be positive")));
    }
    if !(s > 1.0 && s.is_finite()) {
        return Err(usage(format!("cost exponent s = {s} must exceed 1")));
    }
    let cost = CostModel::new(a, s);
    let p_bar = match (p_bar, p_bar_mult) {
        (Some(p), None) => p,
        (None, Some(m)) => m * cost.marginal_cap(),
        (None, None) => 3.0 * cost.marginal_cap(),
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    };
    if !(p_bar > 0.0 && p_bar.is_finite()) {
        return Err(usage(format!("valuation ceiling {p_bar} must be positive")));
    }
    Ok(ResourceSetup::new(cost, p_bar))
}

fn cmd_synthesize(args: SynthesizeArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.choice) {
        return Err(usage(format!("choice {} outside [0, 1]", args.choice)));
    }
    let rs = build_resource(args.a, args.s, args.p_bar, args.p_bar_mult)?;
    let pf = synthesize_optimal(&rs, args.choice).map_err(usage)?;
    let alpha = pf.alpha.expect("synthesized curves carry their ratio");

    use std::fmt::Write as _;
    let mut report = String::new();
    let _ = writeln!(report, "regime: {}", pf.regime.tag);
    let _ = writeln!(report, "alpha: {alpha}");
    let _ = writeln!(report, "c_bar: {}", rs.c_bar());
    let _ = writeln!(report, "p_bar: {}", rs.p_bar);
    match pf.knots {
        Knots::Luc { m } => {
            let v = pf.regime.v.expect("low ceiling carries v");
            let w = pf.regime.w.expect("low ceiling carries w");
            let _ = writeln!(report, "knots: m={m} (family range w={w} to v={v})");
        }
        Knots::Huc1 { u, rho } => {
            let _ = writeln!(report, "knots: u={u} rho={rho}");
        }
        Knots::Huc2 { u_cdt } => {
            let _ = writeln!(report, "knots: u_cdt={u_cdt}");
        }
        Knots::Benchmark => unreachable!("synthesis never yields a benchmark"),
    }
    if matches!(pf.regime.tag, RegimeTag::Huc1 | RegimeTag::Huc2) {
        let _ = writeln!(report, "capacity_price: {}", capacity_price(&rs));
    }
    let _ = writeln!(report, "domain_end: {}", pf.domain_end);
    let _ = writeln!(report, "extension_price: {}", pf.extension_price());
    // tolerate a reader that closed the pipe early
    let _ = std::io::stdout().write_all(report.as_bytes());

    if let Some(path) = &args.curve_out {
        if args.points == 0 {
            return Err(usage("--points must be at least 1"));
        }
        let file = BufWriter::new(File::create(path)?);
        pf.write_curve_csv(file, args.points)?;
        eprintln!("wrote {} samples to {}", args.points + 1, path.display());
    }
    Ok(())
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GenArgs {
    /// resource/catalog preset: google-cluster-like or desk
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 3.0)]
    p_bar_mult: f64,
    /// arrival case: ue, ee, ui, or ei
    #[arg(long, default_value = "ue")]
    case: String,
    /// override the preset's customer count
    #[arg(long)]
    n_customers: Option<usize>,
    /// override the preset's mean service duration
    #[arg(long)]
    duration_mean: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output trace CSV (customer_id,arrival_slot,duration_slots,bundle_index,valuation)
    #[arg(long)]
    out_trace: PathBuf,
    /// output catalog CSV (bundle_index,r_1,...,r_K)
    #[arg(long)]
    out_catalog: PathBuf,
}

fn resolve_preset(name: &str, mult: f64) -> Result<(Setup, GeneratorConfig), CliError> {
    if !(mult > 0.0 && mult.is_finite()) {
        return Err(usage(format!("ceiling multiplier {mult} must be positive")));
    }
    preset(name, mult).ok_or_else(|| usage(format!("unknown preset '{name}'")))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let case: CaseKind = args.case.parse().map_err(usage)?;
    let (setup, mut gen_cfg) = resolve_preset(&args.preset, args.p_bar_mult)?;
    gen_cfg.case = case;
    gen_cfg.seed = args.seed;
    if let Some(n) = args.n_customers {
        gen_cfg.n_customers = n;
    }
    if let Some(d) = args.duration_mean {
        gen_cfg.duration_mean = d;
    }
    let instance = generate(&gen_cfg, &setup);
    let report = validate(&instance, &setup);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.ok() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return Err(usage("generated instance failed validation"));
    }
    save_trace(&instance, &args.out_trace, &args.out_catalog)?;
    eprintln!(
        "wrote {} customers over {} slots to {} (catalog: {})",
        instance.customers.len(),
        instance.horizon,
        args.out_trace.display(),
        args.out_catalog.display()
    );
    Ok(())
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct BatchArgs {
    /// resource/catalog preset: google-cluster-like or desk
    #[arg(long, default_value = "desk")]
    preset: String,
    /// arrival case: ue, ee, ui, or ei
    #[arg(long, default_value = "ue")]
    case: String,
    /// comma-separated mechanisms among op, tp, mp
    #[arg(long, default_value = "op,tp,mp")]
    mechanisms: String,
    /// seeded instances per sweep point
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// base seed; instance i uses seed base + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_customers: Option<usize>,
    #[arg(long)]
    duration_mean: Option<f64>,
    /// score against exact enumeration when the instance is small enough
    #[arg(long)]
    exact: bool,
    /// interpolation nodes per scaled branch; 0 disables tabulation
    #[arg(long, default_value_t = DEFAULT_TABLE_NODES)]
    nodes: usize,
    /// per-instance rows CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// per-point aggregate CSV
    #[arg(long)]
    agg_out: Option<PathBuf>,
}

fn parse_mechanisms(spec: &str) -> Result<Vec<MechanismKind>, CliError> {
    let list: Vec<MechanismKind> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(usage))
        .collect::<Result<_, _>>()?;
    if list.is_empty() {
        return Err(usage("mechanism list is empty"));
    }
    Ok(list)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("bad grid value '{s}': {e}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(usage("grid is empty"));
    }
    Ok(values)
}

fn write_rows(out: Option<&Path>, rows: &[DataRow]) -> Result<(), CliError> {
    match out {
        Some(path) => write_rows_csv(BufWriter::new(File::create(path)?), rows)?,
        None => write_rows_csv(std::io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn batch_config(args: &BatchArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::new(
        SetupSource::Preset(args.preset.clone()),
        args.case.parse().map_err(usage)?,
    );
    cfg.mechanisms = parse_mechanisms(&args.mechanisms)?;
    cfg.n_instances = args.instances;
    cfg.base_seed = args.seed;
    cfg.n_customers = args.n_customers;
    cfg.duration_mean = args.duration_mean;
    cfg.use_exact = args.exact;
    cfg.table_nodes = args.nodes;
    Ok(cfg)
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    #[command(flatten)]
    batch: BatchArgs,
    /// price ceiling as a multiple of each resource's marginal cap
    #[arg(long, default_value_t = 3.0)]
    p_bar_mult: f64,
    /// relative ceiling estimation error seen by synthesis
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    delta: f64,
    /// score one saved trace instead of a generated batch
    #[arg(long, requires = "catalog")]
    trace: Option<PathBuf>,
    /// catalog CSV for --trace
    #[arg(long, requires = "trace")]
    catalog: Option<PathBuf>,
    /// horizon override for --trace (inferred when omitted)
    #[arg(long)]
    horizon: Option<usize>,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    if let (Some(trace), Some(catalog)) = (&args.trace, &args.catalog) {
        return run_on_trace(&args, trace, catalog);
    }
    let mut cfg = batch_config(&args.batch)?;
    if args.delta != 0.0 {
        cfg.axis = SweepAxis::Delta;
        cfg.values = vec![args.delta];
        cfg.p_bar_mult = args.p_bar_mult;
    } else {
        cfg.axis = SweepAxis::PBarMult;
        cfg.values = vec![args.p_bar_mult];
    }
    let out = run_sweep(&cfg)?;
    write_rows(args.batch.out.as_deref(), &out.rows)?;
    if let Some(path) = &args.batch.agg_out {
        write_agg_csv(BufWriter::new(File::create(path)?), &out.aggregates)?;
    }
    Ok(())
}

fn run_on_trace(args: &RunArgs, trace: &Path, catalog: &Path) -> Result<(), CliError> {
    let batch = &args.batch;
    let mechanisms = parse_mechanisms(&batch.mechanisms)?;
    let (setup, _) = resolve_preset(&batch.preset, args.p_bar_mult)?;
    let (instance, warnings) =
        load_trace(trace, catalog, args.horizon).map_err(usage)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut setup = setup;
    setup.catalog = instance.catalog.clone();
    setup.horizon = instance.horizon;
    if instance
        .catalog
        .first()
        .map(|b| b.units.len())
        .unwrap_or(0)
        != setup.resources.len()
    {
        return Err(usage(format!(
            "catalog has {} resources but preset '{}' defines {}",
            instance.catalog.first().map(|b| b.units.len()).unwrap_or(0),
            batch.preset,
            setup.resources.len()
        )));
    }
    let report = validate(&instance, &setup);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.ok() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return Err(usage("trace failed validation against the preset setup"));
    }

    if args.delta <= -1.0 {
        return Err(usage(format!(
            "delta {} leaves no positive ceiling estimate",
            args.delta
        )));
    }
    let estimates: Vec<ResourceSetup> = setup
        .resources
        .iter()
        .map(|rs| ResourceSetup::new(rs.cost, rs.p_bar * (1.0 + args.delta)))
        .collect();

    let mut rows = Vec::new();
    let mut dual = f64::INFINITY;
    let mut per_mech = Vec::new();
    for &mech in &mechanisms {
        let pfs: Vec<PricingFunction> = estimates
            .iter()
            .map(|rs| match mech {
                MechanismKind::Op => deployment_pricing(rs).map(|pf| {
                    if batch.nodes > 0 {
                        pf.tabulated(batch.nodes)
                    } else {
                        pf
                    }
                }),
                MechanismKind::Tp => Ok(benchmark_pricing(BenchmarkKind::TwiceMarginal, rs)),
                MechanismKind::Mp => Ok(benchmark_pricing(BenchmarkKind::Marginal, rs)),
            })
            .collect::<Result<_, _>>()
            .map_err(usage)?;
        let log = run_mechanism(&instance.customers, &instance.catalog, instance.horizon, &pfs);
        let prices: Vec<Vec<f64>> = pfs
            .iter()
            .zip(&log.final_utilization)
            .map(|(pf, per_slot)| per_slot.iter().map(|&y| pf.price(y)).collect())
            .collect();
        dual = dual.min(dual_upper_bound(&instance, &setup.resources, &prices));
        per_mech.push((mech, log.w_online));
    }
    let exact = if batch.exact
        && within_enumeration_budget(instance.customers.len(), instance.catalog.len())
    {
        brute_force_opt(&instance, &setup.resources).ok()
    } else {
        None
    };
    let (kind, w_opt) = match exact {
        Some(w) => ("exact", w),
        None => ("dual_bound", dual),
    };
    for (mech, w_online) in per_mech {
        let report = empirical_ratio(w_online, None, w_opt);
        rows.push(DataRow {
            sweep_value: if args.delta != 0.0 { args.delta } else { args.p_bar_mult },
            mechanism: mech,
            seed: 0,
            w_online,
            w_opt_kind: kind.to_string(),
            w_opt,
            er: report.er_bound,
        });
    }
    write_rows(batch.out.as_deref(), &rows)?;
    Ok(())
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SweepArgs {
    #[command(flatten)]
    batch: BatchArgs,
    /// sweep axis: p-bar-mult or delta
    #[arg(long, default_value = "p-bar-mult")]
    axis: String,
    /// comma-separated sweep values; defaults depend on the axis
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// fixed ceiling multiplier when sweeping delta
    #[arg(long, default_value_t = 3.0)]
    p_bar_mult: f64,
    /// write the flagged instance's utilization series to this CSV
    #[arg(long)]
    util_out: Option<PathBuf>,
    /// sweep-point index of the flagged instance
    #[arg(long, default_value_t = 0)]
    util_point: usize,
    /// instance index of the flagged instance
    #[arg(long, default_value_t = 0)]
    util_instance: usize,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut cfg = batch_config(&args.batch)?;
    cfg.axis = match args.axis.trim().to_ascii_lowercase().as_str() {
        "p-bar-mult" | "p_bar_mult" | "pbar" => SweepAxis::PBarMult,
        "delta" => SweepAxis::Delta,
        other => return Err(usage(format!("unknown axis '{other}' (want p-bar-mult or delta)"))),
    };
    cfg.values = match &args.grid {
        Some(spec) => parse_grid(spec)?,
        None => match cfg.axis {
            SweepAxis::PBarMult => (1..=9).map(f64::from).collect(),
            SweepAxis::Delta => (0..9).map(|i| -0.8 + 0.4 * i as f64).collect(),
        },
    };
    cfg.p_bar_mult = args.p_bar_mult;
    if args.util_out.is_some() {
        if args.util_point >= cfg.values.len() {
            return Err(usage(format!(
                "--util-point {} out of range for {} sweep values",
                args.util_point,
                cfg.values.len()
            )));
        }
        if args.util_instance >= cfg.n_instances {
            return Err(usage(format!(
                "--util-instance {} out of range for {} instances",
                args.util_instance, cfg.n_instances
            )));
        }
        cfg.util_flag = Some((args.util_point, args.util_instance));
    }
    let out = run_sweep(&cfg)?;
    write_rows(args.batch.out.as_deref(), &out.rows)?;
    if let Some(path) = &args.batch.agg_out {
        write_agg_csv(BufWriter::new(File::create(path)?), &out.aggregates)?;
    }
    if let Some(path) = &args.util_out {
        let series = out
            .utilization
            .expect("flag indices validated above, so the series exists");
        write_util_csv(BufWriter::new(File::create(path)?), &series)?;
    }
    Ok(())
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct OracleArgs {
    /// trace CSV (customer_id,arrival_slot,duration_slots,bundle_index,valuation)
    #[arg(long)]
    trace: PathBuf,
    /// catalog CSV (bundle_index,r_1,...,r_K)
    #[arg(long)]
    catalog: PathBuf,
    /// horizon override (inferred from the trace when omitted)
    #[arg(long)]
    horizon: Option<usize>,
    /// preset supplying the resource costs and ceilings
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 3.0)]
    p_bar_mult: f64,
    /// mechanism whose run supplies w_online and the dual prices
    #[arg(long, default_value = "op")]
    mechanism: MechanismKind,
    /// skip exact enumeration even when the budget allows it
    #[arg(long)]
    no_exact: bool,
    /// write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let (setup, _) = resolve_preset(&args.preset, args.p_bar_mult)?;
    let (instance, warnings) = load_trace(&args.trace, &args.catalog, args.horizon).map_err(usage)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let k = instance.catalog.first().map(|b| b.units.len()).unwrap_or(0);
    if k != setup.resources.len() {
        return Err(usage(format!(
            "catalog has {k} resources but preset '{}' defines {}",
            args.preset,
            setup.resources.len()
        )));
    }

    let pfs: Vec<PricingFunction> = setup
        .resources
        .iter()
        .map(|rs| match args.mechanism {
            MechanismKind::Op => {
                deployment_pricing(rs).map(|pf| pf.tabulated(DEFAULT_TABLE_NODES))
            }
            MechanismKind::Tp => Ok(benchmark_pricing(BenchmarkKind::TwiceMarginal, rs)),
            MechanismKind::Mp => Ok(benchmark_pricing(BenchmarkKind::Marginal, rs)),
        })
        .collect::<Result<_, _>>()
        .map_err(usage)?;
    let log = run_mechanism(&instance.customers, &instance.catalog, instance.horizon, &pfs);
    let prices: Vec<Vec<f64>> = pfs
        .iter()
        .zip(&log.final_utilization)
        .map(|(pf, per_slot)| per_slot.iter().map(|&y| pf.price(y)).collect())
        .collect();
    let dual = dual_upper_bound(&instance, &setup.resources, &prices);
    let exact = if !args.no_exact
        && within_enumeration_budget(instance.customers.len(), instance.catalog.len())
    {
        brute_force_opt(&instance, &setup.resources).ok()
    } else {
        None
    };
    let report = empirical_ratio(log.w_online, exact, dual);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            writeln!(f, "{json}")?;
            f.flush()?;
        }
        None => {
            let _ = std::io::stdout().write_all(format!("{json}\n").as_bytes());
        }
    }
    // per-regime context on stderr so scripts reading stdout stay clean
    for (i, rs) in setup.resources.iter().enumerate() {
        let regime = classify(rs);
        match optimal_ratio(rs) {
            Ok(alpha) => eprintln!("resource {}: regime {}, alpha {alpha}", i + 1, regime.tag),
            Err(e) => eprintln!("resource {}: regime {}, alpha unavailable ({e})", i + 1, regime.tag),
        }
    }
    Ok(())
}
