//! `partialpool`: grouping, estimation, balance, simulation and fixture
//! generation from the command line.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 estimation
//! failure, 4 simulation failure.

mod config;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use partialpool::data::{summarize_clusters, MultilevelDataset};
use partialpool::diagnostics::{balance_table, prevalence_profile, BalanceTable, CovariateSpec, PrevalenceProfile};
use partialpool::estimators::{bootstrap_ci, estimate_at_level, BootstrapConfig, SmallArmRule, WeightingLevel};
use partialpool::grouping::{GroupAssignment, GroupingMethod, GroupingRecipe, DEFAULT_GROUPS};
use partialpool::io::{read_dataset, read_weights, write_dataset};
use partialpool::propensity::{estimate_propensity, Pooling, PropensityStrategy};
use partialpool::rng::SeedStream;
use partialpool::simulation::{make_ecls_fixture, run_experiment};

use config::SimulateConfig;

#[derive(Parser, Debug)]
#[command(name = "partialpool", version, about = "Partially pooled propensity-score weighting for clustered data")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "PARTIALPOOL_THREADS")]
    threads: Option<usize>,
    /// Machine-readable output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Group clusters and write the assignment.
    Group(GroupArgs),
    /// Estimate the average treatment effect.
    Estimate(EstimateArgs),
    /// Covariate balance between arms, optionally weighted.
    Balance(BalanceArgs),
    /// Run a simulation grid from a TOML config.
    Simulate(SimulateArgs),
    /// Write the synthetic school fixture as CSV.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Input CSV with `cluster_id`, `z`, `y` and covariate columns.
    #[arg(long)]
    input: PathBuf,
    /// Cluster-level covariate columns.
    #[arg(long, value_delimiter = ',')]
    cluster_cols: Vec<String>,
    /// Individual-level covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
}

#[derive(Args, Debug, Serialize)]
struct GroupArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "prevalence")]
    method: GroupingMethod,
    #[arg(long, default_value_t = DEFAULT_GROUPS)]
    groups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Propensity strategy such as `group-RE`, `full,fe` or `cluster-none`.
    #[arg(long, default_value = "group-RE")]
    ps: String,
    #[arg(long, default_value = "group")]
    ipw: WeightingLevel,
    #[arg(long, default_value = "prevalence")]
    method: GroupingMethod,
    #[arg(long, default_value_t = DEFAULT_GROUPS)]
    groups: usize,
    /// Propensity model covariates (default: every covariate column).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Covariates removed from the propensity model.
    #[arg(long, value_delimiter = ',')]
    omit: Vec<String>,
    /// Coded columns entered as level indicators.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Enter individual covariates as cluster mean and deviation.
    #[arg(long)]
    split: bool,
    /// Score truncation `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    clamp: Option<Vec<f64>>,
    #[arg(long, default_value = "missing")]
    small_arm: SmallArmRule,
    /// Cluster bootstrap replicates (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `cluster_id,z,score,weight` per row.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BalanceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Row-aligned weights CSV (`weight` column or first column).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Specs such as `ses,region:cat:0|1|2|3`.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Cluster-level categorical covariate to profile across prevalence bins.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    profile_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FixtureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Estimation(String),
    Simulation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Estimation(_) => 3,
            Failure::Simulation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Estimation(m) | Failure::Simulation(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

/// `Name: message`, where `Name` is the error variant.
fn named<E: std::fmt::Debug + std::fmt::Display>(e: &E) -> String {
    let dbg = format!("{e:?}");
    let name: String = dbg.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    format!("{name}: {e}")
}

fn load(data: &DataArgs) -> Result<MultilevelDataset, Failure> {
    let f = File::open(&data.input).map_err(|e| Failure::Input(format!("{}: {e}", data.input.display())))?;
    read_dataset(BufReader::new(f), data.x_cols.as_deref(), &data.cluster_cols)
        .map_err(|e| Failure::Input(format!("{}: {e}", data.input.display())))
}

/// Machine output goes to `out` when given, else stdout. The human summary
/// goes to stdout when the machine output has its own file, else stderr.
struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    fn write(&self, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Outcome {
        match &self.out {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p).map_err(|e| input(format!("{}: {e}", p.display())))?);
                f(&mut w).and_then(|_| w.flush()).map_err(input)
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                f(&mut w).and_then(|_| w.flush()).map_err(input)
            }
        }
    }

    fn summary(&self, text: &str) {
        if self.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
    }

    /// Resolved config: embedded in JSON output; for CSV output written to
    /// `<out>.config.json`, or to stderr without an output file.
    fn echo_config<T: Serialize>(&self, format: Format, config: &T) -> Outcome {
        if format == Format::Json {
            return Ok(());
        }
        let text = serde_json::to_string_pretty(config).map_err(input)?;
        match &self.out {
            Some(p) => {
                let mut name = p.as_os_str().to_owned();
                name.push(".config.json");
                fs::write(PathBuf::from(name), text + "\n").map_err(input)
            }
            None => {
                eprintln!("config: {}", text.replace('\n', " "));
                Ok(())
            }
        }
    }
}

fn to_json<T: Serialize>(w: &mut dyn Write, v: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)
}

fn csv_line(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| if f.contains([',', '"', '\n']) { format!("\"{}\"", f.replace('"', "\"\"")) } else { f.clone() })
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- group

#[derive(Serialize)]
struct AssignmentRow {
    cluster_id: String,
    p_h: f64,
    n_h: usize,
    group: usize,
    p_g: f64,
    delta_h: f64,
}

#[derive(Serialize)]
struct GroupReport<'a> {
    config: &'a GroupArgs,
    method: &'static str,
    n_groups: usize,
    objective: f64,
    dropped_features: &'a [String],
    assignments: Vec<AssignmentRow>,
}

fn assignment_rows(ds: &MultilevelDataset, g: &GroupAssignment) -> Vec<AssignmentRow> {
    summarize_clusters(ds)
        .into_iter()
        .enumerate()
        .map(|(h, s)| AssignmentRow {
            cluster_id: s.cluster_id,
            p_h: s.prevalence,
            n_h: s.n,
            group: g.group_of(h),
            p_g: g.groups()[g.group_of(h)].prevalence,
            delta_h: g.deltas()[h],
        })
        .collect()
}

fn cmd_group(a: &GroupArgs, format: Format) -> Outcome {
    let ds = load(&a.data)?;
    let s = summarize_clusters(&ds);
    let g = GroupingRecipe::new(a.method, a.groups).apply(&ds, &s, a.seed).map_err(|e| input(named(&e)))?;
    let rows = assignment_rows(&ds, &g);
    let sink = Sink { out: a.out.clone() };
    sink.echo_config(format, a)?;
    match format {
        Format::Json => {
            let report = GroupReport {
                config: a,
                method: a.method.name(),
                n_groups: g.n_groups(),
                objective: g.objective(),
                dropped_features: g.dropped_features(),
                assignments: rows,
            };
            sink.write(|w| to_json(w, &report))?;
        }
        Format::Csv => sink.write(|w| {
            writeln!(w, "cluster_id,p_h,n_h,group,p_g,delta_h")?;
            for r in &rows {
                let f = [
                    r.cluster_id.clone(),
                    r.p_h.to_string(),
                    r.n_h.to_string(),
                    r.group.to_string(),
                    r.p_g.to_string(),
                    r.delta_h.to_string(),
                ];
                writeln!(w, "{}", csv_line(&f))?;
            }
            Ok(())
        })?,
    }
    sink.summary(&format!(
        "{} clusters in {} groups by {} (objective {:.4})\n",
        ds.n_clusters(),
        g.n_groups(),
        a.method.name(),
        g.objective()
    ));
    Ok(())
}

// ------------------------------------------------------------- estimate

#[derive(Serialize)]
struct SmdSummary {
    covariate: String,
    smd_unweighted: f64,
    smd_weighted: f64,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    config: &'a EstimateArgs,
    ps_strategy: String,
    weighting_level: &'static str,
    estimate: f64,
    se_fixed_ps: Option<f64>,
    ci95_normal: Option<(f64, f64)>,
    ci95_bootstrap: Option<(f64, f64)>,
    se_bootstrap: Option<f64>,
    bootstrap_valid: Option<usize>,
    bootstrap_failed: Option<usize>,
    n: usize,
    n_clusters: usize,
    n_groups: Option<usize>,
    dropped_clusters: Vec<String>,
    propensity_fallbacks: usize,
    propensity_clamped: usize,
    balance: Vec<SmdSummary>,
}

fn strategy_for(a: &EstimateArgs, ds: &MultilevelDataset) -> Result<PropensityStrategy, Failure> {
    let mut s: PropensityStrategy = a.ps.parse().map_err(|e: String| Failure::Input(e))?;
    let all: Vec<String> =
        ds.individual_covariate_names().iter().chain(ds.cluster_covariate_names()).cloned().collect();
    let chosen = a.covariates.clone().unwrap_or_else(|| all.clone());
    for c in chosen.iter().chain(&a.omit).chain(&a.categorical) {
        if !all.contains(c) {
            return Err(Failure::Input(format!("unknown covariate `{c}`")));
        }
    }
    let chosen: Vec<String> = chosen.into_iter().filter(|c| !a.omit.contains(c)).collect();
    s = s.with_covariates(chosen.clone()).with_cluster_mean_split(a.split);
    s = s.with_categorical(a.categorical.iter().filter(|c| chosen.contains(c)).cloned().collect());
    if let Some(c) = &a.clamp {
        s.clamp = Some((c[0], c[1]));
    }
    s.validate().map_err(|e| input(named(&e)))?;
    Ok(s)
}

/// Levels of a coded column, ascending.
fn levels_of(ds: &MultilevelDataset, name: &str) -> Vec<f64> {
    let col = ds.column(name).expect("column checked");
    let set: BTreeSet<u64> = (0..ds.n()).map(|i| ds.value(i, col).to_bits()).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn balance_specs(ds: &MultilevelDataset, names: &[String], categorical: &[String]) -> Vec<CovariateSpec> {
    names
        .iter()
        .map(|n| {
            if categorical.contains(n) {
                CovariateSpec::categorical(n, &levels_of(ds, n))
            } else {
                CovariateSpec::continuous(n)
            }
        })
        .collect()
}

fn cmd_estimate(a: &EstimateArgs, format: Format) -> Outcome {
    let ds = load(&a.data)?;
    let strategy = strategy_for(a, &ds)?;
    let recipe = GroupingRecipe::new(a.method, a.groups);
    let needs_grouping = strategy.pooling == Pooling::Group || a.ipw == WeightingLevel::Group;
    let grouping = if needs_grouping {
        let s = summarize_clusters(&ds);
        Some(recipe.apply(&ds, &s, a.seed).map_err(|e| input(named(&e)))?)
    } else {
        None
    };
    let ps = estimate_propensity(&ds, &strategy, grouping.as_ref()).map_err(|e| Failure::Estimation(named(&e)))?;
    let est = estimate_at_level(&ds, &ps.weights, a.ipw, grouping.as_ref(), &strategy.tag(), a.small_arm)
        .map_err(|e| Failure::Estimation(named(&e)))?;
    if !est.dropped_clusters.is_empty() {
        eprintln!(
            "warning: {} clusters without both arms were dropped: {}",
            est.dropped_clusters.len(),
            est.dropped_clusters.join(" ")
        );
    }
    let boot = if a.bootstrap > 0 {
        let cfg = BootstrapConfig {
            replicates: a.bootstrap,
            seed: SeedStream::new(a.seed).derive("bootstrap", 0),
            small_arm_rule: a.small_arm,
        };
        Some(bootstrap_ci(&ds, &recipe, &strategy, a.ipw, &cfg).map_err(|e| Failure::Estimation(named(&e)))?)
    } else {
        None
    };
    let names = strategy.covariates.clone().unwrap_or_default();
    let specs = balance_specs(&ds, &names, &a.categorical);
    let balance = balance_table(&ds, Some(&ps.weights), &specs)
        .map_err(|e| Failure::Estimation(named(&e)))?
        .rows
        .into_iter()
        .map(|r| SmdSummary { covariate: r.covariate, smd_unweighted: r.smd_unweighted, smd_weighted: r.smd_weighted })
        .collect();

    if let Some(p) = &a.weights_out {
        let sink = Sink { out: Some(p.clone()) };
        sink.write(|w| {
            writeln!(w, "cluster_id,z,score,weight")?;
            for (i, r) in ds.rows().iter().enumerate() {
                let f = [r.cluster_id.clone(), r.treatment.to_string(), ps.scores[i].to_string(), ps.weights[i].to_string()];
                writeln!(w, "{}", csv_line(&f))?;
            }
            Ok(())
        })?;
    }

    let report = EstimateReport {
        config: a,
        ps_strategy: strategy.tag(),
        weighting_level: a.ipw.name(),
        estimate: est.estimate,
        se_fixed_ps: est.se_fixed_ps,
        ci95_normal: est.ci95,
        ci95_bootstrap: boot.as_ref().map(|b| b.ci95),
        se_bootstrap: boot.as_ref().map(|b| b.se_boot),
        bootstrap_valid: boot.as_ref().map(|b| b.n_valid),
        bootstrap_failed: boot.as_ref().map(|b| b.n_failed),
        n: ds.n(),
        n_clusters: ds.n_clusters(),
        n_groups: grouping.as_ref().map(|g| g.n_groups()),
        dropped_clusters: est.dropped_clusters.clone(),
        propensity_fallbacks: ps.fallbacks(),
        propensity_clamped: ps.diagnostics.iter().map(|d| d.clamp_count).sum(),
        balance,
    };
    let sink = Sink { out: a.out.clone() };
    sink.echo_config(format, a)?;
    match format {
        Format::Json => sink.write(|w| to_json(w, &report))?,
        Format::Csv => sink.write(|w| {
            writeln!(
                w,
                "ps_strategy,weighting_level,estimate,se_fixed_ps,ci_lo,ci_hi,boot_lo,boot_hi,se_bootstrap,n_dropped_clusters"
            )?;
            let f = [
                report.ps_strategy.clone(),
                report.weighting_level.to_string(),
                report.estimate.to_string(),
                opt(report.se_fixed_ps),
                opt(report.ci95_normal.map(|c| c.0)),
                opt(report.ci95_normal.map(|c| c.1)),
                opt(report.ci95_bootstrap.map(|c| c.0)),
                opt(report.ci95_bootstrap.map(|c| c.1)),
                opt(report.se_bootstrap),
                report.dropped_clusters.len().to_string(),
            ];
            writeln!(w, "{}", csv_line(&f))
        })?,
    }
    let se = report.se_fixed_ps.map_or("NA".to_string(), |s| format!("{s:.4}"));
    sink.summary(&format!("({}, {}) estimate {:.4} (SE {se})\n", report.ps_strategy, report.weighting_level, report.estimate));
    Ok(())
}

// -------------------------------------------------------------- balance

#[derive(Serialize)]
struct BalanceReport<'a> {
    config: &'a BalanceArgs,
    table: &'a BalanceTable,
    profile: Option<&'a PrevalenceProfile>,
}

fn cmd_balance(a: &BalanceArgs, format: Format) -> Outcome {
    let ds = load(&a.data)?;
    let specs: Vec<CovariateSpec> =
        a.covariates.iter().map(|s| s.parse::<CovariateSpec>()).collect::<Result<_, _>>().map_err(Failure::Input)?;
    let weights = match &a.weights {
        Some(p) => {
            let f = File::open(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            Some(read_weights(BufReader::new(f)).map_err(|e| input(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let table = balance_table(&ds, weights.as_deref(), &specs).map_err(|e| input(named(&e)))?;
    let profile = match &a.profile {
        Some(spec) => {
            let spec: CovariateSpec = spec.parse().map_err(Failure::Input)?;
            let levels = match &spec.kind {
                partialpool::diagnostics::CovariateKind::Categorical { levels } => levels.clone(),
                _ => levels_of(&ds, &spec.name),
            };
            if !ds.cluster_covariate_names().contains(&spec.name) {
                return Err(Failure::Input(format!("`{}` is not a cluster-level column", spec.name)));
            }
            Some(prevalence_profile(&ds, &spec.name, &levels, a.bins).map_err(|e| input(named(&e)))?)
        }
        None => None,
    };
    if let (Some(p), Some(path)) = (&profile, &a.profile_out) {
        let f = File::create(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        p.write_csv(BufWriter::new(f)).map_err(input)?;
    }
    let sink = Sink { out: a.out.clone() };
    sink.echo_config(format, a)?;
    match format {
        Format::Json => {
            sink.write(|w| to_json(w, &BalanceReport { config: a, table: &table, profile: profile.as_ref() }))?
        }
        Format::Csv => sink.write(|w| table.write_csv(w).map_err(io::Error::other))?,
    }
    sink.summary(&table.to_string());
    Ok(())
}

// ------------------------------------------------------------- simulate

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a SimulateConfig,
    scenarios: usize,
    rows: usize,
    fully_failed_rows: usize,
}

fn cmd_simulate(a: &SimulateArgs, format: Format) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| input(format!("{}: {e}", a.config.display())))?;
    let cfg = SimulateConfig::parse(&text).map_err(|e| input(format!("{}: {e}", a.config.display())))?;
    let exp = cfg.experiment().map_err(Failure::Input)?;
    fs::create_dir_all(&a.out).map_err(|e| input(format!("{}: {e}", a.out.display())))?;
    let result = run_experiment(&exp);

    let results_path = a.out.join(match format {
        Format::Csv => "results.csv",
        Format::Json => "results.json",
    });
    let sink = Sink { out: Some(results_path.clone()) };
    match format {
        Format::Csv => sink.write(|w| result.write_csv(w).map_err(io::Error::other))?,
        Format::Json => sink.write(|w| to_json(w, &result.rows))?,
    }
    let failed = result.rows.iter().filter(|r| r.n_failures == r.n_replicates).count();
    let manifest = Manifest {
        tool: "partialpool",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        scenarios: exp.grid.len(),
        rows: result.rows.len(),
        fully_failed_rows: failed,
    };
    Sink { out: Some(a.out.join("manifest.json")) }.write(|w| to_json(w, &manifest))?;

    println!("{} scenarios x {} replicates -> {}", exp.grid.len(), exp.replicates, results_path.display());
    for r in &result.rows {
        println!(
            "({:>4}, {:>4}, {:>4}) {:<10} ({}, {}) bias {} coverage {} failures {}",
            r.alpha4,
            r.beta4,
            r.kappa4,
            r.grouping_method,
            r.ps_strategy,
            r.weighting_level,
            r.mean_bias.map_or("NA".into(), |b| format!("{b:+.3}")),
            r.coverage.map_or("NA".into(), |c| format!("{c:.3}")),
            r.n_failures
        );
    }
    if failed > 0 {
        return Err(Failure::Simulation(format!("{failed} result rows failed in every replicate")));
    }
    Ok(())
}

// -------------------------------------------------------------- fixture

fn cmd_fixture(a: &FixtureArgs) -> Outcome {
    let ds = make_ecls_fixture(a.seed);
    let sink = Sink { out: a.out.clone() };
    sink.write(|w| write_dataset(&ds, w).map_err(io::Error::other))?;
    sink.summary(&format!("fixture: {} rows in {} clusters\n", ds.n(), ds.n_clusters()));
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(input)?;
    }
    match &cli.command {
        Command::Group(a) => cmd_group(a, cli.format),
        Command::Estimate(a) => cmd_estimate(a, cli.format),
        Command::Balance(a) => cmd_balance(a, cli.format),
        Command::Simulate(a) => cmd_simulate(a, cli.format),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
