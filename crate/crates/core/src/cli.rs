//! Command-line front end. [`run`] is the whole program; the binary forwards
//! its arguments and exits with the returned code.
//!
//! A `--config FILE` JSON object supplies flags by long name. Its entries are
//! spliced in right after the subcommand, so flags given on the command line
//! win. Every run writes `manifest.json`, which is itself a valid config.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::bootstrap::{estimate_mean, estimate_pate, PosteriorSummary, ScaledWeightMode};
use crate::data::{
    generate_synthetic_population, load_cate_draws, load_source_csv, load_survey_csv, Population,
    Schema, SourceSchema, SurveyDataset, SyntheticSpec,
};
use crate::demo::{build_demo, write_demo, DemoSpec};
use crate::error::{Error, Result};
use crate::estimators::{design_mean, naive_mean, SingletonStrata, BB};
use crate::overlap::{diagnose_overlap, pate_with_support_policy, scores_csv_bytes, SupportPolicy};
use crate::sensitivity::{
    pate_confounder_curve, pate_shift_bounds, ConfounderSpec, ShiftCells, ShiftSpec, SourceCell,
    MARGINAL_CELL,
};
use crate::simulate::{run_replication_study, RespondentCount, SimulationDesign};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST: &str = "manifest.json";
const TOOL: &str = "scaled-bb";

#[derive(Parser, Debug)]
#[command(
    name = "scaled-bb",
    version,
    about = "Population average treatment effects for complex survey designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Posterior of the population average of CATE draws, or of a column mean.
    Estimate(EstimateArgs),
    /// Repeated PPS samples from a population; coverage, bias and RMSE per estimator.
    Simulate(SimulateArgs),
    /// Selection scores, low-support flags and the PATE with flagged units handled.
    Overlap(OverlapArgs),
    /// Sensitivity curves for unmeasured effect modification.
    #[command(subcommand)]
    Sensitivity(SensitivityCommand),
    /// Synthetic population (and optionally the demo bundle).
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum SensitivityCommand {
    /// Sweep the prevalence of a binary modifier that shifts effects by sign·kappa.
    Confounder(ConfounderArgs),
    /// Bounds under a density-ratio shift between target and source.
    Shift(ShiftArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Random seed. Generated and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap draws.
    #[arg(long, default_value_t = 1000)]
    n_bb: usize,
    /// Cluster weight mode: `product` or `pseudo`.
    #[arg(long, default_value = "product")]
    mode: ScaledWeightMode,
    /// Interval level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON file of flag values; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Include every draw in JSON reports.
    #[arg(long)]
    keep_draws: bool,
}

#[derive(Args, Debug, Clone)]
struct SurveyArgs {
    /// Target survey CSV.
    #[arg(long)]
    survey: PathBuf,
    #[arg(long, default_value = "stratum")]
    stratum: String,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    #[arg(long, default_value = "weight")]
    weight: String,
    /// Observation id column (default: 1-based row number).
    #[arg(long)]
    id: Option<String>,
    /// Segment column, for segment-form CATE files and per-segment cells.
    #[arg(long)]
    segment: Option<String>,
    /// Comma-separated covariates (default: every unmapped column).
    #[arg(long)]
    covariates: Option<String>,
    /// Comma-separated columns to read as categories even if numeric.
    #[arg(long)]
    categorical: Option<String>,
    /// Comma-separated numeric columns that are not covariates.
    #[arg(long)]
    aux: Option<String>,
}

fn split_list(s: &Option<String>) -> Vec<String> {
    s.as_deref()
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

impl SurveyArgs {
    fn schema(&self) -> Schema {
        Schema {
            id: self.id.clone(),
            stratum: self.stratum.clone(),
            cluster: self.cluster.clone(),
            weight: self.weight.clone(),
            outcome: None,
            segment: self.segment.clone(),
            covariates: self.covariates.as_ref().map(|_| split_list(&self.covariates)),
            categorical: split_list(&self.categorical),
            auxiliary: split_list(&self.aux),
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    survey: SurveyArgs,
    /// CATE draws (matrix or segment form).
    #[arg(long)]
    cate: Option<PathBuf>,
    /// Also compare BB, naive and design-based estimates of this column's mean.
    #[arg(long)]
    mean_of: Option<String>,
    /// Strata with one cluster: `error` or `certainty`.
    #[arg(long, default_value = "error", value_parser = parse_singletons)]
    singletons: SingletonStrata,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Population CSV; default is a synthetic population.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Synthetic population spec (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "stratum")]
    stratum: String,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    #[arg(long, default_value = "weight")]
    weight: String,
    /// Measure-of-size column; without it, the inverse mean weight per cluster.
    #[arg(long)]
    mos: Option<String>,
    #[arg(long, default_value = "age")]
    outcome: String,
    /// First-stage draws per stratum.
    #[arg(long, default_value_t = 20)]
    clusters_per_stratum: usize,
    /// Respondents per selected cluster, or `cluster-size`.
    #[arg(long, default_value = "cluster-size")]
    respondents: String,
    #[arg(long, default_value_t = 500)]
    replications: usize,
    #[arg(long, default_value = "error", value_parser = parse_singletons)]
    singletons: SingletonStrata,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Source-study unit CSV.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    source_id: Option<String>,
    /// Compliance-score column in the source file.
    #[arg(long, default_value = "compliance")]
    source_compliance: String,
    /// 0/1 complier column in the source file.
    #[arg(long, default_value = "complier")]
    complier: String,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    #[command(flatten)]
    survey: SurveyArgs,
    #[arg(long)]
    cate: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    /// Compliance-score column in the survey file.
    #[arg(long, default_value = "compliance")]
    compliance: String,
    /// Complier quantile below which target units are flagged.
    #[arg(long, default_value_t = 0.05)]
    percentile: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ConfounderArgs {
    #[command(flatten)]
    survey: SurveyArgs,
    #[arg(long)]
    cate: PathBuf,
    #[arg(long, default_value_t = 0.66)]
    kappa: f64,
    /// Direction of the shift, +1 or -1.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    sign: f64,
    /// Comma-separated prevalence grid (default 0, 0.05, ..., 1).
    #[arg(long)]
    xi: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ShiftArgs {
    #[command(flatten)]
    survey: SurveyArgs,
    #[arg(long)]
    cate: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    /// Complier effect column in the source file.
    #[arg(long, default_value = "effect")]
    effect: String,
    /// `marginal` or `segment`.
    #[arg(long, default_value = "marginal", value_parser = parse_cells)]
    cells: ShiftCells,
    /// Segment column in the source file (segment cells only).
    #[arg(long, default_value = "segment")]
    source_segment: String,
    /// Comma-separated gamma grid (default 15 log-spaced points on [1, 8]).
    #[arg(long)]
    gamma: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthetic population spec (JSON); defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Also write the demo target survey, segment CATE draws and source file.
    #[arg(long)]
    demo: bool,
    #[command(flatten)]
    common: Common,
}

fn parse_singletons(s: &str) -> std::result::Result<SingletonStrata, String> {
    match s {
        "error" => Ok(SingletonStrata::Error),
        "certainty" => Ok(SingletonStrata::Certainty),
        other => Err(format!("expected `error` or `certainty`, got `{other}`")),
    }
}

fn parse_cells(s: &str) -> std::result::Result<ShiftCells, String> {
    match s {
        "marginal" => Ok(ShiftCells::Marginal),
        "segment" => Ok(ShiftCells::BySegment),
        other => Err(format!("expected `marginal` or `segment`, got `{other}`")),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| Error::Argument(format!("grid value `{x}` is not a number")))
        })
        .collect()
}

/// `args_override_self` on every level, so config values can be overridden.
fn command() -> clap::Command {
    fn apply(c: clap::Command) -> clap::Command {
        let names: Vec<String> = c.get_subcommands().map(|s| s.get_name().to_string()).collect();
        let mut c = c.args_override_self(true);
        for n in names {
            c = c.mut_subcommand(n, apply);
        }
        c
    }
    apply(Cli::command())
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Flag tokens for a config object, or a manifest's `args` object.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let object = match value.get("args") {
        Some(args) => args,
        None => &value,
    }
    .as_object()
    .ok_or_else(|| Error::Argument(format!("{}: config must be a JSON object", path.display())))?;
    let mut tokens = Vec::new();
    for (key, v) in object {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => tokens.push(flag.into()),
            Value::String(s) => tokens.extend([flag.into(), s.into()]),
            Value::Number(n) => tokens.extend([flag.into(), n.to_string().into()]),
            Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                tokens.extend([flag.into(), joined.join(",").into()]);
            }
            Value::Object(_) => {
                return Err(Error::Argument(format!("config key `{key}` cannot be an object")))
            }
        }
    }
    Ok(tokens)
}

fn splice_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let tokens = config_tokens(&path)?;
    let mut cmd = command();
    let mut at = 1;
    while at < argv.len() {
        let name = argv[at].to_string_lossy().to_string();
        match cmd.find_subcommand(&name) {
            Some(sub) => {
                cmd = sub.clone();
                at += 1;
            }
            None => break,
        }
    }
    let mut out = argv[..at].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

/// Subcommand path and the matches of the innermost subcommand.
fn leaf(matches: &ArgMatches) -> (Vec<String>, &ArgMatches) {
    let mut path = Vec::new();
    let mut m = matches;
    while let Some((name, sub)) = m.subcommand() {
        path.push(name.to_string());
        m = sub;
    }
    (path, m)
}

fn manifest_args(matches: &ArgMatches, seed: u64) -> BTreeMap<String, Value> {
    let (path, m) = leaf(matches);
    let mut cmd = command();
    for p in &path {
        cmd = cmd.find_subcommand(p).expect("parsed subcommand").clone();
    }
    let mut args = BTreeMap::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if id == "config" || id == "help" || id == "version" {
            continue;
        }
        let Some(raw) = m.get_raw(id) else { continue };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().to_string()).collect();
        let key = id.replace('_', "-");
        let value = if !arg.get_action().takes_values() {
            Value::Bool(values.first().is_some_and(|v| v == "true"))
        } else {
            Value::String(values.join(","))
        };
        args.insert(key, value);
    }
    args.insert("seed".into(), Value::String(seed.to_string()));
    args
}

/// Runs the program on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match splice_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let matches = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, &matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Argument(format!("input file not found: {}", path.display())))
    }
}

struct Run<'a> {
    common: &'a Common,
    seed: u64,
    matches: &'a ArgMatches,
}

impl Run<'_> {
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = &self.common.out;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn manifest(&self) -> Result<()> {
        let (path, _) = leaf(self.matches);
        self.write_json(
            MANIFEST,
            &json!({
                "tool": TOOL,
                "version": env!("CARGO_PKG_VERSION"),
                "command": path,
                "seed": self.seed,
                "args": manifest_args(self.matches, self.seed),
            }),
        )
    }

    fn summary(&self, s: PosteriorSummary, method: &str) -> Result<(PosteriorSummary, Value)> {
        let s = s.at_level(self.common.level)?;
        let env = serde_json::to_value(s.envelope(Some(method), self.common.keep_draws))?;
        Ok((s, env))
    }
}

fn dispatch(cli: Cli, matches: &ArgMatches) -> Result<()> {
    let common = match &cli.command {
        Command::Estimate(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Overlap(a) => &a.common,
        Command::Sensitivity(SensitivityCommand::Confounder(a)) => &a.common,
        Command::Sensitivity(SensitivityCommand::Shift(a)) => &a.common,
        Command::Synth(a) => &a.common,
    };
    if !(common.level > 0.0 && common.level < 1.0) {
        return Err(Error::Argument(format!("level {} not in (0, 1)", common.level)));
    }
    if common.n_bb == 0 {
        return Err(Error::Argument("n-bb must be at least 1".into()));
    }
    let seed = match (common.seed, &cli.command) {
        (Some(s), _) => s,
        (None, Command::Synth(a)) => synth_spec(a)?.seed,
        (None, _) => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            s
        }
    };
    let run = Run {
        common,
        seed,
        matches,
    };
    let threads = common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Estimate(a) => cmd_estimate(&run, a),
        Command::Simulate(a) => cmd_simulate(&run, a),
        Command::Overlap(a) => cmd_overlap(&run, a),
        Command::Sensitivity(SensitivityCommand::Confounder(a)) => cmd_confounder(&run, a),
        Command::Sensitivity(SensitivityCommand::Shift(a)) => cmd_shift(&run, a),
        Command::Synth(a) => cmd_synth(&run, a),
    })?;
    run.manifest()
}

fn load_survey(args: &SurveyArgs, schema: Schema) -> Result<SurveyDataset> {
    require_file(&args.survey)?;
    load_survey_csv(&args.survey, &schema)
}

fn load_cate(path: &Path, dataset: &SurveyDataset) -> Result<crate::data::CateDraws> {
    require_file(path)?;
    let cate = load_cate_draws(path, dataset)?;
    let outside = cate.out_of_unit_range();
    if outside > 0 {
        eprintln!("warning: {outside} CATE entries lie outside [-1, 1]");
    }
    Ok(cate)
}

fn cmd_estimate(run: &Run, a: &EstimateArgs) -> Result<()> {
    if a.cate.is_none() && a.mean_of.is_none() {
        return Err(Error::Argument("give --cate, --mean-of, or both".into()));
    }
    if let Some(p) = &a.cate {
        require_file(p)?;
    }
    let mut schema = a.survey.schema();
    schema.outcome = a.mean_of.clone();
    let data = load_survey(&a.survey, schema)?;
    let c = run.common;
    if let Some(path) = &a.cate {
        let cate = load_cate(path, &data)?;
        let s = estimate_pate(&data, &cate, c.mode, c.n_bb, &mut run.rng())?;
        let (s, env) = run.summary(s, BB)?;
        let mut draws = csv::Writer::from_writer(Vec::new());
        draws.write_record(["draw", "value"])?;
        for (b, x) in s.draws.iter().enumerate() {
            draws.serialize((b + 1, x))?;
        }
        run.write("draws.csv", &draws.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
        run.write_json(
            "pate.json",
            &json!({
                "seed": run.seed,
                "mode": c.mode.to_string(),
                "n_bb": c.n_bb,
                "n_obs": data.len(),
                "n_clusters": data.n_clusters(),
                "n_strata": data.n_strata(),
                "n_cate_draws": cate.n_draws(),
                "pate": env,
            }),
        )?;
        println!(
            "PATE {:.4} (sd {:.4}), {:.0}% interval [{:.4}, {:.4}]",
            s.mean,
            s.sd,
            100.0 * s.level,
            s.ci_lower,
            s.ci_upper
        );
    }
    if let Some(col) = &a.mean_of {
        let bb = estimate_mean(&data, col, c.mode, c.n_bb, &mut run.rng())?;
        let (bb, bb_env) = run.summary(bb, BB)?;
        let naive = naive_mean(&data, col, c.level)?;
        let design = design_mean(&data, col, c.level, a.singletons)?;
        run.write_json(
            "mean.json",
            &json!({
                "seed": run.seed,
                "column": col,
                "estimates": [bb_env, naive.envelope(), design.envelope()],
            }),
        )?;
        println!("mean of {col}: bb {:.4} ({:.4})", bb.mean, bb.sd);
        for e in [naive, design] {
            println!("mean of {col}: {} {:.4} ({:.4})", e.method, e.value, e.std_error);
        }
    }
    Ok(())
}

fn synth_spec(a: &SynthArgs) -> Result<SyntheticSpec> {
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn cmd_synth(run: &Run, a: &SynthArgs) -> Result<()> {
    let mut spec = synth_spec(a)?;
    spec.seed = run.seed;
    let pop = generate_synthetic_population(&spec)?;
    run.write("population.csv", &pop.data.to_csv_bytes()?)?;
    println!(
        "population: {} people in {} clusters, {} strata",
        pop.data.len(),
        pop.data.n_clusters(),
        pop.data.n_strata()
    );
    if a.demo {
        let demo = build_demo(&DemoSpec {
            population: spec,
            seed: run.seed,
            ..DemoSpec::default()
        })?;
        write_demo(&demo, &run.common.out)?;
        println!(
            "demo: {} target units, {} source units",
            demo.target.len(),
            demo.source.len()
        );
    }
    Ok(())
}

fn cmd_simulate(run: &Run, a: &SimulateArgs) -> Result<()> {
    let population = match (&a.population, &a.spec) {
        (Some(_), Some(_)) => {
            return Err(Error::Argument("give --population or --spec, not both".into()))
        }
        (Some(path), None) => {
            require_file(path)?;
            let schema = Schema {
                stratum: a.stratum.clone(),
                cluster: a.cluster.clone(),
                weight: a.weight.clone(),
                auxiliary: a.mos.iter().cloned().collect(),
                ..Schema::default()
            };
            let data = load_survey_csv(path, &schema)?;
            match &a.mos {
                Some(col) => Population::from_size_column(data, col)?,
                None => Population::from_sample_weights(&data)?,
            }
        }
        (None, spec_path) => {
            let spec: SyntheticSpec = match spec_path {
                Some(p) => {
                    require_file(p)?;
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text)?
                }
                None => SyntheticSpec::default(),
            };
            generate_synthetic_population(&spec)?
        }
    };
    let c = run.common;
    let mut design = SimulationDesign::uniform(&population, a.clusters_per_stratum, &a.outcome);
    design.respondents = match a.respondents.as_str() {
        "cluster-size" => RespondentCount::ClusterSize,
        n => RespondentCount::Fixed(n.parse().map_err(|_| {
            Error::Argument(format!("respondents must be a count or `cluster-size`, got `{n}`"))
        })?),
    };
    design.replications = a.replications;
    design.level = c.level;
    design.n_bb = c.n_bb;
    design.mode = c.mode;
    design.singletons = a.singletons;
    let table = run_replication_study(&population, &design, &mut run.rng())?;
    run.write("metrics.csv", &table.to_csv_bytes()?)?;
    run.write_json(
        "metrics.json",
        &json!({ "seed": run.seed, "metrics": table }),
    )?;
    println!("truth {:.4}; {} replications, {} failed", table.truth, table.replications, table.failed);
    for r in &table.rows {
        println!(
            "{:>6}: bias {:+.4} coverage {:.3} sd {:.4} rmse {:.4}",
            r.method, r.bias, r.coverage, r.sd, r.rmse
        );
    }
    Ok(())
}

fn source_schema(a: &SourceArgs) -> SourceSchema {
    SourceSchema {
        id: a.source_id.clone(),
        compliance: a.source_compliance.clone(),
        complier: a.complier.clone(),
        effect: None,
        segment: None,
    }
}

fn cmd_overlap(run: &Run, a: &OverlapArgs) -> Result<()> {
    require_file(&a.cate)?;
    require_file(&a.source.source)?;
    let mut schema = a.survey.schema();
    if !schema.auxiliary.contains(&a.compliance) {
        schema.auxiliary.push(a.compliance.clone());
    }
    let data = load_survey(&a.survey, schema)?;
    let cate = load_cate(&a.cate, &data)?;
    let source = load_source_csv(&a.source.source, &source_schema(&a.source), &data)?;
    let compliance = data.numeric_column(&a.compliance)?;
    let diag = diagnose_overlap(&data, &compliance, &source, a.percentile)?;
    run.write(
        "scores.csv",
        &scores_csv_bytes(&diag.unit_ids, &diag.scores, &diag.flags)?,
    )?;

    let c = run.common;
    let plain = estimate_pate(&data, &cate, c.mode, c.n_bb, &mut run.rng())?;
    let (plain, plain_env) = run.summary(plain, "plain")?;
    let mut variants = Vec::new();
    for (policy, label) in [
        (SupportPolicy::Exclude, "exclude"),
        (SupportPolicy::NullImpute, "null_impute"),
    ] {
        let s = pate_with_support_policy(&data, &cate, &diag.flags.flagged, policy, c.mode, c.n_bb, &mut run.rng())?;
        variants.push(run.summary(s, label)?);
    }
    let [(excl, excl_env), (null, null_env)] = <[_; 2]>::try_from(variants).expect("two policies");
    run.write_json(
        "overlap.json",
        &json!({
            "seed": run.seed,
            "percentile": a.percentile,
            "threshold": diag.flags.threshold,
            "complier_mean": diag.scores.complier_mean,
            "complier_sd": diag.scores.complier_sd,
            "n_source": source.len(),
            "n_compliers": source.complier_ids().len(),
            "n_target": data.len(),
            "flagged_proportion": diag.flags.flagged_proportion,
            "pate": plain_env,
            "pate_excluding": excl_env,
            "pate_null_imputed": null_env,
        }),
    )?;
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record([
        "flagged_proportion",
        "pate_mean",
        "pate_sd",
        "pate_excluding_mean",
        "pate_excluding_sd",
        "pate_null_imputed_mean",
        "pate_null_imputed_sd",
    ])?;
    table.serialize((
        diag.flags.flagged_proportion,
        plain.mean,
        plain.sd,
        excl.mean,
        excl.sd,
        null.mean,
        null.sd,
    ))?;
    run.write("overlap.csv", &table.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
    println!(
        "threshold {:.3}; flagged {:.3} of the target; PATE {:.3}, excluding {:.3}, null-imputed {:.3}",
        diag.flags.threshold, diag.flags.flagged_proportion, plain.mean, excl.mean, null.mean
    );
    Ok(())
}

fn cmd_confounder(run: &Run, a: &ConfounderArgs) -> Result<()> {
    let mut spec = ConfounderSpec {
        kappa: a.kappa,
        sign: a.sign,
        level: run.common.level,
        ..ConfounderSpec::default()
    };
    if let Some(g) = &a.xi {
        spec.xi = parse_grid(g)?;
    }
    spec.validate()?;
    require_file(&a.cate)?;
    let data = load_survey(&a.survey, a.survey.schema())?;
    let cate = load_cate(&a.cate, &data)?;
    let c = run.common;
    let curve = pate_confounder_curve(&data, &cate, &spec, c.mode, c.n_bb, &mut run.rng())?;
    run.write("confounder_curve.csv", &curve.to_csv_bytes()?)?;
    println!("{} grid points written", curve.parameters().len());
    Ok(())
}

fn cmd_shift(run: &Run, a: &ShiftArgs) -> Result<()> {
    let mut spec = ShiftSpec {
        cells: a.cells,
        level: run.common.level,
        ..ShiftSpec::default()
    };
    if let Some(g) = &a.gamma {
        spec.gammas = parse_grid(g)?;
    }
    spec.validate()?;
    require_file(&a.cate)?;
    require_file(&a.source.source)?;
    let data = load_survey(&a.survey, a.survey.schema())?;
    let cate = load_cate(&a.cate, &data)?;
    let mut schema = source_schema(&a.source);
    schema.effect = Some(a.effect.clone());
    if a.cells == ShiftCells::BySegment {
        schema.segment = Some(a.source_segment.clone());
    }
    let source = load_source_csv(&a.source.source, &schema, &data)?;
    let effects = source.effect.as_ref().expect("effect column requested");
    let mut cells: BTreeMap<String, SourceCell> = BTreeMap::new();
    for i in source.complier_ids() {
        let label = match &source.segment {
            Some(s) => s[i].clone(),
            None => MARGINAL_CELL.to_string(),
        };
        let cell = cells
            .entry(label)
            .or_insert_with(|| SourceCell::uniform(Vec::new()));
        cell.effects.push(effects[i]);
        cell.weights.push(1.0);
    }
    let c = run.common;
    let curve = pate_shift_bounds(&data, &cate, &cells, &spec, c.mode, c.n_bb, &mut run.rng())?;
    run.write("shift_curve.csv", &curve.to_csv_bytes()?)?;
    println!("{} grid points written", curve.parameters().len());
    Ok(())
}
