//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on data or runtime errors, 2 on usage errors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::affinity::CountMatrix;
use crate::bench::{run_bench, write_results_csv, BenchConfig, ScenarioGrid};
use crate::cluster::{cut, stability_diagnostic, ClusterAssignment, KSelection, StabilityReport};
use crate::data::{
    parse_matrix, parse_survival, preprocess, MultiOmicsDataset, OmicsMatrix, ParseOptions,
    PreprocessConfig, SurvivalRecord,
};
use crate::federated::{
    export_model, global_counts, merge_models, simulate, EvalMode, GlobalModel, SimulationConfig,
    Standardization,
};
use crate::forest::ForestConfig;
use crate::importance::{
    all_cluster_importance, importance_correlation, write_correlation_csv, write_importance_csv,
    ImportanceVector,
};
use crate::metrics::{km_table, logrank_test, silhouette};
use crate::pipeline::{cluster_counts, fused_counts, train_layers, ClusterResult, KMode, MtryRule};
use crate::synth::{generate, ScenarioKind, ScenarioSpec};

const STABILITY_GRID: [usize; 6] = [500, 400, 300, 200, 100, 50];
const STABILITY_REPS: usize = 10;
const STABILITY_EPS: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "urf", version, about = "Unsupervised random forest clustering")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train per-layer forests and cluster the fused affinity.
    Cluster(ClusterArgs),
    /// Simulate local vs federated clustering across clients.
    FedSim(FedSimArgs),
    /// Generate one synthetic scenario.
    Synth(SynthArgs),
    /// Benchmark forest vs Euclidean distances on synthetic scenarios.
    SynthBench(BenchArgs),
    /// Cluster-specific feature importance for given labels.
    Importance(ImportanceArgs),
    /// Export, merge or inspect shared tree models.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// Omics layer file (repeatable; order defines the layer index).
    #[arg(long = "layer", required = true)]
    layers: Vec<PathBuf>,
    /// Survival file with columns sample_id,time,event.
    #[arg(long)]
    survival: Option<PathBuf>,
    /// Files store features as rows and samples as columns.
    #[arg(long)]
    transpose: bool,
    /// Field delimiter; `tab` for tab-separated files.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Drop samples, then features, with a larger missing fraction.
    #[arg(long, default_value_t = 0.2)]
    max_missing: f64,
    #[arg(long, default_value_t = 5)]
    impute_k: usize,
    /// Keep only this many highest-variance features per layer.
    #[arg(long)]
    top_variance: Option<usize>,
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Args, Serialize)]
struct ForestArgs {
    #[arg(long, default_value_t = 500)]
    trees: usize,
    /// Candidate features per node: a count or `sqrt` [default: 2; `sqrt` for fed-sim].
    #[arg(long)]
    mtry: Option<String>,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Grow every tree on all samples instead of a bootstrap sample.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, env = "URF_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum KModeArg {
    Silhouette,
    Fixed,
    Stability,
}

#[derive(Debug, Args, Serialize)]
struct KArgs {
    #[arg(long, value_enum, default_value = "silhouette")]
    k_mode: KModeArg,
    /// Number of clusters for `--k-mode fixed`.
    #[arg(long)]
    k: Option<usize>,
    /// Largest k tried by the silhouette and stability modes.
    #[arg(long, default_value_t = 6)]
    k_max: usize,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    k: KArgs,
    /// Route samples through this shared model instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EvalArg {
    Logrank,
    PooledAri,
    ReferenceAri,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StandardizationArg {
    PerClient,
    Global,
    None,
}

#[derive(Debug, Args, Serialize)]
struct FedSimArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    k: KArgs,
    #[arg(long, default_value_t = 3)]
    clients: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, value_enum, default_value = "pooled-ari")]
    eval: EvalArg,
    /// Reference labels (sample_id,label) for `--eval reference-ari`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Z-scoring applied during the simulation; set `--no-standardize`
    /// to leave inputs unscaled before it.
    #[arg(long, value_enum, default_value = "per-client")]
    standardization: StandardizationArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// globular_equal, globular_outliers, globular_varying, rings or moons.
    #[arg(long, required_unless_present = "spec")]
    scenario: Option<String>,
    /// Scenario parameter (std, outlier fraction, m, separation or noise).
    #[arg(long, required_unless_present = "spec")]
    param: Option<f64>,
    #[arg(long, default_value_t = 100)]
    n_per_cluster: usize,
    #[arg(long, env = "URF_SEED", default_value_t = 1)]
    seed: u64,
    /// Scenario as JSON, e.g. {"kind":"rings","separation":2,"n_per_cluster":200,"seed":3}.
    #[arg(long, conflicts_with_all = ["scenario", "param"])]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Scenario to run (repeatable; default: the four globular and ring scenarios).
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = 30)]
    replicates: usize,
    /// One replicate per configuration.
    #[arg(long)]
    smoke: bool,
    /// Override the points per cluster of every scenario.
    #[arg(long)]
    n_per_cluster: Option<usize>,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 1)]
    mtry: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, env = "URF_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ImportanceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Cluster labels as sample_id,label.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    /// Train per-layer forests and write them as a shareable bundle.
    Export(ExportArgs),
    /// Concatenate client bundles into a global model.
    Merge(MergeArgs),
    /// Print a summary of a bundle or global model.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value = "client_0")]
    client_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MergeArgs {
    /// Bundle file (repeatable, in client order).
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` and runs the selected command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Cluster(a) => cmd_cluster(a, &argv),
        Command::FedSim(a) => cmd_fed_sim(a, &argv),
        Command::Synth(a) => cmd_synth(a, &argv),
        Command::SynthBench(a) => cmd_synth_bench(a, &argv),
        Command::Importance(a) => cmd_importance(a, &argv),
        Command::Model(ModelCommand::Export(a)) => cmd_model_export(a, &argv),
        Command::Model(ModelCommand::Merge(a)) => cmd_model_merge(a, &argv),
        Command::Model(ModelCommand::Inspect(a)) => cmd_model_inspect(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!(
                "error: {msg}\n\n{}\nFor more information, try '--help'.",
                usage_text(&cli.command)
            );
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_text(command: &Command) -> String {
    let path: &[&str] = match command {
        Command::Cluster(_) => &["cluster"],
        Command::FedSim(_) => &["fed-sim"],
        Command::Synth(_) => &["synth"],
        Command::SynthBench(_) => &["synth-bench"],
        Command::Importance(_) => &["importance"],
        Command::Model(ModelCommand::Export(_)) => &["model", "export"],
        Command::Model(ModelCommand::Merge(_)) => &["model", "merge"],
        Command::Model(ModelCommand::Inspect(_)) => &["model", "inspect"],
    };
    let mut cmd = Cli::command();
    cmd.build();
    let mut sub = &mut cmd;
    for name in path {
        sub = sub.find_subcommand_mut(name).expect("known subcommand");
    }
    sub.render_usage().to_string()
}

pub fn run() -> ExitCode {
    run_from(std::env::args_os())
}

fn parse_delimiter(s: &str) -> std::result::Result<u8, Failure> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(usage(format!(
            "delimiter must be a single ASCII character, got `{s}`"
        ))),
    }
}

fn parse_mtry(s: &str) -> std::result::Result<MtryRule, Failure> {
    if s.eq_ignore_ascii_case("sqrt") {
        return Ok(MtryRule::Sqrt);
    }
    match s.parse::<usize>() {
        Ok(m) if m > 0 => Ok(MtryRule::Fixed(m)),
        _ => Err(usage(format!(
            "--mtry must be a positive integer or `sqrt`, got `{s}`"
        ))),
    }
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

impl ForestArgs {
    fn config(&self) -> std::result::Result<(ForestConfig, MtryRule), Failure> {
        self.config_with_default(MtryRule::Fixed(2))
    }

    fn config_with_default(
        &self,
        default_mtry: MtryRule,
    ) -> std::result::Result<(ForestConfig, MtryRule), Failure> {
        if self.trees == 0 {
            return Err(usage("--trees must be positive"));
        }
        if self.min_leaf == 0 {
            return Err(usage("--min-leaf must be positive"));
        }
        let mtry = match &self.mtry {
            Some(m) => parse_mtry(m)?,
            None => default_mtry,
        };
        let cfg = ForestConfig {
            n_trees: self.trees,
            mtry: 1,
            min_leaf: self.min_leaf,
            bootstrap: !self.no_bootstrap,
            seed: self.seed,
        };
        Ok((cfg, mtry))
    }
}

impl KArgs {
    fn validate(&self) -> CmdResult {
        match (self.k_mode, self.k) {
            (KModeArg::Fixed, None) => Err(usage("--k-mode fixed requires --k")),
            (KModeArg::Fixed, Some(0)) => Err(usage("--k must be positive")),
            (KModeArg::Silhouette | KModeArg::Stability, Some(_)) => {
                Err(usage("--k is only valid with --k-mode fixed"))
            }
            _ if self.k_max < 2 => Err(usage("--k-max must be at least 2")),
            _ => Ok(()),
        }
    }

    fn pipeline_mode(&self) -> KMode {
        match (self.k_mode, self.k) {
            (KModeArg::Fixed, Some(k)) => KMode::Fixed { k },
            _ => KMode::Silhouette {
                k_min: 2,
                k_max: self.k_max,
            },
        }
    }
}

impl InputArgs {
    fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            max_missing_fraction: self.max_missing,
            impute_k: self.impute_k,
            top_variance_features: self.top_variance,
            standardize: !self.no_standardize,
        }
    }

    fn check(&self) -> CmdResult {
        parse_delimiter(&self.delimiter)?;
        for p in &self.layers {
            require_file(p, "layer file")?;
        }
        if let Some(s) = &self.survival {
            require_file(s, "survival file")?;
        }
        if !(0.0..=1.0).contains(&self.max_missing) {
            return Err(usage("--max-missing must lie in [0, 1]"));
        }
        if self.impute_k == 0 {
            return Err(usage("--impute-k must be positive"));
        }
        Ok(())
    }

    /// Parses and preprocesses every layer, then keeps the samples present
    /// in all of them (in first-layer order).
    fn load(&self) -> anyhow::Result<MultiOmicsDataset> {
        let options = ParseOptions {
            delimiter: parse_delimiter(&self.delimiter)
                .map_err(|_| anyhow::anyhow!("bad delimiter"))?,
            transpose: self.transpose,
        };
        let cfg = self.preprocess_config();
        let layers = self
            .layers
            .iter()
            .map(|p| {
                let m =
                    parse_matrix(p, options).with_context(|| format!("reading {}", p.display()))?;
                preprocess(&m, &cfg).with_context(|| format!("preprocessing {}", p.display()))
            })
            .collect::<anyhow::Result<Vec<OmicsMatrix>>>()?;
        let layers = align_samples(layers)?;
        let survival = match &self.survival {
            Some(path) => {
                let records = parse_survival(path, options.delimiter)
                    .with_context(|| format!("reading {}", path.display()))?;
                let present: std::collections::HashSet<&str> =
                    layers[0].sample_ids().iter().map(String::as_str).collect();
                let kept: Vec<SurvivalRecord> = records
                    .into_iter()
                    .filter(|r| present.contains(r.sample_id.as_str()))
                    .collect();
                Some(kept)
            }
            None => None,
        };
        Ok(MultiOmicsDataset::new(layers, survival)?)
    }
}

fn align_samples(layers: Vec<OmicsMatrix>) -> anyhow::Result<Vec<OmicsMatrix>> {
    let first = layers[0].sample_ids().to_vec();
    let index: Vec<HashMap<&str, usize>> = layers
        .iter()
        .map(|l| {
            l.sample_ids()
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect()
        })
        .collect();
    let common: Vec<&String> = first
        .iter()
        .filter(|s| index.iter().all(|ix| ix.contains_key(s.as_str())))
        .collect();
    if common.len() < 2 {
        anyhow::bail!(
            "layers share {} samples; at least 2 are needed",
            common.len()
        );
    }
    Ok(layers
        .iter()
        .zip(&index)
        .map(|(l, ix)| {
            let rows: Vec<usize> = common.iter().map(|s| ix[s.as_str()]).collect();
            l.select_samples(&rows)
        })
        .collect())
}

/// Reads `sample_id,label` and aligns labels to `sample_ids`. Numeric
/// labels keep their numeric order.
fn read_labels(
    path: &Path,
    delimiter: u8,
    sample_ids: &[String],
) -> anyhow::Result<ClusterAssignment> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut by_id: HashMap<String, String> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() < 2 {
            anyhow::bail!("{}: expected sample_id,label rows", path.display());
        }
        let id = rec[0].trim().to_string();
        if !sample_ids.contains(&id) {
            return Err(crate::Error::UnknownSample(id).into());
        }
        if by_id
            .insert(id.clone(), rec[1].trim().to_string())
            .is_some()
        {
            return Err(crate::Error::DuplicateId { kind: "label", id }.into());
        }
    }
    let raw = sample_ids
        .iter()
        .map(|s| {
            by_id
                .get(s)
                .cloned()
                .ok_or_else(|| anyhow::anyhow!("no label for sample `{s}`"))
        })
        .collect::<anyhow::Result<Vec<String>>>()?;
    let numeric: Option<Vec<i64>> = raw.iter().map(|v| v.parse().ok()).collect();
    Ok(match numeric {
        Some(values) => ClusterAssignment::from_raw(&values, sample_ids.to_vec())?,
        None => ClusterAssignment::from_raw(&raw, sample_ids.to_vec())?,
    })
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_run_meta(
    dir: &Path,
    command: &str,
    argv: &[String],
    config: &impl Serialize,
) -> anyhow::Result<()> {
    write_json(
        dir,
        "run_meta.json",
        &json!({
            "command": command,
            "argv": argv,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
        }),
    )
}

fn write_km(dir: &Path, records: &[SurvivalRecord], a: &ClusterAssignment) -> anyhow::Result<()> {
    let rows = km_table(records, a)?;
    let mut w = csv::Writer::from_writer(create(dir, "km.csv")?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Survival artifacts for an assignment; restricted to samples that have
/// survival records.
fn write_survival(dir: &Path, d: &MultiOmicsDataset, a: &ClusterAssignment) -> anyhow::Result<()> {
    let Some(records) = d.survival() else {
        return Ok(());
    };
    write_km(dir, records, a)?;
    match logrank_test(records, a) {
        Ok(res) => write_json(dir, "logrank.json", &res)?,
        Err(e) => eprintln!("warning: log-rank test skipped: {e}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct SilhouetteReport<'a> {
    k: usize,
    k_mode: KModeArg,
    mean: Option<f64>,
    per_sample: Option<Vec<f64>>,
    scores: Option<&'a [(usize, f64)]>,
}

fn stability_k(
    forests: &[crate::forest::Forest],
    d: &MultiOmicsDataset,
    k_max: usize,
    seed: u64,
    out: &Path,
) -> std::result::Result<usize, Failure> {
    if forests.len() != 1 {
        return Err(usage("--k-mode stability supports a single --layer"));
    }
    let f = &forests[0];
    let n = d.n_samples();
    let k_range: Vec<usize> = (2..=k_max.min(n - 1)).collect();
    let mut grid: Vec<usize> = STABILITY_GRID
        .iter()
        .copied()
        .filter(|&t| t < f.n_trees())
        .collect();
    grid.insert(0, f.n_trees());
    let report: StabilityReport =
        stability_diagnostic(f, &d.layers()[0], &k_range, &grid, STABILITY_REPS, seed)?;
    write_json(out, "stability.json", &report)?;
    report
        .suggested_k(STABILITY_EPS)
        .ok_or_else(|| Failure::Data(anyhow::anyhow!("stability diagnostic produced no k")))
}

fn cmd_cluster(a: &ClusterArgs, argv: &[String]) -> CmdResult {
    a.input.check()?;
    a.k.validate()?;
    let (cfg, mtry) = a.forest.config()?;
    if let Some(m) = &a.model {
        require_file(m, "model file")?;
        if matches!(a.k.k_mode, KModeArg::Stability) {
            return Err(usage(
                "--k-mode stability needs locally trained forests; drop --model",
            ));
        }
    }
    let d = a.input.load()?;
    if let KMode::Fixed { k } = a.k.pipeline_mode() {
        if k > d.n_samples() {
            return Err(usage(format!(
                "--k {k} exceeds the {} samples",
                d.n_samples()
            )));
        }
    }
    prepare_out(&a.out)?;

    let (counts, forests): (CountMatrix, Vec<_>) = match &a.model {
        Some(path) => {
            let g = GlobalModel::read(path)?;
            (global_counts(&g, &d)?, Vec::new())
        }
        None => {
            let forests = train_layers(&d, &cfg, mtry)?;
            (fused_counts(&forests, &d)?, forests)
        }
    };
    let mut res: ClusterResult = cluster_counts(&counts, a.k.pipeline_mode())?;
    if matches!(a.k.k_mode, KModeArg::Stability) {
        let k = stability_k(&forests, &d, a.k.k_max, cfg.seed, &a.out)?;
        res.assignment = cut(&res.dendrogram, k)?;
        res.selection = None;
    }

    res.affinity.write_csv(create(&a.out, "affinity.csv")?)?;
    res.distance.write_csv(create(&a.out, "distance.csv")?)?;
    res.dendrogram
        .write_csv(create(&a.out, "dendrogram.csv")?)?;
    res.assignment.write_csv(create(&a.out, "labels.csv")?)?;
    let sil = (res.assignment.k() >= 2 && res.assignment.k() < d.n_samples())
        .then(|| silhouette(&res.distance, &res.assignment))
        .transpose()?;
    write_json(
        &a.out,
        "silhouette.json",
        &SilhouetteReport {
            k: res.assignment.k(),
            k_mode: a.k.k_mode,
            mean: sil.as_ref().map(|s| s.mean),
            per_sample: sil.map(|s| s.per_sample),
            scores: res
                .selection
                .as_ref()
                .map(|s: &KSelection| s.scores.as_slice()),
        },
    )?;
    write_survival(&a.out, &d, &res.assignment)?;
    write_run_meta(
        &a.out,
        "cluster",
        argv,
        &json!({
            "args": a,
            "forest": cfg,
            "mtry": mtry,
            "preprocess": a.input.preprocess_config(),
            "n_samples": d.n_samples(),
            "n_features": d.layers().iter().map(OmicsMatrix::n_features).collect::<Vec<_>>(),
            "k": res.assignment.k(),
        }),
    )?;
    Ok(())
}

fn cmd_fed_sim(a: &FedSimArgs, argv: &[String]) -> CmdResult {
    a.input.check()?;
    a.k.validate()?;
    if matches!(a.k.k_mode, KModeArg::Stability) {
        return Err(usage("fed-sim supports --k-mode silhouette or fixed"));
    }
    if a.clients < 2 {
        return Err(usage("--clients must be at least 2"));
    }
    if a.iterations == 0 {
        return Err(usage("--iterations must be positive"));
    }
    match a.eval {
        EvalArg::Logrank if a.input.survival.is_none() => {
            return Err(usage("--eval logrank requires --survival"));
        }
        EvalArg::ReferenceAri => match &a.labels {
            Some(p) => require_file(p, "labels file")?,
            None => return Err(usage("--eval reference-ari requires --labels")),
        },
        _ => {}
    }
    let (forest, mtry) = a.forest.config_with_default(MtryRule::Sqrt)?;
    let d = a.input.load()?;
    let eval = match a.eval {
        EvalArg::Logrank => EvalMode::LogRank,
        EvalArg::PooledAri => EvalMode::PooledAri,
        EvalArg::ReferenceAri => {
            let path = a.labels.as_deref().unwrap_or(Path::new(""));
            let delim = parse_delimiter(&a.input.delimiter)?;
            EvalMode::ReferenceAri(read_labels(path, delim, d.sample_ids())?.labels().to_vec())
        }
    };
    let cfg = SimulationConfig {
        n_clients: a.clients,
        forest,
        mtry,
        iterations: a.iterations,
        seed: a.forest.seed,
        eval,
        k_mode: a.k.pipeline_mode(),
        standardization: match a.standardization {
            StandardizationArg::PerClient => Standardization::PerClient,
            StandardizationArg::Global => Standardization::Global,
            StandardizationArg::None => Standardization::None,
        },
    };
    let report = simulate(&d, &cfg)?;
    prepare_out(&a.out)?;
    write_json(&a.out, "federation_report.json", &report)?;
    report.write_winloss_csv(create(&a.out, "winloss.csv")?)?;
    let wins: Vec<_> = report
        .win_counts()
        .into_iter()
        .map(|(c, g, l, t)| json!({"client_id": c, "global": g, "local": l, "tie": t}))
        .collect();
    write_json(&a.out, "winloss_summary.json", &wins)?;
    write_run_meta(
        &a.out,
        "fed-sim",
        argv,
        &json!({ "args": a, "simulation": cfg }),
    )?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> CmdResult {
    let spec = match &a.spec {
        Some(path) => {
            require_file(path, "spec file")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ScenarioSpec>(&text)
                .map_err(|e| usage(format!("invalid spec: {e}")))?
        }
        None => {
            let (Some(name), Some(param)) = (&a.scenario, a.param) else {
                return Err(usage("--scenario and --param are required without --spec"));
            };
            let kind = ScenarioKind::from_name(name, param).map_err(|e| usage(e.to_string()))?;
            ScenarioSpec {
                kind,
                n_per_cluster: a.n_per_cluster,
                seed: a.seed,
            }
        }
    };
    let ds = generate(&spec).map_err(|e| usage(e.to_string()))?;
    prepare_out(&a.out)?;
    ds.write_data_csv(create(&a.out, "data.csv")?)?;
    ds.write_labels_csv(create(&a.out, "labels.csv")?)?;
    write_run_meta(&a.out, "synth", argv, &json!({ "spec": spec }))?;
    Ok(())
}

fn cmd_synth_bench(a: &BenchArgs, argv: &[String]) -> CmdResult {
    let names: Vec<String> = if a.scenarios.is_empty() {
        [
            "globular_equal",
            "globular_outliers",
            "globular_varying",
            "rings",
        ]
        .map(String::from)
        .to_vec()
    } else {
        a.scenarios.clone()
    };
    let grids = names
        .iter()
        .map(|s| {
            let mut g = ScenarioGrid::standard(s).map_err(|e| usage(e.to_string()))?;
            if let Some(n) = a.n_per_cluster {
                g.n_per_cluster = n;
            }
            Ok(g)
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    if a.trees == 0 || a.mtry == 0 || a.min_leaf == 0 || a.replicates == 0 {
        return Err(usage(
            "--trees, --mtry, --min-leaf and --replicates must be positive",
        ));
    }
    let cfg = BenchConfig {
        grids,
        replicates: if a.smoke { 1 } else { a.replicates },
        forest: ForestConfig {
            n_trees: a.trees,
            mtry: a.mtry,
            min_leaf: a.min_leaf,
            bootstrap: true,
            seed: a.seed,
        },
        seed: a.seed,
    };
    let rows = run_bench(&cfg)?;
    prepare_out(&a.out)?;
    write_results_csv(create(&a.out, "results.csv")?, &rows)?;
    write_run_meta(&a.out, "synth-bench", argv, &json!({ "bench": cfg }))?;
    Ok(())
}

fn cmd_importance(a: &ImportanceArgs, argv: &[String]) -> CmdResult {
    a.input.check()?;
    require_file(&a.labels, "labels file")?;
    let (cfg, mtry) = a.forest.config()?;
    let d = a.input.load()?;
    let delim = parse_delimiter(&a.input.delimiter)?;
    let assignment = read_labels(&a.labels, delim, d.sample_ids())?;
    if assignment.k() < 2 {
        return Err(Failure::Data(anyhow::anyhow!(
            "labels define a single cluster"
        )));
    }
    let forests = train_layers(&d, &cfg, mtry)?;

    let multi = d.layers().len() > 1;
    let mut feature_ids = Vec::new();
    let mut combined: Vec<ImportanceVector> = Vec::new();
    for (l, (f, layer)) in forests.iter().zip(d.layers()).enumerate() {
        let vectors = all_cluster_importance(f, layer, &assignment)?;
        feature_ids.extend(layer.feature_ids().iter().map(|id| {
            if multi {
                format!("layer{l}:{id}")
            } else {
                id.clone()
            }
        }));
        if combined.is_empty() {
            combined = vectors;
        } else {
            for (c, v) in combined.iter_mut().zip(vectors) {
                c.scores.extend(v.scores);
            }
        }
    }
    let normalized: Vec<ImportanceVector> =
        combined.iter().map(ImportanceVector::normalized).collect();

    prepare_out(&a.out)?;
    write_importance_csv(create(&a.out, "importance.csv")?, &feature_ids, &combined)?;
    write_importance_csv(
        create(&a.out, "importance_normalized.csv")?,
        &feature_ids,
        &normalized,
    )?;
    let ids: Vec<usize> = combined.iter().map(|v| v.cluster_id).collect();
    match importance_correlation(&combined) {
        Ok(corr) => write_correlation_csv(create(&a.out, "importance_corr.csv")?, &ids, &corr)?,
        Err(e) => eprintln!("warning: importance correlation skipped: {e}"),
    }
    write_survival(&a.out, &d, &assignment)?;
    write_run_meta(
        &a.out,
        "importance",
        argv,
        &json!({ "args": a, "forest": cfg, "mtry": mtry, "preprocess": a.input.preprocess_config() }),
    )?;
    Ok(())
}

fn cmd_model_export(a: &ExportArgs, argv: &[String]) -> CmdResult {
    a.input.check()?;
    let (cfg, mtry) = a.forest.config()?;
    let d = a.input.load()?;
    let forests = train_layers(&d, &cfg, mtry)?;
    let bundle = export_model(&forests, &a.client_id)?;
    prepare_out(&a.out)?;
    bundle.write(a.out.join("model.json"))?;
    write_run_meta(
        &a.out,
        "model export",
        argv,
        &json!({ "args": a, "forest": cfg, "mtry": mtry }),
    )?;
    Ok(())
}

fn cmd_model_merge(a: &MergeArgs, argv: &[String]) -> CmdResult {
    for p in &a.models {
        require_file(p, "model file")?;
    }
    let bundles = a
        .models
        .iter()
        .map(|p| {
            let g = GlobalModel::read(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(g.bundles().to_vec())
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let global = merge_models(bundles.into_iter().flatten().collect())?;
    prepare_out(&a.out)?;
    global.write(a.out.join("global_model.json"))?;
    write_run_meta(
        &a.out,
        "model merge",
        argv,
        &json!({ "args": a, "total_trees": global.total_trees() }),
    )?;
    Ok(())
}

fn model_summary(g: &GlobalModel) -> serde_json::Value {
    let clients: Vec<_> = g
        .bundles()
        .iter()
        .map(|b| {
            let per_layer: Vec<usize> = (0..b.layers().len())
                .map(|l| b.trees().iter().filter(|t| t.layer_index() == l).count())
                .collect();
            json!({
                "client_id": b.client_id(),
                "config": b.config(),
                "layers": b.layers(),
                "trees_per_layer": per_layer,
            })
        })
        .collect();
    json!({
        "format_version": crate::federated::FORMAT_VERSION,
        "n_clients": g.bundles().len(),
        "n_layers": g.n_layers(),
        "total_trees": g.total_trees(),
        "clients": clients,
    })
}

fn cmd_model_inspect(a: &InspectArgs, argv: &[String]) -> CmdResult {
    require_file(&a.model, "model file")?;
    let g = GlobalModel::read(&a.model)?;
    let summary = model_summary(&g);
    let text = serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?;
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = writeln!(stdout, "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(Failure::Data(e.into()));
        }
    }
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write_json(out, "summary.json", &summary)?;
        write_run_meta(out, "model inspect", argv, &json!({ "args": a }))?;
    }
    Ok(())
}
