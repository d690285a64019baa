use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use didex_core::adapt::{
    adapt_datasets, append_results, evaluate_toy, load_labeled, materialize_scenario, read_results,
    run_scenario_on_disk, train_source_only, AccessLog, Scenario, ScenarioData, ScenarioDatasets, ScenarioResult,
};
use didex_core::dataset::{
    export_layout, plan_prompts, run_extension, subsample, verify_dataset, DatasetDescriptor,
    DESCRIPTOR_FILE, MANIFEST_FILE,
};
use didex_core::diffusion::{Adapter, BackendConfig};
use didex_core::eval::{accumulate_pairs, render_table, DatasetScore, EvalReport, ReportFormat};
use didex_core::label::{load_label_map, CatalogScheme, ClassCatalog, LabelMap};
use indexmap::IndexMap;
use log::info;
use serde::Serialize;

use crate::config::{require_exists, RunConfig};
use crate::error::{CliError, Result};

pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const PSEUDO_TARGET_DIR: &str = "pseudo_target";
pub const RESULTS_FILE: &str = "results.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const EVAL_JSON_FILE: &str = "eval_report.json";
pub const EVAL_TEXT_FILE: &str = "eval_report.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const ACCESS_LOG_FILE: &str = "access_log.txt";

/// Diffusion-based domain extension toolkit.
#[derive(Debug, Parser)]
#[command(name = "didex", version)]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that receives every output of the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log filter, e.g. `info` or `didex_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the prompts a run would use, without generating images.
    Prompt(PromptArgs),
    /// Build a pseudo-target dataset through the diffusion backend.
    Extend(ExtendArgs),
    /// Write the source/pseudo-target tree consumed by adaptation frameworks.
    Export(ExportArgs),
    /// Nested subsets of a dataset for the image-count sweep.
    Subsample(SubsampleArgs),
    /// Cross-check a generated dataset against its manifest.
    Verify(VerifyArgs),
    /// Score predictions against ground truth and compute the DG mean.
    Eval(EvalArgs),
    /// Run a toy adaptation scenario and append its result row.
    Adapt(AdaptArgs),
    /// Summarize result tables and evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Number of prompts to print.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
    #[arg(long)]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Use the deterministic mock backend regardless of the config.
    #[arg(long)]
    pub mock: bool,
    /// Stop after this many new generations; rerun to resume.
    #[arg(long)]
    pub max_new: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub pseudo_target: PathBuf,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Subset sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 29, 100])]
    pub k: Vec<usize>,
    /// Adapt the scenario's source to every subset and record the curve.
    #[arg(long)]
    pub adapt: bool,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the manifest inside the dataset directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, one subdirectory per dataset name (or flat for a single dataset).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground truth as NAME=DIR; DIR holds label PNGs or a dataset descriptor.
    #[arg(long = "gt", value_name = "NAME=DIR")]
    pub gt: Vec<String>,
    /// Precomputed mIoU in percent as NAME=VALUE.
    #[arg(long = "score", value_name = "NAME=VALUE")]
    pub score: Vec<String>,
    /// Datasets averaged into the DG mean; every dataset but ACDC by default.
    #[arg(long, value_delimiter = ',')]
    pub include: Vec<String>,
    /// `gta19`, `synthia16` or a catalog JSON file.
    #[arg(long, default_value = "gta19")]
    pub catalog: String,
    /// Suffix stripped from ground-truth file stems.
    #[arg(long, default_value = "")]
    pub gt_suffix: String,
    /// Row label in the text table.
    #[arg(long, default_value = "model")]
    pub label: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Adapt to this dataset's images instead of the scenario's target set.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Scenario column of the result row.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Adaptation result tables.
    #[arg(long)]
    pub results: Vec<PathBuf>,
    /// Evaluation reports as LABEL=PATH.
    #[arg(long = "eval", value_name = "LABEL=PATH")]
    pub eval: Vec<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let config = config.effective();
    let ctx = Context { config, out: cli.out, seed_override: cli.seed };
    match cli.command {
        Command::Prompt(a) => cmd_prompt(&ctx, a),
        Command::Extend(a) => cmd_extend(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
        Command::Subsample(a) => cmd_subsample(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Adapt(a) => cmd_adapt(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
}

impl Context {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("this command needs --out DIR".into()))
    }

    fn source(&self, flag: Option<PathBuf>) -> Result<DatasetDescriptor> {
        let path = flag
            .or_else(|| self.config.source.clone())
            .ok_or_else(|| CliError::Usage("no source dataset: pass --source or set `source` in the config".into()))?;
        require_exists([("source dataset", path.as_path())])?;
        Ok(DatasetDescriptor::load(&path)?)
    }

    fn scenario(&self, flag: Option<PathBuf>) -> Result<Scenario> {
        let mut s = match flag.or_else(|| self.config.scenario.clone()) {
            Some(path) => {
                require_exists([("scenario", path.as_path())])?;
                Scenario::load(&path)?
            }
            None => Scenario::color_shift(),
        };
        if let Some(seed) = self.seed_override {
            s.seed = seed;
        }
        Ok(s)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

fn parse_pair(spec: &str, flag: &str) -> Result<(String, String)> {
    match spec.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(CliError::Usage(format!("--{flag} expects NAME=VALUE, got `{spec}`"))),
    }
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn cmd_prompt(ctx: &Context, args: PromptArgs) -> Result<()> {
    let source = ctx.source(args.source)?;
    let records = plan_prompts(&source, &ctx.config.prompt, ctx.config.extension.variants_per_image, Some(args.limit))?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(out) = &ctx.out {
        ctx.config.echo(out)?;
        write_file(&out.join(PROMPTS_FILE), &lines)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExtendSummary<'a> {
    dataset: &'a Path,
    manifest: &'a Path,
    backend: &'a str,
    planned: usize,
    generated: usize,
    reused: usize,
    failed: usize,
    pending: usize,
    failure_rate: f64,
}

fn cmd_extend(ctx: &Context, args: ExtendArgs) -> Result<()> {
    let out = ctx.out()?;
    let source = ctx.source(args.source)?;
    let mut config = ctx.config.clone();
    if args.mock {
        config.backend = BackendConfig { adapter: Adapter::Mock, endpoint: "mock://".into(), ..config.backend };
    }
    if args.max_new.is_some() {
        config.extension.max_new_generations = args.max_new;
    }
    if let Some(depth) = &config.extension.depth_dir {
        require_exists([("depth directory", depth.as_path())])?;
    }
    config.echo(out)?;
    let root = out.join(PSEUDO_TARGET_DIR);
    let s = run_extension(&source, &config.prompt, &config.backend, &config.extension, &root)?;
    print_json(&ExtendSummary {
        dataset: &s.dataset.root,
        manifest: &s.manifest_path,
        backend: &s.backend.backend,
        planned: s.planned,
        generated: s.generated,
        reused: s.reused,
        failed: s.failed,
        pending: s.pending,
        failure_rate: s.failure_rate(),
    });
    if !s.within_threshold() {
        return Err(CliError::FailureRate { rate: s.failure_rate(), threshold: s.failure_threshold });
    }
    Ok(())
}

fn cmd_export(ctx: &Context, args: ExportArgs) -> Result<()> {
    let out = ctx.out()?;
    let source = ctx.source(args.source)?;
    require_exists([("pseudo-target dataset", args.pseudo_target.as_path())])?;
    let pt = DatasetDescriptor::load(&args.pseudo_target)?;
    ctx.config.echo(out)?;
    let s = export_layout(&pt, &source, out)?;
    println!("exported {} source pairs and {} target images to {}", s.source_pairs, s.target_images, s.root.display());
    Ok(())
}

fn copy_into(from: &Path, to: &Path) -> Result<()> {
    if let Some(dir) = to.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::copy(from, to).map_err(CliError::io(from))?;
    Ok(())
}

/// Copies the subset's files bit-exactly and writes its descriptor under `root`.
fn write_subset(subset: &DatasetDescriptor, root: &Path) -> Result<DatasetDescriptor> {
    let copy = DatasetDescriptor { root: root.to_path_buf(), ..subset.clone() };
    for id in &subset.ids {
        copy_into(&subset.image_path(id), &copy.image_path(id))?;
        if let (Some(from), Some(to)) = (subset.label_path(id), copy.label_path(id)) {
            copy_into(&from, &to)?;
        }
    }
    copy.save()?;
    Ok(copy)
}

#[derive(Debug, Serialize)]
struct CurveRow {
    k: usize,
    images: usize,
    subset: String,
    source_only_miou: Option<f64>,
    adapted_miou: Option<f64>,
}

fn cmd_subsample(ctx: &Context, args: SubsampleArgs) -> Result<()> {
    let out = ctx.out()?;
    require_exists([("dataset", args.dataset.as_path())])?;
    let dataset = DatasetDescriptor::load(&args.dataset)?;
    if args.k.is_empty() {
        return Err(CliError::Usage("--k needs at least one size".into()));
    }
    let scenario = if args.adapt { Some(ctx.scenario(args.scenario)?) } else { None };
    ctx.config.echo(out)?;
    let seed = ctx.config.subsample_seed();

    let toy = match &scenario {
        Some(s) => {
            let data = ScenarioData::build(s)?;
            let sets = materialize_scenario(s, &data, &out.join("scenario"))?;
            let log = AccessLog::default();
            let (src_images, src_labels) = load_labeled(&sets.source, &log)?;
            let (test_images, test_labels) = load_labeled(&sets.test, &log)?;
            let config = s.training_config();
            let baseline = train_source_only(&src_images, &src_labels, sets.source.catalog.len(), &config)?;
            let miou = evaluate_toy(&baseline.model, &test_images, &test_labels, &sets.source.catalog)?;
            Some((s, sets, test_images, test_labels, miou))
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut ks = args.k.clone();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let subset = subsample(&dataset, k, seed)?;
        let dir = out.join("subsets").join(format!("k{k:03}"));
        let written = write_subset(&subset, &dir)?;
        let mut row = CurveRow {
            k,
            images: written.len(),
            subset: dir.join(DESCRIPTOR_FILE).display().to_string(),
            source_only_miou: None,
            adapted_miou: None,
        };
        if let Some((s, sets, test_images, test_labels, baseline)) = &toy {
            let log = AccessLog::default();
            let adapted = adapt_datasets(&sets.source, &written, &s.training_config(), &log)?;
            let miou = evaluate_toy(&adapted.model, test_images, test_labels, &sets.source.catalog)?;
            row.source_only_miou = Some(*baseline);
            row.adapted_miou = Some(miou);
            results.push(ScenarioResult {
                scenario: format!("{}@k={k}", s.name),
                seed: s.seed,
                source_only_miou: *baseline,
                adapted_miou: miou,
            });
        }
        info!("k = {k}: {} images", row.images);
        rows.push(row);
    }

    let curve = out.join(CURVE_FILE);
    let mut w = csv::Writer::from_path(&curve).map_err(|e| CliError::Config { path: curve.clone(), message: e.to_string() })?;
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Config { path: curve.clone(), message: e.to_string() })?;
    }
    w.flush().map_err(CliError::io(&curve))?;
    if !results.is_empty() {
        append_results(&out.join(RESULTS_FILE), &results)?;
    }
    println!("{}", fs::read_to_string(&curve).map_err(CliError::io(&curve))?.trim_end());
    Ok(())
}

fn cmd_verify(ctx: &Context, args: VerifyArgs) -> Result<()> {
    require_exists([("dataset", args.dataset.as_path())])?;
    let dataset = DatasetDescriptor::load(&args.dataset)?;
    let manifest = args.manifest.unwrap_or_else(|| dataset.root.join(MANIFEST_FILE));
    require_exists([("manifest", manifest.as_path())])?;
    let report = verify_dataset(&dataset, &manifest)?;
    print_json(&report);
    if let Some(out) = &ctx.out {
        write_file(&out.join("verify_report.json"), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    match report.defects.first() {
        None => Ok(()),
        Some(first) => Err(CliError::Defects { count: report.defects.len(), first: first.to_string() }),
    }
}

fn load_catalog(spec: &str) -> Result<ClassCatalog> {
    match spec.parse::<CatalogScheme>() {
        Ok(scheme) => Ok(ClassCatalog::from_scheme(scheme)),
        Err(_) => {
            let path = Path::new(spec);
            require_exists([("catalog", path)])?;
            Ok(ClassCatalog::load_json(path)?)
        }
    }
}

fn png_stems(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.strip_suffix(suffix).unwrap_or(stem).to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Ground-truth label files by stem, from a descriptor when the directory has one.
fn ground_truth(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    if dir.join(DESCRIPTOR_FILE).is_file() {
        let d = DatasetDescriptor::load(dir)?;
        return d
            .ids
            .iter()
            .map(|id| {
                d.label_path(id)
                    .map(|p| (id.clone(), p))
                    .ok_or_else(|| CliError::Usage(format!("{} has no labels", dir.display())))
            })
            .collect();
    }
    png_stems(dir, suffix)
}

fn score_dataset(
    name: &str,
    pred_dir: &Path,
    gt_dir: &Path,
    suffix: &str,
    catalog: &ClassCatalog,
) -> Result<DatasetScore> {
    let gt = ground_truth(gt_dir, suffix)?;
    let pred = png_stems(pred_dir, "")?;
    let missing: Vec<String> = gt.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    let unexpected: Vec<String> = pred.keys().filter(|k| !gt.contains_key(*k)).cloned().collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(CliError::StemMismatch { dataset: name.to_string(), missing, unexpected });
    }
    let pairs: Vec<(LabelMap, LabelMap)> = gt
        .iter()
        .map(|(stem, g)| Ok((load_label_map(&pred[stem], catalog)?, load_label_map(g, catalog)?)))
        .collect::<Result<_>>()?;
    let conf = accumulate_pairs(catalog, &pairs)?;
    Ok(DatasetScore::from_confusion(&conf, catalog)?)
}

fn cmd_eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let out = ctx.out()?;
    if args.gt.is_empty() && args.score.is_empty() {
        return Err(CliError::Usage("pass --gt NAME=DIR or --score NAME=VALUE".into()));
    }
    let catalog = load_catalog(&args.catalog)?;
    let gt: Vec<(String, PathBuf)> = args
        .gt
        .iter()
        .map(|s| parse_pair(s, "gt").map(|(k, v)| (k, PathBuf::from(v))))
        .collect::<Result<_>>()?;
    let pred = match (&args.pred, gt.is_empty()) {
        (Some(p), _) => Some(p.clone()),
        (None, true) => None,
        (None, false) => return Err(CliError::Usage("--gt needs --pred".into())),
    };
    let pred_dir = |name: &str| {
        let p = pred.as_ref().expect("checked above");
        let nested = p.join(name);
        if nested.is_dir() || gt.len() > 1 {
            nested
        } else {
            p.clone()
        }
    };
    let mut checks: Vec<(&str, PathBuf)> = Vec::new();
    for (name, dir) in &gt {
        checks.push(("ground truth", dir.clone()));
        checks.push(("predictions", pred_dir(name)));
    }
    require_exists(checks.iter().map(|(w, p)| (*w, p.as_path())))?;

    let mut datasets = IndexMap::new();
    for (name, dir) in &gt {
        datasets.insert(name.clone(), score_dataset(name, &pred_dir(name), dir, &args.gt_suffix, &catalog)?);
    }
    for spec in &args.score {
        let (name, value) = parse_pair(spec, "score")?;
        let v: f64 = value.parse().map_err(|_| CliError::Usage(format!("--score {name}: `{value}` is not a number")))?;
        if !(0.0..=100.0).contains(&v) {
            return Err(CliError::Usage(format!("--score {name}: {v} is not a percentage")));
        }
        datasets.insert(name, DatasetScore { per_class: IndexMap::new(), miou: v / 100.0 });
    }
    let included: Vec<String> = if args.include.is_empty() {
        datasets.keys().filter(|k| k.as_str() != "ACDC").cloned().collect()
    } else {
        args.include.clone()
    };
    let report = EvalReport::new(datasets, included)?;
    ctx.config.echo(out)?;
    let json = report.render(&args.label, ReportFormat::Json);
    let text = report.render(&args.label, ReportFormat::TextTable);
    write_file(&out.join(EVAL_JSON_FILE), &(json.clone() + "\n"))?;
    write_file(&out.join(EVAL_TEXT_FILE), &text)?;
    match args.format {
        Format::Text => print!("{text}"),
        Format::Json => println!("{json}"),
    }
    Ok(())
}

fn cmd_adapt(ctx: &Context, args: AdaptArgs) -> Result<()> {
    let out = ctx.out()?;
    if let Some(t) = &args.target {
        require_exists([("target dataset", t.as_path())])?;
    }
    let scenario = ctx.scenario(args.scenario)?;
    ctx.config.echo(out)?;
    write_file(&out.join("scenario.json"), &(serde_json::to_string_pretty(&scenario).expect("serializable") + "\n"))?;
    let data = ScenarioData::build(&scenario)?;
    let mut sets = materialize_scenario(&scenario, &data, &out.join("data"))?;
    if let Some(t) = &args.target {
        sets = ScenarioDatasets { target: DatasetDescriptor::load(t)?, ..sets };
    }
    let log = AccessLog::default();
    let mut result = run_scenario_on_disk(&scenario, &sets, &log)?;
    if let Some(label) = args.label {
        result.scenario = label;
    }
    let opened = log.opened();
    let target_labels: Vec<&PathBuf> = opened
        .iter()
        .filter(|p| sets.target.label_dir.as_ref().is_some_and(|d| p.starts_with(sets.target.root.join(d))))
        .collect();
    let mut access = String::new();
    for p in &opened {
        let _ = writeln!(access, "{}", p.display());
    }
    write_file(&out.join(ACCESS_LOG_FILE), &access)?;
    append_results(&out.join(RESULTS_FILE), std::slice::from_ref(&result))?;
    println!("scenario          {}", result.scenario);
    println!("seed              {}", result.seed);
    println!("source-only mIoU  {:.4}", result.source_only_miou);
    println!("adapted mIoU      {:.4}", result.adapted_miou);
    println!("gain              {:+.4}", result.gain());
    println!("target label reads {}", target_labels.len());
    Ok(())
}

fn results_table(rows: &[ScenarioResult]) -> String {
    let width = rows.iter().map(|r| r.scenario.len()).chain(["scenario".len()]).max().unwrap_or(8);
    let mut out = format!("{:<width$}  {:>20}  {:>11}  {:>7}  {:>7}\n", "scenario", "seed", "source-only", "adapted", "gain");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>20}  {:>11.4}  {:>7.4}  {:>+7.4}",
            r.scenario,
            r.seed,
            r.source_only_miou,
            r.adapted_miou,
            r.gain()
        );
    }
    out
}

fn cmd_report(ctx: &Context, args: ReportArgs) -> Result<()> {
    let mut results = args.results.clone();
    if results.is_empty() && args.eval.is_empty() {
        let default = ctx.out()?.join(RESULTS_FILE);
        results.push(default);
    }
    require_exists(results.iter().map(|p| ("results table", p.as_path())))?;
    let mut text = String::new();
    if !results.is_empty() {
        let mut rows = Vec::new();
        for path in &results {
            rows.extend(read_results(path)?);
        }
        text.push_str(&results_table(&rows));
    }
    if !args.eval.is_empty() {
        let mut reports = Vec::new();
        for spec in &args.eval {
            let (label, path) = parse_pair(spec, "eval")?;
            let path = PathBuf::from(path);
            require_exists([("evaluation report", path.as_path())])?;
            let body = fs::read_to_string(&path).map_err(CliError::io(&path))?;
            let report: EvalReport =
                serde_json::from_str(&body).map_err(|e| CliError::Config { path: path.clone(), message: e.to_string() })?;
            reports.push((label, report));
        }
        let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_table(&rows));
    }
    print!("{text}");
    if let Some(out) = &ctx.out {
        write_file(&out.join(REPORT_FILE), &text)?;
    }
    Ok(())
}
