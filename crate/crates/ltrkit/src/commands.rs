//! Subcommands of the `ltrkit` binary.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ltrkit_core::ensemble::{check_leakage, grid_search_weights, linear_blend, GbmStacker, ListwiseEnsemble};
use ltrkit_core::features::{dataset_grades, Pipeline};
use ltrkit_core::metrics::{evaluate, EvalReport, ScoreList};
use ltrkit_core::model::ModelConfig;
use ltrkit_core::schema::{generate_synthetic, split_validation, Dataset, Schema, SyntheticConfig, PLANTED_BETA};

use crate::blend::BlendSpec;
use crate::config::RunConfig;
use crate::data::{load_csv, save_csv};
use crate::export::{load_scores, save_scores, write_feature_tsv, write_ranking, write_scores};
use crate::model_file::{schema_hash, Artifact, Combiner, ModelBundle, StackBundle};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ltrkit", version, about = "Learning-to-rank pipeline for hotel search logs")]
pub struct Cli {
    /// Cap on worker threads (overrides the `threads` config key; 0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: train.csv, test.csv, test_labels.csv, meta.txt.
    Gen(GenArgs),
    /// Fit a feature pipeline and write the resulting matrix.
    Featurize(FeaturizeArgs),
    /// Fit features and a model on a labeled file and save the model.
    Train(TrainArgs),
    /// Score a data file with a saved model or stack.
    Predict(PredictArgs),
    /// NDCG report for a score file against labeled data.
    Eval(EvalArgs),
    /// Linear blend of score files described by a blend spec.
    Blend(BlendArgs),
    /// Fit a stacker over saved base models on held-out labeled data.
    Stack(StackArgs),
    /// Split, train every configured model, blend and evaluate.
    Run(RunArgs),
    /// Print the annotated example configuration.
    Config,
}

/// Config file plus `--set key=value` overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Labeled training queries.
    #[arg(long, default_value_t = 2000)]
    pub queries: usize,
    /// Hotels shown per query.
    #[arg(long, default_value_t = 25)]
    pub per_query: usize,
    /// Distinct property countries.
    #[arg(long, default_value_t = 20)]
    pub countries: usize,
    /// Unlabeled test queries generated after the training queries.
    #[arg(long, default_value_t = 500)]
    pub test_queries: usize,
    /// Generator seed; equal seeds give identical files.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    Tsv,
    Ranking,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Labeled file the pipeline is fitted on.
    #[arg(long)]
    pub fit: PathBuf,
    /// File to transform (defaults to the fitting file).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `tsv` keeps column names; `ranking` writes `grade qid:<srch_id> j:value` lines.
    #[arg(long, value_enum, default_value_t = MatrixFormat::Tsv)]
    pub format: MatrixFormat,
    /// Output path (stdout when omitted).
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled CSV to fit on.
    #[arg(long)]
    pub train: PathBuf,
    /// Output path.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Saved model or stack file.
    #[arg(long, short = 'm')]
    pub model: PathBuf,
    /// CSV to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Whether `--data` carries click/booking columns.
    #[arg(long)]
    pub labeled: bool,
    /// Output path (stdout when omitted).
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score file (`srch_id`, `prop_id`, `score`).
    #[arg(long)]
    pub scores: PathBuf,
    /// Labeled CSV holding the relevance grades.
    #[arg(long)]
    pub data: PathBuf,
    /// Also print one `query=<srch_id> ndcg=<value>` line per query.
    #[arg(long)]
    pub per_query: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    /// Blend spec file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Search weights on the 1/N simplex grid instead of using the blend spec's.
    #[arg(long, value_name = "N")]
    pub grid: Option<usize>,
    /// Labeled data for `--grid`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output path (stdout when omitted).
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct StackArgs {
    /// Base model as `name=path`; repeat for each model.
    #[arg(long = "base", value_name = "NAME=PATH", required = true)]
    pub bases: Vec<String>,
    /// Labeled data the base models never saw.
    #[arg(long)]
    pub data: PathBuf,
    /// Combine with the listwise ensemble instead of the gbm stacker.
    #[arg(long)]
    pub listwise: bool,
    /// Stack even on queries a base model was trained on.
    #[arg(long)]
    pub allow_leakage: bool,
    /// Output path.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Featurize(a) => featurize(&a),
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval(&a),
        Command::Blend(a) => blend(&a),
        Command::Stack(a) => stack(&a),
        Command::Run(a) => run(&a),
        Command::Config => {
            print!("{}", RunConfig::annotated_example());
            Ok(())
        }
    }
}

/// Threads requested by the flag, else by the command's config.
pub fn requested_threads(cli: &Cli) -> Result<usize> {
    if let Some(n) = cli.threads {
        return Ok(n);
    }
    let cfg = match &cli.command {
        Command::Featurize(a) => &a.config,
        Command::Train(a) => &a.config,
        Command::Eval(a) => &a.config,
        Command::Blend(a) => &a.config,
        Command::Stack(a) => &a.config,
        Command::Run(a) => &a.config,
        _ => return Ok(0),
    };
    cfg.load()?.threads()
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_labeled(path: &Path) -> Result<Dataset> {
    load_csv(path, true).with_context(|| format!("loading {}", path.display()))
}

fn fnv_hex(text: &str) -> String {
    schema_hash([text], [])
}

pub fn gen(a: &GenArgs) -> Result<()> {
    if a.queries == 0 || a.per_query == 0 || a.countries == 0 {
        return Err(CliError::usage("--queries, --per-query and --countries must be at least 1"));
    }
    let files = ["train.csv", "test.csv", "test_labels.csv", "meta.txt"].map(|f| a.output.join(f));
    if !a.force {
        if let Some(existing) = files.iter().find(|p| p.exists()) {
            return Err(CliError::usage(format!("{} exists; pass --force to overwrite", existing.display())));
        }
    }
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let cfg = SyntheticConfig::new(a.queries + a.test_queries, a.per_query, a.countries, a.seed);
    let all = generate_synthetic(&cfg)?;
    let cut = a.queries as u64;
    let train = all.filter_groups(|g| g.srch_id() <= cut);
    let test = all.filter_groups(|g| g.srch_id() > cut);
    save_csv(&train, &files[0])?;
    if a.test_queries > 0 {
        let unlabeled = Dataset::new(test.groups().to_vec(), Schema { labeled: false, ..*test.schema() })?;
        save_csv(&unlabeled, &files[1])?;
        save_csv(&test, &files[2])?;
    }
    let positives = train.rows().filter(|r| r.click || r.booking).count();
    let settings = format!(
        "queries={} per_query={} countries={} test_queries={} seed={}",
        a.queries, a.per_query, a.countries, a.test_queries, a.seed
    );
    let beta: Vec<String> = PLANTED_BETA.iter().map(f64::to_string).collect();
    let meta = format!(
        "generator=ltrkit synthetic v1\n{}\nbeta(price_usd,prop_starrating,prop_location_score2,prop_location_score1)={}\n\
         train_rows={}\ntrain_positive_rate={:.6}\nconfig_hash={}\n",
        settings.replace(' ', "\n"),
        beta.join(","),
        train.n_rows(),
        positives as f64 / train.n_rows() as f64,
        fnv_hex(&settings)
    );
    fs::write(&files[3], meta)?;
    info!("wrote {} training and {} test queries to {}", a.queries, a.test_queries, a.output.display());
    Ok(())
}

pub fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let fit_ds = load_labeled(&a.fit)?;
    let fitted = cfg.features()?.fit(&fit_ds, &[], cfg.seed()?)?;
    let target = match &a.data {
        Some(p) => {
            let labeled = a.format == MatrixFormat::Ranking || has_labels(p)?;
            load_csv(p, labeled).with_context(|| format!("loading {}", p.display()))?
        }
        None => fit_ds,
    };
    let m = fitted.apply(&target)?;
    let out = output_writer(a.output.as_deref())?;
    match a.format {
        MatrixFormat::Tsv => write_feature_tsv(&m, out)?,
        MatrixFormat::Ranking => write_ranking(&m, &dataset_grades(&target), out)?,
    }
    Ok(())
}

/// Whether the CSV header names both label columns.
fn has_labels(path: &Path) -> Result<bool> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?;
    Ok(header.iter().any(|h| h == "click_bool") && header.iter().any(|h| h == "booking_bool"))
}

/// Fits `features` and `config` on `train`; LambdaMART with early stopping
/// holds out the usual validation queries.
pub fn fit_bundle(train: &Dataset, features: &Pipeline, config: &ModelConfig, seed: u64) -> Result<ModelBundle> {
    let pipeline = features.fit(train, &[], seed)?;
    let early = matches!(config, ModelConfig::LambdaMart(p) if p.early_stopping.is_some());
    let model = if early {
        let (fit, valid) = split_validation(train);
        let (m, vm) = (pipeline.apply(&fit)?, pipeline.apply(&valid)?);
        let vg = dataset_grades(&valid);
        config.fit_with_validation(&m, &dataset_grades(&fit), Some((&vm, &vg)))?
    } else {
        config.fit(&pipeline.apply(train)?, &dataset_grades(train))?
    };
    Ok(ModelBundle {
        input_columns: train.schema().columns().map(|c| c.name().to_string()).collect(),
        pipeline,
        config: config.clone(),
        model,
        train_queries: train.query_ids(),
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let ds = load_labeled(&a.train)?;
    let config = cfg.model_config()?;
    info!("training {} on {} queries", config.kind(), ds.n_groups());
    let bundle = fit_bundle(&ds, &cfg.features()?, &config, cfg.seed()?)?;
    Artifact::Model(bundle).save(&a.output)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let artifact = Artifact::load(&a.model)?;
    let ds = load_csv(&a.data, a.labeled).with_context(|| format!("loading {}", a.data.display()))?;
    let overlap = artifact.fitted_queries().intersection(&ds.query_ids()).count();
    if overlap > 0 {
        log::warn!("{overlap} queries in {} were used to fit this model", a.data.display());
    }
    let scores = artifact.predict(&ds)?;
    write_scores(&scores, output_writer(a.output.as_deref())?)?;
    Ok(())
}

/// `key=value` report; the NDCG line comes last.
pub fn format_report(r: &EvalReport, n_queries: usize) -> String {
    format!(
        "queries={n_queries}\nincluded_queries={}\nzero_gain_queries={}\nzero_gain={}\ngain={}\nndcg@{}={:.6}\n",
        r.included_queries(),
        r.zero_gain_queries,
        match r.zero_gain {
            ltrkit_core::metrics::ZeroGainMode::Exclude => "exclude",
            ltrkit_core::metrics::ZeroGainMode::AsZero => "as_zero",
        },
        match r.gain {
            ltrkit_core::metrics::GainMode::Exponential => "exponential",
            ltrkit_core::metrics::GainMode::Linear => "linear",
        },
        r.k,
        r.mean_ndcg
    )
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let ds = load_labeled(&a.data)?;
    let scores = load_scores(&a.scores)?;
    let report = evaluate(&scores, &ds, cfg.eval_options()?)?;
    let mut out = io::stdout().lock();
    if a.per_query {
        for (q, v) in &report.per_query {
            writeln!(out, "query={q} ndcg={v:.6}")?;
        }
    }
    write!(out, "{}", format_report(&report, ds.n_groups()))?;
    Ok(())
}

fn load_inputs(spec: &BlendSpec) -> Result<Vec<(String, ScoreList)>> {
    spec.inputs.iter().map(|(n, p)| Ok((n.clone(), load_scores(p)?))).collect()
}

pub fn blend(a: &BlendArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let spec = BlendSpec::load(&a.spec)?;
    let inputs = load_inputs(&spec)?;
    let weights = match a.grid {
        Some(steps) => {
            let data = a.data.as_ref().ok_or_else(|| CliError::usage("--grid needs --data with labels"))?;
            let ds = load_labeled(data)?;
            let (w, score) = grid_search_weights(&inputs, &ds, spec.normalization, steps, cfg.eval_options()?)?;
            let mut err = io::stderr().lock();
            for ((name, _), v) in spec.inputs.iter().zip(&w) {
                writeln!(err, "weight {name} {v}")?;
            }
            info!("grid search best mean NDCG {score:.6}");
            w
        }
        None => spec.weight_vector(),
    };
    let blended = linear_blend(&inputs, &weights, spec.normalization)?;
    write_scores(&blended, output_writer(a.output.as_deref())?)?;
    Ok(())
}

/// Every fifth block of ten srch_ids (`(srch_id / 10) % 5 == 0`) is the
/// stacking holdout; the rest fits the stacker.
pub fn stack_split(ds: &Dataset) -> (Dataset, Dataset) {
    let holdout = |id: u64| (id / 10) % 5 == 0;
    (ds.filter_groups(|g| !holdout(g.srch_id())), ds.filter_groups(|g| holdout(g.srch_id())))
}

/// Fits a stacker on the 80% part of `ds` and scores the holdout.
pub fn fit_stack(
    bases: Vec<(String, ModelBundle)>,
    ds: &Dataset,
    cfg: &RunConfig,
    listwise: bool,
    allow_leakage: bool,
) -> Result<(StackBundle, Dataset)> {
    let (fit, holdout) = stack_split(ds);
    if fit.is_empty() {
        return Err(CliError::usage("stacking data has no queries outside the holdout"));
    }
    let fit_queries = fit.query_ids();
    for (name, b) in &bases {
        check_leakage(&b.train_queries, &fit_queries, allow_leakage).with_context(|| format!("base model `{name}` (pass --allow-leakage to stack anyway)"))?;
    }
    let scores: Vec<(String, ScoreList)> =
        bases.iter().map(|(n, b)| Ok((n.clone(), b.predict(&fit)?))).collect::<Result<_>>()?;
    let mode = cfg.normalization()?;
    let params = cfg.stack_params(listwise)?;
    let combiner = if listwise {
        Combiner::Listwise(ListwiseEnsemble::fit(&scores, &fit, mode, &params)?)
    } else {
        let names = cfg.stack_extras();
        if names.is_empty() {
            Combiner::Gbm { stacker: GbmStacker::fit(&scores, None, &fit, mode, &params)?, extras: None }
        } else {
            let pipeline = Pipeline::new(vec![])?.fit(&fit, &[], cfg.seed()?)?;
            let m = pipeline.apply(&fit)?;
            let stacker = GbmStacker::fit(&scores, Some((&m, &names)), &fit, mode, &params)?;
            Combiner::Gbm { stacker, extras: Some(pipeline) }
        }
    };
    Ok((StackBundle { bases, combiner, params, stack_queries: fit_queries }, holdout))
}

pub fn stack(a: &StackArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if a.listwise {
        cfg.set("stack.listwise", "true")?;
    }
    let listwise = cfg.listwise()?;
    let mut bases = Vec::new();
    let mut names = BTreeSet::new();
    for item in &a.bases {
        let (name, path) = item.split_once('=').ok_or_else(|| CliError::usage(format!("--base `{item}` is not name=path")))?;
        if !names.insert(name.to_string()) {
            return Err(CliError::usage(format!("base name `{name}` used twice")));
        }
        match Artifact::load(Path::new(path))? {
            Artifact::Model(b) => bases.push((name.to_string(), b)),
            Artifact::Stack(_) => return Err(CliError::usage(format!("{path} is a stack, not a base model"))),
        }
    }
    let ds = load_labeled(&a.data)?;
    let (bundle, holdout) = fit_stack(bases, &ds, &cfg, listwise, a.allow_leakage)?;
    let opts = cfg.eval_options()?;
    let mut out = io::stdout().lock();
    if !holdout.is_empty() {
        for (name, b) in &bundle.bases {
            let r = evaluate(&b.predict(&holdout)?, &holdout, opts)?;
            writeln!(out, "holdout_ndcg@{}[{name}]={:.6}", r.k, r.mean_ndcg)?;
        }
        let r = evaluate(&bundle.predict(&holdout)?, &holdout, opts)?;
        writeln!(out, "holdout_ndcg@{}={:.6}", r.k, r.mean_ndcg)?;
    }
    Artifact::Stack(bundle).save(&a.output)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let seed = cfg.seed()?;
    let opts = cfg.eval_options()?;
    let out_dir = PathBuf::from(cfg.get("run.output"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ds = load_labeled(Path::new(cfg.get("run.train")))?;
    let (train, valid) = split_validation(&ds);
    if train.is_empty() || valid.is_empty() {
        return Err(CliError::usage("run.train needs queries on both sides of the srch_id % 10 == 1 split"));
    }
    let models = cfg.run_models()?;
    let mut report = String::new();
    let mut spec = BlendSpec { inputs: Vec::new(), normalization: cfg.normalization()?, weights: Default::default() };
    let mut inputs = Vec::new();
    for (i, (family, features)) in models.iter().enumerate() {
        let name = format!("m{}_{family}", i + 1);
        info!("fitting {name}");
        let bundle = fit_bundle(&train, features, &cfg.family(family)?, seed)?;
        let scores = bundle.predict(&valid)?;
        let r = evaluate(&scores, &valid, opts)?;
        report.push_str(&format!("ndcg@{}[{name}]={:.6}\n", r.k, r.mean_ndcg));
        Artifact::Model(bundle).save(&out_dir.join(format!("{name}.model")))?;
        let score_file = format!("{name}.valid.tsv");
        save_scores(&scores, &out_dir.join(&score_file))?;
        spec.inputs.push((name.clone(), PathBuf::from(score_file)));
        inputs.push((name, scores));
    }
    let steps: usize = cfg.get("run.grid").parse().map_err(|_| CliError::usage("run.grid must be an integer"))?;
    let weights = if steps > 0 {
        grid_search_weights(&inputs, &valid, spec.normalization, steps, opts)?.0
    } else {
        cfg.run_weights(inputs.len())?
    };
    for ((name, _), w) in inputs.iter().zip(&weights) {
        spec.weights.insert(name.clone(), *w);
    }
    fs::write(out_dir.join("blend.spec"), spec.render())?;
    let blended = linear_blend(&inputs, &weights, spec.normalization)?;
    save_scores(&blended, &out_dir.join("blend.valid.tsv"))?;
    let r = evaluate(&blended, &valid, opts)?;
    report.push_str(&format_report(&r, valid.n_groups()));
    fs::write(out_dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}
