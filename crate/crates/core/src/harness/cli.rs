use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use super::ablation::{
    dependency_configs, layer_configs, rows_to_tsv, run_configs, sweep_configs, term_configs, Corpora,
};
use super::config::ModelConfig;
use super::metrics::TrainFactIndex;
use super::run::{save_outcome, train, tune_threshold, Trained};
use crate::data::synth::SynthConfig;
use crate::data::{corpus_stats, generate_synthetic, parse_corpus, write_corpus, Document};
use crate::encoder::{export_bias_heatmap, heatmap_to_tsv};
use crate::rehead::{prediction_records, RelationSchema};
use crate::structure::{apply_ablation, build_structure_matrix, dependency_histogram, DependencyType};

#[derive(Debug, Parser)]
#[command(name = "ssan", version, about = "Structured self-attention for document-level relation extraction")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run on a corpus.
    Eval(EvalArgs),
    /// Pick the threshold maximizing dev F1.
    TuneThreshold(TuneArgs),
    /// Write structure matrices as byte grids.
    BuildStructure(StructureArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Exclude each dependency type in turn.
    AblateDeps(AblateArgs),
    /// Toggle bias terms of both transformation modes.
    AblateTerms(AblateArgs),
    /// Vary how many top layers receive structural bias.
    AblateLayers(LayerArgs),
    /// Mean bias per layer and dependency type.
    ExportBias(ExportArgs),
}

/// Model settings; each flag overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub heads: Option<String>,
    #[arg(long)]
    pub d_model: Option<String>,
    #[arg(long)]
    pub ffn_mult: Option<String>,
    #[arg(long)]
    pub max_len: Option<String>,
    /// none, biaffine or decomp.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma list of query, key, prior, core.
    #[arg(long)]
    pub terms: Option<String>,
    /// Comma list of dependency names.
    #[arg(long)]
    pub excluded: Option<String>,
    /// `all` or `a..b`.
    #[arg(long)]
    pub structured_layers: Option<String>,
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub min_count: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub auto_threshold: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub coref_table: Option<String>,
    #[arg(long)]
    pub dist_dim: Option<String>,
    #[arg(long)]
    pub early_stop_f1: Option<String>,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => ModelConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => ModelConfig::default(),
        };
        let pairs = [
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("d_model", &self.d_model),
            ("ffn_mult", &self.ffn_mult),
            ("max_len", &self.max_len),
            ("mode", &self.mode),
            ("terms", &self.terms),
            ("excluded", &self.excluded),
            ("structured_layers", &self.structured_layers),
            ("schema", &self.schema),
            ("min_count", &self.min_count),
            ("threshold", &self.threshold),
            ("auto_threshold", &self.auto_threshold),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("coref_table", &self.coref_table),
            ("dist_dim", &self.dist_dim),
            ("early_stop_f1", &self.early_stop_f1),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid axis `key=v1,v2`; repeatable. The best dev F1 is kept.
    #[arg(long)]
    pub sweep: Vec<String>,
    #[command(flatten)]
    pub model: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Training corpus, for Ign metrics.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Defaults to the run's threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only this document.
    #[arg(long)]
    pub doc: Option<String>,
    /// Comma list of dependency types replaced by NA.
    #[arg(long)]
    pub exclude: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// One or more corpora, pooled.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub docs: usize,
    #[arg(long, default_value_t = 40)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 40)]
    pub name_pool: usize,
    #[arg(long, default_value_t = 3)]
    pub sentences: usize,
    #[arg(long, default_value_t = 3)]
    pub filler_min: usize,
    #[arg(long, default_value_t = 5)]
    pub filler_max: usize,
    #[arg(long, default_value_t = 5)]
    pub entities: usize,
    #[arg(long, default_value_t = 1)]
    pub bridges: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Output directory for the table and per-row configs.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma list of seeds; each row is trained once per seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[command(flatten)]
    pub model: Overrides,
}

#[derive(Debug, Args)]
pub struct LayerArgs {
    #[command(flatten)]
    pub common: AblateArgs,
    /// Comma list of structured top-layer counts; default 0..=layers.
    #[arg(long)]
    pub ks: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Heatmap TSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn read_corpus(path: &Path) -> anyhow::Result<Vec<Document>> {
    parse_corpus(path, None).with_context(|| format!("reading corpus {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| anyhow::anyhow!("invalid {what} `{x}`")))
        .collect()
}

/// Parses `argv` and runs the subcommand.
pub fn run<I, T>(argv: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    dispatch(cli)
}

/// Entry point of the binary: usage errors exit 2, failures exit 1.
pub fn main() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TuneThreshold(a) => cmd_tune(a),
        Command::BuildStructure(a) => cmd_structure(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::AblateDeps(a) => {
            let base = a.model.resolve()?;
            cmd_ablate(&a, dependency_configs(&base)?)
        }
        Command::AblateTerms(a) => {
            let base = a.model.resolve()?;
            cmd_ablate(&a, term_configs(&base))
        }
        Command::AblateLayers(a) => {
            let base = a.common.model.resolve()?;
            let ks: Vec<usize> = match &a.ks {
                Some(s) => parse_list(s, "layer count")?,
                None => (0..=base.layers).collect(),
            };
            cmd_ablate(&a.common, layer_configs(&base, &ks)?)
        }
        Command::ExportBias(a) => cmd_export(a),
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let base = a.model.resolve()?;
    let train_docs = read_corpus(&a.train)?;
    let dev_docs = read_corpus(&a.dev)?;
    let cfg = if a.sweep.is_empty() {
        base
    } else {
        let grid = a
            .sweep
            .iter()
            .map(|s| {
                let (k, v) = s
                    .split_once('=')
                    .ok_or_else(|| anyhow::anyhow!("sweep axis `{s}` is not `key=v1,v2`"))?;
                Ok((k.to_string(), v.split(',').map(|x| x.trim().to_string()).collect()))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let configs = sweep_configs(&base, &grid)?;
        let rows = run_configs(
            configs,
            Corpora {
                train: &train_docs,
                dev: &dev_docs,
            },
        )?;
        fs::create_dir_all(&a.out)?;
        let relations = RelationSchema::from_docs(&train_docs)?.names().to_vec();
        fs::write(a.out.join("sweep.tsv"), rows_to_tsv(&rows, &relations))?;
        let best = rows
            .iter()
            .fold(None::<&super::ablation::AblationRow>, |b, r| match b {
                Some(b) if b.report.f1 >= r.report.f1 => Some(b),
                _ => Some(r),
            })
            .expect("sweep has rows");
        log::info!("sweep best: {}", best.label);
        best.config.clone()
    };
    let outcome = train(&cfg, &train_docs, &dev_docs)?;
    save_outcome(&outcome, &a.out)?;
    let dev = outcome.best.prepare(&dev_docs)?;
    let report = outcome
        .best
        .evaluate(&dev, &TrainFactIndex::new(&train_docs), outcome.best.threshold)?;
    fs::write(a.out.join("dev_report.tsv"), report.to_tsv())?;
    println!(
        "best epoch {} dev F1 {:.4} Ign F1 {:.4} -> {}",
        outcome.best_epoch,
        report.f1,
        report.ign_f1,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let trained = Trained::load(&a.run)?;
    let docs = read_corpus(&a.data)?;
    let index = match &a.train {
        Some(p) => TrainFactIndex::new(&read_corpus(p)?),
        None => TrainFactIndex::default(),
    };
    let threshold = a.threshold.unwrap_or(trained.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("threshold must lie in (0, 1)");
    }
    let prepared = trained.prepare(&docs)?;
    let scores = trained.score(&prepared)?;
    let report = super::run::evaluate_scores(&prepared, &scores, &trained.schema, &index, threshold);
    let out = a.out.unwrap_or_else(|| a.run.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("eval_report.tsv"), report.to_tsv())?;
    let mut w = std::io::BufWriter::new(fs::File::create(out.join("predictions.jsonl"))?);
    for (p, s) in prepared.iter().zip(&scores) {
        for rec in prediction_records(&p.doc.doc_id, s, &trained.schema, threshold) {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    println!("P {:.4} R {:.4} F1 {:.4} Ign F1 {:.4}", report.precision, report.recall, report.f1, report.ign_f1);
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> anyhow::Result<()> {
    let trained = Trained::load(&a.run)?;
    let dev = trained.prepare(&read_corpus(&a.dev)?)?;
    let (theta, f1) = tune_threshold(&trained, &dev)?;
    fs::write(a.run.join("threshold.tsv"), format!("threshold\tf1\n{theta:?}\t{f1:.6}\n"))?;
    println!("threshold {theta} dev F1 {f1:.4}");
    Ok(())
}

fn grid_file_name(i: usize, doc_id: &str) -> String {
    let clean: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{i:04}-{clean}.ssm")
}

fn cmd_structure(a: StructureArgs) -> anyhow::Result<()> {
    let docs = read_corpus(&a.data)?;
    let excluded = match &a.exclude {
        Some(s) => s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| DependencyType::parse(x).ok_or_else(|| anyhow::anyhow!("unknown dependency type `{x}`")))
            .collect::<anyhow::Result<_>>()?,
        None => Default::default(),
    };
    fs::create_dir_all(&a.out)?;
    let mut hist = String::from("doc_id\tfile");
    for d in DependencyType::ALL {
        hist.push('\t');
        hist.push_str(d.name());
    }
    hist.push('\n');
    let mut written = 0;
    for (i, d) in docs.iter().enumerate() {
        if a.doc.as_deref().is_some_and(|id| id != d.doc_id) {
            continue;
        }
        let m = apply_ablation(&build_structure_matrix(d)?, &excluded)?;
        let name = grid_file_name(i, &d.doc_id);
        let mut f = std::io::BufWriter::new(fs::File::create(a.out.join(&name))?);
        m.write_grid(&mut f)?;
        f.flush()?;
        hist.push_str(&format!("{}\t{name}", d.doc_id));
        let counts = dependency_histogram(&m);
        for d in DependencyType::ALL {
            hist.push_str(&format!("\t{}", counts[&d]));
        }
        hist.push('\n');
        written += 1;
    }
    if written == 0 {
        bail!("no matching documents");
    }
    fs::write(a.out.join("histogram.tsv"), hist)?;
    println!("wrote {written} grids to {}", a.out.display());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> anyhow::Result<()> {
    let mut docs = Vec::new();
    for p in &a.data {
        docs.extend(read_corpus(p)?);
    }
    let stats = corpus_stats(&docs);
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, stats.to_tsv())?;
    print!("{}", stats.to_tsv());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        docs: a.docs,
        vocab_size: a.vocab_size,
        name_pool: a.name_pool,
        sentences: a.sentences,
        filler_min: a.filler_min,
        filler_max: a.filler_max,
        entities_per_doc: a.entities,
        bridges_per_doc: a.bridges,
        seed: a.seed,
    };
    let corpus = generate_synthetic(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_corpus(&a.out, &corpus.docs)?;
    println!("wrote {} documents to {}", corpus.docs.len(), a.out.display());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, configs: Vec<(String, ModelConfig)>) -> anyhow::Result<()> {
    let train_docs = read_corpus(&a.train)?;
    let dev_docs = read_corpus(&a.dev)?;
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => parse_list(s, "seed")?,
        None => vec![configs.first().map_or(0, |c| c.1.seed)],
    };
    let mut all = Vec::with_capacity(configs.len() * seeds.len());
    for (label, cfg) in &configs {
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            all.push((label.clone(), c));
        }
    }
    let rows = run_configs(
        all,
        Corpora {
            train: &train_docs,
            dev: &dev_docs,
        },
    )?;
    fs::create_dir_all(&a.out)?;
    let relations = RelationSchema::from_docs(&train_docs)?.names().to_vec();
    let table = rows_to_tsv(&rows, &relations);
    fs::write(a.out.join("ablation.tsv"), &table)?;
    let cfg_dir = a.out.join("configs");
    fs::create_dir_all(&cfg_dir)?;
    for (i, r) in rows.iter().enumerate() {
        fs::write(cfg_dir.join(format!("{i:02}.txt")), format!("# {}\n{}", r.label, r.config.to_text()))?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_export(a: ExportArgs) -> anyhow::Result<()> {
    let trained = Trained::load(&a.run)?;
    let docs = trained.prepare(&read_corpus(&a.data)?)?;
    let records = trained.record_biases(&docs)?.records();
    let cells = export_bias_heatmap(&records, trained.config.layers)
        .context("the corpus exercised no structured attention")?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, heatmap_to_tsv(&cells))?;
    println!("wrote {} cells to {}", cells.len(), a.out.display());
    Ok(())
}
