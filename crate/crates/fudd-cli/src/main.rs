//! Command-line driver. Thin orchestration over the library: every
//! subcommand loads one config file, applies flag overrides, runs, and
//! exits 0 on success or a family-specific nonzero code.

mod backend;
mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fudd_core::catalog::{CatalogError, ClassEntry, DatasetManifest};
use fudd_core::classifier::{ambiguous_set, ClassEmbeddingTable, ClassifierError};
use fudd_core::embedder::{EmbedError, HashEmbedder, MatrixEmbedder, TextEmbedder};
use fudd_core::gateway::{
    estimate_cost, CacheError, CacheMode, DescriptionGateway, GatewayError, PairCache, RetryError,
};
use fudd_core::pipeline::{
    ablation_non_differential, baseline_descriptions, build_base_table, evaluate, sweep_k,
    write_plot_data, EvalContext, Method, PipelineError,
};
use fudd_core::prompt::ChatExchange;
use fudd_core::vector::{EmbeddingMatrix, VectorError};

use backend::{build_backend, AnyBackend};
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "fudd", version, about = "Differential-description zero-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// API key override (otherwise the FUDD_API_KEY environment variable).
    #[arg(long)]
    api_key: Option<String>,
    /// Ambiguous-set size override.
    #[arg(long)]
    k: Option<usize>,
    /// Classification method override.
    #[arg(long)]
    method: Option<String>,
    /// Worker thread override.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Hash-embedder seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and write the class-embedding table for a description source.
    EmbedClasses {
        #[command(flatten)]
        common: Common,
        /// Description source override (single_template, template_set, naive_llm).
        #[arg(long)]
        source: Option<String>,
        /// Output path override.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate and cache pairwise differential descriptions.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Freeze the cache afterwards (restricted mode).
        #[arg(long)]
        restricted: bool,
        /// Report what would be generated without calling the backend.
        #[arg(long)]
        dry_run: bool,
    },
    /// Classify every labeled image and write an accuracy report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Report output path override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate over several k values and emit plot data.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        /// Plot-data output path override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the differential arm against the non-differential control.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Project backend spend from query volume and token prices.
    EstimateCost {
        #[arg(long, default_value_t = 1000)]
        queries: u64,
        #[arg(long, default_value_t = 380.0)]
        avg_input_tokens: f64,
        #[arg(long, default_value_t = 199.0)]
        avg_output_tokens: f64,
        /// Price per 1k input tokens.
        #[arg(long, default_value_t = 0.001)]
        price_input: f64,
        /// Price per 1k output tokens.
        #[arg(long, default_value_t = 0.002)]
        price_output: f64,
    },
}

/// Exit codes: 2 config, 3 io/format, 4 backend, 5 validation.
#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Backend(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Validation(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Backend(m)
            | CliError::Validation(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<VectorError> for CliError {
    fn from(e: VectorError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io(io) => CliError::Io(io.to_string()),
            CatalogError::Parse(p) => CliError::Io(format!("manifest parse error: {p}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Io(io) => CliError::Io(io.to_string()),
            CacheError::CorruptLog { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::PairGeneration { .. } | GatewayError::Retry(_) => {
                CliError::Backend(e.to_string())
            }
            GatewayError::Cache(c) => c.into(),
            GatewayError::Catalog(c) => c.into(),
            GatewayError::InvalidTemperature(_)
            | GatewayError::ZeroMaxTokens
            | GatewayError::NegativeCostInput => CliError::Config(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<RetryError> for CliError {
    fn from(e: RetryError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Catalog(c) => c.into(),
            PipelineError::Classifier(c) => c.into(),
            PipelineError::Vector(v) => v.into(),
            PipelineError::Image { image_id, source } => {
                let inner: CliError = (*source).into();
                match inner {
                    CliError::Backend(m) => CliError::Backend(format!("image {image_id:?}: {m}")),
                    CliError::Io(m) => CliError::Io(format!("image {image_id:?}: {m}")),
                    CliError::Config(m) => CliError::Config(format!("image {image_id:?}: {m}")),
                    CliError::Validation(m) => {
                        CliError::Validation(format!("image {image_id:?}: {m}"))
                    }
                }
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EmbedClasses { common, source, output } => cmd_embed_classes(common, source, output),
        Command::Generate { common, restricted, dry_run } => cmd_generate(common, restricted, dry_run),
        Command::Eval { common, out } => cmd_eval(common, out),
        Command::SweepK { common, ks, out } => cmd_sweep_k(common, &ks, out),
        Command::Ablate { common } => cmd_ablate(common),
        Command::EstimateCost { queries, avg_input_tokens, avg_output_tokens, price_input, price_output } => {
            let cost = estimate_cost(queries, avg_input_tokens, avg_output_tokens, price_input, price_output)?;
            println!("estimated cost for {queries} queries: ${cost:.2}");
            Ok(())
        }
    }
}

/// Everything a run needs, loaded once.
struct Runtime {
    config: RunConfig,
    manifest: DatasetManifest,
    images: EmbeddingMatrix,
    embedder: Box<dyn TextEmbedder>,
    gateway: DescriptionGateway<AnyBackend>,
    templates: Vec<String>,
    prefixes: Vec<String>,
    naive_examples: Vec<ChatExchange>,
    method: Method,
    k: usize,
    parallelism: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn read_examples(path: &Path) -> Result<Vec<ChatExchange>, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_runtime(common: &Common) -> Result<Runtime, CliError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.embedder.seed = seed;
    }
    if let Some(k) = common.k {
        config.experiment.k = k;
    }
    if let Some(p) = common.parallelism {
        config.experiment.parallelism = p;
    }
    if let Some(m) = &common.method {
        config.experiment.method = m.clone();
    }
    let method: Method =
        config.experiment.method.parse().map_err(|e: String| CliError::Config(e))?;

    let manifest = DatasetManifest::load(&config.paths.manifest)?;
    let images = EmbeddingMatrix::read(&manifest.image_embeddings)?;
    let violations = manifest.validate(&images);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Validation(format!("manifest invalid: {}", lines.join("; "))));
    }

    let embedder: Box<dyn TextEmbedder> = match config.embedder.kind.as_str() {
        "hash" => Box::new(HashEmbedder::new(config.embedder.dim, config.embedder.seed)),
        "matrix" => {
            let path = config.embedder.path.as_ref().ok_or(ConfigError::MissingEmbedderPath)?;
            Box::new(MatrixEmbedder::new(EmbeddingMatrix::read(path)?))
        }
        other => return Err(ConfigError::UnknownEmbedder(other.to_string()).into()),
    };

    let cache = match &config.paths.cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            PairCache::open_dir(dir)?
        }
        None => PairCache::in_memory(CacheMode::Open),
    };
    let pair_examples = match &config.paths.pair_examples {
        Some(p) => read_examples(p)?,
        None => Vec::new(),
    };
    let naive_examples = match &config.paths.naive_examples {
        Some(p) => read_examples(p)?,
        None => Vec::new(),
    };
    let templates = match &config.paths.templates {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    let prefixes = match &config.paths.prefixes {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    let backend = build_backend(&config.backend, common.api_key.as_deref())?;
    let gateway = DescriptionGateway::new(
        backend,
        cache,
        config.backend.params()?,
        pair_examples,
        config.backend.retry(),
    );
    let k = config.experiment.k;
    let parallelism = config.experiment.parallelism.max(1);
    Ok(Runtime {
        config,
        manifest,
        images,
        embedder,
        gateway,
        templates,
        prefixes,
        naive_examples,
        method,
        k,
        parallelism,
    })
}

impl Runtime {
    fn ctx(&self) -> Result<EvalContext<'_, AnyBackend>, CliError> {
        Ok(EvalContext {
            gateway: &self.gateway,
            embedder: self.embedder.as_ref(),
            templates: &self.templates,
            prefixes: &self.prefixes,
            naive_examples: &self.naive_examples,
            augment: self.config.experiment.augment,
            mix_base: self.config.experiment.mix_base,
            similarity_mode: self.config.experiment.similarity().map_err(CliError::Config)?,
            parallelism: self.parallelism,
            skip_failures: self.config.experiment.skip_failures,
        })
    }
}

fn cmd_embed_classes(
    common: Common,
    source: Option<String>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut rt = load_runtime(&common)?;
    if let Some(s) = source {
        rt.config.experiment.source = s;
    }
    let method: Method =
        rt.config.experiment.source.parse().map_err(|e: String| CliError::Config(e))?;
    if !matches!(method, Method::SingleTemplate | Method::TemplateSet | Method::NaiveLlm) {
        return Err(CliError::Config(format!(
            "source must be a baseline description source, got {method}"
        )));
    }
    let out = output
        .or_else(|| rt.config.paths.class_embeddings.clone())
        .ok_or_else(|| CliError::Config("no output path: set paths.class_embeddings or pass --output".into()))?;

    let ctx = rt.ctx()?;
    let classes = rt
        .manifest
        .catalog()?
        .entries()
        .iter()
        .map(|e| {
            Ok(ClassEntry {
                descriptions: baseline_descriptions(e, method, &ctx)?,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let table = ClassEmbeddingTable::build(&classes, rt.embedder.as_ref())?;
    table.to_matrix().write(&out)?;
    println!(
        "wrote {} class embeddings (dim {}, source {}) to {}",
        table.len(),
        table.dim(),
        rt.config.experiment.source,
        out.display()
    );
    Ok(())
}

fn cmd_generate(common: Common, restricted: bool, dry_run: bool) -> Result<(), CliError> {
    let rt = load_runtime(&common)?;
    let catalog = rt.manifest.catalog()?;
    if rt.k > catalog.len() {
        return Err(PipelineError::KTooLarge { k: rt.k, classes: catalog.len() }.into());
    }
    let table = build_base_table(&catalog, rt.embedder.as_ref())?;

    // every unordered pair inside every labeled image's ambiguous set
    let mut wanted: BTreeSet<(String, String)> = BTreeSet::new();
    for (image_id, label) in &rt.manifest.labels {
        let _ = label;
        let image = rt
            .images
            .get(image_id)
            .ok_or_else(|| PipelineError::MissingImage(image_id.clone()))?;
        let set = ambiguous_set(image_id, image, &table, rt.k)?;
        for (i, a) in set.members.iter().enumerate() {
            for b in &set.members[i + 1..] {
                let (x, y) = if a < b { (a, b) } else { (b, a) };
                wanted.insert((x.clone(), y.clone()));
            }
        }
    }
    let cached = {
        let cache = rt.gateway.cache();
        wanted
            .iter()
            .filter(|(a, b)| {
                PairCache::canonical_key(a, b).is_ok_and(|k| cache.contains(&k))
            })
            .count()
    };
    let missing = wanted.len() - cached;
    if dry_run {
        println!(
            "dry run: {} unique pairs, {} cached, {} prompts would be issued, 0 backend calls made",
            wanted.len(),
            cached,
            missing
        );
        return Ok(());
    }
    let mut failures = 0usize;
    for (a, b) in &wanted {
        let entry_a = catalog.get(a).expect("pair ids come from the catalog");
        let entry_b = catalog.get(b).expect("pair ids come from the catalog");
        match rt.gateway.get_or_generate_pair(entry_a, entry_b) {
            Ok(_) => {}
            Err(e @ GatewayError::PairGeneration { .. }) => {
                eprintln!("warning: {e}");
                failures += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if restricted {
        rt.gateway.cache().freeze()?;
    }
    println!(
        "generated {} pairs ({} already cached, {} failed), {} backend calls{}",
        wanted.len() - cached - failures,
        cached,
        failures,
        rt.gateway.backend_calls(),
        if restricted { ", cache frozen" } else { "" }
    );
    Ok(())
}

fn cmd_eval(common: Common, out: Option<PathBuf>) -> Result<(), CliError> {
    let rt = load_runtime(&common)?;
    let ctx = rt.ctx()?;
    let report = evaluate(&rt.manifest, &rt.images, rt.method, rt.k, &ctx)?;
    print!("{}", report.format_table());
    if let Some(path) = out.or_else(|| rt.config.paths.report.clone()) {
        report.write_json(&path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_sweep_k(common: Common, ks: &[usize], out: Option<PathBuf>) -> Result<(), CliError> {
    let rt = load_runtime(&common)?;
    let ctx = rt.ctx()?;
    let reports = sweep_k(&rt.manifest, &rt.images, ks, &ctx)?;
    for r in &reports {
        println!("k={}  accuracy={:.6}", r.k, r.accuracy);
    }
    if let Some(path) = out.or_else(|| rt.config.paths.plot_data.clone()) {
        let mut file = std::fs::File::create(&path)?;
        write_plot_data(&reports, &mut file)?;
        println!("plot data written to {}", path.display());
    }
    Ok(())
}

fn cmd_ablate(common: Common) -> Result<(), CliError> {
    let rt = load_runtime(&common)?;
    let ctx = rt.ctx()?;
    let (diff, non_diff) = ablation_non_differential(&rt.manifest, &rt.images, rt.k, &ctx)?;
    println!("differential arm:");
    print!("{}", diff.format_table());
    println!("non-differential control:");
    print!("{}", non_diff.format_table());
    println!(
        "delta: {:+.6} (differential minus non-differential)",
        diff.accuracy - non_diff.accuracy
    );
    if let Some(path) = &rt.config.paths.report {
        let stem = path.with_extension("");
        let diff_path = PathBuf::from(format!("{}.diff.json", stem.display()));
        let non_diff_path = PathBuf::from(format!("{}.non_diff.json", stem.display()));
        diff.write_json(&diff_path)?;
        non_diff.write_json(&non_diff_path)?;
        println!("reports written to {} and {}", diff_path.display(), non_diff_path.display());
    }
    Ok(())
}
