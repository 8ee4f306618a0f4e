//! End-to-end classification, baseline evaluation, ablations, and the k
//! sweep.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    naive_llm_prompt, single_template, template_set, CatalogError, ClassCatalog, ClassEntry,
    DatasetManifest, Description, DescriptionSource,
};
use crate::classifier::{
    ambiguous_set, predict, AmbiguousSet, ClassEmbeddingTable, ClassifierError,
};
use crate::diffgen::{
    assemble_differential_set, augmented_embedding, non_differential_set, DiffgenError,
    SimilarityMode,
};
use crate::embedder::{EmbedError, TextEmbedder};
use crate::gateway::{ChatBackend, DescriptionGateway, GatewayError};
use crate::prompt::ChatExchange;
use crate::vector::{mean_embedding, Embedding, EmbeddingMatrix, VectorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image {image_id:?}: {source}")]
    Image {
        image_id: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("no embedding row for labeled image {0:?}")]
    MissingImage(String),
    #[error("k={k} exceeds the {classes} catalog classes")]
    KTooLarge { k: usize, classes: usize },
    #[error("k list must be nonempty")]
    EmptyKs,
    #[error("class {class_id:?} has an empty non-differential pool")]
    EmptyNonDifferentialPool { class_id: String },
    #[error("worker thread panicked")]
    WorkerPanic,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Diffgen(#[from] DiffgenError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SingleTemplate,
    TemplateSet,
    NaiveLlm,
    Fudd,
    FuddNonDifferential,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_template" => Ok(Self::SingleTemplate),
            "template_set" => Ok(Self::TemplateSet),
            "naive_llm" => Ok(Self::NaiveLlm),
            "fudd" => Ok(Self::Fudd),
            "fudd_non_differential" => Ok(Self::FuddNonDifferential),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::SingleTemplate => "single_template",
            Self::TemplateSet => "template_set",
            Self::NaiveLlm => "naive_llm",
            Self::Fudd => "fudd",
            Self::FuddNonDifferential => "fudd_non_differential",
        };
        f.write_str(s)
    }
}

/// Per-image record of both classification stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub image_id: String,
    pub first_pass_scores: BTreeMap<String, f64>,
    pub ambiguous_members: Vec<String>,
    pub k: usize,
    /// Present iff a follow-up classification ran; keys are exactly the
    /// ambiguous members.
    pub followup_scores: Option<BTreeMap<String, f64>>,
    pub final_label: String,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: Method,
    pub k: usize,
    pub accuracy: f64,
    pub n_images: usize,
    pub correct: usize,
    pub per_class: BTreeMap<String, ClassStats>,
    pub backend_calls: u64,
    pub skipped_parse_blocks: u64,
    pub skipped_images: usize,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)
    }

    /// Aligned human-readable summary.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset: {}  method: {}  k: {}\n",
            self.dataset, self.method, self.k
        ));
        out.push_str(&format!(
            "accuracy: {:.4} ({}/{} images, {} skipped)\n",
            self.accuracy, self.correct, self.n_images, self.skipped_images
        ));
        out.push_str(&format!(
            "backend calls: {}  skipped parse blocks: {}\n",
            self.backend_calls, self.skipped_parse_blocks
        ));
        let width = self.per_class.keys().map(String::len).max().unwrap_or(5).max(5);
        out.push_str(&format!("{:width$}  correct  total\n", "class"));
        for (class_id, stats) in &self.per_class {
            out.push_str(&format!("{class_id:width$}  {:7}  {:5}\n", stats.correct, stats.total));
        }
        out
    }
}

/// Shared dependencies and settings for an evaluation run.
pub struct EvalContext<'a, B: ChatBackend> {
    pub gateway: &'a DescriptionGateway<B>,
    pub embedder: &'a dyn TextEmbedder,
    pub templates: &'a [String],
    pub prefixes: &'a [String],
    pub naive_examples: &'a [ChatExchange],
    pub augment: bool,
    /// Mix base descriptions into the follow-up sets (off by default; the
    /// follow-up normally uses the differential descriptions alone).
    pub mix_base: bool,
    pub similarity_mode: SimilarityMode,
    pub parallelism: usize,
    /// Skip failing images and count them instead of aborting.
    pub skip_failures: bool,
}

/// Class embeddings from the single-template base descriptions.
pub fn build_base_table(
    catalog: &ClassCatalog,
    embedder: &dyn TextEmbedder,
) -> Result<ClassEmbeddingTable, PipelineError> {
    let classes = catalog
        .entries()
        .iter()
        .map(|e| {
            Ok(ClassEntry {
                descriptions: vec![single_template(&e.display_name)?],
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;
    Ok(ClassEmbeddingTable::build(&classes, embedder)?)
}

fn embed_description_set(
    class_id: &str,
    descriptions: &[Description],
    embedder: &dyn TextEmbedder,
    augment: bool,
    prefixes: &[String],
) -> Result<Embedding, PipelineError> {
    let mut sorted: Vec<&Description> = descriptions.iter().collect();
    sorted.sort_by(|a, b| a.text.cmp(&b.text));
    let embeddings = sorted
        .iter()
        .map(|d| {
            if augment {
                Ok(augmented_embedding(d, prefixes, embedder)?)
            } else {
                embedder.embed(&d.text).map_err(PipelineError::from)
            }
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    mean_embedding(&embeddings).map_err(|e| PipelineError::Image {
        image_id: class_id.to_string(),
        source: Box::new(e.into()),
    })
}

/// Two-stage classification for one image: first pass over the base table,
/// then a follow-up over the ambiguous classes with their differential
/// description sets.
pub fn fudd_classify<B: ChatBackend>(
    image_id: &str,
    image: &Embedding,
    catalog: &ClassCatalog,
    base_table: &ClassEmbeddingTable,
    k: usize,
    ctx: &EvalContext<'_, B>,
) -> Result<PredictionTrace, PipelineError> {
    let annotate = |source: PipelineError| PipelineError::Image {
        image_id: image_id.to_string(),
        source: Box::new(source),
    };
    let (first_label, first_pass_scores) = predict(image, base_table).map_err(|e| annotate(e.into()))?;
    let ambiguous = ambiguous_set(image_id, image, base_table, k).map_err(|e| annotate(e.into()))?;
    if ambiguous.members.len() < 2 {
        return Ok(PredictionTrace {
            image_id: image_id.to_string(),
            first_pass_scores,
            ambiguous_members: ambiguous.members,
            k,
            followup_scores: None,
            final_label: first_label,
            method: Method::Fudd,
        });
    }
    let mut entries = BTreeMap::new();
    for member in &ambiguous.members {
        let descriptions = member_differential_set(member, &ambiguous, catalog, ctx)?;
        entries.insert(
            member.clone(),
            embed_description_set(member, &descriptions, ctx.embedder, ctx.augment, ctx.prefixes)?,
        );
    }
    let followup_table = ClassEmbeddingTable::new(entries, DescriptionSource::Differential)
        .map_err(|e| annotate(e.into()))?;
    let (final_label, followup_scores) =
        predict(image, &followup_table).map_err(|e| annotate(e.into()))?;
    Ok(PredictionTrace {
        image_id: image_id.to_string(),
        first_pass_scores,
        ambiguous_members: ambiguous.members,
        k,
        followup_scores: Some(followup_scores),
        final_label,
        method: Method::Fudd,
    })
}

/// D′ for one ambiguous member, with the single-template stand-in when every
/// pair came back empty, and optional base mixing.
fn member_differential_set<B: ChatBackend>(
    member: &str,
    ambiguous: &AmbiguousSet,
    catalog: &ClassCatalog,
    ctx: &EvalContext<'_, B>,
) -> Result<Vec<Description>, PipelineError> {
    let entry = catalog
        .get(member)
        .ok_or_else(|| CatalogError::UnknownClassId(member.to_string()))?;
    let mut descriptions =
        assemble_differential_set::<PipelineError>(member, ambiguous, |a, b| {
            let (ea, eb) = (
                catalog.get(a).ok_or_else(|| CatalogError::UnknownClassId(a.to_string()))?,
                catalog.get(b).ok_or_else(|| CatalogError::UnknownClassId(b.to_string()))?,
            );
            Ok(ctx.gateway.get_or_generate_pair(ea, eb)?)
        })?;
    if descriptions.is_empty() {
        descriptions.push(single_template(&entry.display_name)?);
    }
    if ctx.mix_base {
        let base = single_template(&entry.display_name)?;
        if !descriptions.iter().any(|d| d.text == base.text) {
            descriptions.push(base);
        }
    }
    Ok(descriptions)
}

/// Description set for one class under a baseline method. Only the three
/// baseline methods are valid here.
pub fn baseline_descriptions<B: ChatBackend>(
    entry: &ClassEntry,
    method: Method,
    ctx: &EvalContext<'_, B>,
) -> Result<Vec<Description>, PipelineError> {
    match method {
        Method::SingleTemplate => Ok(vec![single_template(&entry.display_name)?]),
        Method::TemplateSet => Ok(template_set(&entry.display_name, ctx.templates)?),
        Method::NaiveLlm => {
            let prompt = naive_llm_prompt(&entry.display_name, ctx.naive_examples)?;
            let outcome = ctx.gateway.complete_raw(&prompt)?;
            let mut out = Vec::new();
            for line in outcome.text.lines() {
                let text = line.trim().trim_start_matches(['-', '*', '\u{2022}']).trim();
                if !text.is_empty() {
                    out.push(Description::new(text, DescriptionSource::NaiveLlm, None)?);
                }
            }
            if out.is_empty() {
                out.push(Description::new(
                    single_template(&entry.display_name)?.text,
                    DescriptionSource::NaiveLlm,
                    None,
                )?);
            }
            Ok(out)
        }
        Method::Fudd | Method::FuddNonDifferential => unreachable!("not a baseline"),
    }
}

/// The k=|C| pool of attribute-bearing differential descriptions per class.
fn full_description_pools<B: ChatBackend>(
    catalog: &ClassCatalog,
    ctx: &EvalContext<'_, B>,
) -> Result<BTreeMap<String, Vec<Description>>, PipelineError> {
    let mut pools = BTreeMap::new();
    for entry in catalog.entries() {
        let mut pool: Vec<Description> = Vec::new();
        for other in catalog.entries() {
            if other.class_id == entry.class_id {
                continue;
            }
            let pair = ctx.gateway.get_or_generate_pair(entry, other)?;
            if pair.is_fallback() {
                // fallback descriptions carry no attribute information
                continue;
            }
            for d in pair.descriptions_for(&entry.class_id).unwrap_or_default() {
                if !pool.iter().any(|p| p.text == d.text) {
                    pool.push(d);
                }
            }
        }
        pool.sort_by(|a, b| a.text.cmp(&b.text));
        pools.insert(entry.class_id.clone(), pool);
    }
    Ok(pools)
}

fn non_differential_classify<B: ChatBackend>(
    image_id: &str,
    image: &Embedding,
    catalog: &ClassCatalog,
    base_table: &ClassEmbeddingTable,
    pools: &BTreeMap<String, Vec<Description>>,
    k: usize,
    ctx: &EvalContext<'_, B>,
) -> Result<PredictionTrace, PipelineError> {
    let (first_label, first_pass_scores) = predict(image, base_table)?;
    let ambiguous = ambiguous_set(image_id, image, base_table, k)?;
    if ambiguous.members.len() < 2 {
        return Ok(PredictionTrace {
            image_id: image_id.to_string(),
            first_pass_scores,
            ambiguous_members: ambiguous.members,
            k,
            followup_scores: None,
            final_label: first_label,
            method: Method::FuddNonDifferential,
        });
    }
    let mut entries = BTreeMap::new();
    for member in &ambiguous.members {
        let differential: Vec<Description> =
            member_differential_set(member, &ambiguous, catalog, ctx)?
                .into_iter()
                .filter(|d| d.attribute.is_some())
                .collect();
        let pool = pools.get(member).map(Vec::as_slice).unwrap_or_default();
        let non_diff = non_differential_set(pool, &differential, ctx.similarity_mode)?;
        if non_diff.is_empty() {
            return Err(PipelineError::EmptyNonDifferentialPool { class_id: member.clone() });
        }
        entries.insert(
            member.clone(),
            embed_description_set(member, &non_diff, ctx.embedder, ctx.augment, ctx.prefixes)?,
        );
    }
    let followup_table = ClassEmbeddingTable::new(entries, DescriptionSource::NonDifferential)?;
    let (final_label, followup_scores) = predict(image, &followup_table)?;
    Ok(PredictionTrace {
        image_id: image_id.to_string(),
        first_pass_scores,
        ambiguous_members: ambiguous.members,
        k,
        followup_scores: Some(followup_scores),
        final_label,
        method: Method::FuddNonDifferential,
    })
}

pub fn evaluate<B: ChatBackend>(
    manifest: &DatasetManifest,
    images: &EmbeddingMatrix,
    method: Method,
    k: usize,
    ctx: &EvalContext<'_, B>,
) -> Result<EvalReport, PipelineError> {
    evaluate_with_traces(manifest, images, method, k, ctx).map(|(report, _)| report)
}

/// Classifies every labeled image and aggregates exact accuracy statistics.
/// Deterministic given a deterministic backend and embedder, at any
/// parallelism.
pub fn evaluate_with_traces<B: ChatBackend>(
    manifest: &DatasetManifest,
    images: &EmbeddingMatrix,
    method: Method,
    k: usize,
    ctx: &EvalContext<'_, B>,
) -> Result<(EvalReport, Vec<PredictionTrace>), PipelineError> {
    let catalog = manifest.catalog()?;
    if k > catalog.len() {
        return Err(PipelineError::KTooLarge { k, classes: catalog.len() });
    }
    let calls_before = ctx.gateway.backend_calls();

    let base_table = match method {
        Method::Fudd | Method::FuddNonDifferential => build_base_table(&catalog, ctx.embedder)?,
        _ => {
            let classes = catalog
                .entries()
                .iter()
                .map(|e| {
                    Ok(ClassEntry { descriptions: baseline_descriptions(e, method, ctx)?, ..e.clone() })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            ClassEmbeddingTable::build(&classes, ctx.embedder)?
        }
    };
    let pools = match method {
        Method::FuddNonDifferential => Some(full_description_pools(&catalog, ctx)?),
        _ => None,
    };

    let items: Vec<(&String, &String)> = manifest.labels.iter().collect();
    let classify = |&(image_id, _label): &(&String, &String)| -> Result<PredictionTrace, PipelineError> {
        let image = images
            .get(image_id)
            .ok_or_else(|| PipelineError::MissingImage(image_id.clone()))?;
        match method {
            Method::Fudd => fudd_classify(image_id, image, &catalog, &base_table, k, ctx),
            Method::FuddNonDifferential => non_differential_classify(
                image_id,
                image,
                &catalog,
                &base_table,
                pools.as_ref().expect("pools built for this method"),
                k,
                ctx,
            ),
            _ => {
                let (final_label, first_pass_scores) = predict(image, &base_table)?;
                Ok(PredictionTrace {
                    image_id: image_id.clone(),
                    first_pass_scores,
                    ambiguous_members: vec![final_label.clone()],
                    k: 1,
                    followup_scores: None,
                    final_label,
                    method,
                })
            }
        }
    };

    let workers = ctx.parallelism.max(1).min(items.len().max(1));
    let results: Vec<Result<PredictionTrace, PipelineError>> = if workers <= 1 {
        items.iter().map(classify).collect()
    } else {
        let chunk_size = items.len().div_ceil(workers);
        let chunks: Vec<&[(&String, &String)]> = items.chunks(chunk_size).collect();
        let classify = &classify;
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| scope.spawn(move || chunk.iter().map(classify).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| PipelineError::WorkerPanic))
                .collect::<Result<Vec<_>, _>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };

    let mut traces = Vec::with_capacity(results.len());
    let mut skipped_images = 0usize;
    let mut correct = 0usize;
    let mut per_class: BTreeMap<String, ClassStats> = BTreeMap::new();
    for (result, (image_id, label)) in results.into_iter().zip(&items) {
        match result {
            Ok(trace) => {
                let stats = per_class.entry((*label).clone()).or_default();
                stats.total += 1;
                if &trace.final_label == *label {
                    stats.correct += 1;
                    correct += 1;
                }
                traces.push(trace);
            }
            Err(e) if ctx.skip_failures => {
                let _ = (image_id, e);
                skipped_images += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let n_images = traces.len();
    let report = EvalReport {
        dataset: manifest.name.clone(),
        method,
        k,
        accuracy: if n_images == 0 { 0.0 } else { correct as f64 / n_images as f64 },
        n_images,
        correct,
        per_class,
        backend_calls: ctx.gateway.backend_calls() - calls_before,
        skipped_parse_blocks: ctx.gateway.skipped_blocks(),
        skipped_images,
    };
    Ok((report, traces))
}

/// One evaluation per k, sharing the gateway cache across runs.
pub fn sweep_k<B: ChatBackend>(
    manifest: &DatasetManifest,
    images: &EmbeddingMatrix,
    ks: &[usize],
    ctx: &EvalContext<'_, B>,
) -> Result<Vec<EvalReport>, PipelineError> {
    if ks.is_empty() {
        return Err(PipelineError::EmptyKs);
    }
    ks.iter()
        .map(|&k| evaluate(manifest, images, Method::Fudd, k, ctx))
        .collect()
}

/// Tab-separated (k, accuracy) rows for plotting.
pub fn write_plot_data(reports: &[EvalReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "k\taccuracy")?;
    for r in reports {
        writeln!(w, "{}\t{:.6}", r.k, r.accuracy)?;
    }
    Ok(())
}

/// Runs the differential arm and the non-differential control with the same
/// settings and returns both reports.
pub fn ablation_non_differential<B: ChatBackend>(
    manifest: &DatasetManifest,
    images: &EmbeddingMatrix,
    k: usize,
    ctx: &EvalContext<'_, B>,
) -> Result<(EvalReport, EvalReport), PipelineError> {
    let diff = evaluate(manifest, images, Method::Fudd, k, ctx)?;
    let non_diff = evaluate(manifest, images, Method::FuddNonDifferential, k, ctx)?;
    Ok((diff, non_diff))
}
