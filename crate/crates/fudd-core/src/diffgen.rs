//! Pairwise prompt construction, response parsing, differential and
//! non-differential set assembly, and prefix augmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, Description, DescriptionSource};
use crate::classifier::AmbiguousSet;
use crate::embedder::{EmbedError, TextEmbedder};
use crate::prompt::{ChatExchange, PromptMessages};
use crate::vector::{mean_embedding, Embedding, VectorError};

#[derive(Debug, Error)]
pub enum DiffgenError {
    #[error("class names must be nonempty and distinct, got {0:?} twice")]
    IdenticalNames(String),
    #[error("class name must be nonempty")]
    EmptyName,
    #[error("pair classes must be distinct, got {0:?} twice")]
    IdenticalClasses(String),
    #[error("class {0:?} is not a member of the ambiguous set")]
    NotAMember(String),
    #[error("description {0:?} lacks an attribute")]
    MissingAttribute(String),
    #[error("no recognized prefix at the start of {0:?}")]
    UnrecognizedPrefix(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// One parsed (attribute, caption for object 1, caption for object 2) block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferentialRecord {
    pub attribute: String,
    pub caption_1: String,
    pub caption_2: String,
}

impl DifferentialRecord {
    fn swapped(&self) -> Self {
        Self {
            attribute: self.attribute.clone(),
            caption_1: self.caption_2.clone(),
            caption_2: self.caption_1.clone(),
        }
    }
}

/// The pairwise description sets for one unordered class pair.
///
/// Stored in canonical orientation: `class_1` is the lexicographically
/// smaller id and `caption_1` of every record belongs to it. Fallback pairs
/// carry one single-template description per class instead of records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseDescriptions {
    class_1: String,
    class_2: String,
    kind: PairKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Generated(Vec<DifferentialRecord>),
    Fallback { description_1: Description, description_2: Description },
}

impl PairwiseDescriptions {
    /// `object1_is_class_1` says whether the records' caption 1 already
    /// belongs to the lexicographically smaller class; if not they are
    /// swapped into canonical orientation.
    pub fn generated(
        c1: &str,
        c2: &str,
        records: Vec<DifferentialRecord>,
        object1_is_first_arg: bool,
    ) -> Result<Self, DiffgenError> {
        if c1 == c2 {
            return Err(DiffgenError::IdenticalClasses(c1.to_string()));
        }
        let canonical = c1 <= c2;
        let (class_1, class_2) = if canonical { (c1, c2) } else { (c2, c1) };
        let records = if canonical == object1_is_first_arg {
            records
        } else {
            records.iter().map(DifferentialRecord::swapped).collect()
        };
        Ok(Self {
            class_1: class_1.to_string(),
            class_2: class_2.to_string(),
            kind: PairKind::Generated(records),
        })
    }

    pub fn fallback(
        c1: &str,
        d1: Description,
        c2: &str,
        d2: Description,
    ) -> Result<Self, DiffgenError> {
        if c1 == c2 {
            return Err(DiffgenError::IdenticalClasses(c1.to_string()));
        }
        let ((class_1, description_1), (class_2, description_2)) =
            if c1 <= c2 { ((c1, d1), (c2, d2)) } else { ((c2, d2), (c1, d1)) };
        Ok(Self {
            class_1: class_1.to_string(),
            class_2: class_2.to_string(),
            kind: PairKind::Fallback { description_1, description_2 },
        })
    }

    pub fn classes(&self) -> (&str, &str) {
        (&self.class_1, &self.class_2)
    }

    pub fn records(&self) -> Option<&[DifferentialRecord]> {
        match &self.kind {
            PairKind::Generated(records) => Some(records),
            PairKind::Fallback { .. } => None,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.kind, PairKind::Fallback { .. })
    }

    /// The description set distinguishing `class_id` from the other class.
    pub fn descriptions_for(&self, class_id: &str) -> Option<Vec<Description>> {
        let first = if class_id == self.class_1 {
            true
        } else if class_id == self.class_2 {
            false
        } else {
            return None;
        };
        Some(match &self.kind {
            PairKind::Generated(records) => records
                .iter()
                .map(|r| {
                    let text = if first { &r.caption_1 } else { &r.caption_2 };
                    Description::new(
                        text.clone(),
                        DescriptionSource::Differential,
                        Some(r.attribute.clone()),
                    )
                    .expect("parsed record fields are nonempty")
                })
                .collect(),
            PairKind::Fallback { description_1, description_2 } => {
                vec![if first { description_1.clone() } else { description_2.clone() }]
            }
        })
    }
}

const PAIR_PROMPT_HEADER: &str = "For the following objects, generate captions that represent the distinguishing visual differences between the photos of the two objects. Generate as many captions as you can.";

/// The pairwise generation prompt, preceded by the configured example
/// exchanges. Argument order matters: it fixes which class is Object 1.
pub fn build_pair_prompt(
    name_1: &str,
    name_2: &str,
    examples: &[ChatExchange],
) -> Result<PromptMessages, DiffgenError> {
    if name_1.is_empty() || name_2.is_empty() {
        return Err(DiffgenError::EmptyName);
    }
    if name_1 == name_2 {
        return Err(DiffgenError::IdenticalNames(name_1.to_string()));
    }
    let query = format!("{PAIR_PROMPT_HEADER}\nObject 1: {name_1}\nObject 2: {name_2}");
    Ok(PromptMessages::with_examples(examples, query))
}

/// Renders records in the block grammar, bit-exact:
/// `Visual characteristic: <attr>\nCaption 1: <text>\nCaption 2: <text>\n\n`
/// repeated.
pub fn render_records(records: &[DifferentialRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str("Visual characteristic: ");
        out.push_str(&r.attribute);
        out.push_str("\nCaption 1: ");
        out.push_str(&r.caption_1);
        out.push_str("\nCaption 2: ");
        out.push_str(&r.caption_2);
        out.push_str("\n\n");
    }
    out
}

/// Tolerant scan for `Visual characteristic` / `Caption 1` / `Caption 2`
/// blocks. Keys are case-insensitive; blank or unrelated lines between blocks
/// are ignored. Incomplete blocks are skipped and counted, never fatal.
pub fn parse_differential_response(text: &str) -> (Vec<DifferentialRecord>, usize) {
    let mut records = Vec::new();
    let mut skipped = 0usize;
    let mut attribute: Option<String> = None;
    let mut caption_1: Option<String> = None;
    for line in text.lines() {
        if let Some(value) = key_value(line, "visual characteristic:") {
            if attribute.is_some() {
                skipped += 1;
            }
            attribute = (!value.is_empty()).then(|| value.to_string());
            if attribute.is_none() {
                skipped += 1;
            }
            caption_1 = None;
        } else if let Some(value) = key_value(line, "caption 1:") {
            if attribute.is_some() && !value.is_empty() {
                caption_1 = Some(value.to_string());
            }
        } else if let Some(value) = key_value(line, "caption 2:") {
            if let (Some(attr), Some(c1)) = (attribute.take(), caption_1.take()) {
                if value.is_empty() {
                    skipped += 1;
                } else {
                    records.push(DifferentialRecord {
                        attribute: attr,
                        caption_1: c1,
                        caption_2: value.to_string(),
                    });
                }
            }
        }
    }
    if attribute.is_some() {
        skipped += 1;
    }
    (records, skipped)
}

fn key_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = line.trim_start();
    if line.len() >= key.len() && line[..key.len()].eq_ignore_ascii_case(key) {
        Some(line[key.len()..].trim())
    } else {
        None
    }
}

/// Splits an ordered pair's records into the two per-class description lists:
/// all caption 1 texts for the class given as Object 1, all caption 2 texts
/// for the other.
pub fn pairwise_sets(
    records: &[DifferentialRecord],
) -> Result<(Vec<Description>, Vec<Description>), DiffgenError> {
    let mut first = Vec::with_capacity(records.len());
    let mut second = Vec::with_capacity(records.len());
    for r in records {
        first.push(Description::new(
            r.caption_1.clone(),
            DescriptionSource::Differential,
            Some(r.attribute.clone()),
        )?);
        second.push(Description::new(
            r.caption_2.clone(),
            DescriptionSource::Differential,
            Some(r.attribute.clone()),
        )?);
    }
    Ok((first, second))
}

/// D′_c: the union of a class's pairwise description sets against every other
/// member of the ambiguous set. Deduplicated by text and sorted by text so
/// the result is independent of member iteration order.
pub fn assemble_differential_set<E>(
    class_id: &str,
    ambiguous: &AmbiguousSet,
    mut resolve_pair: impl FnMut(&str, &str) -> Result<PairwiseDescriptions, E>,
) -> Result<Vec<Description>, E>
where
    E: From<DiffgenError>,
{
    if !ambiguous.members.iter().any(|m| m == class_id) {
        return Err(DiffgenError::NotAMember(class_id.to_string()).into());
    }
    let mut out: Vec<Description> = Vec::new();
    for other in ambiguous.members.iter().filter(|m| *m != class_id) {
        let pair = resolve_pair(class_id, other)?;
        for d in pair.descriptions_for(class_id).unwrap_or_default() {
            if !out.iter().any(|existing| existing.text == d.text) {
                out.push(d);
            }
        }
    }
    out.sort_by(|a, b| a.text.cmp(&b.text));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Attributes are similar when their whitespace-split word sets intersect.
    Strict,
    /// Attributes are similar only when the full strings match, no splitting.
    Relaxed,
}

/// Case-insensitive attribute similarity used to pick non-differential
/// descriptions.
pub fn attribute_similar(a1: &str, a2: &str, mode: SimilarityMode) -> bool {
    match mode {
        SimilarityMode::Strict => {
            let words1: Vec<String> =
                a1.split_whitespace().map(|w| w.to_lowercase()).collect();
            a2.split_whitespace().any(|w| words1.contains(&w.to_lowercase()))
        }
        SimilarityMode::Relaxed => a1.trim().eq_ignore_ascii_case(a2.trim()),
    }
}

/// Keeps only the candidates whose attribute is not similar to any attribute
/// used by the differential set; survivors are relabeled non-differential.
pub fn non_differential_set(
    all_descriptions: &[Description],
    differential: &[Description],
    mode: SimilarityMode,
) -> Result<Vec<Description>, DiffgenError> {
    let diff_attrs: Vec<&str> = differential
        .iter()
        .map(|d| {
            d.attribute.as_deref().ok_or_else(|| DiffgenError::MissingAttribute(d.text.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for d in all_descriptions {
        let attr = d.attribute.as_deref().ok_or_else(|| DiffgenError::MissingAttribute(d.text.clone()))?;
        if !diff_attrs.iter().any(|da| attribute_similar(attr, da, mode)) {
            out.push(Description::new(
                d.text.clone(),
                DescriptionSource::NonDifferential,
                Some(attr.to_string()),
            )?);
        }
    }
    Ok(out)
}

/// Expands one description into a variant per prefix by replacing the
/// recognized leading prefix. The matched prefix's own variant reproduces the
/// input text exactly.
pub fn augment_descriptions(
    d: &Description,
    prefixes: &[String],
) -> Result<Vec<Description>, DiffgenError> {
    // longest case-insensitive prefix wins
    let matched = prefixes
        .iter()
        .filter(|p| {
            d.text.len() >= p.len() && d.text[..p.len()].eq_ignore_ascii_case(p)
        })
        .max_by_key(|p| p.len())
        .ok_or_else(|| DiffgenError::UnrecognizedPrefix(d.text.clone()))?;
    let suffix = &d.text[matched.len()..];
    prefixes
        .iter()
        .map(|p| {
            let text = if p.eq_ignore_ascii_case(matched) {
                d.text.clone()
            } else {
                format!("{p}{suffix}")
            };
            Ok(Description::new(text, DescriptionSource::Augmented, None)?)
        })
        .collect()
}

/// Mean embedding over the augmented variants of one description.
pub fn augmented_embedding(
    d: &Description,
    prefixes: &[String],
    embedder: &dyn TextEmbedder,
) -> Result<Embedding, DiffgenError> {
    let variants = augment_descriptions(d, prefixes)?;
    let embeddings = variants
        .iter()
        .map(|v| embedder.embed(&v.text))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_embedding(&embeddings)?)
}
