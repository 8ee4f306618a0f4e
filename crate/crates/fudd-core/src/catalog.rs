//! Class sets, description sets, baseline description builders, and dataset
//! manifests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{ChatExchange, PromptMessages};
use crate::vector::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("class display name must be nonempty")]
    EmptyName,
    #[error("description text must be nonempty")]
    EmptyText,
    #[error("source {0:?} requires an attribute")]
    MissingAttribute(DescriptionSource),
    #[error("source {0:?} does not carry an attribute")]
    UnexpectedAttribute(DescriptionSource),
    #[error("template must contain exactly one {{}} placeholder: {0:?}")]
    BadTemplate(String),
    #[error("duplicate class id: {0}")]
    DuplicateClassId(String),
    #[error("unknown class id: {0}")]
    UnknownClassId(String),
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSource {
    SingleTemplate,
    TemplateSet,
    NaiveLlm,
    Differential,
    NonDifferential,
    Augmented,
}

impl DescriptionSource {
    fn requires_attribute(self) -> bool {
        matches!(self, Self::Differential | Self::NonDifferential)
    }
}

/// One natural-language class description.
///
/// The attribute field names the visual characteristic the description covers
/// and is present exactly for differential and non-differential sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub source: DescriptionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl Description {
    pub fn new(
        text: impl Into<String>,
        source: DescriptionSource,
        attribute: Option<String>,
    ) -> Result<Self, CatalogError> {
        let text = text.into();
        if text.is_empty() {
            return Err(CatalogError::EmptyText);
        }
        match (source.requires_attribute(), &attribute) {
            (true, None) => return Err(CatalogError::MissingAttribute(source)),
            (false, Some(_)) => return Err(CatalogError::UnexpectedAttribute(source)),
            _ => {}
        }
        Ok(Self { text, source, attribute })
    }
}

/// `A photo of a {class name}.` No article correction by design, the
/// template string is fixed.
pub fn single_template(display_name: &str) -> Result<Description, CatalogError> {
    if display_name.is_empty() {
        return Err(CatalogError::EmptyName);
    }
    Description::new(
        format!("A photo of a {display_name}."),
        DescriptionSource::SingleTemplate,
        None,
    )
}

/// Substitutes the class name into each format string (`{}` placeholder).
pub fn template_set(
    display_name: &str,
    templates: &[String],
) -> Result<Vec<Description>, CatalogError> {
    if display_name.is_empty() {
        return Err(CatalogError::EmptyName);
    }
    templates
        .iter()
        .map(|t| {
            if t.matches("{}").count() != 1 {
                return Err(CatalogError::BadTemplate(t.clone()));
            }
            Description::new(t.replacen("{}", display_name, 1), DescriptionSource::TemplateSet, None)
        })
        .collect()
}

/// The per-class query used by the naive LLM description baseline.
pub fn naive_llm_prompt(
    display_name: &str,
    examples: &[ChatExchange],
) -> Result<PromptMessages, CatalogError> {
    if display_name.is_empty() {
        return Err(CatalogError::EmptyName);
    }
    let query = format!("What are useful features for distinguishing a {display_name} in a photo?");
    Ok(PromptMessages::with_examples(examples, query))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: String,
    pub display_name: String,
    #[serde(default)]
    pub descriptions: Vec<Description>,
}

impl ClassEntry {
    pub fn new(class_id: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self { class_id: class_id.into(), display_name: display_name.into(), descriptions: Vec::new() }
    }
}

/// The class set C, indexed by class id. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ClassCatalog {
    entries: Vec<ClassEntry>,
    index: HashMap<String, usize>,
}

impl ClassCatalog {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.class_id.is_empty() {
                return Err(CatalogError::EmptyName);
            }
            if index.insert(e.class_id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateClassId(e.class_id.clone()));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn get(&self, class_id: &str) -> Option<&ClassEntry> {
        self.index.get(class_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies a description builder to every class, replacing prior sets.
    pub fn with_descriptions<F>(&self, mut build: F) -> Result<Self, CatalogError>
    where
        F: FnMut(&ClassEntry) -> Result<Vec<Description>, CatalogError>,
    {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                Ok(ClassEntry { descriptions: build(e)?, ..e.clone() })
            })
            .collect::<Result<Vec<_>, CatalogError>>()?;
        Self::new(entries)
    }
}

/// A dataset: class list, precomputed image embeddings, and ground truth.
///
/// Stored as a human-diffable JSON document; the embedding file path is
/// resolved relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<ClassEntry>,
    pub image_embeddings: PathBuf,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateClassId(String),
    UnknownClassInLabel { image_id: String, class_id: String },
    MissingImageEmbedding(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateClassId(id) => write!(f, "duplicate class id {id:?}"),
            Violation::UnknownClassInLabel { image_id, class_id } => {
                write!(f, "label for image {image_id:?} points to unknown class {class_id:?}")
            }
            Violation::MissingImageEmbedding(id) => {
                write!(f, "labeled image {id:?} has no row in the embedding matrix")
            }
        }
    }
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.image_embeddings.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.image_embeddings = dir.join(&manifest.image_embeddings);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn catalog(&self) -> Result<ClassCatalog, CatalogError> {
        ClassCatalog::new(self.classes.clone())
    }

    /// Checks every referential-integrity rule and returns the complete list
    /// of violations (empty means valid).
    pub fn validate(&self, images: &EmbeddingMatrix) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.class_id.as_str()) {
                violations.push(Violation::DuplicateClassId(c.class_id.clone()));
            }
        }
        for (image_id, class_id) in &self.labels {
            if !seen.contains(class_id.as_str()) {
                violations.push(Violation::UnknownClassInLabel {
                    image_id: image_id.clone(),
                    class_id: class_id.clone(),
                });
            }
            if !images.contains(image_id) {
                violations.push(Violation::MissingImageEmbedding(image_id.clone()));
            }
        }
        violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::Embedding;
    use proptest::prelude::*;

    #[test]
    fn single_template_substitution() {
        assert_eq!(single_template("sparrow").unwrap().text, "A photo of a sparrow.");
        assert_eq!(
            single_template("black-footed albatross").unwrap().text,
            "A photo of a black-footed albatross."
        );
        // no article correction, by construction of the template
        assert_eq!(single_template("x").unwrap().text, "A photo of a x.");
        assert!(single_template("").is_err());
    }

    #[test]
    fn template_set_substitution() {
        let templates = vec!["A photo of a {}.".to_string(), "An image of a {}.".to_string()];
        let out = template_set("dog", &templates).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text, "A photo of a dog.");
        assert_eq!(out[1].text, "An image of a dog.");
        assert!(template_set("dog", &[]).unwrap().is_empty());
        assert!(template_set("dog", &["no placeholder".to_string()]).is_err());
        assert!(template_set("dog", &["{} and {}".to_string()]).is_err());
    }

    #[test]
    fn naive_prompt_layout() {
        let examples = vec![
            ChatExchange { user: "ex-q".into(), assistant: "ex-a".into() },
            ChatExchange { user: "ex-q2".into(), assistant: "ex-a2".into() },
        ];
        let p = naive_llm_prompt("lemur", &examples).unwrap();
        assert_eq!(
            p.final_user_message(),
            "What are useful features for distinguishing a lemur in a photo?"
        );
        assert_eq!(p.messages().len(), 5);
    }

    #[test]
    fn description_attribute_rules() {
        assert!(Description::new("t", DescriptionSource::Differential, None).is_err());
        assert!(Description::new("t", DescriptionSource::SingleTemplate, Some("a".into())).is_err());
        assert!(Description::new("t", DescriptionSource::Differential, Some("a".into())).is_ok());
    }

    fn toy_matrix(ids: &[&str]) -> EmbeddingMatrix {
        let rows = ids.iter().map(|_| Embedding::new(vec![1.0, 0.0]).unwrap()).collect();
        EmbeddingMatrix::new(ids.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    fn toy_manifest() -> DatasetManifest {
        DatasetManifest {
            name: "toy".into(),
            classes: vec![
                ClassEntry::new("c1", "cat"),
                ClassEntry::new("c2", "dog"),
                ClassEntry::new("c3", "fox"),
            ],
            image_embeddings: "images.femb".into(),
            labels: (1..=6).map(|i| (format!("img{i}"), format!("c{}", 1 + i % 3))).collect(),
        }
    }

    #[test]
    fn well_formed_manifest_validates_clean() {
        let m = toy_manifest();
        let images = toy_matrix(&["img1", "img2", "img3", "img4", "img5", "img6"]);
        assert!(m.validate(&images).is_empty());
    }

    #[test]
    fn dangling_label_is_reported() {
        let mut m = toy_manifest();
        m.labels.insert("img1".into(), "zzz".into());
        let images = toy_matrix(&["img1", "img2", "img3", "img4", "img5", "img6"]);
        let violations = m.validate(&images);
        assert_eq!(violations.len(), 1);
        assert_eq!(
            violations[0],
            Violation::UnknownClassInLabel { image_id: "img1".into(), class_id: "zzz".into() }
        );
    }

    #[test]
    fn validation_touches_every_label() {
        // 10 classes, 100 labels, none present in the matrix: 100 violations
        let m = DatasetManifest {
            name: "big".into(),
            classes: (0..10).map(|i| ClassEntry::new(format!("c{i}"), format!("class {i}"))).collect(),
            image_embeddings: "images.femb".into(),
            labels: (0..100).map(|i| (format!("img{i:03}"), format!("c{}", i % 10))).collect(),
        };
        let images = toy_matrix(&["other"]);
        assert_eq!(m.validate(&images).len(), 100);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = toy_manifest();
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.name, m.name);
        assert_eq!(back.labels, m.labels);
        // relative embedding path is resolved against the manifest directory
        assert_eq!(back.image_embeddings, dir.path().join("images.femb"));
    }

    proptest! {
        #[test]
        fn single_template_shape(name in "[a-z][a-z -]{0,20}") {
            let d = single_template(&name).unwrap();
            prop_assert!(d.text.starts_with("A photo of a "));
            prop_assert!(d.text.ends_with('.'));
        }

        #[test]
        fn template_set_preserves_surroundings(
            name in "[a-z]{1,10}",
            prefix in "[A-Za-z ]{0,12}",
            suffix in "[A-Za-z .]{0,12}",
        ) {
            let template = format!("{prefix}{{}}{suffix}");
            let out = template_set(&name, &[template]).unwrap();
            prop_assert_eq!(&out[0].text, &format!("{prefix}{name}{suffix}"));
        }
    }
}
