//! Class-embedding computation, nearest-class prediction, and ambiguous-set
//! detection.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::catalog::{ClassEntry, DescriptionSource};
use crate::embedder::{EmbedError, TextEmbedder};
use crate::vector::{cosine, mean_embedding, Embedding, EmbeddingMatrix, VectorError};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("class {class_id:?} has no descriptions")]
    NoDescriptions { class_id: String },
    #[error("embedding description {text:?} of class {class_id:?} failed: {source}")]
    Embed {
        class_id: String,
        text: String,
        #[source]
        source: EmbedError,
    },
    #[error("table is empty")]
    EmptyTable,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// One class embedding per catalog class, all sharing dim.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    entries: BTreeMap<String, Embedding>,
    provenance: DescriptionSource,
}

impl ClassEmbeddingTable {
    pub fn new(
        entries: BTreeMap<String, Embedding>,
        provenance: DescriptionSource,
    ) -> Result<Self, ClassifierError> {
        let mut iter = entries.values();
        if let Some(first) = iter.next() {
            for e in iter {
                if e.dim() != first.dim() {
                    return Err(VectorError::DimMismatch(first.dim(), e.dim()).into());
                }
            }
        }
        Ok(Self { entries, provenance })
    }

    /// Builds the table for a whole catalog with one embedding call per
    /// description.
    pub fn build(
        classes: &[ClassEntry],
        embedder: &dyn TextEmbedder,
    ) -> Result<Self, ClassifierError> {
        let provenance = classes
            .iter()
            .find_map(|c| c.descriptions.first().map(|d| d.source))
            .unwrap_or(DescriptionSource::SingleTemplate);
        let mut entries = BTreeMap::new();
        for class in classes {
            entries.insert(class.class_id.clone(), class_embedding(class, embedder)?);
        }
        Self::new(entries, provenance)
    }

    pub fn provenance(&self) -> DescriptionSource {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.entries.values().next().map_or(0, Embedding::dim)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: &str) -> Option<&Embedding> {
        self.entries.get(class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Embedding)> {
        self.entries.iter()
    }

    /// Restricts the table to the given class ids (unknown ids are skipped).
    pub fn restrict(&self, class_ids: &[String]) -> Result<Self, ClassifierError> {
        let entries = class_ids
            .iter()
            .filter_map(|id| self.entries.get(id).map(|e| (id.clone(), e.clone())))
            .collect();
        Self::new(entries, self.provenance)
    }

    /// Serializes through the embedding matrix format, class ids as row ids.
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        let (ids, rows): (Vec<String>, Vec<Embedding>) =
            self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).unzip();
        EmbeddingMatrix::new(ids, rows).expect("table entries are valid matrix rows")
    }

    pub fn from_matrix(
        matrix: &EmbeddingMatrix,
        provenance: DescriptionSource,
    ) -> Result<Self, ClassifierError> {
        let entries = matrix.iter().map(|(id, e)| (id.to_string(), e.clone())).collect();
        Self::new(entries, provenance)
    }
}

/// h_c: the mean text embedding over a class's descriptions.
///
/// Descriptions are sorted lexicographically by text before summation so the
/// result is independent of the order they were generated in.
pub fn class_embedding(
    entry: &ClassEntry,
    embedder: &dyn TextEmbedder,
) -> Result<Embedding, ClassifierError> {
    if entry.descriptions.is_empty() {
        return Err(ClassifierError::NoDescriptions { class_id: entry.class_id.clone() });
    }
    let mut texts: Vec<&str> = entry.descriptions.iter().map(|d| d.text.as_str()).collect();
    texts.sort_unstable();
    let embeddings = texts
        .iter()
        .map(|text| {
            embedder.embed(text).map_err(|source| ClassifierError::Embed {
                class_id: entry.class_id.clone(),
                text: text.to_string(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_embedding(&embeddings)?)
}

/// The k most similar classes for one image, ordered by descending score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguousSet {
    pub image_id: String,
    pub members: Vec<String>,
    pub k: usize,
}

/// Nearest-class prediction: argmax of cosine over the table, ties broken by
/// lexicographically smallest class id.
pub fn predict(
    image: &Embedding,
    table: &ClassEmbeddingTable,
) -> Result<(String, BTreeMap<String, f64>), ClassifierError> {
    let scores = score_all(image, table)?;
    let best = scores
        .iter()
        .fold(None::<(&String, f64)>, |best, (id, &s)| match best {
            Some((_, bs)) if s <= bs => best,
            _ => Some((id, s)),
        })
        .ok_or(ClassifierError::EmptyTable)?;
    Ok((best.0.clone(), scores))
}

fn score_all(
    image: &Embedding,
    table: &ClassEmbeddingTable,
) -> Result<BTreeMap<String, f64>, ClassifierError> {
    if table.is_empty() {
        return Err(ClassifierError::EmptyTable);
    }
    table
        .iter()
        .map(|(id, h)| Ok((id.clone(), cosine(image, h)?)))
        .collect()
}

/// The k classes with the largest cosine similarity.
///
/// Equivalent to maximizing the summed similarity over all k-subsets, since
/// the objective is a sum of independent per-class terms.
pub fn ambiguous_set(
    image_id: &str,
    image: &Embedding,
    table: &ClassEmbeddingTable,
    k: usize,
) -> Result<AmbiguousSet, ClassifierError> {
    if k == 0 {
        return Err(ClassifierError::ZeroK);
    }
    let scores = score_all(image, table)?;
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(id, &s)| (id, s)).collect();
    // descending score; class id ascending on ties (BTreeMap iteration order
    // makes the sort stable in id order already)
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    let members = ranked.into_iter().take(k).map(|(id, _)| id.clone()).collect();
    Ok(AmbiguousSet { image_id: image_id.to_string(), members, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Description;
    use crate::embedder::MapEmbedder;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn emb(values: &[f32]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn table(pairs: &[(&str, &[f32])]) -> ClassEmbeddingTable {
        let entries = pairs.iter().map(|(id, v)| (id.to_string(), emb(v))).collect();
        ClassEmbeddingTable::new(entries, DescriptionSource::SingleTemplate).unwrap()
    }

    fn entry_with(texts: &[&str]) -> ClassEntry {
        let mut e = ClassEntry::new("c", "c");
        e.descriptions = texts
            .iter()
            .map(|t| Description::new(*t, DescriptionSource::SingleTemplate, None).unwrap())
            .collect();
        e
    }

    #[test]
    fn class_embedding_singleton_and_mean() {
        let mut embedder = MapEmbedder::default();
        embedder.insert("t1", emb(&[1.0, 0.0]));
        embedder.insert("t2", emb(&[0.0, 1.0]));
        assert_eq!(class_embedding(&entry_with(&["t1"]), &embedder).unwrap(), emb(&[1.0, 0.0]));
        assert_eq!(
            class_embedding(&entry_with(&["t1", "t2"]), &embedder).unwrap(),
            emb(&[0.5, 0.5])
        );
    }

    #[test]
    fn duplicate_description_weights_by_multiplicity() {
        let mut embedder = MapEmbedder::default();
        embedder.insert("t1", emb(&[3.0, 0.0]));
        embedder.insert("t2", emb(&[0.0, 3.0]));
        let once = class_embedding(&entry_with(&["t1", "t2"]), &embedder).unwrap();
        let twice = class_embedding(&entry_with(&["t1", "t1", "t2"]), &embedder).unwrap();
        assert_eq!(once, emb(&[1.5, 1.5]));
        assert_eq!(twice, emb(&[2.0, 1.0]));
    }

    #[test]
    fn class_embedding_order_invariant() {
        let mut embedder = MapEmbedder::default();
        embedder.insert("a", emb(&[1.0, 2.0]));
        embedder.insert("b", emb(&[5.0, -1.0]));
        embedder.insert("c", emb(&[0.0, 0.5]));
        assert_eq!(
            class_embedding(&entry_with(&["c", "a", "b"]), &embedder).unwrap(),
            class_embedding(&entry_with(&["a", "b", "c"]), &embedder).unwrap()
        );
    }

    #[test]
    fn embed_failure_names_description() {
        let embedder = MapEmbedder::default();
        let err = class_embedding(&entry_with(&["missing text"]), &embedder).unwrap_err();
        assert!(err.to_string().contains("missing text"));
    }

    #[test]
    fn predict_self_similarity_wins() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[0.7, 0.7])]);
        let (label, scores) = predict(&emb(&[0.0, 1.0]), &t).unwrap();
        assert_eq!(label, "b");
        assert_eq!(scores.len(), 3);
        assert_eq!(scores["b"], 1.0);
    }

    #[test]
    fn predict_tie_breaks_lexicographically() {
        let t = table(&[("zeta", &[1.0, 0.0]), ("alpha", &[2.0, 0.0])]);
        let (label, _) = predict(&emb(&[1.0, 0.0]), &t).unwrap();
        assert_eq!(label, "alpha");
    }

    #[test]
    fn predict_matches_brute_force_oracle() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let dim = 8;
            let classes: Vec<(String, Vec<f32>)> = (0..12)
                .map(|i| {
                    (format!("c{i:02}"), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                })
                .collect();
            let t = ClassEmbeddingTable::new(
                classes.iter().map(|(id, v)| (id.clone(), emb(v))).collect(),
                DescriptionSource::SingleTemplate,
            )
            .unwrap();
            let image = emb(&(0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
            let (label, _) = predict(&image, &t).unwrap();
            // independent oracle: plain loop over all classes
            let mut best: Option<(String, f64)> = None;
            for (id, v) in &classes {
                let c = cosine(&image, &emb(v)).unwrap();
                match &best {
                    Some((_, bs)) if c <= *bs => {}
                    _ => best = Some((id.clone(), c)),
                }
            }
            assert_eq!(label, best.unwrap().0);
        }
    }

    #[test]
    fn ambiguous_k1_is_argmax_and_kall_is_everything() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[0.7, 0.7])]);
        let image = emb(&[0.9, 0.1]);
        let set1 = ambiguous_set("img", &image, &t, 1).unwrap();
        assert_eq!(set1.members, vec!["a".to_string()]);
        assert_eq!(set1.members[0], predict(&image, &t).unwrap().0);
        let all = ambiguous_set("img", &image, &t, 3).unwrap();
        assert_eq!(all.members.len(), 3);
    }

    #[test]
    fn ambiguous_sets_are_prefix_monotone() {
        let mut rng = StdRng::seed_from_u64(7);
        let t = ClassEmbeddingTable::new(
            (0..10)
                .map(|i| {
                    (format!("c{i}"), emb(&(0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>()))
                })
                .collect(),
            DescriptionSource::SingleTemplate,
        )
        .unwrap();
        let image = emb(&(0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
        for k in 1..10 {
            let a = ambiguous_set("i", &image, &t, k).unwrap();
            let b = ambiguous_set("i", &image, &t, k + 1).unwrap();
            assert_eq!(a.members[..], b.members[..k]);
        }
    }

    #[test]
    fn predict_scale_invariant() {
        let t = table(&[("a", &[1.0, 0.2]), ("b", &[0.3, 1.0])]);
        let image = emb(&[0.5, 0.4]);
        let scaled = emb(&[1.5, 1.2]);
        let (l1, s1) = predict(&image, &t).unwrap();
        let (l2, s2) = predict(&scaled, &t).unwrap();
        assert_eq!(l1, l2);
        for (k, v) in &s1 {
            assert!((v - s2[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn table_matrix_round_trip() {
        let t = table(&[("a", &[1.0, 2.0]), ("b", &[3.0, 4.0])]);
        let m = t.to_matrix();
        let back = ClassEmbeddingTable::from_matrix(&m, DescriptionSource::SingleTemplate).unwrap();
        assert_eq!(back, t);
    }
}
