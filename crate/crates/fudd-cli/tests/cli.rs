use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use fudd_core::catalog::{ClassEntry, DatasetManifest};
use fudd_core::embedder::{HashEmbedder, TextEmbedder};
use fudd_core::vector::EmbeddingMatrix;

fn fudd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fudd")).args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Toy fixture: three classes, one image per class sitting exactly on its
/// class's single-template embedding, hash embedder, synthetic backend.
fn write_fixture(dir: &Path, k: usize) -> String {
    let names = ["scarlet tanager", "indigo bunting", "american goldfinch"];
    let embedder = HashEmbedder::new(16, 0);
    let classes: Vec<ClassEntry> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ClassEntry::new(format!("c{i}"), *n))
        .collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = BTreeMap::new();
    for (i, n) in names.iter().enumerate() {
        let id = format!("img{i}");
        ids.push(id.clone());
        rows.push(embedder.embed(&format!("A photo of a {n}.")).unwrap());
        labels.insert(id, format!("c{i}"));
    }
    EmbeddingMatrix::new(ids, rows).unwrap().write(dir.join("images.femb")).unwrap();
    let manifest = DatasetManifest {
        name: "toy".into(),
        classes,
        image_embeddings: "images.femb".into(),
        labels,
    };
    manifest.save(dir.join("manifest.json")).unwrap();

    let config = format!(
        r#"[paths]
manifest = "manifest.json"
cache_dir = "cache"
class_embeddings = "classes.femb"
report = "report.json"
plot_data = "sweep.tsv"

[embedder]
kind = "hash"
dim = 16
seed = 0

[experiment]
method = "fudd"
k = {k}
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn embed_classes_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let out = fudd(&["embed-classes", "--config", &config]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first = std::fs::read(dir.path().join("classes.femb")).unwrap();
    let table = EmbeddingMatrix::read(dir.path().join("classes.femb")).unwrap();
    assert_eq!(table.ids(), ["c0", "c1", "c2"]);

    let out = fudd(&["embed-classes", "--config", &config]);
    assert!(out.status.success());
    let second = std::fs::read(dir.path().join("classes.femb")).unwrap();
    assert_eq!(first, second, "rerun must produce identical bytes");
}

#[test]
fn generate_dry_run_makes_no_calls_and_resume_skips_cached() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 3);

    let out = fudd(&["generate", "--config", &config, "--dry-run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("3 unique pairs"), "{text}");
    assert!(text.contains("0 backend calls made"), "{text}");
    assert!(
        !dir.path().join("cache/pairs.jsonl").exists(),
        "dry run must not touch the cache"
    );

    let out = fudd(&["generate", "--config", &config]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("generated 3 pairs (0 already cached, 0 failed), 3 backend calls"), "{text}");

    // resume: everything cached, zero repeated calls
    let out = fudd(&["generate", "--config", &config, "--restricted"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("generated 0 pairs (3 already cached, 0 failed), 0 backend calls"), "{text}");
    assert!(text.contains("cache frozen"), "{text}");
    assert!(dir.path().join("cache/index.txt").exists());
}

#[test]
fn eval_writes_report_with_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let out = fudd(&["eval", "--config", &config, "--method", "single_template"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["n_images"], 3);

    // fudd at k=1 must agree with the baseline exactly
    let out = fudd(&["eval", "--config", &config, "--k", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], 1.0);
}

#[test]
fn sweep_k_emits_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let out = fudd(&["sweep-k", "--config", &config, "--ks", "1,2,3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tsv = std::fs::read_to_string(dir.path().join("sweep.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "k\taccuracy");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1\t"));
    assert!(lines[3].starts_with("3\t"));
}

#[test]
fn ablate_prints_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let out = fudd(&["ablate", "--config", &config]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("differential arm:"), "{text}");
    assert!(text.contains("non-differential control:"), "{text}");
    assert!(text.contains("delta:"), "{text}");
}

#[test]
fn bundled_data_fixtures_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").canonicalize().unwrap();
    let mut text = std::fs::read_to_string(&config).unwrap();
    text = text.replace(
        "plot_data = \"sweep.tsv\"",
        &format!(
            "plot_data = \"sweep.tsv\"\ntemplates = \"{0}/templates.txt\"\nprefixes = \"{0}/prefixes.txt\"\npair_examples = \"{0}/pair_examples.json\"\nnaive_examples = \"{0}/naive_examples.json\"",
            data.display()
        ),
    );
    text = text.replace("k = 2", "k = 2\naugment = true");
    std::fs::write(&config, text).unwrap();

    for method in ["template_set", "naive_llm", "fudd"] {
        let out = fudd(&["eval", "--config", &config, "--method", method]);
        assert!(out.status.success(), "{method}: {}", stderr(&out));
    }
}

#[test]
fn estimate_cost_matches_published_arithmetic() {
    let out = fudd(&["estimate-cost"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("$0.78"), "{}", stdout(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 2);
    let config_path = dir.path().join("config.toml");
    let mut config = std::fs::read_to_string(&config_path).unwrap();
    config.push_str("\n[experiment2]\nbogus = true\n");
    std::fs::write(&config_path, config).unwrap();
    let out = fudd(&["eval", "--config", config_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_manifest_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    std::fs::remove_file(dir.path().join("manifest.json")).unwrap();
    let out = fudd(&["eval", "--config", &config]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn oversized_k_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 2);
    let out = fudd(&["eval", "--config", &config, "--k", "9"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    let out = fudd(&["generate", "--config", &config, "--k", "9"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
}
