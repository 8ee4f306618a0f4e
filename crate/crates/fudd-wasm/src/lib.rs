//! Browser demo bindings. Three interactive operations over the core
//! library: differential-response parsing, an ambiguity explorer on a
//! built-in synthetic catalog, and query-cost estimation.

use fudd_core::catalog::{ClassCatalog, ClassEntry};
use fudd_core::classifier::{ambiguous_set, predict};
use fudd_core::diffgen::{build_pair_prompt, parse_differential_response};
use fudd_core::embedder::{HashEmbedder, TextEmbedder};
use fudd_core::gateway::estimate_cost;
use fudd_core::pipeline::build_base_table;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

const DEMO_CLASSES: [(&str, &str); 8] = [
    ("albatross_bf", "black-footed albatross"),
    ("albatross_la", "laysan albatross"),
    ("bunting_in", "indigo bunting"),
    ("bunting_pa", "painted bunting"),
    ("sparrow_ch", "chipping sparrow"),
    ("sparrow_ho", "house sparrow"),
    ("tanager_sc", "scarlet tanager"),
    ("tanager_su", "summer tanager"),
];

fn demo_catalog() -> ClassCatalog {
    ClassCatalog::new(
        DEMO_CLASSES.iter().map(|(id, name)| ClassEntry::new(*id, *name)).collect(),
    )
    .expect("static demo catalog is valid")
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo payloads serialize")
}

#[derive(Serialize)]
struct ErrorPayload<'a> {
    error: &'a str,
}

fn error_json(message: &str) -> String {
    json(&ErrorPayload { error: message })
}

#[derive(Serialize)]
struct ParsePayload {
    records: Vec<RecordPayload>,
    skipped_blocks: usize,
}

#[derive(Serialize)]
struct RecordPayload {
    attribute: String,
    caption_1: String,
    caption_2: String,
}

/// Parses a raw differential response into records plus a skipped-block
/// count. Returns a JSON object.
#[wasm_bindgen]
pub fn parse_response(text: &str) -> String {
    let (records, skipped_blocks) = parse_differential_response(text);
    json(&ParsePayload {
        records: records
            .into_iter()
            .map(|r| RecordPayload {
                attribute: r.attribute,
                caption_1: r.caption_1,
                caption_2: r.caption_2,
            })
            .collect(),
        skipped_blocks,
    })
}

/// The exact generation prompt for a pair of class names.
#[wasm_bindgen]
pub fn pair_prompt(name_1: &str, name_2: &str) -> String {
    match build_pair_prompt(name_1, name_2, &[]) {
        Ok(messages) => messages.final_user_message().to_string(),
        Err(e) => error_json(&e.to_string()),
    }
}

#[derive(Serialize)]
struct AmbiguityPayload {
    prediction: String,
    ambiguous: Vec<String>,
    scores: Vec<ScorePayload>,
}

#[derive(Serialize)]
struct ScorePayload {
    class_id: String,
    display_name: String,
    score: f64,
}

/// Embeds free text as a stand-in image and reports the first-pass scores
/// and the size-k ambiguous set over the built-in catalog. Returns JSON.
#[wasm_bindgen]
pub fn ambiguity(text: &str, k: usize) -> String {
    let catalog = demo_catalog();
    let embedder = HashEmbedder::new(32, 7);
    let table = match build_base_table(&catalog, &embedder) {
        Ok(t) => t,
        Err(e) => return error_json(&e.to_string()),
    };
    let image = match embedder.embed(text) {
        Ok(e) => e,
        Err(e) => return error_json(&e.to_string()),
    };
    let (prediction, scores) = match predict(&image, &table) {
        Ok(p) => p,
        Err(e) => return error_json(&e.to_string()),
    };
    let set = match ambiguous_set("query", &image, &table, k.min(table.len())) {
        Ok(s) => s,
        Err(e) => return error_json(&e.to_string()),
    };
    let mut ranked: Vec<ScorePayload> = scores
        .into_iter()
        .map(|(class_id, score)| ScorePayload {
            display_name: catalog
                .get(&class_id)
                .map(|e| e.display_name.clone())
                .unwrap_or_default(),
            class_id,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap().then_with(|| a.class_id.cmp(&b.class_id))
    });
    json(&AmbiguityPayload { prediction, ambiguous: set.members, scores: ranked })
}

/// Projected backend spend; negative inputs yield NaN.
#[wasm_bindgen]
pub fn cost_estimate(
    queries: u32,
    avg_input_tokens: f64,
    avg_output_tokens: f64,
    price_per_1k_input: f64,
    price_per_1k_output: f64,
) -> f64 {
    estimate_cost(
        u64::from(queries),
        avg_input_tokens,
        avg_output_tokens,
        price_per_1k_input,
        price_per_1k_output,
    )
    .unwrap_or(f64::NAN)
}
