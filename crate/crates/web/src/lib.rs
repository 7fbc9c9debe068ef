//! Browser bindings for the demo page. Every export takes and returns JSON
//! strings; the plain-Rust functions behind them are usable natively too.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssan::data::json::to_json;
use ssan::data::{build_vocab, generate_synthetic, parse_corpus_str, prepare, Document, SynthConfig};
use ssan::encoder::{EncoderConfig, Transformation};
use ssan::rehead::{ModelSpec, SsanModel};
use ssan::structure::{build_structure_matrix, dependency_histogram, DependencyType};
use ssan::tensor::{Graph, ParamStore};
use wasm_bindgen::prelude::*;

/// Width of the demo model; small enough to stay instant in the browser.
const DEMO_DIM: usize = 16;
const DEMO_HEADS: usize = 2;

#[derive(Debug, Serialize)]
pub struct GridView {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Row-major dependency codes.
    pub codes: Vec<u8>,
    /// Display name of each code.
    pub names: Vec<&'static str>,
    pub histogram: BTreeMap<&'static str, usize>,
}

#[derive(Debug, Serialize)]
pub struct AttentionView {
    pub tokens: Vec<String>,
    /// Head-averaged first-layer attention with the requested priors.
    pub biased: Vec<Vec<f64>>,
    /// Same model with every prior at zero.
    pub plain: Vec<Vec<f64>>,
}

/// Prior bias per dependency name, e.g. `{"inter+coref": 2.0}`. Missing
/// types get 0.
#[derive(Debug, Default, Deserialize)]
#[serde(transparent)]
pub struct Priors(pub BTreeMap<String, f64>);

fn first_doc(doc_json: &str) -> Result<Document, String> {
    let text = doc_json.trim();
    let text = if text.starts_with('{') { format!("[{text}]") } else { text.to_string() };
    parse_corpus_str(&text, None)
        .map_err(|e| e.to_string())?
        .into_iter()
        .next()
        .ok_or_else(|| "no document in input".to_string())
}

pub fn grid_view(doc_json: &str) -> Result<GridView, String> {
    let doc = first_doc(doc_json)?;
    let m = build_structure_matrix(&doc).map_err(|e| e.to_string())?;
    let counts = dependency_histogram(&m);
    let mut names = vec![""; 6];
    for d in DependencyType::ALL {
        names[d.code() as usize] = d.name();
    }
    Ok(GridView {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens().map(String::from).collect(),
        codes: m.cells().iter().map(|d| d.code()).collect(),
        names,
        histogram: counts.into_iter().map(|(d, c)| (d.name(), c)).collect(),
    })
}

pub fn attention_view(doc_json: &str, priors: &Priors, seed: u64) -> Result<AttentionView, String> {
    let doc = first_doc(doc_json)?;
    let mut values = [0.0; 5];
    for (name, &v) in &priors.0 {
        let d = DependencyType::parse(name).ok_or_else(|| format!("unknown dependency type `{name}`"))?;
        let idx = d.structured_index().ok_or("NA carries no bias")?;
        values[idx] = v;
    }
    let docs = std::slice::from_ref(&doc);
    let vocab = build_vocab(docs, 1);
    let n = doc.token_count();
    let spec = ModelSpec {
        encoder: EncoderConfig {
            layers: 1,
            heads: DEMO_HEADS,
            d_model: DEMO_DIM,
            ffn_mult: 2,
            transformation: Transformation::biaffine(),
            structured_layers: 0..1,
        },
        max_len: n.max(1),
        vocab_size: vocab.len(),
        type_count: vocab.type_count(),
        coref_table: doc.entities.len().max(1),
        dist_dim: 4,
        relations: 1,
        excluded: BTreeSet::new(),
    };
    let mut store = ParamStore::new();
    let model = SsanModel::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let p = prepare(docs, &vocab, n.max(1))
        .map_err(|e| e.to_string())?
        .remove(0);

    let mut g = Graph::new();
    let x = model
        .embed_inputs(&mut g, &store, &p.word_ids, &p.type_ids, &p.entity_ids)
        .map_err(|e| e.to_string())?;
    let x = g.value(x).clone();
    let enc = model.encoder();
    let attention = |store: &ParamStore| -> Result<Vec<Vec<f64>>, String> {
        let mut mean = vec![vec![0.0; n]; n];
        for h in 0..DEMO_HEADS {
            let (q, k, _) = enc.project_qkv(store, &x, 0, h).map_err(|e| e.to_string())?;
            let scores = enc.structured_scores(store, &q, &k, &p.structure, 0, h).map_err(|e| e.to_string())?;
            let mut g = Graph::new();
            let s = g.constant(scores);
            let a = g.softmax_rows(s);
            for (i, row) in g.value(a).data().chunks(n).enumerate() {
                for (j, v) in row.iter().enumerate() {
                    mean[i][j] += v / DEMO_HEADS as f64;
                }
            }
        }
        Ok(mean)
    };
    let plain = attention(&store)?;
    for head in &enc.layer_params()[0].heads {
        for (dp, &v) in head.deps.iter().zip(&values) {
            store.get_mut(dp.prior).tensor.data_mut()[0] = v;
        }
    }
    let biased = attention(&store)?;
    Ok(AttentionView {
        tokens: doc.tokens().map(String::from).collect(),
        biased,
        plain,
    })
}

/// One synthetic bridge document in the DocRED layout.
pub fn synthetic_doc(seed: u64, entities: usize, sentences: usize) -> Result<String, String> {
    let cfg = SynthConfig {
        docs: 1,
        seed,
        entities_per_doc: entities,
        sentences,
        bridges_per_doc: usize::from(sentences > 1),
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg).map_err(|e| e.to_string())?;
    to_json(&corpus.docs).map_err(|e| e.to_string())
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Structure grid of the first document in `doc_json`.
#[wasm_bindgen(js_name = structureGrid)]
pub fn structure_grid(doc_json: &str) -> Result<String, JsValue> {
    js(grid_view(doc_json))
}

/// First-layer attention of an untrained model before and after adding
/// the given per-type prior biases.
#[wasm_bindgen(js_name = attentionMap)]
pub fn attention_map(doc_json: &str, priors_json: &str, seed: u32) -> Result<String, JsValue> {
    let priors: Priors = serde_json::from_str(priors_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    js(attention_view(doc_json, &priors, seed as u64))
}

#[wasm_bindgen(js_name = synthDocument)]
pub fn synth_document(seed: u32, entities: u32, sentences: u32) -> Result<String, JsValue> {
    synthetic_doc(seed as u64, entities as usize, sentences as usize).map_err(|e| JsValue::from_str(&e))
}
