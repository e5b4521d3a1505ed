//! WebAssembly bindings for three small interactive views: a JumpReLU
//! encoder on a 2-D toy dictionary, a coefficient-search trace, and
//! attention section shares. Every function returns a JSON string.

use latent_scalpel::attention::section_shares;
use latent_scalpel::harness::{PromptSpans, Span};
use latent_scalpel::intervene::{coefficient_search, SearchConfig};
use latent_scalpel::lm::AttentionTrace;
use latent_scalpel::sae::{decode, encode, SaeParams};
use ndarray::{array, Array2};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Four unit directions at 0, 45, 90 and 135 degrees in the plane, sharing one threshold.
fn toy_sae(theta: f64) -> SaeParams {
    let mut sae = SaeParams::zeros(0, 2, 4);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [[1.0, 0.0], [h, h], [0.0, 1.0], [-h, h]];
    for (j, d) in dirs.iter().enumerate() {
        sae.w_dec[[j, 0]] = d[0];
        sae.w_dec[[j, 1]] = d[1];
        sae.w_enc[[0, j]] = d[0];
        sae.w_enc[[1, j]] = d[1];
        sae.theta[j] = theta;
    }
    sae
}

/// Latent activations and reconstruction of the point `(x, y)`.
pub fn jumprelu_encode_json(x: f64, y: f64, theta: f64) -> Result<String, String> {
    if !(theta >= 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(err("inputs must be finite and theta >= 0"));
    }
    let sae = toy_sae(theta);
    let input = array![x, y];
    let a = encode(input.view(), &sae);
    let r = decode(a.view(), &sae);
    Ok(json!({
        "activations": a.to_vec(),
        "reconstruction": r.to_vec(),
        "l0": a.iter().filter(|&&v| v > 0.0).count(),
        "squared_error": (&input - &r).mapv(|v| v * v).sum(),
    })
    .to_string())
}

/// Search trace for the objective `exp(-((alpha - peak) / width)^2)`.
pub fn search_trace_json(peak: f64, width: f64, alpha_max: f64) -> Result<String, String> {
    if !(width > 0.0) {
        return Err(err("width must be > 0"));
    }
    let cfg = SearchConfig {
        alpha_max,
        ..Default::default()
    };
    let out = coefficient_search(|a| Ok((-((a - peak) / width).powi(2)).exp()), &cfg).map_err(err)?;
    serde_json::to_string(&out).map_err(err)
}

/// Shares of head-averaged attention over three consecutive spans that
/// follow a BOS position. `weights` is row-major `heads x (1 + sum(spans))`.
pub fn attention_shares_json(
    weights: Vec<f64>,
    heads: usize,
    description: usize,
    tests: usize,
    initiator: usize,
) -> Result<String, String> {
    let ctx = 1 + description + tests + initiator;
    if heads == 0 || weights.len() != heads * ctx {
        return Err(err(format!("expected {heads} x {ctx} weights, got {}", weights.len())));
    }
    let trace = AttentionTrace {
        layer: 0,
        query_position: ctx - 1,
        weights: Array2::from_shape_vec((heads, ctx), weights).map_err(err)?,
    };
    let spans = PromptSpans {
        description: Span { start: 1, end: 1 + description },
        tests: Span { start: 1 + description, end: 1 + description + tests },
        initiator: Span { start: 1 + description + tests, end: ctx },
    };
    let s = section_shares(&trace, &spans).map_err(err)?;
    serde_json::to_string(&s).map_err(err)
}

/// Wasm export of [`jumprelu_encode_json`].
#[wasm_bindgen]
pub fn jumprelu_encode(x: f64, y: f64, theta: f64) -> Result<String, JsValue> {
    js(jumprelu_encode_json(x, y, theta))
}

/// Wasm export of [`search_trace_json`].
#[wasm_bindgen]
pub fn search_trace(peak: f64, width: f64, alpha_max: f64) -> Result<String, JsValue> {
    js(search_trace_json(peak, width, alpha_max))
}

/// Wasm export of [`attention_shares_json`].
#[wasm_bindgen]
pub fn attention_shares(
    weights: Vec<f64>,
    heads: usize,
    description: usize,
    tests: usize,
    initiator: usize,
) -> Result<String, JsValue> {
    js(attention_shares_json(weights, heads, description, tests, initiator))
}
