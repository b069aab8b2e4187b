//! Browser bindings for the demo page in `www/`. Each export returns a JSON
//! string; the plain functions behind them are ordinary Rust and are tested
//! natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use saflab::codec::{decode_to_vec, encode_slice};
use saflab::data::{synth_blobs, Split, SynthSpec};
use saflab::harness::{run_protocol, Protocol};
use saflab::optim::{train, TrainConfig};
use saflab::saf::SafKind;
use saflab::{ArchSpec, Model, Result, StoredDType};

#[derive(Serialize)]
struct Curves {
    x: Vec<f32>,
    series: Vec<Series>,
}

#[derive(Serialize)]
struct Series {
    saf: String,
    y: Vec<f32>,
    dy: Vec<f32>,
}

pub fn curves(lo: f32, hi: f32, points: usize) -> Result<String> {
    if !(lo < hi) || points < 2 || points > 10_000 {
        return Err(saflab::Error::Config("need lo < hi and 2..=10000 points".into()));
    }
    let x: Vec<f32> = (0..points).map(|i| lo + (hi - lo) * i as f32 / (points - 1) as f32).collect();
    let series = SafKind::PAPER_SET
        .iter()
        .map(|&k| Series {
            saf: k.to_string(),
            y: x.iter().map(|&v| k.apply(v)).collect(),
            dy: x.iter().map(|&v| k.derivative(v)).collect(),
        })
        .collect();
    Ok(serde_json::to_string(&Curves { x, series }).expect("json"))
}

#[derive(Serialize)]
struct FlipView {
    dtype: String,
    bit: usize,
    bits_before: String,
    bits_after: String,
    stored_before: serde_json::Value,
    stored_after: serde_json::Value,
    effective: Vec<Effective>,
}

#[derive(Serialize)]
struct Effective {
    saf: String,
    before: serde_json::Value,
    after: serde_json::Value,
}

/// JSON has no infinities or NaN; those become strings.
fn number(x: f32) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::json!(x.to_string())
    }
}

fn bit_string(bytes: &[u8]) -> String {
    bytes.iter().rev().map(|b| format!("{b:08b}")).collect()
}

/// What flipping bit `bit` (0 = least significant) of one stored weight does
/// before and after each SAF.
pub fn flip_one(value: f32, dtype: &str, bit: usize) -> Result<String> {
    let dtype: StoredDType = dtype.parse()?;
    if bit >= dtype.bits_per_weight() {
        return Err(saflab::Error::Config(format!("{dtype} has {} bits", dtype.bits_per_weight())));
    }
    let stored = encode_slice(&[value], dtype);
    let mut flipped = stored.clone();
    flipped.flip_bit(bit);
    let (before, after) = (decode_to_vec(&stored)[0], decode_to_vec(&flipped)[0]);
    let view = FlipView {
        dtype: dtype.to_string(),
        bit,
        bits_before: bit_string(stored.bytes()),
        bits_after: bit_string(flipped.bytes()),
        stored_before: number(before),
        stored_after: number(after),
        effective: SafKind::PAPER_SET
            .iter()
            .map(|&k| Effective { saf: k.to_string(), before: number(k.apply(before)), after: number(k.apply(after)) })
            .collect(),
    };
    Ok(serde_json::to_string(&view).expect("json"))
}

#[derive(Serialize)]
struct MiniReport {
    saf: String,
    dtype: String,
    ber: f64,
    weights: usize,
    clean_top1: f32,
    round_top1: Vec<f32>,
    mean: f32,
    std: f32,
    mean_flip_count: f64,
}

/// Trains a small MLP on 4-class Gaussian blobs, then runs `rounds` fault
/// rounds at `ber` on the held-out split.
pub fn mini_campaign(saf_name: &str, dtype: &str, ber: f64, rounds: usize, seed: u64) -> Result<String> {
    let kind: SafKind = saf_name.parse()?;
    let dtype: StoredDType = dtype.parse()?;
    if rounds == 0 || rounds > 500 {
        return Err(saflab::Error::Config("rounds must be in 1..=500".into()));
    }
    let spec = SynthSpec { classes: 4, n_per_class: 150, dim: 16, separation: 5.0, seed };
    let (train_set, test) = (synth_blobs(&spec, Split::Train)?, synth_blobs(&spec, Split::Test)?);
    let mut model = Model::init(ArchSpec::mlp(&[1, 1, 16], &[64], 4, kind), seed)?;
    let mut cfg = TrainConfig::scratch(15, seed);
    cfg.batch_size = 32;
    cfg.lr0 = 0.05;
    train(&mut model, &train_set, &cfg, |_| {})?;
    let report = run_protocol(&model, &test, &Protocol::new(dtype, vec![ber], rounds, seed))?;
    let r = &report.results[0];
    Ok(serde_json::to_string(&MiniReport {
        saf: kind.to_string(),
        dtype: dtype.to_string(),
        ber,
        weights: model.weight_count(),
        clean_top1: report.clean_top1,
        round_top1: r.round_top1.clone(),
        mean: r.mean,
        std: r.std,
        mean_flip_count: r.mean_flip_count,
    })
    .expect("json"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&format!("{} error: {e}", e.category())))
}

#[wasm_bindgen(js_name = safCurves)]
pub fn saf_curves(lo: f32, hi: f32, points: usize) -> std::result::Result<String, JsError> {
    js(curves(lo, hi, points))
}

#[wasm_bindgen(js_name = flipBit)]
pub fn flip_bit(value: f32, dtype: &str, bit: usize) -> std::result::Result<String, JsError> {
    js(flip_one(value, dtype, bit))
}

#[wasm_bindgen(js_name = miniCampaign)]
pub fn run_mini_campaign(saf: &str, dtype: &str, ber: f64, rounds: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(mini_campaign(saf, dtype, ber, rounds, seed))
}
