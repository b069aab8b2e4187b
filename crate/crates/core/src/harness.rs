//! Monte Carlo fault campaigns, BER sweeps with CSV output, run manifests and
//! checkpoint files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{decode_to_vec, encode_slice, BitBuffer, StoredDType};
use crate::data::{ChannelStats, Dataset, DatasetSource, Split};
use crate::error::{Error, Result};
use crate::injector::FaultConfig;
use crate::network::{ArchSpec, Model, Params};
use crate::numerics::Tensor;
use crate::optim::{EpochStats, TrainConfig};
use crate::saf::SafKind;

const EVAL_BATCH: usize = 500;

pub const STD_FORMULA: &str = "population (divide by n)";

/// Percentage of samples whose highest logit (lowest class index on ties)
/// equals the label.
pub fn top1(model: &Model, data: &Dataset) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::input("top-1 of an empty dataset"));
    }
    let eff = model.effective_weights();
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let n = EVAL_BATCH.min(data.len() - start);
        let x = data.images.slice_outer(start, start + n)?;
        let logits = model.forward_with(&eff, &x)?;
        correct += crate::network::argmax_rows(&logits)
            .iter()
            .zip(&data.labels[start..start + n])
            .filter(|(p, l)| p == l)
            .count();
        start += n;
    }
    Ok((100.0 * correct as f64 / data.len() as f64) as f32)
}

/// Population mean and standard deviation, accumulated in f64.
pub fn mean_std(xs: &[f32]) -> (f32, f32) {
    if xs.is_empty() {
        return (f32::NAN, f32::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean as f32, var.sqrt() as f32)
}

/// Fault-model parameters of a campaign, independent of where the model and
/// data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub dtype: StoredDType,
    pub bers: Vec<f64>,
    pub rounds: usize,
    pub seed: u64,
    /// Worker threads for rounds; 0 picks the available parallelism. Results
    /// do not depend on it.
    #[serde(default)]
    pub workers: usize,
}

impl Protocol {
    pub fn new(dtype: StoredDType, bers: Vec<f64>, rounds: usize, seed: u64) -> Self {
        Protocol { dtype, bers, rounds, seed, workers: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.bers.is_empty() {
            return Err(Error::Config("at least one BER is required".into()));
        }
        for &ber in &self.bers {
            FaultConfig::new(ber, self.seed, 0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub model_checkpoint: PathBuf,
    pub dataset: DatasetSource,
    /// Replaces the checkpoint's SAF on every layer when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saf: Option<SafKind>,
    #[serde(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub ber: f64,
    pub round_top1: Vec<f32>,
    pub flip_counts: Vec<u64>,
    pub mean: f32,
    pub std: f32,
    pub mean_flip_count: f64,
}

impl BerResult {
    fn from_rounds(ber: f64, rounds: Vec<(f32, u64)>) -> Self {
        let (round_top1, flip_counts): (Vec<f32>, Vec<u64>) = rounds.into_iter().unzip();
        let (mean, std) = mean_std(&round_top1);
        let mean_flip_count = flip_counts.iter().sum::<u64>() as f64 / flip_counts.len() as f64;
        BerResult { ber, round_top1, flip_counts, mean, std, mean_flip_count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub dtype: StoredDType,
    /// Top-1 of the model read back in `dtype` with no flips.
    pub clean_top1: f32,
    pub results: Vec<BerResult>,
}

impl DegradationReport {
    pub fn at(&self, ber: f64) -> Option<&BerResult> {
        self.results.iter().find(|r| r.ber == ber)
    }

    /// Clean top-1 minus the mean over rounds, in points.
    pub fn degradation(&self, ber: f64) -> Option<f32> {
        self.at(ber).map(|r| self.clean_top1 - r.mean)
    }
}

/// Evaluates `protocol` on an in-memory model. Round `r` of every BER uses
/// `FaultConfig { ber, seed, round: r }`.
pub fn run_protocol(model: &Model, test: &Dataset, protocol: &Protocol) -> Result<DegradationReport> {
    protocol.validate()?;
    let (clean_model, _) = model.read_deployed(protocol.dtype, &FaultConfig::new(0.0, protocol.seed, 0)?)?;
    let clean_top1 = top1(&clean_model, test)?;
    let mut results = Vec::with_capacity(protocol.bers.len());
    for &ber in &protocol.bers {
        let one_round = |round: usize| -> Result<(f32, u64)> {
            let cfg = FaultConfig::new(ber, protocol.seed, round as u64)?;
            let (faulty, flips) = model.read_deployed(protocol.dtype, &cfg)?;
            Ok((top1(&faulty, test)?, flips))
        };
        let rounds = run_rounds(protocol.rounds, protocol.workers, one_round)?;
        results.push(BerResult::from_rounds(ber, rounds));
    }
    Ok(DegradationReport { dtype: protocol.dtype, clean_top1, results })
}

#[cfg(feature = "parallel")]
fn run_rounds<T: Send>(rounds: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    if workers == 1 {
        return (0..rounds).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..rounds).into_par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_rounds<T>(rounds: usize, _workers: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..rounds).map(f).collect()
}

/// Loads the checkpoint and the test split named by `c` and runs it.
pub fn run_campaign(c: &Campaign) -> Result<DegradationReport> {
    let (model, test, _) = campaign_inputs(c)?;
    run_protocol(&model, &test, &c.protocol)
}

/// The checkpointed model (with the campaign's SAF applied), the test split,
/// and the checkpoint's training manifest.
pub fn campaign_inputs(c: &Campaign) -> Result<(Model, Dataset, TrainManifest)> {
    let (mut model, training) = load_checkpoint(&c.model_checkpoint)?;
    if let Some(kind) = c.saf {
        model.set_saf(kind);
        for i in 0..model.arch().layers.len() {
            if model.arch().layers[i].is_weighted() {
                model.set_layer_saf(i, None)?;
            }
        }
    }
    let test = c.dataset.load(Split::Test)?;
    if test.sample_shape()[..] != model.input_shape()[..] || test.class_count > model.class_count() {
        return Err(Error::format(
            c.model_checkpoint.display().to_string(),
            0,
            format!(
                "checkpoint expects {:?} inputs and {} classes; dataset {} has {:?} and {}",
                model.input_shape(),
                model.class_count(),
                test.name,
                test.sample_shape(),
                test.class_count
            ),
        ));
    }
    Ok((model, test, training))
}

/// Everything needed to rerun a sweep and reproduce its CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub campaign: Campaign,
    pub arch: String,
    pub saf: SafKind,
    pub dataset: String,
    pub test_samples: usize,
    /// Per-channel standardisation applied to the inputs, if any.
    pub normalization: Option<ChannelStats>,
    pub std_formula: String,
    pub fault_seeds: String,
    pub fault_scope: String,
    pub clean_top1: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainManifest>,
}

/// Runs `c` and writes `results.csv`, `summary.csv` and `manifest.json` into `out`.
pub fn sweep_and_emit(c: &Campaign, out: &Path) -> Result<DegradationReport> {
    let (model, test, training) = campaign_inputs(c)?;
    let report = run_protocol(&model, &test, &c.protocol)?;
    let labels = RowLabels {
        dataset: test.name.to_string(),
        arch: model.arch().name.clone(),
        saf: model.arch().saf.to_string(),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("results.csv"), &results_csv(&labels, &report))?;
    write_file(&out.join("summary.csv"), &summary_csv(&labels, &report))?;
    let manifest = RunManifest {
        tool: "saflab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        campaign: c.clone(),
        arch: labels.arch,
        saf: model.arch().saf,
        dataset: labels.dataset,
        test_samples: test.len(),
        normalization: test.normalization.clone(),
        std_formula: STD_FORMULA.into(),
        fault_seeds: "round r of each BER uses stream (seed, fault, r)".into(),
        fault_scope: "one flip pattern per round over all weights concatenated in layer order; biases unfaulted".into(),
        clean_top1: report.clean_top1,
        training: Some(training),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), &(json + "\n"))?;
    Ok(report)
}

/// Reruns the campaign recorded in a `manifest.json`, writing fresh outputs to `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<DegradationReport> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(manifest.display().to_string(), e.column() as u64, e.to_string()))?;
    sweep_and_emit(&m.campaign, out)
}

pub struct RowLabels {
    pub dataset: String,
    pub arch: String,
    pub saf: String,
}

pub fn results_csv(labels: &RowLabels, report: &DegradationReport) -> String {
    let mut s = String::from("dataset,arch,saf,dtype,ber,round,top1,flip_count\n");
    for r in &report.results {
        for (round, (top1, flips)) in r.round_top1.iter().zip(&r.flip_counts).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{round},{top1},{flips}",
                labels.dataset, labels.arch, labels.saf, report.dtype, r.ber
            );
        }
    }
    s
}

pub fn summary_csv(labels: &RowLabels, report: &DegradationReport) -> String {
    let mut s = String::from("dataset,arch,saf,dtype,ber,rounds,clean_top1,mean,std,degradation,mean_flip_count\n");
    for r in &report.results {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{},{}",
            labels.dataset,
            labels.arch,
            labels.saf,
            report.dtype,
            r.ber,
            r.round_top1.len(),
            report.clean_top1,
            r.mean,
            r.std,
            report.clean_top1 - r.mean,
            r.mean_flip_count
        );
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Provenance stored inside a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub init_seed: u64,
    /// Checkpoint this one was fine-tuned from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default)]
    pub history: Vec<EpochStats>,
}

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SAFLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: ArchSpec,
    manifest: TrainManifest,
}

/// Layout: magic, version (u32 LE), header length (u64 LE), JSON header with
/// the architecture and manifest, then for each weighted layer the raw weight
/// and bias buffers as FP32 [`BitBuffer`]s.
pub fn checkpoint_bytes(model: &Model, manifest: &TrainManifest) -> Vec<u8> {
    let header = serde_json::to_vec(&CheckpointHeader { arch: model.arch().clone(), manifest: manifest.clone() })
        .expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 4 * model.parameter_count() + 64);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params().iter().flatten() {
        out.extend(encode_slice(p.weight.data(), StoredDType::Fp32).to_bytes());
        out.extend(encode_slice(p.bias.data(), StoredDType::Fp32).to_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8], context: &str) -> Result<(Model, TrainManifest)> {
    let fail = |offset: usize, msg: String| Error::format(context, offset as u64, msg);
    if bytes.len() < 20 {
        return Err(fail(0, "truncated header".into()));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail(0, "not a saflab checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(8, format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(20..20usize.saturating_add(header_len))
        .ok_or_else(|| fail(20, format!("header of {header_len} bytes is truncated")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(header_bytes).map_err(|e| fail(20, format!("bad header: {e}")))?;
    let template = Model::init(header.arch.clone(), 0).map_err(|e| fail(20, format!("bad architecture: {e}")))?;
    let mut offset = 20 + header_len;
    let mut read = |want: &Tensor, what: &str, layer: usize| -> Result<Tensor> {
        let (buf, used) = BitBuffer::read_from(&bytes[offset..]).map_err(|e| fail(offset, format!("layer {layer} {what}: {e}")))?;
        if buf.dtype() != StoredDType::Fp32 || buf.count() != want.len() {
            return Err(fail(
                offset,
                format!("layer {layer} {what}: expected {} fp32 values, found {} {}", want.len(), buf.count(), buf.dtype()),
            ));
        }
        offset += used;
        Tensor::new(want.shape().to_vec(), decode_to_vec(&buf))
    };
    let mut params = Vec::with_capacity(template.params().len());
    for (i, p) in template.params().iter().enumerate() {
        params.push(match p {
            Some(p) => Some(Params { weight: read(&p.weight, "weight", i)?, bias: read(&p.bias, "bias", i)? }),
            None => None,
        });
    }
    if offset != bytes.len() {
        return Err(fail(offset, format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((Model::from_parts(header.arch, params)?, header.manifest))
}

pub fn save_checkpoint(model: &Model, manifest: &TrainManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint_bytes(model, manifest)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, &path.display().to_string())
}
