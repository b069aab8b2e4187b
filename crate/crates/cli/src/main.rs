mod settings;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use saflab::data::{DatasetKind, Split};
use saflab::harness::{
    campaign_inputs, load_checkpoint, run_protocol, save_checkpoint, sweep_and_emit, top1, Campaign, Protocol, TrainManifest,
};
use saflab::optim::{train, TrainConfig};
use saflab::{ArchSpec, Error, Model, Result, SafKind};

use settings::Settings;

/// Train networks with saturated weight activations and measure their
/// accuracy under random bit flips in the stored weights.
#[derive(Parser, Debug)]
#[command(name = "saflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from scratch (SGD momentum, cosine schedule) and write OUT/model.ckpt
    Train(Settings),
    /// Continue training CHECKPOINT with a new SAF (AdamW, lr 1e-5, 5 epochs by default)
    Finetune(Settings),
    /// Run a fault campaign on CHECKPOINT and print the report as JSON
    Evaluate(Settings),
    /// Run a fault campaign and write results.csv, summary.csv and manifest.json to OUT
    Sweep(Settings),
    /// Print the architecture, parameter counts and training manifest of a checkpoint
    InspectCheckpoint {
        path: std::path::PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_failure("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_failure(e.category(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn report_failure(category: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "category": category, "message": message.trim_end() } }));
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "input" => 4,
        "dimension" => 5,
        "format" => 6,
        "io" => 7,
        _ => 1,
    }
}

fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Train(s) => cmd_train(s.resolve()?),
        Command::Finetune(s) => cmd_finetune(s.resolve()?),
        Command::Evaluate(s) => cmd_evaluate(s.resolve()?),
        Command::Sweep(s) => cmd_sweep(s.resolve()?),
        Command::InspectCheckpoint { path } => cmd_inspect(&path),
    }
}

fn train_config(s: &Settings, mut cfg: TrainConfig, kind: DatasetKind) -> Result<TrainConfig> {
    if let Some(o) = &s.optimizer {
        cfg.optimizer = o.parse()?;
    }
    cfg.lr0 = s.lr.unwrap_or(cfg.lr0);
    cfg.momentum = s.momentum.unwrap_or(cfg.momentum);
    cfg.weight_decay = s.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.epochs = s.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = s.batch_size.unwrap_or(cfg.batch_size);
    cfg.augment = s.augment.unwrap_or(kind.default_augment());
    cfg.validate()?;
    Ok(cfg)
}

fn fit(mut model: Model, s: &Settings, cfg: TrainConfig, parent: Option<String>) -> Result<serde_json::Value> {
    let source = s.dataset()?;
    let train_set = source.load(Split::Train)?;
    let history = train(&mut model, &train_set, &cfg, |e| {
        eprintln!("epoch {:>3}  lr {:.3e}  loss {:.4}  train top-1 {:.2}", e.epoch, e.lr, e.mean_loss, e.train_top1)
    })?;
    let out = s.require_out()?;
    let path = out.join("model.ckpt");
    let manifest = TrainManifest { dataset: Some(source.clone()), train: Some(cfg), init_seed: s.seed(), parent, history };
    save_checkpoint(&model, &manifest, &path)?;
    let test = source.load(Split::Test)?;
    Ok(json!({
        "checkpoint": path,
        "arch": model.arch().name,
        "saf": model.arch().saf,
        "train_samples": train_set.len(),
        "final_loss": manifest.history.last().map(|h| h.mean_loss),
        "test_top1": top1(&model, &test)?,
    }))
}

fn cmd_train(s: Settings) -> Result<serde_json::Value> {
    let source = s.dataset()?;
    let probe = source.clone().with_subset(Some(1)).load(Split::Test)?;
    let saf = s.saf()?.unwrap_or(SafKind::None);
    let shape = probe.sample_shape();
    let arch_name = s.arch.clone().unwrap_or_else(|| {
        if source.kind == DatasetKind::Synth { "mlp" } else { "cnn-s" }.into()
    });
    let arch = match arch_name.as_str() {
        "cnn-s" | "cnn_s" => ArchSpec::cnn_s(shape, probe.class_count, saf),
        "mlp" => ArchSpec::mlp(&shape, &[s.hidden.unwrap_or(128)], probe.class_count, saf),
        other => return Err(Error::Config(format!("unknown arch {other:?} (expected cnn-s|mlp)"))),
    };
    let model = Model::init(arch, s.seed())?;
    let cfg = train_config(&s, TrainConfig::scratch(200, s.seed()), source.kind)?;
    fit(model, &s, cfg, None)
}

fn cmd_finetune(s: Settings) -> Result<serde_json::Value> {
    let ckpt = s.require_checkpoint()?;
    let (mut model, _) = load_checkpoint(&ckpt)?;
    let saf = s.saf()?.ok_or_else(|| Error::Config("--saf is required for finetune".into()))?;
    model.set_saf(saf);
    let cfg = train_config(&s, TrainConfig::finetune(s.seed()), s.dataset_kind()?)?;
    fit(model, &s, cfg, Some(ckpt.display().to_string()))
}

fn campaign(s: &Settings) -> Result<Campaign> {
    let mut protocol = Protocol::new(
        s.dtype()?,
        if s.ber.is_empty() { vec![0.0] } else { s.ber.clone() },
        s.rounds.unwrap_or(100),
        s.seed(),
    );
    protocol.workers = s.workers.unwrap_or(1);
    protocol.validate()?;
    Ok(Campaign { model_checkpoint: s.require_checkpoint()?, dataset: s.dataset()?, saf: s.saf()?, protocol })
}

fn cmd_evaluate(s: Settings) -> Result<serde_json::Value> {
    let c = campaign(&s)?;
    let (model, test, _) = campaign_inputs(&c)?;
    let report = run_protocol(&model, &test, &c.protocol)?;
    let rows: Vec<_> = report
        .results
        .iter()
        .map(|r| {
            json!({
                "ber": r.ber,
                "mean": r.mean,
                "std": r.std,
                "degradation": report.clean_top1 - r.mean,
                "mean_flip_count": r.mean_flip_count,
                "round_top1": r.round_top1,
            })
        })
        .collect();
    Ok(json!({
        "checkpoint": c.model_checkpoint,
        "saf": model.arch().saf,
        "dtype": report.dtype,
        "test_samples": test.len(),
        "rounds": c.protocol.rounds,
        "clean_top1": report.clean_top1,
        "results": rows,
    }))
}

fn cmd_sweep(s: Settings) -> Result<serde_json::Value> {
    let c = campaign(&s)?;
    let out = s.require_out()?;
    let report = sweep_and_emit(&c, &out)?;
    let summary: Vec<_> = report.results.iter().map(|r| json!({ "ber": r.ber, "mean": r.mean, "std": r.std })).collect();
    Ok(json!({ "out": out, "clean_top1": report.clean_top1, "summary": summary }))
}

fn cmd_inspect(path: &Path) -> Result<serde_json::Value> {
    let (model, manifest) = load_checkpoint(path)?;
    let layers: Vec<_> = model
        .arch()
        .layers
        .iter()
        .zip(model.params())
        .enumerate()
        .map(|(i, (layer, p))| {
            let mut v = json!({ "layer": layer });
            if let Some(p) = p {
                let w = p.weight.data();
                let max_abs = w.iter().fold(0.0f32, |m, x| m.max(x.abs()));
                v["weight_shape"] = json!(p.weight.shape());
                v["saf"] = json!(model.arch().layer_saf(i));
                v["max_abs_raw_weight"] = json!(max_abs);
            }
            v
        })
        .collect();
    Ok(json!({
        "path": path,
        "arch": model.arch().name,
        "input_shape": model.input_shape(),
        "classes": model.class_count(),
        "saf": model.arch().saf,
        "weights": model.weight_count(),
        "parameters": model.parameter_count(),
        "layers": layers,
        "manifest": manifest,
    }))
}
