//! Flag values merged with an optional TOML config file. Keys in the file use
//! the flag names with `-` replaced by `_`; flags given on the command line win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use saflab::data::{DatasetKind, DatasetSource, SynthSpec};
use saflab::{Error, Result, SafKind, StoredDType};

#[derive(Debug, Default, Clone, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// TOML file with defaults for any of these flags
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Weight SAF: none, tanh, tanh0.5, softsign, arctan, tanhC:<c>
    #[arg(long)]
    pub saf: Option<String>,
    /// Stored weight encoding: fp32, fp16, q2.5
    #[arg(long)]
    pub dtype: Option<String>,
    /// Bit-error rate; repeat for a sweep
    #[arg(long = "ber")]
    #[serde(default)]
    pub ber: Vec<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads for Monte Carlo rounds (0 = all cores)
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// cifar10, mnist or synth
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Use only the first N samples of the split
    #[arg(long, value_name = "N")]
    pub subset: Option<usize>,

    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// cnn-s or mlp
    #[arg(long)]
    pub arch: Option<String>,
    /// Hidden width of the mlp architecture
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f32>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    /// sgd_momentum or adamw
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Random flips and crops on training batches (default: on for cifar10)
    #[arg(long)]
    pub augment: Option<bool>,

    #[arg(skip)]
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

impl Settings {
    /// Fills unset fields from the `--config` file, if any.
    pub fn resolve(self) -> Result<Settings> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        Ok(self.or(file))
    }

    fn or(self, f: Settings) -> Settings {
        Settings {
            config: self.config,
            saf: self.saf.or(f.saf),
            dtype: self.dtype.or(f.dtype),
            ber: if self.ber.is_empty() { f.ber } else { self.ber },
            rounds: self.rounds.or(f.rounds),
            seed: self.seed.or(f.seed),
            workers: self.workers.or(f.workers),
            out: self.out.or(f.out),
            dataset: self.dataset.or(f.dataset),
            data_dir: self.data_dir.or(f.data_dir),
            subset: self.subset.or(f.subset),
            checkpoint: self.checkpoint.or(f.checkpoint),
            arch: self.arch.or(f.arch),
            hidden: self.hidden.or(f.hidden),
            epochs: self.epochs.or(f.epochs),
            lr: self.lr.or(f.lr),
            batch_size: self.batch_size.or(f.batch_size),
            momentum: self.momentum.or(f.momentum),
            weight_decay: self.weight_decay.or(f.weight_decay),
            optimizer: self.optimizer.or(f.optimizer),
            augment: self.augment.or(f.augment),
            synth: self.synth.or(f.synth),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn saf(&self) -> Result<Option<SafKind>> {
        self.saf.as_deref().map(str::parse).transpose()
    }

    pub fn dtype(&self) -> Result<StoredDType> {
        self.dtype.as_deref().map_or(Ok(StoredDType::Fp32), str::parse)
    }

    pub fn dataset_kind(&self) -> Result<DatasetKind> {
        self.dataset.as_deref().map_or(Ok(DatasetKind::Cifar10), str::parse)
    }

    pub fn dataset(&self) -> Result<DatasetSource> {
        let kind = self.dataset_kind()?;
        let source = match kind {
            DatasetKind::Synth => DatasetSource::synthetic(self.synth.clone().unwrap_or(SynthSpec {
                classes: 10,
                n_per_class: 200,
                dim: 32,
                separation: 4.0,
                seed: self.seed(),
            })),
            _ => {
                let dir = self
                    .data_dir
                    .clone()
                    .ok_or_else(|| Error::Config(format!("--data-dir is required for dataset {kind}")))?;
                DatasetSource::directory(kind, absolute(dir)?)
            }
        };
        Ok(source.with_subset(self.subset))
    }

    pub fn require_checkpoint(&self) -> Result<PathBuf> {
        self.checkpoint
            .clone()
            .ok_or_else(|| Error::Config("--checkpoint is required".into()))
            .and_then(absolute)
    }

    pub fn require_out(&self) -> Result<PathBuf> {
        self.out.clone().ok_or_else(|| Error::Config("--out is required".into()))
    }
}

fn absolute(p: PathBuf) -> Result<PathBuf> {
    std::path::absolute(&p).map_err(|e| Error::io(p, e))
}

fn read_config(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Settings = toml::from_str("saf = \"tanh\"\nrounds = 7\nber = [1e-5, 1e-4]\n").unwrap();
        let cli = Settings { rounds: Some(3), ..Default::default() };
        let s = cli.or(file);
        assert_eq!(s.rounds, Some(3));
        assert_eq!(s.saf().unwrap(), Some(SafKind::Tanh));
        assert_eq!(s.ber, vec![1e-5, 1e-4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("sav = \"tanh\"\n").is_err());
    }

    #[test]
    fn synth_table() {
        let s: Settings =
            toml::from_str("dataset = \"synth\"\n[synth]\nclasses = 4\nn_per_class = 3\ndim = 2\nseparation = 1.0\nseed = 9\n")
                .unwrap();
        let src = s.dataset().unwrap();
        assert_eq!(src.synth.unwrap().classes, 4);
    }

    #[test]
    fn real_datasets_need_a_directory() {
        let s = Settings { dataset: Some("mnist".into()), ..Default::default() };
        assert_eq!(s.dataset().unwrap_err().category(), "config");
    }
}
