use std::path::{Path, PathBuf};

use arn_core::ingest::{CsvSchema, SynthConfig, WindowConfig};
use arn_core::models::{ModelKind, ModelSpec, PathConfig, TrainConfig};
use arn_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// A full run description, read from TOML. Every table is optional except
/// `[dataset]`; omitted values take the training protocol defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default = "default_window")]
    pub window: WindowConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_window() -> WindowConfig {
    WindowConfig::new(32, 96).expect("default window is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        channels: usize,
        n_per_class: usize,
        noise_sigma: f64,
        /// Generator seed; the run seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        channel_columns: Option<Vec<String>>,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Per-channel z-score using training statistics.
    pub normalize: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    /// Residual path layout for `arn` and `resnet`: `table` or `resnet50-order`.
    pub preset: String,
    pub width_divisor: usize,
    pub dropout: f64,
    /// Window for single-window models; their kind default (64) when absent.
    pub window: Option<usize>,
    pub codebook_words: Option<usize>,
    pub codebook_length: Option<usize>,
    pub codebook_step: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "arn".into(),
            preset: "table".into(),
            width_divisor: 1,
            dropout: 0.0,
            window: None,
            codebook_words: None,
            codebook_length: None,
            codebook_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub models: Vec<String>,
    /// Also run the ARN over `sweep_windows`.
    pub sweep: bool,
    pub sweep_windows: Vec<[usize; 2]>,
    /// Training runs per row, seeded `seed`, `seed + 1`, ...; rows report the mean.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            models: vec!["arn".into(), "resnet".into()],
            sweep: true,
            sweep_windows: vec![[32, 64], [32, 96], [64, 96]],
            repeats: 1,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let DatasetConfig::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Checks every invariant that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.train.validate()?;
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "split.test_fraction {f} must lie strictly between 0 and 1"
            )));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                channels,
                n_per_class,
                noise_sigma,
                ..
            } => {
                if *classes < 2 || *channels < 1 || *n_per_class < 1 {
                    return Err(Error::Config(format!(
                        "synthetic dataset needs classes ≥ 2, channels ≥ 1, n_per_class ≥ 1 (got {classes}, {channels}, {n_per_class})"
                    )));
                }
                if !(noise_sigma.is_finite() && *noise_sigma >= 0.0) {
                    return Err(Error::Config(format!("noise_sigma {noise_sigma} must be ≥ 0")));
                }
            }
            DatasetConfig::Csv { path, .. } => {
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset {} does not exist", path.display())));
                }
            }
        }
        if self.model.width_divisor == 0 {
            return Err(Error::Config("model.width_divisor must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "model.dropout {} must lie in [0, 1)",
                self.model.dropout
            )));
        }
        self.model_kind(&self.model.kind, self.window)?;
        if self.bench.repeats == 0 {
            return Err(Error::Config("bench.repeats must be ≥ 1".into()));
        }
        for name in &self.bench.models {
            ModelKind::from_name(name)?;
        }
        for &[n, w] in &self.bench.sweep_windows {
            WindowConfig::new(n, w)?.with_stride(self.window.stride)?;
        }
        Ok(())
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                channels,
                n_per_class,
                noise_sigma,
                seed,
            } => Some(SynthConfig {
                classes: *classes,
                channels: *channels,
                n_per_class: *n_per_class,
                noise_sigma: *noise_sigma,
                seed: seed.unwrap_or(self.seed),
            }),
            DatasetConfig::Csv { .. } => None,
        }
    }

    pub fn csv_schema(&self) -> Option<(PathBuf, CsvSchema)> {
        match &self.dataset {
            DatasetConfig::Csv {
                path,
                channel_columns,
                label_column,
            } => Some((
                path.clone(),
                CsvSchema {
                    channel_columns: channel_columns.clone(),
                    label_column: label_column.clone(),
                },
            )),
            DatasetConfig::Synthetic { .. } => None,
        }
    }

    /// The architecture `name` configured by `[model]`, reading pairs cut with `window`.
    pub fn model_kind(&self, name: &str, window: WindowConfig) -> Result<ModelKind> {
        let m = &self.model;
        let mut kind = ModelKind::from_name(name)?;
        match &mut kind {
            ModelKind::Arn(c) => c.path = PathConfig::parse_preset(&m.preset)?,
            ModelKind::Resnet(c) => c.path = PathConfig::parse_preset(&m.preset)?,
            ModelKind::FeatureHead(c) => {
                let cb = &mut c.codebook;
                cb.n = m.codebook_words.unwrap_or(cb.n);
                cb.w = m.codebook_length.unwrap_or(cb.w);
                cb.h = m.codebook_step.unwrap_or(cb.h);
                cb.seed = self.seed;
            }
            _ => {}
        }
        let mut kind = kind.with_width_divisor(m.width_divisor);
        if let ModelKind::Arn(_) = kind {
            kind.set_window(window.t_narrow, window.t_wide);
        } else {
            let t = m.window.unwrap_or_else(|| kind.window());
            if t > window.t_wide {
                return Err(Error::Config(format!(
                    "{name} window {t} is longer than the wide window {} the pairs are cut with",
                    window.t_wide
                )));
            }
            kind.set_window(t, t);
        }
        Ok(kind)
    }

    pub fn model_spec(&self, kind: ModelKind, channels: usize, classes: usize) -> ModelSpec {
        let mut spec = ModelSpec::new(kind, channels, classes);
        spec.dropout = self.model.dropout;
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
source = "synthetic"
classes = 5
channels = 3
n_per_class = 4
noise_sigma = 0.3
"#;

    #[test]
    fn defaults_follow_training_protocol() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!((cfg.window.t_narrow, cfg.window.t_wide, cfg.window.stride), (32, 96, 16));
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.train.learning_rate, 1.0);
        assert_eq!(cfg.train.rho, 0.95);
        assert_eq!(cfg.train.epsilon, 1e-6);
        assert!(cfg.split.normalize);
        assert_eq!(cfg.model.kind, "arn");
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invariant_violations() {
        let bad = |extra: &str| {
            let cfg = RunConfig::parse(&format!("{extra}\n{MINIMAL}")).and_then(|c| c.validate());
            assert!(matches!(cfg, Err(Error::Config(_))), "{extra}: {cfg:?}");
        };
        bad("[window]\nt_narrow = 96\nt_wide = 32\nstride = 16");
        bad("[window]\nt_narrow = 32\nt_wide = 96\nstride = 0");
        bad("[split]\ntest_fraction = 1.0");
        bad("[model]\nkind = \"svm\"");
        bad("[model]\nkind = \"resnet\"\nwindow = 128");
        bad("[model]\npreset = \"vgg\"");
        bad("[model]\nwidth_divisor = 0");
        bad("[train]\nbatch_size = 0");
        bad("[bench]\nmodels = [\"arn\", \"gru\"]");
        bad("typo = 1");
        let missing = MINIMAL.replace("source = \"synthetic\"", "source = \"csv\"\npath = \"/nonexistent.csv\"");
        let missing = missing.replace("classes = 5\nchannels = 3\nn_per_class = 4\nnoise_sigma = 0.3\n", "");
        assert!(RunConfig::parse(&missing).unwrap().validate().is_err());
    }

    #[test]
    fn baselines_read_trailing_window() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let kind = cfg.model_kind("resnet", cfg.window).unwrap();
        assert_eq!(kind.window_label(), "64");
        let kind = cfg.model_kind("arn", cfg.window).unwrap();
        assert_eq!(kind.window_label(), "32-96");
    }
}
