//! Run configuration: one TOML file drives every CLI command.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//! variants = ["baseline", "aae", "c_aae"]
//!
//! [data.synthetic]
//! n_users = 4
//!
//! [eval.regime]
//! mode = "kfold"
//! k = 5
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anonymizer::AaeConfig;
use crate::codec::CodecConfig;
use crate::dataio::{self, DatasetDescriptor, SensorWindow, Split, SplitPlan, SyntheticConfig};
use crate::error::{Error, Result};
use crate::harness::{EvalConfig, ExperimentConfig, PipelineVariant, SweepAxis};
use crate::seed;

/// Window length used for loaded datasets when none is given.
pub const DEFAULT_WINDOW_SECONDS: f64 = 2.56;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticConfig>,
    pub dataset: Option<DatasetDescriptor>,
    /// Dataset root; required with `dataset`.
    pub path: Option<PathBuf>,
    /// Defaults to the synthetic window length, or 2.56 s for datasets.
    pub window_seconds: Option<f64>,
    /// Defaults to `window_seconds` (no overlap).
    pub stride_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Activity,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub target: Target,
    /// Domain the classifier reads: `baseline` (raw windows), `aae`
    /// (latents) or `c_aae` (decoded frames).
    pub variant: String,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            target: Target::Activity,
            variant: "c_aae".into(),
        }
    }
}

/// Artifact locations; unset entries default to files inside `out_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub archive: Option<PathBuf>,
    pub aae: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Split, training and evaluation seeds derive from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub variants: Vec<String>,
    pub data: DataConfig,
    pub split: Option<SplitPlan>,
    pub codec: CodecConfig,
    pub aae: AaeConfig,
    pub eval: EvalConfig,
    pub classifier: ClassifierSection,
    pub sweep: Option<SweepAxis>,
    pub paths: Paths,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            variants: vec!["baseline".into(), "aae".into(), "c_aae".into()],
            data: DataConfig::default(),
            split: None,
            codec: CodecConfig::default(),
            aae: AaeConfig::default(),
            eval: EvalConfig::default(),
            classifier: ClassifierSection::default(),
            sweep: None,
            paths: Paths::default(),
            base_dir: PathBuf::new(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() as u64 + 1
}

impl RunConfig {
    /// Parse and validate; `path` names the file in error messages and
    /// anchors relative paths.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.dataset) {
            (Some(_), Some(_)) => return Err(Error::Config("data: give either synthetic or dataset, not both".into())),
            (None, None) => return Err(Error::Config("data: one of [data.synthetic] or [data.dataset] is required".into())),
            (None, Some(_)) if self.data.path.is_none() => {
                return Err(Error::Config("data: dataset needs a path".into()));
            }
            _ => {}
        }
        for (name, v) in [("window_seconds", self.data.window_seconds), ("stride_seconds", self.data.stride_seconds)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("data.{name} must be positive, got {v}")));
                }
            }
        }
        self.variants()?;
        self.classifier_variant()?;
        self.experiment().validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    fn artifact(&self, set: &Option<PathBuf>, default: &str) -> PathBuf {
        set.as_ref().map_or_else(|| self.out().join(default), |p| self.resolve(p))
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.artifact(&self.paths.archive, "archive")
    }

    pub fn aae_path(&self) -> PathBuf {
        self.artifact(&self.paths.aae, "aae.bin")
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.artifact(&self.paths.classifier, "classifier.bin")
    }

    pub fn frames_path(&self) -> PathBuf {
        self.artifact(&self.paths.frames, "frames.bin")
    }

    pub fn variants(&self) -> Result<Vec<PipelineVariant>> {
        if self.variants.is_empty() {
            return Err(Error::Config("variants is empty".into()));
        }
        self.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn classifier_variant(&self) -> Result<PipelineVariant> {
        let v: PipelineVariant = self.classifier.variant.parse()?;
        match v {
            PipelineVariant::Baseline | PipelineVariant::Aae | PipelineVariant::CAae => Ok(v),
            other => Err(Error::Config(format!(
                "classifier.variant must be baseline, aae or c_aae, got {}",
                other.name()
            ))),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            eval: self.eval.clone(),
            codec: self.codec.clone(),
            aae: self.aae.clone(),
        }
    }

    pub fn window_seconds(&self) -> f64 {
        self.data.window_seconds.unwrap_or_else(|| {
            self.data.synthetic.as_ref().map_or(DEFAULT_WINDOW_SECONDS, |s| s.window_seconds)
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        match (&self.data.synthetic, &self.data.dataset) {
            (Some(s), _) => s.sample_rate_hz,
            (_, Some(d)) => d.sample_rate_hz,
            _ => unreachable!("validated"),
        }
    }

    /// Split plan with its seed derived from the master seed.
    pub fn split_plan(&self) -> Option<SplitPlan> {
        self.split.map(|p| SplitPlan {
            seed: seed::derive_named(self.seed, "split"),
            ..p
        })
    }

    /// Ingest and window the configured data source.
    pub fn load_windows(&self) -> Result<Prepared> {
        let window = self.window_seconds();
        let stride = self.data.stride_seconds.unwrap_or(window);
        let (recordings, dropped, source) = match (&self.data.synthetic, &self.data.dataset) {
            (Some(s), _) => (dataio::synthesize(s)?, 0, format!("synthetic seed {}", s.seed)),
            (_, Some(d)) => {
                let path = self.resolve(self.data.path.as_ref().expect("validated"));
                if !path.exists() {
                    return Err(Error::Data(format!("dataset path {} does not exist", path.display())));
                }
                let loaded = dataio::load_dataset(&path, d)?;
                (loaded.recordings, loaded.dropped_rows, path.display().to_string())
            }
            _ => unreachable!("validated"),
        };
        let windows = dataio::window_all(&recordings, window, stride)?;
        let split = self.split_plan().map(|p| dataio::make_split(&windows, &p)).transpose()?;
        Ok(Prepared {
            sample_rate_hz: self.sample_rate_hz(),
            windows,
            split,
            source,
            dropped_rows: dropped,
        })
    }
}

/// Windowed data ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sample_rate_hz: f64,
    pub windows: Vec<SensorWindow>,
    pub split: Option<Split>,
    pub source: String,
    pub dropped_rows: usize,
}

impl Prepared {
    fn pick(&self, idx: &[usize]) -> Vec<SensorWindow> {
        idx.iter().map(|&i| self.windows[i].clone()).collect()
    }

    /// Training side (train plus validation) of the split, or everything.
    pub fn train(&self) -> Vec<SensorWindow> {
        match &self.split {
            Some(s) => {
                let mut idx: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
                idx.sort_unstable();
                self.pick(&idx)
            }
            None => self.windows.clone(),
        }
    }

    /// Test side of the split, or everything.
    pub fn test(&self) -> Vec<SensorWindow> {
        match &self.split {
            Some(s) => self.pick(&s.test),
            None => self.windows.clone(),
        }
    }
}

impl From<dataio::Archive> for Prepared {
    fn from(a: dataio::Archive) -> Self {
        Self {
            sample_rate_hz: a.sample_rate_hz,
            windows: a.windows,
            split: a.split,
            source: a.source,
            dropped_rows: 0,
        }
    }
}
