//! Experiment orchestration: cross-validated comparison of the baseline,
//! DP, AAE, C-AAE and ADPCM-only pipelines, criteria verdicts and sweeps.
//!
//! Every variant in one call sees the same fold index sets, and variants that
//! share an autoencoder configuration share the trained model within a fold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anonymizer::{self, AaeConfig, AaeModel, LATENT_STEPS};
use crate::codec::{self, CodecConfig, CompressionStats};
use crate::dataio::{self, SensorWindow, SplitMode, SplitPlan};
use crate::dpnoise::FeatureSensitivity;
use crate::error::{Error, Result};
use crate::estimators::{self, ClassifierConfig, InputKind};
use crate::features::FeatureExtractor;
use crate::seed;

pub const REPORT_VERSION: u32 = 1;
/// Requirement 1: activity F1 may drop by at most this much.
pub const UTILITY_MARGIN: f64 = 0.05;
/// Absorbs rounding when a difference lands exactly on a threshold.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineVariant {
    Baseline,
    Dp { epsilon: f64 },
    Aae,
    CAae,
    AdpcmOnly,
}

impl PipelineVariant {
    pub fn name(&self) -> String {
        match self {
            Self::Baseline => "baseline".into(),
            Self::Dp { epsilon } => format!("dp:{epsilon}"),
            Self::Aae => "aae".into(),
            Self::CAae => "c_aae".into(),
            Self::AdpcmOnly => "adpcm_only".into(),
        }
    }

    /// Column heading for Markdown tables.
    pub fn title(&self) -> String {
        match self {
            Self::Baseline => "Baseline".into(),
            Self::Dp { epsilon } => format!("DP ε={epsilon}"),
            Self::Aae => "AAE".into(),
            Self::CAae => "C-AAE".into(),
            Self::AdpcmOnly => "ADPCM only".into(),
        }
    }

    pub fn uses_aae(&self) -> bool {
        matches!(self, Self::Aae | Self::CAae)
    }

    pub fn uses_codec(&self) -> bool {
        matches!(self, Self::CAae | Self::AdpcmOnly)
    }
}

impl FromStr for PipelineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "baseline" => Self::Baseline,
            "aae" => Self::Aae,
            "c_aae" | "c-aae" | "caae" => Self::CAae,
            "adpcm_only" | "adpcm-only" | "adpcm" => Self::AdpcmOnly,
            _ => {
                let eps = s
                    .strip_prefix("dp:")
                    .or_else(|| s.strip_prefix("dp="))
                    .ok_or_else(|| Error::Config(format!("unknown variant `{s}`; expected baseline, dp:<epsilon>, aae, c_aae or adpcm_only")))?;
                let epsilon: f64 = eps.parse().map_err(|_| Error::Config(format!("bad epsilon in variant `{s}`")))?;
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be positive in variant `{s}`")));
                }
                Self::Dp { epsilon }
            }
        })
    }
}

/// What the estimators read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorInput {
    /// Feature vectors for raw-domain variants, flattened latents for the
    /// autoencoder variants.
    Auto,
    /// Per-channel statistics everywhere; latents are treated as `d`
    /// channels sampled at `rate × 16 / W`.
    #[default]
    Features,
    /// Flattened magnitude windows for raw-domain variants, flattened
    /// latents for the autoencoder variants.
    Flattened,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalRegime {
    /// Stratified k-fold over (user, activity) cells; both targets share folds.
    Kfold { k: usize },
    /// Per repetition: activity is tested on held-out users, user identity on
    /// a per-user ratio split. Transforms are fitted on windows that are on
    /// the training side of both.
    RepeatedSplit {
        repeats: usize,
        held_out_users: usize,
        train_fraction: f64,
    },
}

impl Default for EvalRegime {
    fn default() -> Self {
        Self::Kfold { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub regime: EvalRegime,
    /// Independent repetitions of the whole regime, each with its own seed.
    pub replicates: usize,
    pub estimator: ClassifierConfig,
    pub input: EstimatorInput,
    /// Classify C-AAE on raw codes instead of decoded latents (ablation).
    pub classify_codes: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            regime: EvalRegime::default(),
            replicates: 1,
            estimator: ClassifierConfig::default(),
            input: EstimatorInput::Features,
            classify_codes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub eval: EvalConfig,
    pub codec: CodecConfig,
    pub aae: AaeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.aae.validate()?;
        if self.eval.replicates == 0 {
            return Err(Error::Config("eval.replicates must be at least 1".into()));
        }
        match self.eval.regime {
            EvalRegime::Kfold { k } if k < 2 => Err(Error::Config(format!("k-fold needs k ≥ 2, got {k}"))),
            EvalRegime::RepeatedSplit { repeats: 0, .. } => Err(Error::Config("repeats must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Short content hash identifying the configuration in error messages.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        crate::dataio::hex(&Sha256::digest(text.as_bytes()))[..16].to_string()
    }
}

/// Windows plus the label universe the metrics are computed over.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub windows: Vec<SensorWindow>,
    pub sample_rate_hz: f64,
    pub users: Vec<u32>,
    pub activities: Vec<u32>,
}

impl Dataset {
    pub fn new(windows: Vec<SensorWindow>, sample_rate_hz: f64) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Data("dataset has no windows".into()))?;
        let shape = (first.channels(), first.len());
        if let Some(w) = windows.iter().find(|w| (w.channels(), w.len()) != shape) {
            return Err(Error::Shape(format!(
                "window {}x{} among {}x{} windows",
                w.channels(),
                w.len(),
                shape.0,
                shape.1
            )));
        }
        let mut users: Vec<u32> = windows.iter().map(|w| w.user_id).collect();
        users.sort_unstable();
        users.dedup();
        let mut activities: Vec<u32> = windows.iter().map(|w| w.activity_id).collect();
        activities.sort_unstable();
        activities.dedup();
        if users.len() < 2 || activities.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 users and 2 activities, found {} and {}",
                users.len(),
                activities.len()
            )));
        }
        Ok(Self {
            windows,
            sample_rate_hz,
            users,
            activities,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

/// Disjoint folds covering `0..labels.len()`. Within each class the members
/// are shuffled and dealt round-robin, continuing where the previous class
/// stopped, so per-class counts differ by at most one across folds.
pub fn stratified_kfold<L: Ord + Copy + std::fmt::Debug>(labels: &[L], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k ≥ 2, got {k}")));
    }
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut idx) in by_class {
        if idx.len() < k {
            return Err(Error::Data(format!("class {class:?} has {} member(s), fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub replicate: usize,
    pub fold: usize,
    pub seed: u64,
    /// Hash of the fold's index sets; equal across paired variants.
    pub folds_digest: String,
    pub activity_f1: f64,
    pub user_f1: f64,
    pub activity_accuracy: f64,
    pub user_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub bits_per_code: u8,
    pub payload_ratio: f64,
    pub total_ratio: f64,
    pub header_overhead: f64,
    pub payload_bytes_per_frame: usize,
    pub frame_bytes: usize,
    /// Codec reconstruction SNR over all encoded blocks, in dB.
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Distance to the threshold, positive on the passing side.
    pub margin: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Activity F1 within 5 points of the baseline.
    pub req1: Verdict,
    /// User macro F1 at or below chance `1/n`.
    pub req2: Verdict,
    /// The same chance test on top-1 accuracy.
    pub req2_accuracy: Verdict,
    /// Macro F1 and accuracy disagree on requirement 2.
    pub req2_metrics_disagree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub variant: String,
    pub n_windows: usize,
    pub n_users: usize,
    pub n_activities: usize,
    pub activity_f1: Summary,
    pub user_f1: Summary,
    pub activity_accuracy: Summary,
    pub user_accuracy: Summary,
    pub baseline_activity_f1: f64,
    pub verdicts: Verdicts,
    pub compression: Option<CompressionSummary>,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub folds: Vec<FoldResult>,
    /// Not written to report files, which must be reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    fn mean_of(&self, f: impl Fn(&FoldResult) -> f64) -> f64 {
        self.folds.iter().map(f).sum::<f64>() / self.folds.len().max(1) as f64
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }
}

/// Requirement verdicts for `report` against `baseline`.
pub fn check_criteria(report: &ExperimentReport, baseline: &ExperimentReport, n_users: usize) -> Result<Verdicts> {
    let digests = |r: &ExperimentReport| r.folds.iter().map(|f| f.folds_digest.clone()).collect::<Vec<_>>();
    if report.n_windows != baseline.n_windows || digests(report) != digests(baseline) {
        return Err(Error::Config("report and baseline were evaluated on different folds".into()));
    }
    criteria_from(
        baseline.mean_of(|f| f.activity_f1),
        report.mean_of(|f| f.activity_f1),
        report.mean_of(|f| f.user_f1),
        report.mean_of(|f| f.user_accuracy),
        n_users,
    )
}

/// Verdicts from bare numbers. Both boundaries are inclusive.
pub fn criteria_from(baseline_activity: f64, activity: f64, user_f1: f64, user_accuracy: f64, n_users: usize) -> Result<Verdicts> {
    if n_users == 0 {
        return Err(Error::Config("n_users must be positive".into()));
    }
    let chance = 1.0 / n_users as f64;
    let drop = baseline_activity - activity;
    let req1 = Verdict {
        pass: drop <= UTILITY_MARGIN + BOUNDARY_TOLERANCE,
        margin: UTILITY_MARGIN - drop,
        threshold: UTILITY_MARGIN,
    };
    let chance_verdict = |v: f64| Verdict {
        pass: v <= chance + BOUNDARY_TOLERANCE,
        margin: chance - v,
        threshold: chance,
    };
    let req2 = chance_verdict(user_f1);
    let req2_accuracy = chance_verdict(user_accuracy);
    Ok(Verdicts {
        req1,
        req2,
        req2_accuracy,
        req2_metrics_disagree: req2.pass != req2_accuracy.pass,
    })
}

/// One evaluated configuration: a variant with the codec and autoencoder
/// settings it runs under.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub variant: PipelineVariant,
    pub codec: CodecConfig,
    pub aae: AaeConfig,
}

struct Unit {
    replicate: usize,
    fold: usize,
    seed: u64,
    fit: Vec<usize>,
    activity: (Vec<usize>, Vec<usize>),
    user: (Vec<usize>, Vec<usize>),
    digest: String,
}

fn index_digest(lists: &[&[usize]]) -> String {
    let mut h = Sha256::new();
    for l in lists {
        h.update((l.len() as u64).to_le_bytes());
        for &i in *l {
            h.update((i as u64).to_le_bytes());
        }
    }
    crate::dataio::hex(&h.finalize())[..16].to_string()
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn make_units(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<Unit>> {
    let n = data.windows.len();
    let mut units = Vec::new();
    for r in 0..cfg.eval.replicates {
        let rep_seed = seed::derive(cfg.seed, r as u64);
        match cfg.eval.regime {
            EvalRegime::Kfold { k } => {
                let cells: Vec<(u32, u32)> = data.windows.iter().map(|w| (w.user_id, w.activity_id)).collect();
                let folds = stratified_kfold(&cells, k, seed::derive_named(rep_seed, "folds"))?;
                for (f, test) in folds.into_iter().enumerate() {
                    let train = complement(n, &test);
                    units.push(Unit {
                        replicate: r,
                        fold: f,
                        seed: seed::derive(rep_seed, f as u64),
                        digest: index_digest(&[&train, &test]),
                        fit: train.clone(),
                        activity: (train.clone(), test.clone()),
                        user: (train, test),
                    });
                }
            }
            EvalRegime::RepeatedSplit {
                repeats,
                held_out_users,
                train_fraction,
            } => {
                let users: Vec<u32> = data.windows.iter().map(|w| w.user_id).collect();
                for f in 0..repeats {
                    let unit_seed = seed::derive(rep_seed, f as u64);
                    let act = dataio::split_by_user(
                        &users,
                        &SplitPlan {
                            mode: SplitMode::ActivityHeldOutUsers {
                                held_out_user_count: held_out_users,
                            },
                            validation_fraction: 0.0,
                            seed: seed::derive_named(unit_seed, "activity-split"),
                        },
                    )?;
                    let usr = dataio::split_by_user(
                        &users,
                        &SplitPlan {
                            mode: SplitMode::UserRatio { train_fraction },
                            validation_fraction: 0.0,
                            seed: seed::derive_named(unit_seed, "user-split"),
                        },
                    )?;
                    let mut act_train = act.train.clone();
                    act_train.sort_unstable();
                    let fit: Vec<usize> = usr.train.iter().copied().filter(|i| act_train.binary_search(i).is_ok()).collect();
                    let mut fit = fit;
                    fit.sort_unstable();
                    units.push(Unit {
                        replicate: r,
                        fold: f,
                        seed: unit_seed,
                        digest: index_digest(&[&act.train, &act.test, &usr.train, &usr.test]),
                        fit,
                        activity: (act.train, act.test),
                        user: (usr.train, usr.test),
                    });
                }
            }
        }
    }
    Ok(units)
}

/// Unit-independent transforms, computed once.
struct Shared {
    raw_features: Option<Array2<f64>>,
    raw_flat: Option<Array2<f64>>,
    adpcm: BTreeMap<String, (Array2<f64>, CompressionSummary)>,
}

fn flat_rows(windows: &[SensorWindow]) -> Array2<f64> {
    let d = windows[0].values.len();
    let mut m = Array2::zeros((windows.len(), d));
    for (w, mut row) in windows.iter().zip(m.rows_mut()) {
        row.assign(&ndarray::ArrayView1::from(&w.flatten()[..]));
    }
    m
}

fn magnitude_rows(windows: &[SensorWindow]) -> Result<Array2<f64>> {
    let mags = windows.iter().map(dataio::magnitude).collect::<Result<Vec<_>>>()?;
    Ok(flat_rows(&mags))
}

fn feature_rows(blocks: &[Array2<f64>], rate: f64) -> Result<Array2<f64>> {
    let ex = FeatureExtractor::new(blocks[0].ncols(), rate)?;
    let rows = blocks.iter().map(|b| ex.extract_values(b)).collect::<Result<Vec<_>>>()?;
    let d = rows[0].len();
    Ok(Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("rectangular"))
}

fn codec_key(c: &CodecConfig) -> String {
    toml::to_string(c).unwrap_or_default()
}

/// Encode every block, decode it, and summarize the stream.
fn codec_pass(blocks: &[Array2<f64>], cfg: &CodecConfig) -> Result<(Vec<Array2<f64>>, Vec<Vec<i8>>, CompressionSummary)> {
    let mut decoded = Vec::with_capacity(blocks.len());
    let mut codes = Vec::with_capacity(blocks.len());
    let (mut signal, mut noise) = (0.0, 0.0);
    let mut stats = None;
    for b in blocks {
        let frame = codec::encode_block(b, cfg)?;
        let z = codec::decode_frame(&frame)?;
        signal += b.iter().map(|v| v * v).sum::<f64>();
        noise += b.iter().zip(&z).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        if stats.is_none() {
            stats = Some((CompressionStats::of(&frame, cfg.reference_bits), frame.payload_bytes(), frame.byte_len()));
        }
        codes.push(frame.codes);
        decoded.push(z);
    }
    let (s, payload, frame_bytes) = stats.ok_or_else(|| Error::Data("no blocks to encode".into()))?;
    let summary = CompressionSummary {
        bits_per_code: cfg.bits_per_code,
        payload_ratio: s.payload_ratio,
        total_ratio: s.total_ratio,
        header_overhead: s.header_overhead,
        payload_bytes_per_frame: payload,
        frame_bytes,
        snr_db: if noise == 0.0 { f64::INFINITY } else { 10.0 * (signal / noise).log10() },
    };
    Ok((decoded, codes, summary))
}

fn raw_input(shared: &Shared, input: EstimatorInput) -> &Array2<f64> {
    match input {
        EstimatorInput::Flattened => shared.raw_flat.as_ref().expect("prepared"),
        _ => shared.raw_features.as_ref().expect("prepared"),
    }
}

fn prepare_shared(data: &Dataset, cfg: &ExperimentConfig, arms: &[Arm]) -> Result<Shared> {
    let blocks: Vec<Array2<f64>> = data.windows.iter().map(|w| w.values.clone()).collect();
    let flat = cfg.eval.input == EstimatorInput::Flattened;
    let mut shared = Shared {
        raw_features: if flat { None } else { Some(feature_rows(&blocks, data.sample_rate_hz)?) },
        raw_flat: if flat { Some(magnitude_rows(&data.windows)?) } else { None },
        adpcm: BTreeMap::new(),
    };
    for arm in arms.iter().filter(|a| a.variant == PipelineVariant::AdpcmOnly) {
        let key = codec_key(&arm.codec);
        if shared.adpcm.contains_key(&key) {
            continue;
        }
        let (decoded, _, summary) = codec_pass(&blocks, &arm.codec)?;
        let m = if flat {
            let wins: Vec<SensorWindow> = decoded
                .into_iter()
                .zip(&data.windows)
                .map(|(values, w)| SensorWindow { values, ..w.clone() })
                .collect();
            magnitude_rows(&wins)?
        } else {
            feature_rows(&decoded, data.sample_rate_hz)?
        };
        shared.adpcm.insert(key, (m, summary));
    }
    Ok(shared)
}

struct ArmOutcome {
    fold: FoldResult,
    compression: Option<CompressionSummary>,
}

fn evaluate(data: &Dataset, unit: &Unit, x: &Array2<f64>, cfg: &ExperimentConfig, kind: InputKind) -> Result<FoldResult> {
    let mut scores = Vec::new();
    for (target, (train, test), classes) in [
        ("activity", &unit.activity, &data.activities),
        ("user", &unit.user, &data.users),
    ] {
        let labels = |idx: &[usize]| -> Vec<u32> {
            idx.iter()
                .map(|&i| {
                    let w = &data.windows[i];
                    if target == "activity" { w.activity_id } else { w.user_id }
                })
                .collect()
        };
        let est = ClassifierConfig {
            seed: seed::derive_named(unit.seed, target),
            ..cfg.eval.estimator.clone()
        };
        let (model, _) = estimators::train_classifier(x.select(Axis(0), train).view(), &labels(train), &est, kind)?;
        let preds = model.predict_batch(x.select(Axis(0), test).view())?;
        let pred_labels: Vec<u32> = preds.iter().map(|p| p.label).collect();
        let p = estimators::densify(&pred_labels, classes)?;
        let t = estimators::densify(&labels(test), classes)?;
        scores.push((estimators::macro_f1(&p, &t, classes.len())?, estimators::accuracy(&p, &t)?));
    }
    Ok(FoldResult {
        replicate: unit.replicate,
        fold: unit.fold,
        seed: unit.seed,
        folds_digest: unit.digest.clone(),
        activity_f1: scores[0].0,
        user_f1: scores[1].0,
        activity_accuracy: scores[0].1,
        user_accuracy: scores[1].1,
    })
}

fn run_unit(data: &Dataset, cfg: &ExperimentConfig, shared: &Shared, unit: &Unit, arms: &[Arm]) -> (FoldResult, Vec<Result<ArmOutcome>>) {
    let digest = cfg.digest();
    let raw = raw_input(shared, cfg.eval.input);
    let baseline = evaluate(data, unit, raw, cfg, InputKind::FeatureVector);
    let baseline = match baseline {
        Ok(b) => b,
        Err(e) => {
            let msg = e.to_string();
            return (
                FoldResult {
                    replicate: unit.replicate,
                    fold: unit.fold,
                    seed: unit.seed,
                    folds_digest: unit.digest.clone(),
                    activity_f1: f64::NAN,
                    user_f1: f64::NAN,
                    activity_accuracy: f64::NAN,
                    user_accuracy: f64::NAN,
                },
                arms.iter().map(|_| Err(Error::Data(format!("baseline failed: {msg}")).in_stage("estimator", &digest))).collect(),
            );
        }
    };
    let raw_kind = if cfg.eval.input == EstimatorInput::Flattened { InputKind::FlattenedWindow } else { InputKind::FeatureVector };
    let mut models: Vec<(AaeConfig, Result<(AaeModel, Array2<f64>)>)> = Vec::new();
    let fit_windows: Vec<SensorWindow> = if arms.iter().any(|a| a.variant.uses_aae()) {
        unit.fit.iter().map(|&i| data.windows[i].clone()).collect()
    } else {
        Vec::new()
    };

    let mut outcomes = Vec::with_capacity(arms.len());
    for arm in arms {
        let result = (|| -> Result<ArmOutcome> {
            match arm.variant {
                PipelineVariant::Baseline => Ok(ArmOutcome {
                    fold: baseline.clone(),
                    compression: None,
                }),
                PipelineVariant::Dp { epsilon } => {
                    let fit = raw.select(Axis(0), &unit.fit);
                    let sens = FeatureSensitivity::fit(fit.view()).map_err(|e| e.in_stage("dp", &digest))?;
                    let noisy = sens
                        .apply(raw.view(), epsilon, seed::derive_named(unit.seed, "dp"), 0)
                        .map_err(|e| e.in_stage("dp", &digest))?;
                    Ok(ArmOutcome {
                        fold: evaluate(data, unit, &noisy, cfg, raw_kind).map_err(|e| e.in_stage("estimator", &digest))?,
                        compression: None,
                    })
                }
                PipelineVariant::AdpcmOnly => {
                    let (m, summary) = &shared.adpcm[&codec_key(&arm.codec)];
                    Ok(ArmOutcome {
                        fold: evaluate(data, unit, m, cfg, raw_kind).map_err(|e| e.in_stage("estimator", &digest))?,
                        compression: Some(summary.clone()),
                    })
                }
                PipelineVariant::Aae | PipelineVariant::CAae => {
                    if !models.iter().any(|(c, _)| *c == arm.aae) {
                        let aae_cfg = AaeConfig {
                            seed: seed::derive_named(unit.seed, "aae"),
                            ..arm.aae.clone()
                        };
                        let trained = anonymizer::train_aae(&fit_windows, &aae_cfg)
                            .and_then(|(m, _)| {
                                let z = m.latent_matrix(&data.windows)?;
                                Ok((m, z))
                            })
                            .map_err(|e| e.in_stage("aae", &digest));
                        models.push((arm.aae.clone(), trained));
                    }
                    let (_, trained) = models.iter().find(|(c, _)| *c == arm.aae).expect("inserted");
                    let (model, z) = trained.as_ref().map_err(|e| Error::Data(e.to_string()))?;
                    let d = model.latent_channels();
                    let to_blocks = |m: &Array2<f64>| -> Vec<Array2<f64>> {
                        m.rows()
                            .into_iter()
                            .map(|r| r.to_owned().into_shape_with_order((d, LATENT_STEPS)).expect("latent"))
                            .collect()
                    };
                    let latent_rate = data.sample_rate_hz * LATENT_STEPS as f64 / model.window_len as f64;
                    let latent_input = |m: &Array2<f64>| -> Result<(Array2<f64>, InputKind)> {
                        if cfg.eval.input == EstimatorInput::Features {
                            Ok((feature_rows(&to_blocks(m), latent_rate)?, InputKind::FeatureVector))
                        } else {
                            Ok((m.clone(), InputKind::FlattenedLatent))
                        }
                    };
                    let (x, kind, compression) = if arm.variant == PipelineVariant::Aae {
                        let (x, k) = latent_input(z)?;
                        (x, k, None)
                    } else {
                        let (decoded, codes, summary) = codec_pass(&to_blocks(z), &arm.codec).map_err(|e| e.in_stage("codec", &digest))?;
                        if cfg.eval.classify_codes {
                            let width = codes[0].len();
                            let flat: Vec<f64> = codes.iter().flat_map(|c| c.iter().map(|&v| f64::from(v))).collect();
                            (Array2::from_shape_vec((codes.len(), width), flat).expect("codes"), InputKind::FlattenedLatent, Some(summary))
                        } else {
                            let mut m = Array2::zeros(z.dim());
                            for (b, mut row) in decoded.iter().zip(m.rows_mut()) {
                                row.assign(&ndarray::ArrayView1::from(b.as_slice().expect("standard layout")));
                            }
                            let (x, k) = latent_input(&m)?;
                            (x, k, Some(summary))
                        }
                    };
                    Ok(ArmOutcome {
                        fold: evaluate(data, unit, &x, cfg, kind).map_err(|e| e.in_stage("estimator", &digest))?,
                        compression,
                    })
                }
            }
        })();
        outcomes.push(result);
    }
    (baseline, outcomes)
}

fn assemble(
    data: &Dataset,
    cfg: &ExperimentConfig,
    arm: &Arm,
    folds: Vec<FoldResult>,
    baseline: &[FoldResult],
    compression: Option<CompressionSummary>,
    seconds: f64,
) -> Result<ExperimentReport> {
    let col = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    let baseline_activity = baseline.iter().map(|f| f.activity_f1).sum::<f64>() / baseline.len() as f64;
    let activity_f1 = Summary::of(&col(&|f| f.activity_f1));
    let user_f1 = Summary::of(&col(&|f| f.user_f1));
    let user_accuracy = Summary::of(&col(&|f| f.user_accuracy));
    let verdicts = criteria_from(baseline_activity, activity_f1.mean, user_f1.mean, user_accuracy.mean, data.n_users())?;
    let config = ExperimentConfig {
        codec: arm.codec.clone(),
        aae: arm.aae.clone(),
        ..cfg.clone()
    };
    Ok(ExperimentReport {
        format_version: REPORT_VERSION,
        variant: arm.variant.name(),
        n_windows: data.windows.len(),
        n_users: data.n_users(),
        n_activities: data.activities.len(),
        activity_accuracy: Summary::of(&col(&|f| f.activity_accuracy)),
        activity_f1,
        user_f1,
        user_accuracy,
        baseline_activity_f1: baseline_activity,
        verdicts,
        compression,
        config_digest: config.digest(),
        config,
        folds,
        wall_clock_seconds: seconds,
    })
}

/// Evaluate every arm on shared folds. Each entry is that arm's report or the
/// error that stopped it; other arms are unaffected.
pub fn run_arms(data: &Dataset, cfg: &ExperimentConfig, arms: &[Arm]) -> Result<(ExperimentReport, Vec<Result<ExperimentReport>>)> {
    let start = Instant::now();
    cfg.validate()?;
    for arm in arms {
        arm.codec.validate()?;
        arm.aae.validate()?;
    }
    let digest = cfg.digest();
    let units = make_units(data, cfg).map_err(|e| e.in_stage("split", &digest))?;
    let shared = prepare_shared(data, cfg, arms).map_err(|e| e.in_stage("features", &digest))?;
    let results: Vec<(FoldResult, Vec<Result<ArmOutcome>>)> =
        units.par_iter().map(|u| run_unit(data, cfg, &shared, u, arms)).collect();
    let seconds = start.elapsed().as_secs_f64();

    let baseline_folds: Vec<FoldResult> = results.iter().map(|(b, _)| b.clone()).collect();
    if baseline_folds.iter().any(|f| f.activity_f1.is_nan()) {
        let err = results
            .into_iter()
            .flat_map(|(_, o)| o)
            .find_map(|r| r.err())
            .unwrap_or_else(|| Error::Data("baseline evaluation failed".into()));
        return Err(err);
    }
    let baseline_arm = Arm {
        variant: PipelineVariant::Baseline,
        codec: cfg.codec.clone(),
        aae: cfg.aae.clone(),
    };
    let baseline = assemble(data, cfg, &baseline_arm, baseline_folds.clone(), &baseline_folds, None, seconds)?;

    let mut per_arm: Vec<Vec<Result<ArmOutcome>>> = arms.iter().map(|_| Vec::new()).collect();
    for (_, outcomes) in results {
        for (slot, o) in per_arm.iter_mut().zip(outcomes) {
            slot.push(o);
        }
    }
    let reports = arms
        .iter()
        .zip(per_arm)
        .map(|(arm, outcomes)| {
            let outcomes: Vec<ArmOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
            let compression = merge_compression(outcomes.iter().filter_map(|o| o.compression.clone()).collect());
            let folds = outcomes.into_iter().map(|o| o.fold).collect();
            assemble(data, cfg, arm, folds, &baseline_folds, compression, seconds)
        })
        .collect();
    Ok((baseline, reports))
}

fn merge_compression(all: Vec<CompressionSummary>) -> Option<CompressionSummary> {
    let first = all.first()?.clone();
    let snr = all.iter().map(|c| c.snr_db).sum::<f64>() / all.len() as f64;
    Some(CompressionSummary { snr_db: snr, ..first })
}

/// Run several variants under one configuration on shared folds.
pub fn run_experiments(data: &Dataset, cfg: &ExperimentConfig, variants: &[PipelineVariant]) -> Result<Vec<ExperimentReport>> {
    let arms: Vec<Arm> = variants
        .iter()
        .map(|&variant| Arm {
            variant,
            codec: cfg.codec.clone(),
            aae: cfg.aae.clone(),
        })
        .collect();
    let (_, reports) = run_arms(data, cfg, &arms)?;
    reports.into_iter().collect()
}

pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig, variant: PipelineVariant) -> Result<ExperimentReport> {
    Ok(run_experiments(data, cfg, &[variant])?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// DP variant at each ε.
    Epsilon(Vec<f64>),
    /// C-AAE at each codec bit depth.
    BitsPerCode(Vec<u8>),
    /// C-AAE at each user-suppression weight.
    LambdaId(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Epsilon(_) => "epsilon",
            Self::BitsPerCode(_) => "bits_per_code",
            Self::LambdaId(_) => "lambda_id",
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Self::Epsilon(v) | Self::LambdaId(v) => v.clone(),
            Self::BitsPerCode(v) => v.iter().map(|&b| f64::from(b)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: Option<ExperimentReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub baseline: ExperimentReport,
    pub points: Vec<SweepPoint>,
}

pub fn sweep(data: &Dataset, cfg: &ExperimentConfig, axis: &SweepAxis) -> Result<SweepResult> {
    let values = axis.values();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep over {} has no values", axis.name())));
    }
    let arms: Vec<Arm> = match axis {
        SweepAxis::Epsilon(v) => v
            .iter()
            .map(|&epsilon| Arm {
                variant: PipelineVariant::Dp { epsilon },
                codec: cfg.codec.clone(),
                aae: cfg.aae.clone(),
            })
            .collect(),
        SweepAxis::BitsPerCode(v) => v
            .iter()
            .map(|&b| Arm {
                variant: PipelineVariant::CAae,
                codec: CodecConfig {
                    bits_per_code: b,
                    ..cfg.codec.clone()
                },
                aae: cfg.aae.clone(),
            })
            .collect(),
        SweepAxis::LambdaId(v) => v
            .iter()
            .map(|&lambda_id| Arm {
                variant: PipelineVariant::CAae,
                codec: cfg.codec.clone(),
                aae: AaeConfig {
                    lambda_id,
                    ..cfg.aae.clone()
                },
            })
            .collect(),
    };
    // Invalid points are recorded rather than aborting the sweep.
    let valid: Vec<bool> = arms.iter().map(|a| a.codec.validate().and(a.aae.validate()).is_ok()).collect();
    let runnable: Vec<Arm> = arms.iter().zip(&valid).filter(|(_, v)| **v).map(|(a, _)| a.clone()).collect();
    let (baseline, mut reports) = run_arms(data, cfg, &runnable)?;
    let mut points = Vec::with_capacity(arms.len());
    let mut it = reports.drain(..);
    for ((arm, ok), value) in arms.iter().zip(valid).zip(values) {
        let (report, error) = if ok {
            match it.next().expect("one report per runnable arm") {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            let e = arm.codec.validate().and(arm.aae.validate()).unwrap_err();
            (None, Some(e.to_string()))
        };
        points.push(SweepPoint { value, report, error });
    }
    Ok(SweepResult {
        axis: axis.name().to_string(),
        baseline,
        points,
    })
}

/// `axis,value,activity_f1,user_f1,compression_ratio,snr_db,error`, one row
/// per point.
pub fn trade_off_csv(result: &SweepResult) -> String {
    let mut out = format!("{},activity_f1,user_f1,compression_ratio,snr_db,error\n", result.axis);
    for p in &result.points {
        match &p.report {
            Some(r) => {
                let (ratio, snr) = r
                    .compression
                    .as_ref()
                    .map(|c| (format!("{}", c.payload_ratio), format!("{:.6}", c.snr_db)))
                    .unwrap_or_default();
                let _ = writeln!(out, "{},{:.6},{:.6},{ratio},{snr},", p.value, r.activity_f1.mean, r.user_f1.mean);
            }
            None => {
                let msg = p.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
                let _ = writeln!(out, "{},,,,,\"{msg}\"", p.value);
            }
        }
    }
    out
}

/// Markdown table with one column per report, mean (SD) macro F1 per target.
pub fn markdown_summary(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("| Target |");
    for r in reports {
        let title = PipelineVariant::from_str(&r.variant).map(|v| v.title()).unwrap_or_else(|_| r.variant.clone());
        let _ = write!(out, " {title} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(reports.len()));
    out.push('\n');
    for (name, pick) in [
        ("Activity", (|r: &ExperimentReport| r.activity_f1) as fn(&ExperimentReport) -> Summary),
        ("User", |r: &ExperimentReport| r.user_f1),
    ] {
        let _ = write!(out, "| {name} |");
        for r in reports {
            let s = pick(r);
            let _ = write!(out, " {:.4} ({:.4}) |", s.mean, s.sd);
        }
        out.push('\n');
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(
            out,
            "\nMean macro F1 (SD) over {} evaluation unit(s); chance for user identification is 1/{} = {:.4}.",
            r.folds.len(),
            r.n_users,
            1.0 / r.n_users as f64
        );
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SyntheticConfig;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        let cfg = SyntheticConfig {
            n_users: 4,
            n_activities: 3,
            windows_per_cell: 10,
            ..SyntheticConfig::default()
        };
        let recs = dataio::synthesize(&cfg).unwrap();
        Dataset::new(dataio::window_all(&recs, 2.56, 2.56).unwrap(), 50.0).unwrap()
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            seed: 7,
            eval: EvalConfig {
                regime: EvalRegime::Kfold { k: 3 },
                estimator: ClassifierConfig { epochs: 100, ..ClassifierConfig::default() },
                ..EvalConfig::default()
            },
            aae: AaeConfig {
                encoder_widths: vec![32],
                decoder_widths: vec![32],
                head_widths: vec![16],
                epochs: 3,
                ..AaeConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn kfold_balanced_example() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let folds = stratified_kfold(&labels, 10, 1).unwrap();
        for f in &folds {
            assert_eq!(f.iter().filter(|&&i| labels[i] == 0).count(), 5);
            assert_eq!(f.iter().filter(|&&i| labels[i] == 1).count(), 5);
        }
    }

    #[test]
    fn kfold_with_one_extra_sample() {
        // 51 of class 0 and 50 of class 1: brute-force the per-class counts.
        let labels: Vec<u8> = (0..101).map(|i| if i < 51 { 0 } else { 1 }).collect();
        let folds = stratified_kfold(&labels, 10, 2).unwrap();
        let counts: Vec<(usize, usize)> = folds
            .iter()
            .map(|f| (f.iter().filter(|&&i| labels[i] == 0).count(), f.iter().filter(|&&i| labels[i] == 1).count()))
            .collect();
        assert_eq!(counts.iter().filter(|c| **c == (6, 5)).count(), 1);
        assert_eq!(counts.iter().filter(|c| **c == (5, 5)).count(), 9);
    }

    #[test]
    fn kfold_small_class_is_named() {
        let labels = vec![1, 1, 1, 2, 2];
        let err = stratified_kfold(&labels, 3, 0).unwrap_err().to_string();
        assert!(err.contains("class 2"), "{err}");
    }

    proptest! {
        #[test]
        fn kfold_partitions(labels in proptest::collection::vec(0u8..4, 40..120), k in 2usize..6, s in any::<u64>()) {
            prop_assume!((0..4).all(|c| { let n = labels.iter().filter(|&&l| l == c).count(); n == 0 || n >= k }));
            let folds = stratified_kfold(&labels, k, s).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in 0..4u8 {
                let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            prop_assert_eq!(stratified_kfold(&labels, k, s).unwrap(), folds);
        }
    }

    #[test]
    fn chance_thresholds() {
        let v = criteria_from(0.9, 0.9, 1.0 / 24.0, 0.5, 24).unwrap();
        assert!((v.req2.threshold - 0.0417).abs() < 5e-5);
        assert!(v.req2.pass && !v.req2_accuracy.pass && v.req2_metrics_disagree);
        let v = criteria_from(0.9, 0.9, 0.2, 0.2, 9).unwrap();
        assert!((v.req2.threshold - 0.111).abs() < 5e-4);
        assert!(!v.req2.pass && v.req2.margin < 0.0);
    }

    #[test]
    fn utility_boundary_is_inclusive() {
        assert!(criteria_from(0.9, 0.85, 0.0, 0.0, 8).unwrap().req1.pass);
        assert!(criteria_from(0.8, 0.75, 0.0, 0.0, 8).unwrap().req1.pass);
        assert!(!criteria_from(0.9, 0.8499, 0.0, 0.0, 8).unwrap().req1.pass);
        let v = criteria_from(0.9, 0.88, 0.0, 0.0, 8).unwrap();
        assert!((v.req1.margin - 0.03).abs() < 1e-12);
        assert!(criteria_from(0.9, 0.9, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn variant_names_parse_back() {
        for v in [
            PipelineVariant::Baseline,
            PipelineVariant::Dp { epsilon: 0.5 },
            PipelineVariant::Aae,
            PipelineVariant::CAae,
            PipelineVariant::AdpcmOnly,
        ] {
            assert_eq!(v.name().parse::<PipelineVariant>().unwrap(), v);
        }
        assert!("dp:-1".parse::<PipelineVariant>().is_err());
        assert!("cnn".parse::<PipelineVariant>().is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // Ties take average ranks: x ranks 1,2,3,4; y ranks 1,2.5,2.5,4.
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 5.0, 9.0]);
        let oracle = 4.5 / (5.0f64 * 4.5).sqrt();
        assert!((rho - oracle).abs() < 1e-12);
    }

    #[test]
    fn experiments_share_folds_and_verdicts_recompute() {
        let data = tiny();
        let cfg = quick();
        let reports = run_experiments(
            &data,
            &cfg,
            &[PipelineVariant::Baseline, PipelineVariant::Aae, PipelineVariant::CAae, PipelineVariant::AdpcmOnly],
        )
        .unwrap();
        let base = &reports[0];
        for r in &reports {
            assert_eq!(r.folds.len(), 3);
            let digests: Vec<_> = r.folds.iter().map(|f| &f.folds_digest).collect();
            assert_eq!(digests, base.folds.iter().map(|f| &f.folds_digest).collect::<Vec<_>>());
            assert_eq!(check_criteria(r, base, data.n_users()).unwrap(), r.verdicts);
            assert!(r.activity_f1.min <= r.activity_f1.mean && r.activity_f1.mean <= r.activity_f1.max);
            let back = ExperimentReport::from_toml(&r.to_toml().unwrap()).unwrap();
            assert_eq!(back.folds, r.folds);
        }
        let c = reports[2].compression.as_ref().unwrap();
        assert_eq!(c.payload_ratio, 4.0);
        assert_eq!(c.payload_bytes_per_frame, 8 * 16 * 4 / 8);
        assert!(reports[1].compression.is_none());
        assert_eq!(reports[3].compression.as_ref().unwrap().payload_bytes_per_frame, 6 * 128 * 4 / 8);
    }

    #[test]
    fn reports_are_reproducible() {
        let data = tiny();
        let a = run_experiment(&data, &quick(), PipelineVariant::CAae).unwrap();
        let b = run_experiment(&data, &quick(), PipelineVariant::CAae).unwrap();
        assert_eq!(a.to_toml().unwrap(), b.to_toml().unwrap());
        assert!(!a.to_toml().unwrap().contains("wall_clock"));
    }

    #[test]
    fn mismatched_folds_are_refused() {
        let data = tiny();
        let a = run_experiment(&data, &quick(), PipelineVariant::Baseline).unwrap();
        let other = ExperimentConfig { seed: 8, ..quick() };
        let b = run_experiment(&data, &other, PipelineVariant::Baseline).unwrap();
        assert!(check_criteria(&a, &b, 4).is_err());
    }

    #[test]
    fn repeated_split_regime_runs() {
        let data = tiny();
        let cfg = ExperimentConfig {
            eval: EvalConfig {
                regime: EvalRegime::RepeatedSplit {
                    repeats: 2,
                    held_out_users: 1,
                    train_fraction: 0.8,
                },
                ..quick().eval
            },
            ..quick()
        };
        let r = run_experiments(&data, &cfg, &[PipelineVariant::Baseline, PipelineVariant::Aae]).unwrap();
        assert_eq!(r[0].folds.len(), 2);
        assert!(r[1].user_f1.mean.is_finite());
    }

    #[test]
    fn sweep_records_bad_points_and_rejects_empty_axis() {
        let data = tiny();
        assert!(sweep(&data, &quick(), &SweepAxis::Epsilon(vec![])).is_err());
        let res = sweep(&data, &quick(), &SweepAxis::BitsPerCode(vec![2, 9, 8])).unwrap();
        assert_eq!(res.points.len(), 3);
        assert!(res.points[1].error.is_some() && res.points[1].report.is_none());
        let csv = trade_off_csv(&res);
        assert_eq!(csv.lines().count(), 4);
        let snr = |i: usize| res.points[i].report.as_ref().unwrap().compression.as_ref().unwrap().snr_db;
        assert!(snr(2) >= snr(0));
    }

    #[test]
    fn shuffled_users_sit_at_chance() {
        let mut data = tiny();
        let mut rng = seed::rng(3);
        let mut users: Vec<u32> = data.windows.iter().map(|w| w.user_id).collect();
        users.shuffle(&mut rng);
        for (w, u) in data.windows.iter_mut().zip(users) {
            w.user_id = u;
        }
        let r = run_experiment(&data, &quick(), PipelineVariant::Baseline).unwrap();
        assert!(r.user_f1.mean < 2.0 / data.n_users() as f64, "{}", r.user_f1.mean);
    }

    #[test]
    fn markdown_has_one_column_per_report() {
        let data = tiny();
        let r = run_experiments(&data, &quick(), &[PipelineVariant::Baseline, PipelineVariant::CAae]).unwrap();
        let md = markdown_summary(&r);
        assert!(md.starts_with("| Target | Baseline | C-AAE |"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| User")).count(), 1);
    }
}
