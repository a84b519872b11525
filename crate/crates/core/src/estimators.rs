//! Utility and attacker classifiers: multinomial logistic regression and a
//! small MLP, both on standardized inputs, plus macro-averaged F1.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, Activation, Layer, LossSpec, NetworkParams, Sgd};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    FeatureVector,
    FlattenedWindow,
    FlattenedLatent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// Hidden widths for the MLP; ignored by logistic regression.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// 0 means full-batch.
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Logreg,
            hidden: vec![64],
            lr: 0.5,
            momentum: 0.9,
            epochs: 300,
            batch_size: 0,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn mlp() -> Self {
        Self {
            kind: ClassifierKind::Mlp,
            lr: 0.05,
            epochs: 60,
            batch_size: 32,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub params: NetworkParams,
    /// Dense index to class id.
    pub label_map: Vec<u32>,
    pub input_kind: InputKind,
    pub input_dim: usize,
    /// Standardization fitted on the training inputs.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub index: usize,
    pub label: u32,
}

fn standardization(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
    let scale = x
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        })
        .collect();
    (mean, scale)
}

fn standardize(x: ArrayView2<f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

pub fn train_classifier(
    inputs: ArrayView2<f64>,
    labels: &[u32],
    cfg: &ClassifierConfig,
    input_kind: InputKind,
) -> Result<(ClassifierModel, TrainingLog)> {
    if inputs.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} input rows for {} labels", inputs.nrows(), labels.len())));
    }
    if inputs.ncols() == 0 {
        return Err(Error::Shape("inputs have no columns".into()));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier inputs".into()));
    }
    let label_map: Vec<u32> = {
        let mut m: Vec<u32> = labels.to_vec();
        m.sort_unstable();
        m.dedup();
        m
    };
    if label_map.len() < 2 {
        return Err(Error::Data(format!("need at least 2 classes, found {}", label_map.len())));
    }
    let index_of: BTreeMap<u32, usize> = label_map.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let dense: Vec<usize> = labels.iter().map(|l| index_of[l]).collect();
    let k = label_map.len();
    let d = inputs.ncols();

    let (mean, scale) = standardization(inputs);
    let x = standardize(inputs, &mean, &scale);
    let y = neural::one_hot(&dense, k);

    let mut params = match cfg.kind {
        ClassifierKind::Logreg => NetworkParams::new(&[d, k], &[Activation::Softmax], cfg.seed)?,
        ClassifierKind::Mlp => {
            let mut sizes = vec![d];
            sizes.extend(&cfg.hidden);
            sizes.push(k);
            let mut acts = vec![Activation::Relu; cfg.hidden.len()];
            acts.push(Activation::Softmax);
            NetworkParams::new(&sizes, &acts, cfg.seed)?
        }
    };
    let mut opt = Sgd::new(&params, cfg.lr, cfg.momentum);
    let loss = LossSpec::cross_entropy(1.0);
    let n = x.nrows();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive_named(cfg.seed, "batches"));
    let mut log = TrainingLog::default();

    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (bx, by) = if batch == n {
                (x.view().to_owned(), y.view().to_owned())
            } else {
                (x.select(Axis(0), chunk), y.select(Axis(0), chunk))
            };
            let cache = neural::forward(&params, bx.view())?;
            let (value, mut grads, _) = neural::backward(&params, &cache, &loss, by.view())?;
            grads.add_weight_decay(&params, cfg.l2);
            opt.step(&mut params, &grads)?;
            total += value * chunk.len() as f64;
        }
        log.epoch_loss.push(total / n as f64);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("classifier diverged; lower the learning rate".into()));
    }

    let model = ClassifierModel {
        kind: cfg.kind,
        params,
        label_map,
        input_kind,
        input_dim: d,
        mean,
        scale,
    };
    let probs = model.params.predict(x.view())?;
    let hits = probs.rows().into_iter().zip(&dense).filter(|(r, &t)| argmax(r.as_slice().expect("row")) == t).count();
    log.train_accuracy = hits as f64 / n as f64;
    Ok((model, log))
}

/// First index of the maximum, so ties go to the smaller class index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    pub fn class_count(&self) -> usize {
        self.label_map.len()
    }

    pub fn probabilities(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input width {} for a classifier trained on {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        let x = standardize(inputs, &self.mean, &self.scale);
        self.params.predict(x.view())
    }

    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        let probs = self.probabilities(inputs)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| {
                let p: Vec<f64> = r.to_vec();
                let index = argmax(&p);
                Prediction {
                    probabilities: p,
                    index,
                    label: self.label_map[index],
                }
            })
            .collect())
    }

    pub fn dense_index(&self, label: u32) -> Option<usize> {
        self.label_map.binary_search(&label).ok()
    }

    /// Versioned binary: `b"CACL"`, u8 version, u8 kind, u8 input kind,
    /// u32 input dim, u32 class count, class ids (u32), means and scales
    /// (f64), then the network block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CLS_MAGIC);
        out.push(CLS_VERSION);
        out.push(match self.kind {
            ClassifierKind::Logreg => 0,
            ClassifierKind::Mlp => 1,
        });
        out.push(match self.input_kind {
            InputKind::FeatureVector => 0,
            InputKind::FlattenedWindow => 1,
            InputKind::FlattenedLatent => 2,
        });
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.label_map.len() as u32).to_le_bytes());
        for l in &self.label_map {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in self.mean.iter().chain(&self.scale) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.params.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = neural::ByteReader { bytes, pos: 0 };
        if r.take(4)? != CLS_MAGIC {
            return Err(Error::Model("not a classifier file".into()));
        }
        let version = r.u8()?;
        if version != CLS_VERSION {
            return Err(Error::Model(format!("unsupported classifier format version {version}")));
        }
        let kind = match r.u8()? {
            0 => ClassifierKind::Logreg,
            1 => ClassifierKind::Mlp,
            k => return Err(Error::Model(format!("unknown classifier kind {k}"))),
        };
        let input_kind = match r.u8()? {
            0 => InputKind::FeatureVector,
            1 => InputKind::FlattenedWindow,
            2 => InputKind::FlattenedLatent,
            k => return Err(Error::Model(format!("unknown input kind {k}"))),
        };
        let input_dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        if k > 1 << 20 || input_dim > 1 << 24 {
            return Err(Error::Model("implausible classifier dimensions".into()));
        }
        let label_map = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mean = (0..input_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let scale = (0..input_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let (params, _) = NetworkParams::from_bytes(&bytes[r.pos..])?;
        if params.input_dim() != input_dim || params.output_dim() != k {
            return Err(Error::Model("network shape disagrees with classifier header".into()));
        }
        Ok(Self {
            kind,
            params,
            label_map,
            input_kind,
            input_dim,
            mean,
            scale,
        })
    }

    /// A classifier whose every parameter is zero; predicts uniformly.
    pub fn zeroed(input_dim: usize, label_map: Vec<u32>, input_kind: InputKind) -> Self {
        let k = label_map.len();
        let layer = Layer {
            weights: Array2::zeros((k, input_dim)),
            biases: Array1::zeros(k),
            activation: Activation::Softmax,
        };
        Self {
            kind: ClassifierKind::Logreg,
            params: NetworkParams { layers: vec![layer], seed: 0 },
            label_map,
            input_kind,
            input_dim,
            mean: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
        }
    }
}

const CLS_MAGIC: &[u8; 4] = b"CACL";
const CLS_VERSION: u8 = 1;

pub fn predict(model: &ClassifierModel, input: &[f64]) -> Result<Prediction> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
    Ok(model.predict_batch(x)?.remove(0))
}

/// Unweighted mean over all `k` classes of per-class F1; a class with no
/// predictions and no truth contributes 0.
pub fn macro_f1(predictions: &[usize], truth: &[usize], class_count: usize) -> Result<f64> {
    let cm = confusion(predictions, truth, class_count)?;
    let mut total = 0.0;
    for c in 0..class_count {
        let tp = cm[[c, c]] as f64;
        let predicted: f64 = cm.column(c).sum() as f64;
        let actual: f64 = cm.row(c).sum() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    Ok(total / class_count as f64)
}

pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    Ok(predictions.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

/// `[truth × predicted]` counts.
pub fn confusion(predictions: &[usize], truth: &[usize], class_count: usize) -> Result<Array2<u64>> {
    if predictions.is_empty() {
        return Err(Error::Data("macro F1 of an empty prediction set".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    let mut cm = Array2::zeros((class_count, class_count));
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= class_count || t >= class_count {
            return Err(Error::Shape(format!("label outside 0..{class_count}")));
        }
        cm[[t, p]] += 1;
    }
    Ok(cm)
}

/// Predictions CSV: `window_id,truth,predicted,p_<class>...`. `truth` may be
/// unknown on the server side.
pub fn write_predictions_csv<W: std::io::Write>(
    out: W,
    model: &ClassifierModel,
    predictions: &[Prediction],
    truth: Option<&[u32]>,
) -> Result<()> {
    let io = |e: csv::Error| Error::io("predictions.csv", std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["window_id".to_string(), "truth".into(), "predicted".into()];
    head.extend(model.label_map.iter().map(|l| format!("p_{l}")));
    w.write_record(&head).map_err(io)?;
    for (i, p) in predictions.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            truth.and_then(|t| t.get(i)).map(u32::to_string).unwrap_or_default(),
            p.label.to_string(),
        ];
        rec.extend(p.probabilities.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("predictions.csv", e))
}

/// Dense indices over a fixed class list; panics-free lookup for evaluation.
pub fn densify(labels: &[u32], classes: &[u32]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .binary_search(l)
                .map_err(|_| Error::Data(format!("label {l} missing from the class list")))
        })
        .collect()
}
