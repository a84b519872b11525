//! Anonymizing autoencoder: maps a `[C × W]` window to a `[d × 16]` latent
//! block that keeps activity information and suppresses user identity.
//!
//! Training minimizes `λ_rec·MSE(x, dec(enc(x))) + λ_act·CE(act(z), y)
//! − λ_id·CE(user(z), u)`. The user head itself is trained to identify
//! users; its gradient reaches the encoder through [`neural::grad_reverse`].
//! The decoder and both heads minimize their own unweighted losses, so the
//! λ weights only shape what the encoder learns.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::SensorWindow;
use crate::error::{Error, Result};
use crate::neural::{self, Activation, Gradients, LossSpec, NetworkParams, Sgd};
use crate::seed;

/// Length of the latent time axis.
pub const LATENT_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaeConfig {
    /// `d`: latent rows; the latent has `d × 16` values.
    pub latent_channels: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Hidden widths of the activity and user heads.
    pub head_widths: Vec<usize>,
    pub lambda_rec: f64,
    pub lambda_act: f64,
    pub lambda_id: f64,
    /// Extra user-head updates per batch, so the adversary keeps up with
    /// the encoder.
    pub adversary_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for AaeConfig {
    fn default() -> Self {
        Self {
            latent_channels: 8,
            encoder_widths: vec![256],
            decoder_widths: vec![256],
            head_widths: vec![64],
            lambda_rec: 1.0,
            lambda_act: 1.0,
            lambda_id: 1.0,
            adversary_steps: 3,
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl AaeConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_channels * LATENT_STEPS
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("aae: {m}")));
        if self.latent_channels == 0 {
            return bad("latent_channels must be at least 1");
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) || self.head_widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        for (name, v) in [("lambda_rec", self.lambda_rec), ("lambda_act", self.lambda_act), ("lambda_id", self.lambda_id)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be a nonnegative real"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Encoder output for one window. Labels ride along for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    /// `[d × 16]`.
    pub values: Array2<f64>,
    pub user_id: u32,
    pub activity_id: u32,
}

impl LatentBlock {
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Per-channel standardization fitted on the training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn fit(windows: &[SensorWindow]) -> Self {
        let c = windows[0].channels();
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0.0;
        for w in windows {
            for (ch, row) in w.values.rows().into_iter().enumerate() {
                mean[ch] += row.sum();
                sq[ch] += row.iter().map(|v| v * v).sum::<f64>();
            }
            count += w.len() as f64;
        }
        let scale = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                let var = (s / count - *m * *m).max(0.0);
                if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply_into(&self, w: &SensorWindow, out: &mut [f64]) {
        let len = w.len();
        for (ch, row) in w.values.rows().into_iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                out[ch * len + t] = (v - self.mean[ch]) / self.scale[ch];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AaeModel {
    pub config: AaeConfig,
    pub channels: usize,
    pub window_len: usize,
    pub norm: Normalization,
    pub encoder: NetworkParams,
    pub decoder: NetworkParams,
    pub activity_head: NetworkParams,
    pub user_head: NetworkParams,
    pub activity_labels: Vec<u32>,
    pub user_labels: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Unweighted means over the epoch, in standardized input units.
    pub reconstruction_mse: f64,
    pub activity_ce: f64,
    pub user_ce: f64,
    pub user_head_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AaeTrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// Per-objective encoder gradients for one batch, before the λ weights.
/// `identity` is already reversed, so the encoder update direction is
/// `λ_rec·reconstruction + λ_act·activity + λ_id·identity`.
#[derive(Debug, Clone)]
pub struct EncoderGradients {
    pub reconstruction: Gradients,
    pub activity: Gradients,
    pub identity: Gradients,
}

impl EncoderGradients {
    pub fn combine(&self, cfg: &AaeConfig) -> Gradients {
        let mut g = self.reconstruction.clone();
        g.scale(cfg.lambda_rec);
        g.add_scaled(&self.activity, cfg.lambda_act);
        g.add_scaled(&self.identity, cfg.lambda_id);
        g
    }
}

struct BatchOutcome {
    encoder: EncoderGradients,
    decoder: Gradients,
    activity_head: Gradients,
    user_head: Gradients,
    rec: f64,
    act: f64,
    user: f64,
    user_hits: usize,
}

fn check_windows(windows: &[SensorWindow], channels: usize, len: usize) -> Result<()> {
    for w in windows {
        if w.channels() != channels || w.len() != len {
            return Err(Error::Shape(format!(
                "window {}x{} where the autoencoder expects {channels}x{len}",
                w.channels(),
                w.len()
            )));
        }
    }
    Ok(())
}

fn label_index(labels: &[u32]) -> (Vec<u32>, BTreeMap<u32, usize>) {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    let idx = l.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (l, idx)
}

fn head_net(input: usize, widths: &[usize], classes: usize, seed: u64) -> Result<NetworkParams> {
    let mut sizes = vec![input];
    sizes.extend(widths);
    sizes.push(classes);
    let mut acts = vec![Activation::Relu; widths.len()];
    acts.push(Activation::Softmax);
    NetworkParams::new(&sizes, &acts, seed)
}

pub fn train_aae(train: &[SensorWindow], cfg: &AaeConfig) -> Result<(AaeModel, AaeTrainingLog)> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Data("no training windows".into()))?;
    let (channels, len) = (first.channels(), first.len());
    check_windows(train, channels, len)?;
    let acts: Vec<u32> = train.iter().map(|w| w.activity_id).collect();
    let users: Vec<u32> = train.iter().map(|w| w.user_id).collect();
    let (activity_labels, act_idx) = label_index(&acts);
    let (user_labels, user_idx) = label_index(&users);
    if activity_labels.len() < 2 || user_labels.len() < 2 {
        return Err(Error::Data(format!(
            "autoencoder training needs at least 2 activities and 2 users, found {} and {}",
            activity_labels.len(),
            user_labels.len()
        )));
    }

    let input = channels * len;
    let latent = cfg.latent_dim();
    let mut enc_sizes = vec![input];
    enc_sizes.extend(&cfg.encoder_widths);
    enc_sizes.push(latent);
    let mut dec_sizes = vec![latent];
    dec_sizes.extend(&cfg.decoder_widths);
    dec_sizes.push(input);
    let enc_acts = vec![Activation::Tanh; cfg.encoder_widths.len() + 1];
    let mut dec_acts = vec![Activation::Tanh; cfg.decoder_widths.len()];
    dec_acts.push(Activation::Identity);

    let norm = Normalization::fit(train);
    let mut model = AaeModel {
        config: cfg.clone(),
        channels,
        window_len: len,
        encoder: NetworkParams::new(&enc_sizes, &enc_acts, seed::derive_named(cfg.seed, "encoder"))?,
        decoder: NetworkParams::new(&dec_sizes, &dec_acts, seed::derive_named(cfg.seed, "decoder"))?,
        activity_head: head_net(latent, &cfg.head_widths, activity_labels.len(), seed::derive_named(cfg.seed, "activity_head"))?,
        user_head: head_net(latent, &cfg.head_widths, user_labels.len(), seed::derive_named(cfg.seed, "user_head"))?,
        norm,
        activity_labels,
        user_labels,
    };

    let x = model.standardized(train);
    let ya = neural::one_hot(&acts.iter().map(|a| act_idx[a]).collect::<Vec<_>>(), model.activity_labels.len());
    let yu = neural::one_hot(&users.iter().map(|u| user_idx[u]).collect::<Vec<_>>(), model.user_labels.len());

    let mut opt_enc = Sgd::new(&model.encoder, cfg.lr, cfg.momentum);
    let mut opt_dec = Sgd::new(&model.decoder, cfg.lr, cfg.momentum);
    let mut opt_act = Sgd::new(&model.activity_head, cfg.lr, cfg.momentum);
    let mut opt_user = Sgd::new(&model.user_head, cfg.lr, cfg.momentum);
    let mut rng = seed::rng(seed::derive_named(cfg.seed, "aae-batches"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = AaeTrainingLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochLog { epoch, ..EpochLog::default() };
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), chunk);
            let ba = ya.select(Axis(0), chunk);
            let bu = yu.select(Axis(0), chunk);
            let out = model.batch(bx.view(), ba.view(), bu.view())?;
            opt_enc.step(&mut model.encoder, &out.encoder.combine(cfg))?;
            opt_dec.step(&mut model.decoder, &out.decoder)?;
            opt_act.step(&mut model.activity_head, &out.activity_head)?;
            opt_user.step(&mut model.user_head, &out.user_head)?;
            for _ in 0..cfg.adversary_steps {
                let z = model.encoder.predict(bx.view())?;
                let cu = neural::forward(&model.user_head, z.view())?;
                let (_, g, _) = neural::backward(&model.user_head, &cu, &LossSpec::cross_entropy(1.0), bu.view())?;
                opt_user.step(&mut model.user_head, &g)?;
            }
            let w = chunk.len() as f64;
            sums.reconstruction_mse += out.rec * w;
            sums.activity_ce += out.act * w;
            sums.user_ce += out.user * w;
            hits += out.user_hits;
        }
        let n = train.len() as f64;
        sums.reconstruction_mse /= n;
        sums.activity_ce /= n;
        sums.user_ce /= n;
        sums.user_head_accuracy = hits as f64 / n;
        if !sums.reconstruction_mse.is_finite() || !model.encoder.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder training diverged at epoch {epoch}; lower aae.lr")));
        }
        log.epochs.push(sums);
    }
    Ok((model, log))
}

impl AaeModel {
    fn standardized(&self, windows: &[SensorWindow]) -> Array2<f64> {
        let d = self.channels * self.window_len;
        let mut x = Array2::zeros((windows.len(), d));
        for (w, mut row) in windows.iter().zip(x.rows_mut()) {
            self.norm.apply_into(w, row.as_slice_mut().expect("standard layout"));
        }
        x
    }

    fn batch(&self, x: ArrayView2<f64>, ya: ArrayView2<f64>, yu: ArrayView2<f64>) -> Result<BatchOutcome> {
        let ce = neural::forward(&self.encoder, x)?;
        let z = ce.output().clone();

        let cd = neural::forward(&self.decoder, z.view())?;
        let (rec, g_dec, gz_rec) = neural::backward(&self.decoder, &cd, &LossSpec::mse(1.0), x)?;
        let ca = neural::forward(&self.activity_head, z.view())?;
        let (act, g_act, gz_act) = neural::backward(&self.activity_head, &ca, &LossSpec::cross_entropy(1.0), ya)?;
        let cu = neural::forward(&self.user_head, z.view())?;
        let (user, g_user, gz_user) = neural::backward(&self.user_head, &cu, &LossSpec::cross_entropy(1.0), yu)?;

        let user_hits = cu
            .output()
            .rows()
            .into_iter()
            .zip(yu.rows())
            .filter(|(p, t)| crate::estimators::argmax(&p.to_vec()) == crate::estimators::argmax(&t.to_vec()))
            .count();

        let (reconstruction, _) = neural::backward_from_output(&self.encoder, &ce, gz_rec)?;
        let (activity, _) = neural::backward_from_output(&self.encoder, &ce, gz_act)?;
        let (identity, _) = neural::backward_from_output(&self.encoder, &ce, neural::grad_reverse(&gz_user, 1.0))?;
        Ok(BatchOutcome {
            encoder: EncoderGradients {
                reconstruction,
                activity,
                identity,
            },
            decoder: g_dec,
            activity_head: g_act,
            user_head: g_user,
            rec,
            act,
            user,
            user_hits,
        })
    }

    /// Encoder gradient terms on a fixed batch, for inspecting the
    /// adversarial objective.
    pub fn encoder_gradients(&self, windows: &[SensorWindow]) -> Result<EncoderGradients> {
        check_windows(windows, self.channels, self.window_len)?;
        let x = self.standardized(windows);
        let dense = |labels: &[u32], ids: Vec<u32>| -> Result<Array2<f64>> {
            let idx = crate::estimators::densify(&ids, labels)?;
            Ok(neural::one_hot(&idx, labels.len()))
        };
        let ya = dense(&self.activity_labels, windows.iter().map(|w| w.activity_id).collect())?;
        let yu = dense(&self.user_labels, windows.iter().map(|w| w.user_id).collect())?;
        Ok(self.batch(x.view(), ya.view(), yu.view())?.encoder)
    }

    pub fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    /// Encode many windows at once; row order follows the input.
    pub fn anonymize_batch(&self, windows: &[SensorWindow]) -> Result<Vec<LatentBlock>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        check_windows(windows, self.channels, self.window_len)?;
        let z = self.encoder.predict(self.standardized(windows).view())?;
        let d = self.latent_channels();
        Ok(z.rows()
            .into_iter()
            .zip(windows)
            .map(|(row, w)| LatentBlock {
                values: row.to_owned().into_shape_with_order((d, LATENT_STEPS)).expect("latent size"),
                user_id: w.user_id,
                activity_id: w.activity_id,
            })
            .collect())
    }

    /// Flattened latents, one row per window.
    pub fn latent_matrix(&self, windows: &[SensorWindow]) -> Result<Array2<f64>> {
        check_windows(windows, self.channels, self.window_len)?;
        self.encoder.predict(self.standardized(windows).view())
    }

    pub fn reconstruct_batch(&self, blocks: &[LatentBlock]) -> Result<Vec<SensorWindow>> {
        let d = self.latent_channels();
        let mut z = Array2::zeros((blocks.len(), d * LATENT_STEPS));
        for (b, mut row) in blocks.iter().zip(z.rows_mut()) {
            if b.values.dim() != (d, LATENT_STEPS) {
                return Err(Error::Shape(format!("latent {:?}, expected ({d}, {LATENT_STEPS})", b.values.dim())));
            }
            row.assign(&ndarray::ArrayView1::from(&b.flatten()[..]));
        }
        let x = self.decoder.predict(z.view())?;
        Ok(x.rows()
            .into_iter()
            .zip(blocks)
            .map(|(row, b)| {
                let mut values = row.to_owned().into_shape_with_order((self.channels, self.window_len)).expect("window size");
                for (ch, mut r) in values.rows_mut().into_iter().enumerate() {
                    r.mapv_inplace(|v| v * self.norm.scale[ch] + self.norm.mean[ch]);
                }
                SensorWindow {
                    values,
                    user_id: b.user_id,
                    activity_id: b.activity_id,
                    source_offset: 0,
                }
            })
            .collect())
    }

    /// Mean squared reconstruction error per window, in sensor units.
    pub fn reconstruction_mse(&self, windows: &[SensorWindow]) -> Result<Vec<f64>> {
        let blocks = self.anonymize_batch(windows)?;
        let recon = self.reconstruct_batch(&blocks)?;
        Ok(windows
            .iter()
            .zip(&recon)
            .map(|(a, b)| (&a.values - &b.values).mapv(|d| d * d).mean().unwrap_or(0.0))
            .collect())
    }

    /// Versioned bundle: `b"CAAB"`, u8 version, u32 channels, u32 window
    /// length, length-prefixed TOML config echo, per-channel mean and scale
    /// (f64), activity and user label tables (u32 count + u32 ids), then the
    /// encoder, decoder, activity head and user head network blocks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.push(BUNDLE_VERSION);
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.window_len as u32).to_le_bytes());
        let echo = toml::to_string(&self.config).expect("config serializes");
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        for v in self.norm.mean.iter().chain(&self.norm.scale) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for labels in [&self.activity_labels, &self.user_labels] {
            out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        for net in [&self.encoder, &self.decoder, &self.activity_head, &self.user_head] {
            out.extend(net.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = neural::ByteReader { bytes, pos: 0 };
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::Model("not an autoencoder bundle".into()));
        }
        let version = r.u8()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Model(format!(
                "autoencoder bundle version {version}, this build reads version {BUNDLE_VERSION}"
            )));
        }
        let channels = r.u32()? as usize;
        let window_len = r.u32()? as usize;
        let echo_len = r.u32()? as usize;
        let echo = std::str::from_utf8(r.take(echo_len)?).map_err(|_| Error::Model("config echo is not UTF-8".into()))?;
        let config: AaeConfig = toml::from_str(echo).map_err(|e| Error::Model(format!("config echo: {e}")))?;
        if channels == 0 || window_len == 0 || channels > 4096 {
            return Err(Error::Model("implausible window shape".into()));
        }
        let mean = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let scale = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut tables = Vec::new();
        for _ in 0..2 {
            let n = r.u32()? as usize;
            if n > 1 << 20 {
                return Err(Error::Model("implausible label table".into()));
            }
            tables.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        let mut nets = Vec::new();
        let mut pos = r.pos;
        for _ in 0..4 {
            let (net, used) = NetworkParams::from_bytes(&bytes[pos..])?;
            pos += used;
            nets.push(net);
        }
        if pos != bytes.len() {
            return Err(Error::Model(format!("{} trailing bytes after the bundle", bytes.len() - pos)));
        }
        let user_head = nets.pop().expect("4");
        let activity_head = nets.pop().expect("4");
        let decoder = nets.pop().expect("4");
        let encoder = nets.pop().expect("4");
        let user_labels = tables.pop().expect("2");
        let activity_labels = tables.pop().expect("2");
        let latent = config.latent_dim();
        if encoder.input_dim() != channels * window_len
            || encoder.output_dim() != latent
            || decoder.input_dim() != latent
            || decoder.output_dim() != channels * window_len
            || activity_head.output_dim() != activity_labels.len()
            || user_head.output_dim() != user_labels.len()
        {
            return Err(Error::Model("network shapes disagree with the bundle header".into()));
        }
        Ok(Self {
            config,
            channels,
            window_len,
            norm: Normalization { mean, scale },
            encoder,
            decoder,
            activity_head,
            user_head,
            activity_labels,
            user_labels,
        })
    }
}

const BUNDLE_MAGIC: &[u8; 4] = b"CAAB";
const BUNDLE_VERSION: u8 = 1;

pub fn anonymize(win: &SensorWindow, model: &AaeModel) -> Result<LatentBlock> {
    Ok(model.anonymize_batch(std::slice::from_ref(win))?.remove(0))
}

pub fn reconstruct(block: &LatentBlock, model: &AaeModel) -> Result<SensorWindow> {
    Ok(model.reconstruct_batch(std::slice::from_ref(block))?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{self, CodecConfig};
    use crate::dataio::{self, SyntheticConfig};

    fn small_data() -> Vec<SensorWindow> {
        let cfg = SyntheticConfig {
            n_users: 4,
            n_activities: 3,
            windows_per_cell: 8,
            ..SyntheticConfig::default()
        };
        let recs = dataio::synthesize(&cfg).unwrap();
        dataio::window_all(&recs, 2.56, 2.56).unwrap()
    }

    fn small_cfg() -> AaeConfig {
        AaeConfig {
            encoder_widths: vec![64],
            decoder_widths: vec![64],
            head_widths: vec![16],
            epochs: 10,
            seed: 3,
            ..AaeConfig::default()
        }
    }

    #[test]
    fn latent_shape_and_codec_contract() {
        let data = small_data();
        assert_eq!((data[0].channels(), data[0].len()), (6, 128));
        let (model, _) = train_aae(&data, &AaeConfig { epochs: 1, ..small_cfg() }).unwrap();
        let z = anonymize(&data[0], &model).unwrap();
        assert_eq!(z.values.dim(), (8, 16));
        assert_eq!((z.user_id, z.activity_id), (data[0].user_id, data[0].activity_id));
        let frame = codec::encode_block(&z.values, &CodecConfig::default()).unwrap();
        assert_eq!((frame.header.channel_count, frame.header.block_length), (8, 16));
        assert_eq!(anonymize(&data[0], &model).unwrap(), z);
    }

    #[test]
    fn pure_autoencoder_reconstruction_decreases() {
        let data = small_data();
        let cfg = AaeConfig {
            lambda_act: 0.0,
            lambda_id: 0.0,
            ..small_cfg()
        };
        let (_, log) = train_aae(&data, &cfg).unwrap();
        let mse: Vec<f64> = log.epochs.iter().map(|e| e.reconstruction_mse).collect();
        assert!(mse.windows(2).all(|w| w[1] < w[0]), "{mse:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data();
        let a = train_aae(&data, &AaeConfig { epochs: 2, ..small_cfg() }).unwrap();
        let b = train_aae(&data, &AaeConfig { epochs: 2, ..small_cfg() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trained_reconstruction_beats_untrained() {
        let data = small_data();
        let (untrained, _) = train_aae(&data, &AaeConfig { epochs: 0, ..small_cfg() }).unwrap();
        let (trained, _) = train_aae(&data, &AaeConfig { epochs: 200, ..small_cfg() }).unwrap();
        let mean = |m: &AaeModel| m.reconstruction_mse(&data).unwrap().iter().sum::<f64>() / data.len() as f64;
        let (u, t) = (mean(&untrained), mean(&trained));
        assert!(u.is_finite() && t.is_finite());
        assert!(t < 0.6 * u, "trained {t} untrained {u}");
    }

    #[test]
    fn identity_weight_lowers_probe_accuracy() {
        use crate::estimators::{train_classifier, ClassifierConfig, InputKind};
        // A flattened latent of 128 values memorizes 96 windows, so the probe
        // is scored on windows the autoencoder and probe never saw.
        let data = dataio::window_all(&dataio::synthesize(&SyntheticConfig::default()).unwrap(), 2.56, 2.56).unwrap();
        let (train, test): (Vec<_>, Vec<_>) = data.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
        let train: Vec<SensorWindow> = train.into_iter().map(|(_, w)| w).collect();
        let test: Vec<SensorWindow> = test.into_iter().map(|(_, w)| w).collect();
        let probe = |lambda_id: f64| {
            let (m, _) = train_aae(&train, &AaeConfig { lambda_id, seed: 3, ..AaeConfig::default() }).unwrap();
            let users = |ws: &[SensorWindow]| ws.iter().map(|w| w.user_id).collect::<Vec<_>>();
            let z = m.latent_matrix(&train).unwrap();
            let (clf, _) = train_classifier(z.view(), &users(&train), &ClassifierConfig::default(), InputKind::FlattenedLatent).unwrap();
            let preds = clf.predict_batch(m.latent_matrix(&test).unwrap().view()).unwrap();
            preds.iter().zip(users(&test)).filter(|(p, u)| p.label == *u).count() as f64 / test.len() as f64
        };
        let (open, private) = (probe(0.0), probe(3.0));
        assert!(private < open, "λ_id = 3: {private}, λ_id = 0: {open}");
    }

    #[test]
    fn zero_window_stays_finite() {
        let data = small_data();
        let (model, _) = train_aae(&data, &AaeConfig { epochs: 1, ..small_cfg() }).unwrap();
        let zero = SensorWindow {
            values: Array2::zeros((6, 128)),
            ..data[0].clone()
        };
        let r = reconstruct(&anonymize(&zero, &model).unwrap(), &model).unwrap();
        assert!(r.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reversal_leaves_other_terms_untouched() {
        let data = small_data();
        let (model, _) = train_aae(&data, &AaeConfig { epochs: 2, ..small_cfg() }).unwrap();
        let batch = &data[..16];
        let terms = model.encoder_gradients(batch).unwrap();
        let base = AaeConfig { lambda_id: 0.0, ..small_cfg() };
        let g0 = terms.combine(&base);
        for lambda_id in [0.5, 1.0, 4.0] {
            let g = terms.combine(&AaeConfig { lambda_id, ..base.clone() });
            // Removing the identity term recovers the λ_id = 0 gradient.
            let mut back = g.clone();
            back.add_scaled(&terms.identity, -lambda_id);
            for (a, b) in back.iter().zip(g0.iter()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
        // The identity term is the exact negation of the encoder gradient
        // of the user cross-entropy.
        let x = model.standardized(batch);
        let users: Vec<u32> = batch.iter().map(|w| w.user_id).collect();
        let yu = neural::one_hot(&crate::estimators::densify(&users, &model.user_labels).unwrap(), model.user_labels.len());
        let ce = neural::forward(&model.encoder, x.view()).unwrap();
        let cu = neural::forward(&model.user_head, ce.output().view()).unwrap();
        let (_, _, gz) = neural::backward(&model.user_head, &cu, &LossSpec::cross_entropy(1.0), yu.view()).unwrap();
        let (plain, _) = neural::backward_from_output(&model.encoder, &ce, gz).unwrap();
        assert!(plain.iter().any(|v| *v != 0.0));
        for (a, b) in terms.identity.iter().zip(plain.iter()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn bundle_round_trip_and_version_check() {
        let data = small_data();
        let (model, _) = train_aae(&data, &AaeConfig { epochs: 1, ..small_cfg() }).unwrap();
        let bytes = model.to_bytes();
        let back = AaeModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.user_labels, model.user_labels);
        let a = anonymize(&data[0], &model).unwrap();
        let b = anonymize(&data[0], &back).unwrap();
        assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| (x - y).abs() < 1e-4));
        let mut bad = bytes.clone();
        bad[4] = 9;
        let err = AaeModel::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        assert!(AaeModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let data = small_data();
        let one_user: Vec<_> = data.iter().filter(|w| w.user_id == data[0].user_id).cloned().collect();
        assert!(matches!(train_aae(&one_user, &small_cfg()), Err(Error::Data(_))));
        let mut mixed = data.clone();
        mixed[3].values = Array2::zeros((6, 64));
        assert!(matches!(train_aae(&mixed, &small_cfg()), Err(Error::Shape(_))));
        let (model, _) = train_aae(&data, &AaeConfig { epochs: 1, ..small_cfg() }).unwrap();
        assert!(anonymize(&mixed[3], &model).is_err());
    }
}
