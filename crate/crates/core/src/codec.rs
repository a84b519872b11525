//! Differential PCM with an adaptive quantizer step, and its frame format.
//!
//! Each channel is coded independently. The prediction starts at the
//! channel's first sample (carried in the header); every slot quantizes the
//! difference to the running reconstruction with a midtread uniform quantizer
//! and updates the reconstruction, so encoder and decoder run the same
//! closed-loop recurrence. After every slot except the first, the step
//! follows
//!
//! ```text
//! s ← clamp(α·s + (1−α)·β·|Δẑ|, S_MIN, S_MAX)
//! ```
//!
//! where `Δẑ = code·s` is the reconstructed difference. A header α of 1
//! freezes the step, which is plain DPCM.
//!
//! Wire format (little-endian): `b"CAAE"`, u8 version, u16 channels,
//! u16 block length, u8 bits per code, f32 α, f32 β, f32 s0, one f32 initial
//! prediction per channel, then the codes as two's-complement `b`-bit fields
//! packed MSB-first, channel-major, zero-padded to a byte.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CAAE";
pub const VERSION: u8 = 1;
pub const S_MIN: f64 = 1e-6;
pub const S_MAX: f64 = 1e6;
/// Fixed header bytes before the per-channel predictions.
pub const FIXED_HEADER_BYTES: usize = 4 + 1 + 2 + 2 + 1 + 4 * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    #[default]
    PreviousSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub bits_per_code: u8,
    pub alpha: f64,
    pub beta: f64,
    pub s0: f64,
    pub predictor: Predictor,
    /// Width of the uncompressed representation the ratio is quoted against.
    pub reference_bits: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            bits_per_code: 4,
            alpha: 0.9,
            beta: 1.0,
            s0: 1.0,
            predictor: Predictor::PreviousSample,
            reference_bits: 16,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits_per_code) {
            return Err(Error::Config(format!("bits_per_code {} outside [2, 8]", self.bits_per_code)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        if self.reference_bits == 0 {
            return Err(Error::Config("reference_bits must be positive".into()));
        }
        Ok(())
    }
}

/// One step of the adaptive step law, clamped to `[S_MIN, S_MAX]`.
pub fn step_update(s_prev: f64, delta_prev_abs: f64, cfg: &CodecConfig) -> f64 {
    adapt(s_prev, delta_prev_abs, cfg.alpha, cfg.beta)
}

/// `α·s + (1−α)·β·d` in double-double arithmetic, rounded once at the end.
/// Plain evaluation rounds five times and can land 2 ulps off; `mul_add` is
/// IEEE fused multiply-add, so the result is the same on every platform.
fn adapt(s: f64, d: f64, alpha: f64, beta: f64) -> f64 {
    let p1 = alpha * s;
    let e1 = alpha.mul_add(s, -p1);
    let c = 1.0 - alpha;
    let c_lo = (1.0 - c) - alpha;
    let p2 = c * beta;
    let e2 = c.mul_add(beta, -p2) + c_lo * beta;
    let p3 = p2 * d;
    let e3 = p2.mul_add(d, -p3) + e2 * d;
    let sum = p1 + p3;
    let bp = sum - p1;
    let t = (p1 - (sum - bp)) + (p3 - bp);
    (sum + (t + e1 + e3)).clamp(S_MIN, S_MAX)
}

fn code_range(bits: u8) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameHeader {
    pub channel_count: u16,
    pub block_length: u16,
    pub bits_per_code: u8,
    pub alpha: f32,
    pub beta: f32,
    pub s0: f32,
    pub initial_prediction: Vec<f32>,
}

impl FrameHeader {
    pub fn byte_len(&self) -> usize {
        FIXED_HEADER_BYTES + 4 * self.initial_prediction.len()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Frame(m));
        if !(2..=8).contains(&self.bits_per_code) {
            return bad(format!("bits_per_code {}", self.bits_per_code));
        }
        if self.channel_count == 0 || self.block_length == 0 {
            return bad("empty block".into());
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.s0.is_finite()) {
            return Err(Error::NonFinite("frame header".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.beta > 0.0) || !(self.s0 > 0.0) {
            return bad(format!("step parameters α={} β={} s0={}", self.alpha, self.beta, self.s0));
        }
        if self.initial_prediction.len() != self.channel_count as usize {
            return bad("initial prediction count differs from channel count".into());
        }
        if self.initial_prediction.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame initial prediction".into()));
        }
        Ok(())
    }
}

/// Encoded block. `codes` is channel-major, `channel_count × block_length`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpcmFrame {
    pub header: FrameHeader,
    pub codes: Vec<i8>,
}

impl AdpcmFrame {
    pub fn payload_bits(&self) -> usize {
        self.codes.len() * self.header.bits_per_code as usize
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8)
    }

    pub fn byte_len(&self) -> usize {
        self.header.byte_len() + self.payload_bytes()
    }

    pub fn channel_codes(&self, channel: usize) -> &[i8] {
        let t = self.header.block_length as usize;
        &self.codes[channel * t..(channel + 1) * t]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&h.channel_count.to_le_bytes());
        out.extend_from_slice(&h.block_length.to_le_bytes());
        out.push(h.bits_per_code);
        out.extend_from_slice(&h.alpha.to_le_bytes());
        out.extend_from_slice(&h.beta.to_le_bytes());
        out.extend_from_slice(&h.s0.to_le_bytes());
        for p in &h.initial_prediction {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let bits = h.bits_per_code as u32;
        let mask = (1u32 << bits) - 1;
        let mut acc: u32 = 0;
        let mut filled = 0;
        for &c in &self.codes {
            acc = (acc << bits) | (c as i32 as u32 & mask);
            filled += bits;
            while filled >= 8 {
                filled -= 8;
                out.push((acc >> filled) as u8);
                acc &= (1 << filled) - 1;
            }
        }
        if filled > 0 {
            out.push((acc << (8 - filled)) as u8);
        }
        out
    }

    /// Parse one frame from the front of `bytes`; returns it and the number
    /// of bytes consumed. Nothing is returned on any inconsistency.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let trunc = || Error::Frame("truncated frame".into());
        let fixed = bytes.get(..FIXED_HEADER_BYTES).ok_or_else(trunc)?;
        if fixed[..4] != MAGIC {
            return Err(Error::Frame(format!("bad magic {:02x?}", &fixed[..4])));
        }
        if fixed[4] != VERSION {
            return Err(Error::Frame(format!("unsupported version {}", fixed[4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]);
        let f32_at = |b: &[u8], i: usize| f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let channel_count = u16_at(5);
        let block_length = u16_at(7);
        let bits_per_code = fixed[9];
        let mut header = FrameHeader {
            channel_count,
            block_length,
            bits_per_code,
            alpha: f32_at(fixed, 10),
            beta: f32_at(fixed, 14),
            s0: f32_at(fixed, 18),
            initial_prediction: Vec::new(),
        };
        let c = channel_count as usize;
        let preds = bytes.get(FIXED_HEADER_BYTES..FIXED_HEADER_BYTES + 4 * c).ok_or_else(trunc)?;
        header.initial_prediction = (0..c).map(|i| f32_at(preds, 4 * i)).collect();
        header.validate()?;

        let n = c * block_length as usize;
        let bits = bits_per_code as usize;
        let start = header.byte_len();
        let payload = bytes.get(start..start + (n * bits).div_ceil(8)).ok_or_else(trunc)?;
        let mut codes = Vec::with_capacity(n);
        let shift = 32 - bits as u32;
        for i in 0..n {
            let mut raw: u32 = 0;
            for k in 0..bits {
                let bit = i * bits + k;
                raw = (raw << 1) | u32::from((payload[bit / 8] >> (7 - bit % 8)) & 1);
            }
            // Sign-extend the b-bit field.
            codes.push((((raw << shift) as i32) >> shift) as i8);
        }
        let frame = AdpcmFrame { header, codes };
        let consumed = frame.byte_len();
        Ok((frame, consumed))
    }
}

/// Concatenated frames, as written by the edge encoder.
pub fn read_frames(mut bytes: &[u8]) -> Result<Vec<AdpcmFrame>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (f, used) = AdpcmFrame::from_bytes(bytes)?;
        out.push(f);
        bytes = &bytes[used..];
    }
    Ok(out)
}

/// Encoder-side view of one block: the frame plus everything the decoder
/// will reconstruct, per slot.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub frame: AdpcmFrame,
    pub reconstruction: Array2<f64>,
    /// Step used to quantize each slot.
    pub steps: Array2<f64>,
    /// Whether the slot's code hit the quantizer clamp.
    pub saturated: Array2<bool>,
}

struct Law {
    alpha: f64,
    beta: f64,
    s0: f64,
}

fn run_channel(
    law: &Law,
    start: f64,
    mut code_for: impl FnMut(usize, f64, f64) -> (i8, bool),
    len: usize,
    mut sink: impl FnMut(usize, f64, f64, i8, bool),
) {
    let mut pred = start;
    let mut step = law.s0;
    for t in 0..len {
        let (code, sat) = code_for(t, pred, step);
        let delta = f64::from(code) * step;
        pred += delta;
        sink(t, pred, step, code, sat);
        if t > 0 {
            step = adapt(step, delta.abs(), law.alpha, law.beta);
        }
    }
}

fn encode_with(block: &Array2<f64>, bits: u8, alpha: f32, beta: f32, s0: f32) -> Result<EncodeTrace> {
    let (c, t) = block.dim();
    if t == 0 || c == 0 {
        return Err(Error::Shape(format!("cannot encode a {c}×{t} block")));
    }
    let channel_count = u16::try_from(c).map_err(|_| Error::Shape(format!("{c} channels exceed u16")))?;
    let block_length = u16::try_from(t).map_err(|_| Error::Shape(format!("{t} steps exceed u16")))?;
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("codec input block".into()));
    }
    let initial: Vec<f32> = block.column(0).iter().map(|&v| v as f32).collect();
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial prediction exceeds f32 range".into()));
    }
    // The recurrence runs on the header's f32 values so the decoder sees
    // exactly the same parameters.
    let law = Law {
        alpha: f64::from(alpha),
        beta: f64::from(beta),
        s0: f64::from(s0),
    };
    let (lo, hi) = code_range(bits);
    let mut codes = vec![0i8; c * t];
    let mut reconstruction = Array2::zeros((c, t));
    let mut steps = Array2::zeros((c, t));
    let mut saturated = Array2::from_elem((c, t), false);
    for ch in 0..c {
        let row = block.row(ch);
        run_channel(
            &law,
            f64::from(initial[ch]),
            |slot, pred, step| {
                let q = ((row[slot] - pred) / step).round();
                let clamped = q.clamp(f64::from(lo), f64::from(hi));
                (clamped as i8, clamped != q)
            },
            t,
            |slot, pred, step, code, sat| {
                codes[ch * t + slot] = code;
                reconstruction[[ch, slot]] = pred;
                steps[[ch, slot]] = step;
                saturated[[ch, slot]] = sat;
            },
        );
    }
    Ok(EncodeTrace {
        frame: AdpcmFrame {
            header: FrameHeader {
                channel_count,
                block_length,
                bits_per_code: bits,
                alpha,
                beta,
                s0,
                initial_prediction: initial,
            },
            codes,
        },
        reconstruction,
        steps,
        saturated,
    })
}

/// ADPCM-encode a `[C × T]` block and keep the encoder-side trace.
pub fn encode_block_traced(block: &Array2<f64>, cfg: &CodecConfig) -> Result<EncodeTrace> {
    cfg.validate()?;
    encode_with(block, cfg.bits_per_code, cfg.alpha as f32, cfg.beta as f32, cfg.s0 as f32)
}

pub fn encode_block(block: &Array2<f64>, cfg: &CodecConfig) -> Result<AdpcmFrame> {
    encode_block_traced(block, cfg).map(|t| t.frame)
}

/// Fixed-step DPCM with step `cfg.s0`.
pub fn encode_dpcm_traced(block: &Array2<f64>, cfg: &CodecConfig) -> Result<EncodeTrace> {
    cfg.validate()?;
    encode_with(block, cfg.bits_per_code, 1.0, cfg.beta as f32, cfg.s0 as f32)
}

pub fn encode_dpcm(block: &Array2<f64>, cfg: &CodecConfig) -> Result<AdpcmFrame> {
    encode_dpcm_traced(block, cfg).map(|t| t.frame)
}

pub fn decode_frame(frame: &AdpcmFrame) -> Result<Array2<f64>> {
    let h = &frame.header;
    h.validate()?;
    let (c, t) = (h.channel_count as usize, h.block_length as usize);
    if frame.codes.len() != c * t {
        return Err(Error::Frame(format!("{} codes for a {c}×{t} block", frame.codes.len())));
    }
    let (lo, hi) = code_range(h.bits_per_code);
    if frame.codes.iter().any(|&k| i32::from(k) < lo || i32::from(k) > hi) {
        return Err(Error::Frame("code outside the quantizer range".into()));
    }
    let law = Law {
        alpha: f64::from(h.alpha),
        beta: f64::from(h.beta),
        s0: f64::from(h.s0),
    };
    let mut out = Array2::zeros((c, t));
    for ch in 0..c {
        let codes = frame.channel_codes(ch);
        run_channel(
            &law,
            f64::from(h.initial_prediction[ch]),
            |slot, _, _| (codes[slot], false),
            t,
            |slot, pred, _, _, _| out[[ch, slot]] = pred,
        );
    }
    Ok(out)
}

/// Payload-only ratio `reference_bits / bits_per_code`.
pub fn compression_ratio(frame: &AdpcmFrame, reference_bits: u32) -> f64 {
    f64::from(reference_bits) / f64::from(frame.header.bits_per_code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub reference_bits: u64,
    pub payload_bits: u64,
    pub header_bits: u64,
    /// Reference size over payload size, header excluded.
    pub payload_ratio: f64,
    /// Reference size over full frame size.
    pub total_ratio: f64,
    /// Header size as a fraction of the uncompressed reference size.
    pub header_overhead: f64,
    /// Header size as a fraction of the payload.
    pub header_to_payload: f64,
}

impl CompressionStats {
    pub fn of(frame: &AdpcmFrame, reference_bits: u32) -> Self {
        let samples = frame.codes.len() as u64;
        let reference = samples * u64::from(reference_bits);
        let payload = (frame.payload_bytes() * 8) as u64;
        let header = (frame.header.byte_len() * 8) as u64;
        Self {
            reference_bits: reference,
            payload_bits: payload,
            header_bits: header,
            payload_ratio: compression_ratio(frame, reference_bits),
            total_ratio: reference as f64 / (payload + header) as f64,
            header_overhead: header as f64 / reference as f64,
            header_to_payload: header as f64 / payload as f64,
        }
    }
}

/// Signal-to-noise ratio in dB of a reconstruction; infinite when exact.
pub fn snr_db(original: &Array2<f64>, reconstruction: &Array2<f64>) -> f64 {
    let signal: f64 = original.iter().map(|v| v * v).sum();
    let noise: f64 = original.iter().zip(reconstruction).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}
