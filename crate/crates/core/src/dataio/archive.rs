//! Prepared-dataset archive: a binary window file plus a TOML manifest with
//! the split index lists and the window file digest.
//!
//! `windows.bin` layout, little-endian:
//! magic `CAAW`, u8 version, f64 sample rate, u32 window count, u16 channels,
//! u32 window length, then per window: u32 user, u32 activity, u64 offset,
//! `channels × length` f64 values row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SensorWindow, Split};
use crate::error::{Error, Result};

pub const ARCHIVE_FILE: &str = "windows.bin";
pub const MANIFEST_FILE: &str = "manifest.toml";
const MAGIC: &[u8; 4] = b"CAAW";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub sample_rate_hz: f64,
    pub windows: Vec<SensorWindow>,
    pub split: Option<Split>,
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u8,
    source: String,
    sample_rate_hz: f64,
    window_count: usize,
    channels: usize,
    window_len: usize,
    users: Vec<u32>,
    activities: Vec<u32>,
    sha256: String,
    split: Option<Split>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(archive: &Archive) -> Result<Vec<u8>> {
    let (channels, len) = archive.windows.first().map_or((0, 0), |w| w.values.dim());
    if archive.windows.iter().any(|w| w.values.dim() != (channels, len)) {
        return Err(Error::Shape("archive windows must share one shape".into()));
    }
    let channels_u16 = u16::try_from(channels).map_err(|_| Error::Shape("too many channels".into()))?;
    let mut buf = Vec::with_capacity(32 + archive.windows.len() * (16 + channels * len * 8));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&archive.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(archive.windows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&channels_u16.to_le_bytes());
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    for w in &archive.windows {
        buf.extend_from_slice(&w.user_id.to_le_bytes());
        buf.extend_from_slice(&w.activity_id.to_le_bytes());
        buf.extend_from_slice(&(w.source_offset as u64).to_le_bytes());
        for v in w.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Write `windows.bin` and `manifest.toml` into `dir`, returning the digest.
pub fn write_archive(dir: &Path, archive: &Archive) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode(archive)?;
    let digest = hex(&Sha256::digest(&bytes));
    let (channels, window_len) = archive.windows.first().map_or((0, 0), |w| w.values.dim());
    let mut users: Vec<u32> = archive.windows.iter().map(|w| w.user_id).collect();
    users.sort_unstable();
    users.dedup();
    let mut activities: Vec<u32> = archive.windows.iter().map(|w| w.activity_id).collect();
    activities.sort_unstable();
    activities.dedup();
    let manifest = Manifest {
        version: VERSION,
        source: archive.source.clone(),
        sample_rate_hz: archive.sample_rate_hz,
        window_count: archive.windows.len(),
        channels,
        window_len,
        users,
        activities,
        sha256: digest.clone(),
        split: archive.split.clone(),
    };
    let path = dir.join(ARCHIVE_FILE);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(digest)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let out = self.bytes.get(self.pos..self.pos + N)?.try_into().ok()?;
        self.pos += N;
        Some(out)
    }
}

pub fn read_archive(dir: &Path) -> Result<Archive> {
    let path = dir.join(ARCHIVE_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let corrupt = |m: &str| Error::Parse {
        path: path.clone(),
        line: 0,
        message: m.to_string(),
    };
    if hex(&Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(corrupt("digest does not match manifest"));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let truncated = || corrupt("truncated archive");
    if &cur.take::<4>().ok_or_else(truncated)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let [version] = cur.take::<1>().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(corrupt(&format!("unsupported archive version {version}")));
    }
    let rate = f64::from_le_bytes(cur.take().ok_or_else(truncated)?);
    let count = u32::from_le_bytes(cur.take().ok_or_else(truncated)?) as usize;
    let channels = u16::from_le_bytes(cur.take().ok_or_else(truncated)?) as usize;
    let len = u32::from_le_bytes(cur.take().ok_or_else(truncated)?) as usize;
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let user_id = u32::from_le_bytes(cur.take().ok_or_else(truncated)?);
        let activity_id = u32::from_le_bytes(cur.take().ok_or_else(truncated)?);
        let source_offset = u64::from_le_bytes(cur.take().ok_or_else(truncated)?) as usize;
        let mut vals = Vec::with_capacity(channels * len);
        for _ in 0..channels * len {
            vals.push(f64::from_le_bytes(cur.take().ok_or_else(truncated)?));
        }
        windows.push(SensorWindow {
            values: Array2::from_shape_vec((channels, len), vals).expect("sized"),
            user_id,
            activity_id,
            source_offset,
        });
    }
    Ok(Archive {
        sample_rate_hz: rate,
        windows,
        split: manifest.split,
        source: manifest.source,
    })
}
