//! Declarative CSV loading for MotionSense- and PAMAP2-shaped trees.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChannelDesc, Recording, SensorKind, Axis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One file per (user, activity) session; labels come from the path.
    PerFile,
    /// Label columns in the file; each run of equal labels is a session.
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnChannel {
    pub column: String,
    pub kind: SensorKind,
    pub axis: Axis,
    #[serde(default)]
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub layout: Layout,
    pub sample_rate_hz: f64,
    pub channels: Vec<ColumnChannel>,
    /// `per_file`: regex over the path relative to the dataset root, with
    /// named groups `user` and `activity`.
    #[serde(default)]
    pub path_pattern: Option<String>,
    #[serde(default)]
    pub user_column: Option<String>,
    #[serde(default)]
    pub activity_column: Option<String>,
    /// Raw activity label to dense id. Empty means labels are numeric.
    #[serde(default)]
    pub activity_map: BTreeMap<String, u32>,
    #[serde(default = "default_extension")]
    pub extension: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_extension() -> String {
    "csv".into()
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub recordings: Vec<Recording>,
    /// Sample rows dropped for missing values.
    pub dropped_rows: usize,
    pub files_read: usize,
}

impl DatasetDescriptor {
    fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("dataset sample_rate_hz must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.len() % 3 != 0 {
            return Err(Error::Config(format!(
                "dataset lists {} channels, need a positive multiple of 3",
                self.channels.len()
            )));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be ASCII".into()));
        }
        match self.layout {
            Layout::PerFile if self.path_pattern.is_none() => {
                Err(Error::Config("per_file layout needs path_pattern".into()))
            }
            Layout::Long if self.user_column.is_none() || self.activity_column.is_none() => Err(
                Error::Config("long layout needs user_column and activity_column".into()),
            ),
            _ => Ok(()),
        }
    }

    fn channel_descs(&self) -> Vec<ChannelDesc> {
        self.channels
            .iter()
            .map(|c| ChannelDesc::new(c.kind, c.axis, &c.location))
            .collect()
    }

    fn activity_id(&self, raw: &str) -> Option<u32> {
        if self.activity_map.is_empty() {
            parse_label(raw)
        } else {
            self.activity_map.get(raw.trim()).copied()
        }
    }
}

fn parse_label(raw: &str) -> Option<u32> {
    let raw = raw.trim();
    raw.parse::<u32>().ok().or_else(|| {
        let v: f64 = raw.parse().ok()?;
        (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
    })
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na")
}

/// Load every matching file under `path` (or `path` itself if it is a file).
pub fn load_dataset(path: &Path, spec: &DatasetDescriptor) -> Result<LoadedDataset> {
    spec.validate()?;
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset path does not exist"),
        ));
    }
    let files: Vec<PathBuf> = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let p = e.path().map(Path::to_path_buf).unwrap_or_else(|| path.to_path_buf());
                Error::io(p, std::io::Error::other(e.to_string()))
            })?;
            if entry.file_type().is_file()
                && entry.path().extension().and_then(|e| e.to_str()) == Some(spec.extension.as_str())
            {
                files.push(entry.into_path());
            }
        }
        files
    };

    let pattern = match &spec.path_pattern {
        Some(p) => Some(Regex::new(p).map_err(|e| Error::Config(format!("path_pattern: {e}")))?),
        None => None,
    };

    let mut out = LoadedDataset::default();
    for file in files {
        let rel = file.strip_prefix(path).unwrap_or(&file);
        let rel = rel.to_string_lossy().replace('\\', "/");
        match spec.layout {
            Layout::PerFile => {
                let re = pattern.as_ref().expect("validated");
                let rel = if rel.is_empty() {
                    file.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
                } else {
                    rel
                };
                let Some(caps) = re.captures(&rel) else { continue };
                let (Some(user), Some(activity)) = (caps.name("user"), caps.name("activity")) else {
                    return Err(Error::Config(
                        "path_pattern must define named groups `user` and `activity`".into(),
                    ));
                };
                let user_id = parse_label(user.as_str()).ok_or_else(|| Error::Parse {
                    path: file.clone(),
                    line: 0,
                    message: format!("user label `{}` is not a non-negative integer", user.as_str()),
                })?;
                let activity_id = spec.activity_id(activity.as_str()).ok_or_else(|| Error::Parse {
                    path: file.clone(),
                    line: 0,
                    message: format!("unknown activity label `{}`", activity.as_str()),
                })?;
                let table = read_table(&file, spec, None)?;
                out.dropped_rows += table.dropped;
                out.files_read += 1;
                if !table.rows.is_empty() {
                    out.recordings.push(to_recording(user_id, activity_id, &table.rows, spec)?);
                }
            }
            Layout::Long => {
                let table = read_table(&file, spec, Some(()))?;
                out.dropped_rows += table.dropped;
                out.files_read += 1;
                let mut start = 0;
                while start < table.rows.len() {
                    let key = table.labels[start];
                    let mut end = start + 1;
                    while end < table.rows.len() && table.labels[end] == key {
                        end += 1;
                    }
                    out.recordings.push(to_recording(key.0, key.1, &table.rows[start..end], spec)?);
                    start = end;
                }
            }
        }
    }
    Ok(out)
}

struct Table {
    rows: Vec<Vec<f64>>,
    labels: Vec<(u32, u32)>,
    dropped: usize,
}

fn read_table(file: &Path, spec: &DatasetDescriptor, with_labels: Option<()>) -> Result<Table> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: file.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .flexible(true)
        .has_headers(true)
        .from_path(file)
        .map_err(|e| Error::io(file, std::io::Error::other(e.to_string())))?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let mut table = Table {
        rows: Vec::new(),
        labels: Vec::new(),
        dropped: 0,
    };
    if headers.is_empty() {
        return Ok(table);
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(1, format!("unknown column `{name}`")))
    };
    let channel_cols = spec
        .channels
        .iter()
        .map(|c| column(&c.column))
        .collect::<Result<Vec<_>>>()?;
    let label_cols = match with_labels {
        Some(()) => Some((
            column(spec.user_column.as_deref().expect("validated"))?,
            column(spec.activity_column.as_deref().expect("validated"))?,
        )),
        None => None,
    };

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let mut missing = false;
        let mut row = Vec::with_capacity(channel_cols.len());
        for (&col, ch) in channel_cols.iter().zip(&spec.channels) {
            let field = &record[col];
            if is_missing(field) {
                missing = true;
                continue;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column `{}`: `{field}` is not a number", ch.column)))?;
            if !v.is_finite() {
                missing = true;
            }
            row.push(v);
        }
        let labels = match label_cols {
            Some((uc, ac)) => {
                if is_missing(&record[uc]) || is_missing(&record[ac]) {
                    missing = true;
                    None
                } else {
                    let u = parse_label(&record[uc])
                        .ok_or_else(|| parse_err(line, format!("bad user label `{}`", &record[uc])))?;
                    let a = spec
                        .activity_id(&record[ac])
                        .ok_or_else(|| parse_err(line, format!("unknown activity label `{}`", &record[ac])))?;
                    Some((u, a))
                }
            }
            None => None,
        };
        if missing {
            table.dropped += 1;
            continue;
        }
        table.rows.push(row);
        if let Some(l) = labels {
            table.labels.push(l);
        }
    }
    Ok(table)
}

fn to_recording(user: u32, activity: u32, rows: &[Vec<f64>], spec: &DatasetDescriptor) -> Result<Recording> {
    let c = spec.channels.len();
    let samples = Array2::from_shape_fn((c, rows.len()), |(ch, t)| rows[t][ch]);
    Recording::new(user, activity, spec.channel_descs(), samples, spec.sample_rate_hz)
}
