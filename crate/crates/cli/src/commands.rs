use std::fs;
use std::path::Path;

use caae_core::anonymizer::{self, AaeModel, LATENT_STEPS};
use caae_core::codec;
use caae_core::config::{Prepared, RunConfig, Target};
use caae_core::dataio::{self, Archive, SensorWindow};
use caae_core::estimators::{self, ClassifierConfig, ClassifierModel, InputKind};
use caae_core::features::FeatureExtractor;
use caae_core::harness::{self, Arm, Dataset, EstimatorInput, ExperimentReport, PipelineVariant};
use caae_core::{seed, Error, Result};
use log::{info, warn};
use ndarray::Array2;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// The prepared archive when there is one, otherwise the configured source.
fn prepared(cfg: &RunConfig) -> Result<Prepared> {
    let dir = cfg.archive_dir();
    if cfg.paths.archive.is_some() || dir.join(dataio::ARCHIVE_FILE).exists() {
        info!("reading archive {}", dir.display());
        return Ok(dataio::read_archive(&dir)?.into());
    }
    cfg.load_windows()
}

fn load_aae(cfg: &RunConfig) -> Result<AaeModel> {
    let path = cfg.aae_path();
    AaeModel::from_bytes(&read_file(&path)?).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
}

fn report_stem(variant: &str) -> String {
    variant.replace([':', '='], "_")
}

/// Estimator rows for a list of `[channels × len]` blocks.
fn input_rows(cfg: &RunConfig, blocks: &[Array2<f64>], rate: f64, latent: bool) -> Result<(Array2<f64>, InputKind)> {
    let first = blocks.first().ok_or_else(|| Error::Data("no windows to classify".into()))?;
    if cfg.eval.input == EstimatorInput::Flattened {
        let width = first.len();
        let flat: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        let kind = if latent { InputKind::FlattenedLatent } else { InputKind::FlattenedWindow };
        let m = Array2::from_shape_vec((blocks.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))?;
        return Ok((m, kind));
    }
    let fx = FeatureExtractor::new(first.ncols(), rate)?;
    let rows: Vec<Vec<f64>> = blocks.iter().map(|b| fx.extract_values(b)).collect::<Result<_>>()?;
    let width = rows[0].len();
    let m = Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((m, InputKind::FeatureVector))
}

/// Sample rate the latent time axis is treated as having.
fn latent_rate(rate: f64, window_len: usize) -> f64 {
    rate * LATENT_STEPS as f64 / window_len as f64
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let p = cfg.load_windows()?;
    if p.dropped_rows > 0 {
        warn!("dropped {} rows with missing values", p.dropped_rows);
    }
    let archive = Archive {
        sample_rate_hz: p.sample_rate_hz,
        windows: p.windows,
        split: p.split,
        source: p.source,
    };
    let dir = cfg.archive_dir();
    let digest = dataio::write_archive(&dir, &archive)?;
    let count = |f: fn(&SensorWindow) -> u32| {
        let mut v: Vec<u32> = archive.windows.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    println!(
        "prepared {} windows ({} users x {} activities) in {}\nsha256 {digest}",
        archive.windows.len(),
        count(|w| w.user_id),
        count(|w| w.activity_id),
        dir.display()
    );
    Ok(())
}

pub fn train_aae(cfg: &RunConfig) -> Result<()> {
    let train = prepared(cfg)?.train();
    let aae_cfg = anonymizer::AaeConfig {
        seed: seed::derive_named(cfg.seed, "aae"),
        ..cfg.aae.clone()
    };
    info!("training autoencoder on {} windows", train.len());
    let (model, log) = anonymizer::train_aae(&train, &aae_cfg)?;
    let path = cfg.aae_path();
    write_file(&path, &model.to_bytes())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: reconstruction mse {:.5}, activity ce {:.4}, user ce {:.4}, user head accuracy {:.3}",
            last.epoch + 1,
            last.reconstruction_mse,
            last.activity_ce,
            last.user_ce,
            last.user_head_accuracy
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Blocks in the domain the classifier reads, with their sample rate.
fn domain_blocks(cfg: &RunConfig, variant: PipelineVariant, windows: &[SensorWindow], rate: f64) -> Result<(Vec<Array2<f64>>, f64)> {
    if variant == PipelineVariant::Baseline {
        return Ok((windows.iter().map(|w| w.values.clone()).collect(), rate));
    }
    let model = load_aae(cfg)?;
    let lrate = latent_rate(rate, model.window_len);
    let latents = model.anonymize_batch(windows)?;
    if variant == PipelineVariant::Aae {
        return Ok((latents.into_iter().map(|b| b.values).collect(), lrate));
    }
    let decoded = latents
        .iter()
        .map(|b| codec::decode_frame(&codec::encode_block(&b.values, &cfg.codec)?))
        .collect::<Result<_>>()?;
    Ok((decoded, lrate))
}

pub fn train_classifier(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.classifier_variant()?;
    let p = prepared(cfg)?;
    let train = p.train();
    let (blocks, rate) = domain_blocks(cfg, variant, &train, p.sample_rate_hz)?;
    let (x, kind) = input_rows(cfg, &blocks, rate, variant != PipelineVariant::Baseline)?;
    let labels: Vec<u32> = train
        .iter()
        .map(|w| match cfg.classifier.target {
            Target::Activity => w.activity_id,
            Target::User => w.user_id,
        })
        .collect();
    let est = ClassifierConfig {
        seed: seed::derive_named(cfg.seed, "classifier"),
        ..cfg.eval.estimator.clone()
    };
    let (model, log) = estimators::train_classifier(x.view(), &labels, &est, kind)?;
    let path = cfg.classifier_path();
    write_file(&path, &model.to_bytes())?;
    println!(
        "{} classifier on {} ({} windows): training accuracy {:.3}",
        match cfg.classifier.target {
            Target::Activity => "activity",
            Target::User => "user",
        },
        variant.name(),
        train.len(),
        log.train_accuracy
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn encode(cfg: &RunConfig) -> Result<()> {
    let model = load_aae(cfg)?;
    let windows = prepared(cfg)?.test();
    let latents = model.anonymize_batch(&windows)?;
    let mut out = Vec::new();
    let mut stats = None;
    for b in &latents {
        let frame = codec::encode_block(&b.values, &cfg.codec)?;
        stats.get_or_insert_with(|| codec::CompressionStats::of(&frame, cfg.codec.reference_bits));
        out.extend(frame.to_bytes());
    }
    let path = cfg.frames_path();
    write_file(&path, &out)?;
    let s = stats.ok_or_else(|| Error::Data("no windows to encode".into()))?;
    println!(
        "encoded {} frames ({} bytes) to {}\ncompression ratio {:.2} (payload), {:.2} (with header), header overhead {:.2}%",
        latents.len(),
        out.len(),
        path.display(),
        s.payload_ratio,
        s.total_ratio,
        100.0 * s.header_overhead
    );
    Ok(())
}

pub fn recognize(cfg: &RunConfig) -> Result<()> {
    let frames = codec::read_frames(&read_file(&cfg.frames_path())?)?;
    let cpath = cfg.classifier_path();
    let model = ClassifierModel::from_bytes(&read_file(&cpath)?).map_err(|e| Error::Model(format!("{}: {e}", cpath.display())))?;
    let blocks: Vec<Array2<f64>> = frames.iter().map(codec::decode_frame).collect::<Result<_>>()?;
    let rate = cfg.sample_rate_hz();
    let window_len = dataio::samples_for(cfg.window_seconds(), rate);
    let (x, kind) = input_rows(cfg, &blocks, latent_rate(rate, window_len), true)?;
    if kind != model.input_kind || x.ncols() != model.input_dim {
        return Err(Error::Shape(format!(
            "frames give {:?} rows of width {}, classifier expects {:?} of width {}",
            kind,
            x.ncols(),
            model.input_kind,
            model.input_dim
        )));
    }
    let preds = model.predict_batch(x.view())?;
    let path = cfg.out().join("predictions.csv");
    let mut buf = Vec::new();
    estimators::write_predictions_csv(&mut buf, &model, &preds, None)?;
    write_file(&path, &buf)?;
    println!("{} predictions written to {}", preds.len(), path.display());
    Ok(())
}

fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_file(&dir.join(format!("{}.toml", report_stem(&report.variant))), report.to_toml()?.as_bytes())
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let p = prepared(cfg)?;
    Dataset::new(p.windows, p.sample_rate_hz)
}

pub fn experiment(cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    let exp = cfg.experiment();
    let arms: Vec<Arm> = cfg
        .variants()?
        .into_iter()
        .map(|variant| Arm {
            variant,
            codec: exp.codec.clone(),
            aae: exp.aae.clone(),
        })
        .collect();
    info!("{} windows, {} users, {} arms", data.windows.len(), data.n_users(), arms.len());
    let (baseline, results) = harness::run_arms(&data, &exp, &arms)?;
    let dir = cfg.out().join("reports");
    write_report(&dir, &baseline)?;
    let mut written = vec![baseline];
    let mut first_err = None;
    for (arm, r) in arms.iter().zip(results) {
        match r {
            Ok(report) if arm.variant != PipelineVariant::Baseline => {
                write_report(&dir, &report)?;
                written.push(report);
            }
            Ok(_) => {}
            Err(e) => {
                eprintln!("{}: {e}", arm.variant.name());
                first_err.get_or_insert(e);
            }
        }
    }
    summarize(cfg, written)?;
    first_err.map_or(Ok(()), Err)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let axis = cfg.sweep.as_ref().ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let data = dataset(cfg)?;
    let result = harness::sweep(&data, &cfg.experiment(), axis)?;
    let csv = harness::trade_off_csv(&result);
    let out = cfg.out();
    write_file(&out.join("sweep.csv"), csv.as_bytes())?;
    let text = toml::to_string(&SweepFile { sweep: &result }).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("sweep.toml"), text.as_bytes())?;
    print!("{csv}");
    let failed: Vec<_> = result.points.iter().filter_map(|p| p.error.as_ref()).collect();
    match failed.first() {
        None => Ok(()),
        Some(e) if e.starts_with("invalid configuration") => Err(Error::Config(format!("{} sweep point(s) failed; first: {e}", failed.len()))),
        Some(e) => Err(Error::Data(format!("{} sweep point(s) failed; first: {e}", failed.len()))),
    }
}

#[derive(serde::Serialize)]
struct SweepFile<'a> {
    sweep: &'a harness::SweepResult,
}

/// Markdown table and criteria verdicts, written to `summary.md`.
fn summarize(cfg: &RunConfig, mut reports: Vec<ExperimentReport>) -> Result<()> {
    // Baseline first, then in the order the variants are listed.
    let order: Vec<String> = cfg.variants.iter().filter_map(|v| v.parse::<PipelineVariant>().ok()).map(|v| v.name()).collect();
    reports.sort_by_key(|r| {
        if r.variant == "baseline" { 0 } else { order.iter().position(|v| *v == r.variant).map_or(usize::MAX, |i| i + 1) }
    });
    let mut md = harness::markdown_summary(&reports);
    md.push_str("\n| Variant | Req. 1 (activity within 5 pts) | Req. 2 (user F1 ≤ 1/n) | Payload ratio |\n|---|---|---|---|\n");
    for r in &reports {
        let v = &r.verdicts;
        let mark = |pass: bool, margin: f64| format!("{} ({margin:+.4})", if pass { "pass" } else { "fail" });
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.variant,
            mark(v.req1.pass, v.req1.margin),
            mark(v.req2.pass, v.req2.margin),
            r.compression.as_ref().map_or("-".to_string(), |c| format!("{:.2}", c.payload_ratio))
        ));
    }
    write_file(&cfg.out().join("summary.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}

/// Summarize every report under `out/reports`.
pub fn report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out().join("reports");
    let mut paths: Vec<_> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        reports.push(ExperimentReport::from_toml(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            line: 0,
            message: e.to_string(),
        })?);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!("no reports in {}", dir.display())));
    }
    summarize(cfg, reports)
}
