//! The five subcommands. Each reads its section of the run configuration,
//! writes its outputs plus `resolved_config.toml` into the output
//! directory, and returns what it computed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cardioseg_core::ctr::{estimate_ctr, CtrOptions, CtrResult};
use cardioseg_core::data::{select_labeled_fraction, DatasetManifest, ImageSample, LabelMask, ManifestEntry};
use cardioseg_core::eval::{evaluate as evaluate_images, ImageRecord};
use cardioseg_core::loss::BatchLossReport;
use cardioseg_core::metrics::MetricsReport;
use cardioseg_core::model::ModelParams;
use cardioseg_core::phantom::{generate_phantom, Phantom, PhantomSpec};
use cardioseg_core::train::{encode_labeled, predict as predict_masks, train_cycle, InMemoryStream, TrainMode, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{load_manifest, save_manifest, to_toml, write_file, write_image, write_mask, Manifest};
use crate::{overlay, report};

/// Everything a command needs besides its configuration section.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub overlay: bool,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.config.seed()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write_snapshot(&self) -> Result<()> {
        write_file(&self.path("resolved_config.toml"), to_toml(&self.config.resolved())?)
    }
}

#[derive(Serialize)]
struct SpecList<'a> {
    spec: &'a [PhantomSpec],
}

/// Draws and renders phantoms; every spec is validated before anything is
/// written.
pub fn generate_phantoms(ctx: &Context) -> Result<Vec<Phantom>> {
    let sec = ctx.config.section(&ctx.config.generate, "generate")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let sampler = sec.sampler();
    let mut specs = Vec::with_capacity(sec.count + sec.specs.len());
    for _ in 0..sec.count {
        specs.push(sampler.sample(&mut rng).map_err(|e| Error::Config(format!("generate sampler: {e}")))?);
    }
    for (i, s) in sec.specs.iter().enumerate() {
        s.validate().map_err(|e| Error::Config(format!("generate.spec[{i}]: {e}")))?;
        specs.push(s.clone());
    }
    let mut phantoms = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let id = format!("{}{i:04}", sec.id_prefix);
        let mut p = generate_phantom(s, &id, sec.domain)?;
        p.image.pixel_spacing = sec.pixel_spacing;
        phantoms.push(p);
    }

    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let mut entries = Vec::with_capacity(phantoms.len());
    let mut table = String::from("id,true_ctr,x_a,x_b,x_c,x_d\n");
    for (p, s) in phantoms.iter().zip(&specs) {
        let id = &p.image.id;
        let image = format!("images/{id}.png");
        let mask = format!("masks/{id}.png");
        write_image(&ctx.path(&image), &p.image)?;
        write_mask(&ctx.path(&mask), &p.mask)?;
        entries.push(ManifestEntry {
            id: id.clone(),
            image,
            mask: Some(mask),
            domain: sec.domain,
            reference_mask: None,
            pixel_spacing: sec.pixel_spacing,
        });
        table.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            p.true_ctr, s.cardiac.0, s.cardiac.1, s.thorax.0, s.thorax.1
        ));
    }
    save_manifest(&ctx.path("manifest.toml"), &DatasetManifest::new(entries)?)?;
    write_file(&ctx.path("ground_truth.csv"), table)?;
    write_file(&ctx.path("specs.toml"), to_toml(&SpecList { spec: &specs })?)?;
    ctx.write_snapshot()?;
    Ok(phantoms)
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine<'a> {
    Start {
        mode: TrainMode,
        steps: u64,
        labeled: usize,
        unlabeled: usize,
        target: usize,
        labeled_fraction: Option<f64>,
    },
    Step {
        step: u64,
        segmentor_updates: u64,
        discriminator_updates: u64,
        #[serde(flatten)]
        loss: &'a BatchLossReport,
    },
    Checkpoint {
        step: u64,
        path: &'a str,
    },
}

fn log(w: &mut impl Write, path: &Path, line: &LogLine) -> Result<()> {
    let text = serde_json::to_string(line).expect("log line serialises");
    writeln!(w, "{text}").map_err(|e| Error::io(path, e))
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub checkpoint: PathBuf,
    pub labeled: usize,
    pub unlabeled: usize,
    pub target: usize,
}

pub fn train(ctx: &Context) -> Result<TrainOutcome> {
    let sec = ctx.config.section(&ctx.config.train, "train")?;
    let seed = ctx.seed();
    let cfg = sec.train_config(seed);
    cfg.validate()?;
    match (cfg.mode, &sec.target_manifest, sec.labeled_fraction) {
        (TrainMode::Uda, None, _) => {
            return Err(Error::Config("mode uda needs train.target_manifest".into()));
        }
        (TrainMode::SemiSupervised, None, None) => {
            return Err(Error::Config(
                "mode semi_supervised needs train.labeled_fraction or train.target_manifest".into(),
            ));
        }
        (TrainMode::Supervised | TrainMode::SupervisedAdv, Some(_), _) => {
            return Err(Error::Config(format!(
                "mode {:?} takes no target_manifest",
                cfg.mode
            )));
        }
        _ => {}
    }

    let source = load_manifest(&sec.source_manifest)?;
    let (labeled, unlabeled) = match sec.labeled_fraction {
        Some(f) => select_labeled_fraction(&source.data, f, seed)?,
        None => {
            source.data.require_masks()?;
            (source.data.clone(), DatasetManifest::new(Vec::new())?)
        }
    };
    let target = match &sec.target_manifest {
        Some(p) => Some(load_manifest(p)?),
        None => None,
    };

    let (h, w) = (cfg.model.segmentor.input_height, cfg.model.segmentor.input_width);
    let mut source_items = Vec::with_capacity(labeled.len());
    for e in &labeled.entries {
        let (image, mask) = source.labeled(e)?;
        source_items.push(encode_labeled(&image, &mask, h, w)?);
    }
    let mut target_items = Vec::new();
    if cfg.mode == TrainMode::SemiSupervised {
        for e in &unlabeled.entries {
            target_items.push(source.image(e)?.to_tensor(h, w));
        }
    }
    let n_target = target.as_ref().map_or(0, |t| t.data.len());
    if let Some(t) = &target {
        for e in &t.data.entries {
            target_items.push(t.image(e)?.to_tensor(h, w));
        }
    }
    let mut stream = InMemoryStream::new(source_items, target_items, seed)?;

    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    ctx.write_snapshot()?;
    let log_path = ctx.path("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut out = BufWriter::new(file);
    log(
        &mut out,
        &log_path,
        &LogLine::Start {
            mode: cfg.mode,
            steps: cfg.segmentor_steps,
            labeled: labeled.len(),
            unlabeled: unlabeled.len(),
            target: n_target,
            labeled_fraction: sec.labeled_fraction,
        },
    )?;

    let mut state = TrainState::new(&cfg)?;
    while state.segmentor_updates() < cfg.segmentor_steps {
        let rec = train_cycle(&mut state, &mut stream, &cfg)?;
        log(
            &mut out,
            &log_path,
            &LogLine::Step {
                step: rec.step,
                segmentor_updates: state.segmentor_updates(),
                discriminator_updates: state.discriminator_updates(),
                loss: &rec.loss,
            },
        )?;
        if sec.checkpoint_every > 0 && rec.step % sec.checkpoint_every == 0 && rec.step < cfg.segmentor_steps {
            let rel = format!("checkpoints/step-{:06}.json", rec.step);
            Checkpoint::from_params(&state.params).save(&ctx.path(&rel))?;
            log(&mut out, &log_path, &LogLine::Checkpoint { step: rec.step, path: &rel })?;
        }
    }
    let checkpoint = ctx.path("checkpoint.json");
    Checkpoint::from_params(&state.params).save(&checkpoint)?;
    log(
        &mut out,
        &log_path,
        &LogLine::Checkpoint {
            step: state.segmentor_updates(),
            path: "checkpoint.json",
        },
    )?;
    out.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        params: state.params,
        checkpoint,
        labeled: labeled.len(),
        unlabeled: unlabeled.len(),
        target: n_target,
    })
}

/// CTR outcome for one mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtrRecord {
    pub id: String,
    pub ratio: Option<f64>,
    pub cardiomegaly: Option<bool>,
    pub result: Option<CtrResult>,
    pub error: Option<String>,
}

impl CtrRecord {
    fn measure(id: &str, mask: &LabelMask, spacing: Option<(f64, f64)>, opts: &CtrOptions) -> Self {
        match estimate_ctr(mask, spacing, opts) {
            Ok(e) => Self {
                id: id.into(),
                ratio: Some(e.result.ratio),
                cardiomegaly: Some(e.result.cardiomegaly),
                result: Some(e.result),
                error: None,
            },
            Err(err) => Self {
                id: id.into(),
                ratio: None,
                cardiomegaly: None,
                result: None,
                error: Some(err.to_string()),
            },
        }
    }
}

fn ctr_csv(records: &[CtrRecord]) -> String {
    let mut s = String::from("id,ctr,cardiomegaly,a,b,c,d,error\n");
    for r in records {
        match &r.result {
            Some(c) => {
                let d = c.half_diameters;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},\n",
                    r.id, c.ratio, c.cardiomegaly, d.a, d.b, d.c, d.d
                ));
            }
            None => {
                let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                s.push_str(&format!("{},,,,,,,{err}\n", r.id));
            }
        }
    }
    s
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams)> {
    let ck = Checkpoint::load(path)?;
    let params = ck.to_params(path)?;
    Ok((ck, params))
}

fn load_images(m: &Manifest) -> Result<Vec<ImageSample>> {
    m.data.entries.iter().map(|e| m.image(e)).collect()
}

fn absolute(p: &Path) -> String {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// Segments every image at native resolution and measures its CTR.
pub fn predict(ctx: &Context) -> Result<Vec<CtrRecord>> {
    let sec = ctx.config.section(&ctx.config.predict, "predict")?;
    let (_, params) = load_checkpoint(&sec.checkpoint)?;
    let manifest = load_manifest(&sec.manifest)?;
    let images = load_images(&manifest)?;
    let masks = predict_masks(&params.segmentor, &images)?;

    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    ctx.write_snapshot()?;
    let opts = CtrOptions::default();
    let mut entries = Vec::new();
    let mut records = Vec::new();
    for ((e, image), mask) in manifest.data.entries.iter().zip(&images).zip(&masks) {
        let rel = format!("masks/{}.png", e.id);
        write_mask(&ctx.path(&rel), mask)?;
        entries.push(ManifestEntry {
            id: e.id.clone(),
            image: absolute(&manifest.resolve(&e.image)),
            mask: Some(rel),
            domain: e.domain,
            reference_mask: None,
            pixel_spacing: e.pixel_spacing,
        });
        let rec = CtrRecord::measure(&e.id, mask, e.pixel_spacing, &opts);
        if ctx.overlay {
            overlay::write(&ctx.path(&format!("overlays/{}.png", e.id)), Some(image), mask, rec.result.as_ref())?;
        }
        records.push(rec);
    }
    save_manifest(&ctx.path("manifest.toml"), &DatasetManifest::new(entries)?)?;
    write_file(&ctx.path("ctr.jsonl"), report::json_lines(&records))?;
    write_file(&ctx.path("ctr.csv"), ctr_csv(&records))?;
    Ok(records)
}

/// Measures the CTR of every mask listed in a manifest.
pub fn ctr(ctx: &Context) -> Result<Vec<CtrRecord>> {
    let sec = ctx.config.section(&ctx.config.ctr, "ctr")?;
    let manifest = load_manifest(&sec.manifest)?;
    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    ctx.write_snapshot()?;
    let mut records = Vec::new();
    for e in &manifest.data.entries {
        let (image, mask) = manifest.labeled(e)?;
        let rec = CtrRecord::measure(&e.id, &mask, e.pixel_spacing, &sec.options);
        if ctx.overlay {
            overlay::write(&ctx.path(&format!("overlays/{}.png", e.id)), Some(&image), &mask, rec.result.as_ref())?;
        }
        records.push(rec);
    }
    write_file(&ctx.path("ctr.jsonl"), report::json_lines(&records))?;
    write_file(&ctx.path("ctr.csv"), ctr_csv(&records))?;
    Ok(records)
}

/// Metrics of a checkpoint on a labeled manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub records: Vec<ImageRecord>,
}

pub fn evaluate(ctx: &Context) -> Result<EvaluateOutcome> {
    let sec = ctx.config.section(&ctx.config.evaluate, "evaluate")?;
    let (ck, params) = load_checkpoint(&sec.checkpoint)?;
    if let Some(model) = &sec.model {
        ck.require_model(model)?;
    }
    let manifest = load_manifest(&sec.manifest)?;
    let mut images = Vec::new();
    let mut truths = Vec::new();
    for e in &manifest.data.entries {
        let (image, mask) = manifest.labeled(e)?;
        images.push(image);
        truths.push(mask);
    }
    let ev = evaluate_images(&params.segmentor, &images, &truths, &sec.options)?;

    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    ctx.write_snapshot()?;
    write_file(&ctx.path("metrics.json"), report::json(&ev.report))?;
    write_file(&ctx.path("metrics.txt"), report::table(&ev.report))?;
    write_file(&ctx.path("records.jsonl"), report::json_lines(&ev.records))?;
    if ctx.overlay {
        for ((image, mask), rec) in images.iter().zip(&ev.predictions).zip(&ev.records) {
            overlay::write(&ctx.path(&format!("overlays/{}.png", rec.id)), Some(image), mask, rec.predicted.as_ref())?;
        }
    }
    Ok(EvaluateOutcome {
        report: ev.report,
        records: ev.records,
    })
}
