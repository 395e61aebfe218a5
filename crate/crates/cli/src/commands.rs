use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use deforest_core::dataset::{build_dataset, BuildConfig, EqualizationMode, PatchConfig, SceneInput};
use deforest_core::ensemble::{
    fcn_ensemble_predict, simple_vote, simple_vote_filtered, tile_region, weighted_vote, EnsembleManifest,
    ProducerEntry, RegionEntry, RegionRole,
};
use deforest_core::fcn::{
    default_grid, read_weights, select_threshold, train_with_observer, AdamConfig, FocalConfig, TrainConfig,
};
use deforest_core::metrics::{format_table, ConfusionCounts, MetricReport};
use deforest_core::postprocess::{label_components, remove_small, DEFAULT_MIN_KEEP};
use deforest_core::preprocess::{fit_magenta, MagentaReplacement, MagentaSignature, TexturePatch, DEFAULT_WIDTH_FACTOR};
use deforest_core::raster::io::{read_mask, read_raster, write_mask, write_raster};
use deforest_core::raster::{Gridded, SampleType, Window};
use deforest_core::synth::{gen_producers, gen_scene, BlobKind, SynthConfig};
use deforest_core::{BinaryMask, PolygonLayer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::settings::Settings;
use crate::CliError;

/// What a subcommand reports: a human-readable text and its JSON form.
pub struct Output {
    pub text: String,
    pub json: Value,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn parse_role(s: &str) -> Result<RegionRole, CliError> {
    serde_json::from_value(Value::String(s.into()))
        .map_err(|_| CliError::Validation(format!("unknown region role {s:?}, expected train, heldout or test")))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Number of planted clearings.
    #[arg(long)]
    blobs: Option<usize>,
    #[arg(long)]
    radius_min: Option<f64>,
    #[arg(long)]
    radius_max: Option<f64>,
    /// Fraction of clearings with the burned spectrum.
    #[arg(long)]
    magenta_rate: Option<f64>,
}

/// Scene list entry for `build-dataset`; paths relative to the list file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub t1: PathBuf,
    pub t2: PathBuf,
    pub polygons: PathBuf,
    pub year_pair: (u16, u16),
}

pub fn synth(args: SynthArgs, s: &Settings, seed: u64) -> Result<Output, CliError> {
    let out = s.require_path(args.out, "out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        height: s.pick(args.height, "height", d.height)?,
        width: s.pick(args.width, "width", d.width)?,
        n_blobs: s.pick(args.blobs, "blobs", d.n_blobs)?,
        radius_min: s.pick(args.radius_min, "radius-min", d.radius_min)?,
        radius_max: s.pick(args.radius_max, "radius-max", d.radius_max)?,
        magenta_rate: s.pick(args.magenta_rate, "magenta-rate", d.magenta_rate)?,
        seed,
        ..d
    };
    if cfg.height < 2 {
        return Err(CliError::Validation("synthetic scene needs at least 2 rows".into()));
    }
    let scene = gen_scene(&cfg)?;
    scene.write(&out)?;
    write_json(
        &out.join("scenes.json"),
        &[SceneSpec {
            scene_id: "synth".into(),
            t1: "t1.json".into(),
            t2: "t2.json".into(),
            polygons: "truth.geojson".into(),
            year_pair: cfg.year_pair,
        }],
    )?;

    // top half is held out for thresholds and combiner training, bottom half is the test region
    let maps = gen_producers(&scene.truth, &cfg)?;
    let half = cfg.height / 2;
    let regions = [
        ("heldout", RegionRole::Heldout, Window::new(0, 0, half, cfg.width)),
        ("test", RegionRole::Test, Window::new(half, 0, cfg.height - half, cfg.width)),
    ];
    let mut entries = Vec::new();
    let mut thresholds = Vec::new();
    for (id, role, win) in regions {
        let dir = out.join("regions").join(id);
        create_dir(&dir)?;
        let truth = scene.truth.crop(&win)?;
        write_mask(&truth, &dir.join("truth.json"))?;
        let mut paths = Vec::new();
        for (m, p) in maps.iter().zip(&cfg.producers) {
            let crop = m.crop(&win)?.with_dtype(SampleType::F32);
            if role == RegionRole::Heldout {
                thresholds.push(select_threshold(crop.data(), truth.data(), &default_grid())?.tau);
            }
            write_raster(&crop, &dir.join(format!("{}.json", p.name)))?;
            paths.push(PathBuf::from(format!("regions/{id}/{}.json", p.name)));
        }
        entries.push(RegionEntry {
            id: id.into(),
            role,
            truth: Some(PathBuf::from(format!("regions/{id}/truth.json"))),
            maps: paths,
        });
    }
    let manifest = EnsembleManifest {
        producers: cfg
            .producers
            .iter()
            .zip(&thresholds)
            .map(|(p, &threshold)| ProducerEntry {
                name: p.name.clone(),
                threshold,
            })
            .collect(),
        regions: entries,
    };
    manifest.write(&out.join("ensemble.json"))?;

    let mut magenta_files = false;
    if let (Some(m), Some(c)) = (scene.pure_core(BlobKind::Magenta), scene.pure_core(BlobKind::Cleared)) {
        fit_magenta(&scene.t2, m, &[3, 4, 5, 6], DEFAULT_WIDTH_FACTOR)?.write_json(&out.join("magenta_signature.json"))?;
        TexturePatch::from_stack(&scene.t2, c)?.write(&out.join("magenta_texture.json"))?;
        magenta_files = true;
    }

    let mut text = format!(
        "synthetic scene {}x{} with {} clearings ({} changed pixels) written to {}\n",
        cfg.height,
        cfg.width,
        scene.blobs.len(),
        scene.truth.count_ones(),
        out.display()
    );
    for p in &manifest.producers {
        text.push_str(&format!("producer {:<8} threshold {:.2}\n", p.name, p.threshold));
    }
    if magenta_files {
        text.push_str("magenta signature and texture fitted\n");
    }
    Ok(Output {
        text,
        json: json!({
            "out": out,
            "height": cfg.height,
            "width": cfg.width,
            "blobs": scene.blobs,
            "changed_pixels": scene.truth.count_ones(),
            "producers": manifest.producers,
            "magenta_files": magenta_files,
        }),
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Equalization {
    Off,
    Raw,
    Quantized,
}

impl From<Equalization> for EqualizationMode {
    fn from(e: Equalization) -> Self {
        match e {
            Equalization::Off => EqualizationMode::Off,
            Equalization::Raw => EqualizationMode::Raw,
            Equalization::Quantized => EqualizationMode::Quantized,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// JSON list of scenes: scene_id, t1, t2, polygons, year_pair.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Windows with a larger null fraction are dropped.
    #[arg(long)]
    max_null_frac: Option<f64>,
    #[arg(long, value_enum)]
    equalization: Option<Equalization>,
    /// Zero-based band indices used for NDVI.
    #[arg(long)]
    red_band: Option<usize>,
    #[arg(long)]
    nir_band: Option<usize>,
    #[arg(long)]
    magenta_signature: Option<PathBuf>,
    #[arg(long)]
    magenta_texture: Option<PathBuf>,
    /// Scene ids assigned to the test split (repeatable).
    #[arg(long)]
    test_scene: Vec<String>,
}

pub fn build(args: BuildArgs, s: &Settings) -> Result<Output, CliError> {
    let list = s.require_path(args.scenes, "scenes")?;
    let out = s.require_path(args.out, "out")?;
    let text = std::fs::read_to_string(&list).map_err(|e| CliError::io(&list, e))?;
    let specs: Vec<SceneSpec> =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", list.display())))?;
    let base = base_dir(&list);
    let scenes = specs
        .iter()
        .map(|sp| {
            Ok(SceneInput {
                scene_id: sp.scene_id.clone(),
                t1: read_raster(&base.join(&sp.t1))?,
                t2: read_raster(&base.join(&sp.t2))?,
                polygons: PolygonLayer::read(&base.join(&sp.polygons))?,
                year_pair: sp.year_pair,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let d = BuildConfig::default();
    let magenta = match (
        s.path(args.magenta_signature, "magenta-signature")?,
        s.path(args.magenta_texture, "magenta-texture")?,
    ) {
        (Some(sig), Some(tex)) => Some(MagentaReplacement {
            signature: MagentaSignature::read_json(&sig)?,
            texture: TexturePatch::read(&tex)?,
        }),
        (None, None) => None,
        _ => {
            return Err(CliError::Validation(
                "magenta replacement needs both a signature and a texture".into(),
            ))
        }
    };
    let cfg = BuildConfig {
        patches: PatchConfig {
            window: s.pick(args.window, "window", d.patches.window)?,
            stride: s.pick(args.stride, "stride", d.patches.stride)?,
            max_null_frac: s.pick(args.max_null_frac, "max-null-frac", d.patches.max_null_frac)?,
        },
        red_band: s.pick(args.red_band, "red-band", d.red_band)?,
        nir_band: s.pick(args.nir_band, "nir-band", d.nir_band)?,
        equalization: match args.equalization {
            Some(e) => e.into(),
            None => s.pick(None, "equalization", d.equalization)?,
        },
        magenta,
        ..d
    };
    let test_scenes = s.list(args.test_scene, "test-scene")?;
    let known: BTreeSet<&str> = specs.iter().map(|sp| sp.scene_id.as_str()).collect();
    if let Some(t) = test_scenes.iter().find(|t| !known.contains(t.as_str())) {
        return Err(CliError::Validation(format!("test scene {t:?} is not in {}", list.display())));
    }
    let manifest = build_dataset(&scenes, &cfg, &test_scenes, &out)?;

    let mut text = format!("{} samples written to {}\n", manifest.samples.len(), out.display());
    for c in &manifest.scenes {
        text.push_str(&format!(
            "{} {}-{} {:?}: {} of {} windows kept\n",
            c.scene_id, c.year_pair.0, c.year_pair.1, c.split, c.samples, c.windows
        ));
    }
    Ok(Output {
        text,
        json: json!({"out": out, "samples": manifest.samples.len(), "scenes": manifest.scenes}),
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Ensemble manifest listing producers and regions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Weights file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Region roles used for training (repeatable, default heldout).
    #[arg(long)]
    role: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Side of the square tiles cut from each region.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    patch_stride: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Per-epoch training log (JSON).
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train_ensemble(args: TrainArgs, s: &Settings, seed: u64) -> Result<Output, CliError> {
    let path = s.require_path(args.manifest, "manifest")?;
    let out = s.require_path(args.out, "out")?;
    let manifest = EnsembleManifest::read(&path)?;
    let base = base_dir(&path);
    let roles = s
        .list(args.role, "role")?
        .iter()
        .map(|r| parse_role(r))
        .collect::<Result<Vec<_>, _>>()?;
    let roles = if roles.is_empty() { vec![RegionRole::Heldout] } else { roles };
    let patch = s.pick(args.patch, "patch", 16usize)?;
    let patch_stride = s.pick(args.patch_stride, "patch-stride", patch)?;

    let mut tiles = Vec::new();
    for region in manifest.regions.iter().filter(|r| roles.contains(&r.role)) {
        let truth_path = region
            .truth
            .as_ref()
            .ok_or_else(|| CliError::Validation(format!("training region {} has no reference mask", region.id)))?;
        let set = manifest.load_region(region, &base)?;
        let truth = read_mask(&base.join(truth_path))?;
        tiles.extend(tile_region(&set, &truth, patch, patch_stride)?);
    }
    if tiles.is_empty() {
        return Err(CliError::Validation(format!("no region in {} has role {roles:?}", path.display())));
    }

    let d = TrainConfig::default();
    let da = AdamConfig::default();
    let cfg = TrainConfig {
        epochs: s.pick(args.epochs, "epochs", d.epochs)?,
        batch_size: s.pick(args.batch_size, "batch-size", d.batch_size)?,
        val_fraction: s.pick(args.val_fraction, "val-fraction", d.val_fraction)?,
        seed,
        adam: AdamConfig {
            lr: s.pick(args.lr, "lr", da.lr)?,
            weight_decay: s.pick(args.weight_decay, "weight-decay", da.weight_decay)?,
            ..da
        },
        ..d
    };
    let df = FocalConfig::default();
    let focal = FocalConfig {
        alpha: s.pick(args.alpha, "alpha", df.alpha)?,
        gamma: s.pick(args.gamma, "gamma", df.gamma)?,
    };
    let samples = deforest_core::ensemble::fcn_ensemble_samples(&tiles)?;
    log::info!("training on {} tiles of {patch}x{patch}", samples.len());
    let outcome = train_with_observer(&samples, &cfg, &focal, |e| {
        log::info!(
            "epoch {} train loss {:.5} val loss {:.5} val F1 {}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
        )
    })?;
    deforest_core::fcn::write_weights(&outcome.weights, Some(outcome.threshold.tau), &out)?;
    let summary = json!({
        "weights": out,
        "tiles": samples.len(),
        "best_epoch": outcome.best_epoch,
        "epoch_criterion": outcome.criterion,
        "threshold": outcome.threshold,
        "history": outcome.history,
    });
    if let Some(log_path) = s.path(args.log, "log")? {
        write_json(&log_path, &summary)?;
    }
    Ok(Output {
        text: format!(
            "trained on {} tiles; best epoch {} of {}, threshold {:.2} (validation {:?} {:.4}); weights in {}\n",
            samples.len(),
            outcome.best_epoch,
            cfg.epochs,
            outcome.threshold.tau,
            outcome.threshold.criterion,
            outcome.threshold.score,
            out.display()
        ),
        json: summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Simple,
    Weighted,
    Fcn,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<VoteMode>,
    /// Combiner weights, for `--mode fcn`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides the threshold stored with the combiner weights.
    #[arg(long)]
    threshold: Option<f32>,
    /// With `--mode simple`, drop regions below this many pixels from each
    /// producer's mask before voting.
    #[arg(long)]
    min_area: Option<usize>,
    /// Only regions with these roles (repeatable, default all).
    #[arg(long)]
    role: Vec<String>,
    /// Directory receiving one mask per region.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn vote(args: VoteArgs, s: &Settings) -> Result<Output, CliError> {
    let path = s.require_path(args.manifest, "manifest")?;
    let out = s.require_path(args.out, "out")?;
    let mode = s.pick(args.mode, "mode", VoteMode::Simple)?;
    let min_area = s.pick_opt(args.min_area, "min-area")?;
    if min_area.is_some() && mode != VoteMode::Simple {
        return Err(CliError::Validation(
            "--min-area applies to simple voting; filter other outputs with `postprocess`".into(),
        ));
    }
    let manifest = EnsembleManifest::read(&path)?;
    let base = base_dir(&path);
    let roles = s
        .list(args.role, "role")?
        .iter()
        .map(|r| parse_role(r))
        .collect::<Result<Vec<_>, _>>()?;
    let combiner = match mode {
        VoteMode::Fcn => {
            let wpath = s.require_path(args.weights, "weights")?;
            let (w, stored) = read_weights(&wpath)?;
            let tau = s
                .pick_opt(args.threshold, "threshold")?
                .or(stored)
                .ok_or_else(|| CliError::Validation(format!("{} stores no threshold; pass --threshold", wpath.display())))?;
            Some((w, tau))
        }
        _ => None,
    };
    create_dir(&out)?;

    let mut reports = Vec::new();
    let mut written = Vec::new();
    let selected: Vec<&RegionEntry> = manifest
        .regions
        .iter()
        .filter(|r| roles.is_empty() || roles.contains(&r.role))
        .collect();
    for region in selected {
        let set = manifest.load_region(region, &base)?;
        let mask = match (&combiner, min_area) {
            (Some((w, tau)), _) => fcn_ensemble_predict(w, *tau, &set)?,
            (None, Some(k)) => simple_vote_filtered(&set, k),
            (None, None) if mode == VoteMode::Weighted => weighted_vote(&set),
            (None, None) => simple_vote(&set),
        };
        let file = out.join(format!("{}.json", region.id));
        write_mask(&mask, &file)?;
        written.push(file);
        if let Some(t) = &region.truth {
            let truth = read_mask(&base.join(t))?;
            let counts = ConfusionCounts::accumulate(&mask, &truth)?;
            reports.push(MetricReport::new(region.id.clone(), combiner.as_ref().map(|c| c.1), counts));
        }
    }
    let mut text = format!("{} masks written to {}\n", written.len(), out.display());
    if !reports.is_empty() {
        text.push_str(&format_table(&reports));
    }
    Ok(Output {
        text,
        json: json!({"mode": mode, "masks": written, "reports": reports}),
    })
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference mask.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Predicted masks (repeatable).
    #[arg(long)]
    pred: Vec<PathBuf>,
    /// Row names, one per `--pred`; default the file stems.
    #[arg(long)]
    name: Vec<String>,
    /// Also write the reports as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs, s: &Settings) -> Result<Output, CliError> {
    let truth_path = s.require_path(args.truth, "truth")?;
    let preds: Vec<PathBuf> = if args.pred.is_empty() {
        s.list::<PathBuf>(vec![], "pred")?
    } else {
        args.pred
    };
    if preds.is_empty() {
        return Err(CliError::Validation("missing --pred".into()));
    }
    let names = s.list(args.name, "name")?;
    if !names.is_empty() && names.len() != preds.len() {
        return Err(CliError::Validation(format!("{} names for {} predictions", names.len(), preds.len())));
    }
    let truth = read_mask(&truth_path)?;
    let reports = preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pred = read_mask(p)?;
            let counts = ConfusionCounts::accumulate(&pred, &truth)
                .map_err(|e| CliError::Validation(format!("{} vs {}: {e}", p.display(), truth_path.display())))?;
            let name = names.get(i).cloned().unwrap_or_else(|| {
                p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
            });
            Ok(MetricReport::new(name, None, counts))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(out) = s.path(args.out, "out")? {
        write_json(&out, &reports)?;
    }
    Ok(Output {
        text: format_table(&reports),
        json: serde_json::to_value(&reports).map_err(|e| CliError::Format(e.to_string()))?,
    })
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Binary mask to clean.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Smallest 4-connected region kept, in pixels.
    #[arg(long)]
    min_area: Option<usize>,
}

pub fn postprocess(args: PostprocessArgs, s: &Settings) -> Result<Output, CliError> {
    let input = s.require_path(args.input, "input")?;
    let out = s.require_path(args.out, "out")?;
    let min_area = s.pick(args.min_area, "min-area", DEFAULT_MIN_KEEP)?;
    let mask: BinaryMask = read_mask(&input)?;
    let before = label_components(&mask);
    let kept = remove_small(&mask, min_area);
    let after = label_components(&kept);
    write_mask(&kept, &out)?;
    let removed_pixels = mask.count_ones() - kept.count_ones();
    let removed_regions = before.count() - after.count();
    Ok(Output {
        text: format!(
            "removed {removed_regions} of {} regions ({removed_pixels} pixels) smaller than {min_area} pixels; wrote {}\n",
            before.count(),
            out.display()
        ),
        json: json!({
            "out": out,
            "min_area": min_area,
            "regions_before": before.count(),
            "regions_after": after.count(),
            "removed_pixels": removed_pixels,
        }),
    })
}
