//! Scene to samples to a trained early-fusion detector, through the public API.

use deforest_core::dataset::{
    build_dataset, read_sample, BuildConfig, DatasetManifest, EqualizationMode, PatchConfig, SceneInput, Split,
    NDVI_BAND_NAME,
};
use deforest_core::fcn::{predict_samples, read_weights, train, write_weights, FocalConfig, TrainConfig, TrainSample};
use deforest_core::preprocess::{equalize_sample_quantized, fit_magenta, MagentaReplacement, TexturePatch};
use deforest_core::synth::{gen_scene, BlobKind, SynthConfig};

fn scene(seed: u64, id: &str) -> SceneInput {
    let s = gen_scene(&SynthConfig {
        height: 96,
        width: 128,
        n_blobs: 5,
        radius_min: 6.0,
        radius_max: 14.0,
        seed,
        ..Default::default()
    })
    .unwrap();
    SceneInput {
        scene_id: id.into(),
        t1: s.t1,
        t2: s.t2,
        polygons: s.polygons,
        year_pair: (2018, 2019),
    }
}

#[test]
fn build_then_train_then_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BuildConfig {
        patches: PatchConfig {
            window: 32,
            stride: 32,
            max_null_frac: 0.05,
        },
        equalization: EqualizationMode::Quantized,
        ..Default::default()
    };
    let scenes = [scene(1, "a"), scene(2, "b")];
    let manifest = build_dataset(&scenes, &cfg, &["b".into()], dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 2 * 3 * 4);
    assert_eq!(DatasetManifest::read(&dir.path().join("manifest.json")).unwrap(), manifest);

    let load = |split| -> Vec<TrainSample> {
        manifest
            .entries(split)
            .map(|e| {
                let mut s = read_sample(&dir.path().join(&e.path)).unwrap();
                assert_eq!(s.meta.band_names.last().unwrap(), NDVI_BAND_NAME);
                equalize_sample_quantized(&mut s, 4096, &[NDVI_BAND_NAME]).unwrap();
                TrainSample::from(&s)
            })
            .collect()
    };
    let (train_set, test_set) = (load(Split::Train), load(Split::Test));
    assert_eq!((train_set.len(), test_set.len()), (12, 12));
    assert_eq!(train_set[0].channels, 16);

    let tc = TrainConfig {
        epochs: 4,
        batch_size: 4,
        seed: 5,
        ..Default::default()
    };
    let out = train(&train_set, &tc, &FocalConfig::default()).unwrap();
    assert_eq!(out.history.len(), 4);
    assert!(out.history.iter().all(|e| e.train_loss.is_finite()));

    let path = dir.path().join("detector.fcnw");
    write_weights(&out.weights, Some(out.threshold.tau), &path).unwrap();
    let (back, tau) = read_weights(&path).unwrap();
    assert_eq!(tau, Some(out.threshold.tau));
    let refs: Vec<&TrainSample> = test_set.iter().collect();
    assert_eq!(
        predict_samples(&back, &refs).unwrap(),
        predict_samples(&out.weights, &refs).unwrap()
    );
}

#[test]
fn magenta_replacement_changes_only_flagged_scenes() {
    let s = gen_scene(&SynthConfig {
        height: 256,
        width: 256,
        n_blobs: 16,
        radius_min: 8.0,
        radius_max: 16.0,
        magenta_rate: 0.5,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let (m, c) = (s.pure_core(BlobKind::Magenta).unwrap(), s.pure_core(BlobKind::Cleared).unwrap());
    let rep = MagentaReplacement {
        signature: fit_magenta(&s.t2, m, &[3, 4, 5, 6], 1.2).unwrap(),
        texture: TexturePatch::from_stack(&s.t2, c).unwrap(),
    };
    let cfg = |magenta| BuildConfig {
        patches: PatchConfig {
            window: 40,
            stride: 40,
            max_null_frac: 0.05,
        },
        magenta,
        ..Default::default()
    };
    let input = SceneInput {
        scene_id: "m".into(),
        t1: s.t1.clone(),
        t2: s.t2.clone(),
        polygons: s.polygons.clone(),
        year_pair: (2018, 2019),
    };
    let plain = deforest_core::dataset::build_scene(&input, &cfg(None)).unwrap();
    let replaced = deforest_core::dataset::build_scene(&input, &cfg(Some(rep))).unwrap();
    assert_eq!(plain.len(), replaced.len());
    assert!(plain.iter().zip(&replaced).any(|(a, b)| a.img2 != b.img2));
    assert!(plain.iter().zip(&replaced).all(|(a, b)| a.mask == b.mask));
}
