use std::sync::Arc;

use cogcast::data::{
    load_cohort_cache, parse_adni_csv, save_cohort_cache, select_cohort, split_subjects, synth_cohort, write_adni_csv,
    Schema, SynthProfile, N_VISITS,
};
use cogcast::eval::{evaluate, ModelForecaster};
use cogcast::train::train;
use cogcast::{Backbone, BackboneConfig, ModelBundle, ModelConfig, TrainConfig};

#[test]
fn csv_cache_train_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = synth_cohort(50, 11, &SynthProfile::default()).unwrap();
    let csv = dir.path().join("adni.csv");
    write_adni_csv(&cohort, &Schema::default(), &csv).unwrap();
    let parsed = select_cohort(&parse_adni_csv(&csv, &Schema::default()).unwrap());
    assert_eq!(parsed.ids(), cohort.ids());
    for (a, b) in parsed.subjects.iter().zip(&cohort.subjects) {
        for v in 0..cohort.n_variables() {
            assert_eq!(a.mask(v), b.mask(v));
            for t in 0..N_VISITS {
                match (a.value(v, t), b.value(v, t)) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                    (x, y) => assert_eq!(x, y),
                }
            }
        }
    }

    let cache = dir.path().join("cache");
    save_cohort_cache(&parsed, &cache).unwrap();
    let cached = load_cohort_cache(&cache).unwrap();
    assert_eq!(cached.ids(), parsed.ids());

    let split = split_subjects(&cached, 1).unwrap();
    let bb = Arc::new(Backbone::<f32>::random_init(&BackboneConfig::desk()).unwrap());
    let cfg = ModelConfig {
        upto_month: 18,
        ..ModelConfig::default()
    };
    let mut bundle = ModelBundle::new(cfg, bb.clone(), cached.variable_names.clone()).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&mut bundle, &cached, &split.train_ids, &split.val_ids, &tc).unwrap();
    assert_eq!(out.history.len(), 2);

    let ck = dir.path().join("ck");
    bundle.save_checkpoint(&ck).unwrap();
    let loaded = ModelBundle::load_checkpoint(&ck, bb).unwrap();
    let a = evaluate(&ModelForecaster::new(&bundle).unwrap(), &cached, &split.test_ids, 18).unwrap();
    let b = evaluate(&ModelForecaster::new(&loaded).unwrap(), &cached, &split.test_ids, 18).unwrap();
    assert_eq!(a.sums, b.sums);
    assert_eq!(a.counts, b.counts);
}

#[test]
fn checkpoint_rejects_a_different_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = synth_cohort(10, 0, &SynthProfile::default()).unwrap();
    let bb = Arc::new(Backbone::<f32>::random_init(&BackboneConfig::desk()).unwrap());
    let bundle = ModelBundle::new(ModelConfig::default(), bb, cohort.variable_names.clone()).unwrap();
    bundle.save_checkpoint(dir.path()).unwrap();
    let other = BackboneConfig {
        seed: 1,
        ..BackboneConfig::desk()
    };
    let other = Arc::new(Backbone::<f32>::random_init(&other).unwrap());
    assert!(matches!(
        ModelBundle::load_checkpoint(dir.path(), other),
        Err(cogcast::Error::Validation { .. })
    ));
}
