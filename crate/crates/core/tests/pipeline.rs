use gazeauth_core::auth::{Aggregation, Decision, DecisionPolicy};
use gazeauth_core::corpus::Corpus;
use gazeauth_core::eval::{end_to_end_eval, EvalError};
use gazeauth_core::net::{read_checkpoint, train, write_checkpoint, NetworkConfig, TrainConfig};
use gazeauth_core::signal::DegradationConfig;
use gazeauth_core::stimulus::ScheduleParams;
use gazeauth_core::synth::make_population;
use gazeauth_core::{AuthPipeline, Model, Store};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        classes_per_batch: 3,
        samples_per_class: 2,
        fold_index: None,
        degradation: DegradationConfig { noise_std: 0.0, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn corpus_to_checkpoint_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_population::<f64>(3, 2, 41, &ScheduleParams::default(), 250.0).unwrap();
    let manifest = corpus.write_to_dir(&dir.path().join("corpus")).unwrap();
    let loaded = Corpus::<f64>::load_manifest(&manifest).unwrap();
    assert_eq!(loaded, corpus);

    let (model, log) = train::<f32>(&loaded, &NetworkConfig::compact(), &small_config(), 3).unwrap();
    assert_eq!(log.epochs.len(), 3);
    assert!(log.val_users.is_empty());
    let ck = dir.path().join("model.ck");
    write_checkpoint(&model, &ck).unwrap();
    let reloaded: Model = read_checkpoint(&ck).unwrap();
    assert_eq!(reloaded.model_id(), model.model_id());
    assert_eq!(reloaded.params(), model.params());

    let pipeline = AuthPipeline::new(reloaded);
    let (report, matrix) = end_to_end_eval(&loaded, &pipeline, 1, 1).unwrap();
    for (i, row) in matrix.scores.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-6, "{row:?}");
    }
    assert_eq!(report.eer, 0.0);
    assert_eq!((report.n_genuine, report.n_impostor), (3, 6));

    let (_, cross) = end_to_end_eval(&loaded, &pipeline, 1, 2).unwrap();
    assert_eq!(cross.enroll_ids, ["U000.1", "U001.1", "U002.1"]);
    assert_eq!(cross.verify_ids, ["U000.2", "U001.2", "U002.2"]);
    assert!(matches!(end_to_end_eval(&loaded, &pipeline, 1, 3), Err(EvalError::Protocol(_))));
}

#[test]
fn enrollment_persists_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    let corpus = make_population::<f64>(2, 2, 5, &ScheduleParams::default(), 120.0).unwrap();
    let pipeline = AuthPipeline::new(Model::init(NetworkConfig::compact(), 12).unwrap());
    let rec = |u: &str, s: u32| &corpus.get(u, s).unwrap().recording;

    let mut store = Store::open(&path).unwrap();
    pipeline.enroll(&mut store, "U000", rec("U000", 1)).unwrap();
    pipeline.enroll(&mut store, "U001", rec("U001", 1)).unwrap();
    drop(store);

    let store = Store::open(&path).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(store.model_id(), Some(pipeline.model_id()));
    let policy = DecisionPolicy::new(0.8, Aggregation::Max).unwrap();
    let same = pipeline.verify(&store, "U000", rec("U000", 1), &policy).unwrap();
    assert_eq!(same.decision, Decision::Accept);
    assert!((same.similarity - 1.0).abs() < 1e-6);
    let strict = DecisionPolicy::new(1.0, Aggregation::Mean).unwrap();
    let other = pipeline.verify(&store, "U000", rec("U001", 2), &strict).unwrap();
    assert_eq!(other.decision, Decision::Reject);
}
