//! Library-level workflow: write a dataset, train from a run file, reload
//! the checkpoint and evaluate.

use hitsr_core::losses::MetricConvention;
use hitsr_core::model::{Checkpoint, HiTSRModel};
use hitsr_core::pipeline::{
    evaluate, fixture_samples, load_dataset, write_dataset, RefMode, RunConfig, Trainer, FIXTURE_SIZE,
};
use hitsr_core::Error;

#[test]
fn dataset_written_to_disk_loads_back_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = fixture_samples();
    write_dataset(tmp.path(), &samples).unwrap();
    let loaded = load_dataset(tmp.path(), RefMode::Paired).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in loaded.iter().zip(&samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.hr_size(), (FIXTURE_SIZE, FIXTURE_SIZE));
        assert!(a.hr.bit_eq(&b.hr) && a.reference.bit_eq(&b.reference));
    }
}

#[test]
fn trained_checkpoint_reloads_to_the_same_scores() {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(&tmp.path().join("data"), &fixture_samples()).unwrap();
    let run = "preset = overfit  # small and fast\ndata = data\nmax_steps = 4\neval_interval = 2\n";
    std::fs::write(tmp.path().join("run.cfg"), run).unwrap();
    let cfg = RunConfig::load(&tmp.path().join("run.cfg")).unwrap();
    assert_eq!(cfg.train.data.as_deref(), Some(tmp.path().join("data").as_path()));

    let samples = load_dataset(cfg.train.data.as_ref().unwrap(), RefMode::Paired).unwrap();
    let mut trainer: Trainer = Trainer::new(cfg.clone(), samples.clone(), samples.clone()).unwrap();
    let out = tmp.path().join("out");
    trainer.run(Some(&out)).unwrap();
    assert_eq!(trainer.step, 4);
    assert_eq!(trainer.report.losses.len(), 4);
    // evals at steps 0, 2 and 4
    assert_eq!(trainer.report.evals.len(), 3);

    let ckpt = Checkpoint::load(trainer.last_checkpoint().unwrap()).unwrap();
    assert_eq!(ckpt.step, 4);
    let (model, extra) = HiTSRModel::<f32>::from_checkpoint(&ckpt, Some(&cfg.model)).unwrap();
    assert!(!extra.is_empty(), "optimiser state travels with the weights");
    let conv = MetricConvention::EightBit;
    let a = evaluate(&trainer.model, &samples, conv, 1).unwrap();
    let b = evaluate(&model, &samples, conv, 2).unwrap();
    assert_eq!(a.to_csv().render(), b.to_csv().render());
}

#[test]
fn checkpoint_for_another_architecture_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::overfit();
    let model = HiTSRModel::<f32>::build(&cfg.model, 3).unwrap();
    let path = tmp.path().join("m.ckpt");
    model.to_checkpoint(0, None, &[]).save(&path).unwrap();
    let mut other = cfg.model.clone();
    other.heads = 4;
    let err = HiTSRModel::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap(), Some(&other)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
