use hitsr_bench::{image, model_and_inputs};
use hitsr_core::model::ModelConfig;

#[test]
fn inputs_fit_the_benchmarked_models() {
    for cfg in [ModelConfig::overfit(), ModelConfig::tiny()] {
        let (model, lr, reference) = model_and_inputs(&cfg);
        let out = model.infer(&lr, Some(&reference)).unwrap();
        assert_eq!(out.shape(), reference.shape());
    }
}

#[test]
fn images_are_seeded() {
    assert!(image(&[1, 3, 4, 4], 9).bit_eq(&image(&[1, 3, 4, 4], 9)));
    assert!(!image(&[1, 3, 4, 4], 9).bit_eq(&image(&[1, 3, 4, 4], 10)));
}
