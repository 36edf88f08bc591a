use super::*;
use crate::blocks::{Builder, Ctx, Linear, ParamStore};
use crate::error::Error;
use crate::losses::bicubic_resize;
use crate::tensor::{SeededRng, Tape, Tensor};

fn rand01(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut SeededRng::new(seed))
}

#[test]
fn default_config_has_six_blocks_and_a_13m_scale_param_count() {
    let m = HiTSRModel::<f32>::build(&ModelConfig::default(), 0).unwrap();
    assert_eq!(m.blocks().len(), 6);
    let n = m.param_count();
    eprintln!("default param count {n}");
    assert!((10_300_000..=17_200_000).contains(&n), "{n}");
}

#[test]
fn tiny_end_to_end_gradient_check() {
    let mut m = HiTSRModel::<f64>::build(&ModelConfig::tiny(), 1).unwrap();
    m.redraw_unit_gain(5);
    let lr = rand01(&[1, 3, 16, 16], 2).cast::<f64>();
    let r = rand01(&[1, 3, 64, 64], 3).cast::<f64>();
    let rep = m.grad_check(&lr, Some(&r), 20, 4, 1e-4).unwrap();
    assert_eq!(rep.checked, 20);
    assert!(rep.passed(1e-5), "{rep:?}");
}

#[test]
fn single_linear_param_count() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = SeededRng::new(0);
    Linear::new(&mut Builder::new(&mut store, &mut rng), "fc", 64, 64, true).unwrap();
    assert_eq!(store.trainable_numel(), 4160);
}

#[test]
fn frozen_reference_pyramid_is_not_counted() {
    let cfg = ModelConfig::tiny();
    let m = HiTSRModel::<f32>::build(&cfg, 0).unwrap();
    let frozen: usize = m.params.ids().filter(|&id| m.params.is_frozen(id)).map(|id| m.params.get(id).numel()).sum();
    let total: usize = m.params.ids().map(|id| m.params.get(id).numel()).sum();
    assert!(frozen > 0);
    assert!(m.params.ids().filter(|&id| m.params.is_frozen(id)).all(|id| m.params.name(id).starts_with("refnet.")));
    assert_eq!(m.param_count(), total - frozen);

    let mut no_cross = cfg.clone();
    no_cross.ablation.cross_attention = false;
    let m2 = HiTSRModel::<f32>::build(&no_cross, 0).unwrap();
    assert!(m2.refnet().is_none());
    assert!(m2.param_count() < m.param_count());
}

#[test]
fn default_shape_audit_follows_the_ladder() {
    let m = HiTSRModel::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let audit = m.shape_audit((40, 40)).unwrap();
    let stages: Vec<(&str, usize)> = audit.iter().map(|(s, d)| (s.as_str(), d[1])).collect();
    assert_eq!(
        stages,
        vec![
            ("embed", 40),
            ("block0", 40),
            ("up0", 80),
            ("block1", 80),
            ("down0", 40),
            ("block2", 40),
            ("up1", 80),
            ("block3", 80),
            ("down1", 40),
            ("block4", 40),
            ("up2", 80),
            ("block5", 80),
            ("output", 3),
        ]
    );
    assert_eq!(audit.last().unwrap().1, vec![1, 3, 160, 160]);
    assert!(audit[..12].iter().all(|(_, d)| d[3] == 256 && d[1] == d[2]));
}

#[test]
fn output_is_four_times_the_input_for_any_legal_size() {
    let m = HiTSRModel::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    for (h, w) in [(16, 16), (8, 24), (12, 4)] {
        let lr = rand01(&[2, 3, h, w], 1);
        let r = rand01(&[2, 3, 4 * h, 4 * w], 2);
        let sr = m.infer(&lr, Some(&r)).unwrap();
        assert_eq!(sr.shape(), &[2, 3, 4 * h, 4 * w]);
        assert!(sr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn input_contract_violations() {
    let m = HiTSRModel::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    let lr = rand01(&[1, 3, 16, 16], 1);
    assert!(matches!(m.infer(&lr, Some(&rand01(&[1, 3, 32, 32], 2))), Err(Error::Config(_))));
    assert!(matches!(m.infer(&rand01(&[1, 3, 18, 16], 1), Some(&rand01(&[1, 3, 72, 64], 2))), Err(Error::Config(_))));
    assert!(matches!(m.infer(&lr, None), Err(Error::Contract(_))));
}

#[test]
fn zero_weights_reduce_to_bicubic() {
    let mut m = HiTSRModel::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    m.params.fill_trainable(|_, shape| Some(Tensor::zeros(shape)));
    let lr = rand01(&[1, 3, 16, 16], 3);
    let r = rand01(&[1, 3, 64, 64], 4);
    let tape = Tape::no_grad();
    let ctx = Ctx::bind(&tape, &m.params, false);
    let out = m.forward(&ctx, &tape.constant(lr.clone()), Some(&tape.constant(r))).unwrap();
    assert!(out.value().bit_eq(&bicubic_resize(&lr, 64, 64).unwrap()));
}

#[test]
fn gates_start_at_sigmoid_of_lambda_init() {
    let m = HiTSRModel::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    let g = m.gate_readings();
    assert_eq!(g.len(), 6);
    let want = 1.0 / (1.0 + (-1.0f64).exp());
    assert!(g.iter().all(|r| r.sigma.len() == 2 && r.sigma.iter().all(|s| (s - want).abs() < 1e-7)));
    let mut cfg = ModelConfig::tiny();
    cfg.ablation.gating = false;
    assert!(HiTSRModel::<f32>::build(&cfg, 0).unwrap().gate_readings().is_empty());
}

#[test]
fn config_text_round_trips_and_rejects_unknown_keys() {
    let mut cfg = ModelConfig::overfit();
    cfg.ablation.se = false;
    cfg.ref_source = RefSource::Builtin(9);
    cfg.lambda_init = 0.25;
    assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert!(matches!(ModelConfig::from_text("window = 8\nwidth = 3\n"), Err(Error::Config(_))));
    assert!(matches!(ModelConfig::from_text("scale = 2\n"), Err(Error::Config(_))));
    assert!(matches!(ModelConfig::from_text("base = 36\n"), Err(Error::Config(_))));
    assert_eq!(ModelConfig::from_text("# comment\n\nheads = 4 # trailing\n").unwrap(), ModelConfig::default());
}

#[test]
fn ablation_gate_mapping() {
    use crate::attention::Gate;
    assert_eq!(Ablation::default().gate().unwrap(), Gate::Learned);
    assert_eq!(Ablation::without("gating").unwrap().gate().unwrap(), Gate::Fixed(0.5));
    assert_eq!(Ablation::without("cross").unwrap().gate().unwrap(), Gate::SelfOnly);
    assert_eq!(Ablation::without("self").unwrap().gate().unwrap(), Gate::CrossOnly);
    let none = Ablation { self_attention: false, cross_attention: false, ..Ablation::default() };
    assert!(matches!(none.gate(), Err(Error::Config(_))));
    assert!(Ablation::without("vgg").is_err());
    for c in Ablation::COMPONENTS {
        let mut cfg = ModelConfig::overfit();
        cfg.ablation = Ablation::without(c).unwrap();
        let m = HiTSRModel::<f32>::build(&cfg, 0).unwrap();
        let lr = rand01(&[1, 3, 8, 8], 1);
        let r = rand01(&[1, 3, 32, 32], 2);
        assert_eq!(m.infer(&lr, Some(&r)).unwrap().shape(), &[1, 3, 32, 32], "{c}");
    }
}

#[test]
fn builtin_reference_source_is_deterministic_and_seeded() {
    let a = HiTSRModel::<f32>::build(&ModelConfig::overfit(), 0).unwrap();
    let b = HiTSRModel::<f32>::build(&ModelConfig::overfit(), 7).unwrap();
    let id = a.params.id("refnet.conv0.weight").unwrap();
    assert!(a.params.get(id).bit_eq(b.params.get(id)));
    let mut cfg = ModelConfig::overfit();
    cfg.ref_source = RefSource::Builtin(1);
    let c = HiTSRModel::<f32>::build(&cfg, 0).unwrap();
    assert!(!a.params.get(id).bit_eq(c.params.get(id)));
}

fn overfit_model(seed: u64) -> HiTSRModel<f32> {
    HiTSRModel::build(&ModelConfig::overfit(), seed).unwrap()
}

fn moments(m: &HiTSRModel<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut rng = SeededRng::new(5);
    m.params
        .trainable_ids()
        .into_iter()
        .take(3)
        .flat_map(|id| {
            let name = m.params.name(id).to_string();
            let shape = m.params.get(id).shape().to_vec();
            [
                (format!("{ADAM_M}{name}"), Tensor::randn(&shape, 1.0, &mut rng)),
                (format!("{ADAM_V}{name}"), Tensor::randn(&shape, 1.0, &mut rng)),
            ]
        })
        .collect()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = overfit_model(3);
    let extra = moments(&m);
    let ckpt = m.to_checkpoint(17, Some(SeededRng::new(4).state()), &extra);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let (m2, extra2) = HiTSRModel::<f32>::from_checkpoint(&loaded, Some(&m.cfg)).unwrap();
    assert_eq!(extra2, extra);
    assert_eq!(m2.to_checkpoint(17, loaded.rng.clone(), &extra2).to_bytes(), ckpt.to_bytes());
    let lr = rand01(&[1, 3, 8, 8], 1);
    let r = rand01(&[1, 3, 32, 32], 2);
    assert!(m.infer(&lr, Some(&r)).unwrap().bit_eq(&m2.infer(&lr, Some(&r)).unwrap()));
}

#[test]
fn checkpoint_rejects_damage() {
    let m = overfit_model(3);
    let bytes = m.to_checkpoint(0, None, &[]).to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[9] = 2;
    let e = Checkpoint::from_bytes(&bad).unwrap_err();
    assert!(e.to_string().contains("version 2"), "{e}");
    for cut in [5, 40, bytes.len() / 2, bytes.len() - 1] {
        let e = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(e.to_string().contains("truncated") || e.to_string().contains("magic"), "{e}");
    }
}

#[test]
fn checkpoint_rejects_unknown_names_and_config_mismatch() {
    let m = overfit_model(3);
    let mut ckpt = m.to_checkpoint(0, None, &[]);
    ckpt.tensors.push(("mystery.weight".into(), Tensor::zeros(&[2])));
    assert!(matches!(HiTSRModel::<f32>::from_checkpoint(&ckpt, None), Err(Error::Format(_))));

    let mut ckpt = m.to_checkpoint(0, None, &[]);
    ckpt.tensors.push((
        format!("{ADAM_M}refnet.conv0.weight"),
        m.params.get(m.params.id("refnet.conv0.weight").unwrap()).clone(),
    ));
    assert!(matches!(HiTSRModel::<f32>::from_checkpoint(&ckpt, None), Err(Error::Format(_))));

    let mut ckpt = m.to_checkpoint(0, None, &[]);
    ckpt.tensors.remove(5);
    assert!(matches!(HiTSRModel::<f32>::from_checkpoint(&ckpt, None), Err(Error::Format(_))));

    let ckpt = m.to_checkpoint(0, None, &[]);
    let mut other = m.cfg.clone();
    other.depth = 1;
    assert!(matches!(HiTSRModel::<f32>::from_checkpoint(&ckpt, Some(&other)), Err(Error::Config(_))));
}

#[test]
fn reference_weights_can_come_from_a_file() {
    let src = overfit_model(0);
    let mut src_cfg = src.cfg.clone();
    src_cfg.ref_source = RefSource::Builtin(42);
    let src = HiTSRModel::<f32>::build(&src_cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.ckpt");
    src.to_checkpoint(0, None, &[]).save(&path).unwrap();
    let mut cfg = ModelConfig::overfit();
    cfg.ref_source = RefSource::File(path.clone());
    let m = HiTSRModel::<f32>::build(&cfg, 0).unwrap();
    let id = m.params.id("refnet.conv2.weight").unwrap();
    assert!(m.params.get(id).bit_eq(src.params.get(id)));
    cfg.ref_source = RefSource::File(dir.path().join("missing.ckpt"));
    assert!(matches!(HiTSRModel::<f32>::build(&cfg, 0), Err(Error::Io { .. })));
}
