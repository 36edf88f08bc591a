use std::path::{Path, PathBuf};

use proptest::prelude::*;

use super::*;
use crate::model::{Checkpoint, HiTSRModel, ModelConfig};
use crate::tensor::{SeededRng, Tensor};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny4")
}

fn img(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    Tensor::<f32>::rand_uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng).map(|v: f32| (v * 255.0).round() / 255.0)
}

fn quick_cfg(steps: u64) -> RunConfig {
    let mut cfg = RunConfig::overfit();
    cfg.train.max_steps = steps;
    cfg.train.eval_interval = 0;
    cfg
}

fn zero_model(cfg: &ModelConfig) -> HiTSRModel<f32> {
    let mut m = HiTSRModel::build(cfg, 0).unwrap();
    m.params.fill_trainable(|_, shape| Some(Tensor::zeros(shape)));
    m
}

// ---- image io ----

#[test]
fn png_and_ppm_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let x = img(5, 7, 1);
    for name in ["a.png", "a.ppm", "b.PNG"] {
        let p = dir.path().join(name);
        write_image(&p, &x).unwrap();
        assert!(read_image(&p).unwrap().bit_eq(&x), "{name}");
    }
}

#[test]
fn ppm_header_comments_and_wide_samples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.ppm");
    let mut bytes = b"P6\n# comment\n2 1\n65535\n".to_vec();
    for v in [0u16, 65535, 32896, 65535, 0, 0] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(&p, bytes).unwrap();
    let t = read_image(&p).unwrap();
    assert_eq!(t.shape(), &[1, 3, 1, 2]);
    // channel-major: R = [0, 1], G = [1, 0], B = [128/255, 0]
    assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0, 128.0 / 255.0, 0.0]);
}

#[test]
fn grey_png_is_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    let file = std::fs::File::create(&p).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 2, 1);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(&[0, 255]).unwrap();
    let t = read_image(&p).unwrap();
    assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn broken_images_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let trunc = dir.path().join("t.ppm");
    std::fs::write(&trunc, b"P6 4 4 255\n\x00\x01").unwrap();
    assert!(matches!(read_image(&trunc), Err(crate::Error::Image { .. })));
    let ascii = dir.path().join("a.ppm");
    std::fs::write(&ascii, b"P3 1 1 255 0 0 0").unwrap();
    assert!(matches!(read_image(&ascii), Err(crate::Error::Image { .. })));
    assert!(matches!(read_image(&dir.path().join("x.jpg")), Err(crate::Error::Image { .. })));
    assert!(matches!(read_image(&dir.path().join("missing.png")), Err(crate::Error::Io { .. })));
}

// ---- dataset ----

fn make_dataset(root: &Path, stems: &[&str], refs: &[&str], size: (usize, usize)) {
    std::fs::create_dir_all(root.join("hr")).unwrap();
    std::fs::create_dir_all(root.join("ref")).unwrap();
    for (i, s) in stems.iter().enumerate() {
        write_image(&root.join("hr").join(format!("{s}.png")), &img(size.0, size.1, i as u64)).unwrap();
    }
    for (i, s) in refs.iter().enumerate() {
        write_image(&root.join("ref").join(format!("{s}.ppm")), &img(size.0, size.1, 100 + i as u64)).unwrap();
    }
}

#[test]
fn matched_stems_load_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["c", "a", "b"], &["b", "c", "a"], (8, 12));
    let ds = load_dataset(dir.path(), RefMode::Paired).unwrap();
    let ids: Vec<_> = ds.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(ds[0].lr().unwrap().shape(), &[1, 3, 2, 3]);
}

#[test]
fn stem_without_reference_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["a", "b"], &["b"], (8, 8));
    let ds = load_dataset(dir.path(), RefMode::Paired).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds[0].id, "b");
}

#[test]
fn size_not_divisible_by_four_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["a"], &["a"], (161, 160));
    let err = load_dataset(dir.path(), RefMode::Paired).unwrap_err();
    assert!(err.to_string().contains("not a multiple of 4"), "{err}");
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["a"], &["z"], (8, 8));
    assert!(matches!(load_dataset(dir.path(), RefMode::Paired), Err(crate::Error::Contract(_))));
    assert!(load_dataset(&dir.path().join("nowhere"), RefMode::Paired).is_err());
}

#[test]
fn random_reference_mode_borrows_another_image() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["a", "b", "c", "d"], &[], (8, 8));
    let a = load_dataset(dir.path(), RefMode::Random(3)).unwrap();
    let b = load_dataset(dir.path(), RefMode::Random(3)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.reference.bit_eq(&y.reference));
        assert!(!x.reference.bit_eq(&x.hr));
        assert!(a.iter().any(|o| o.hr.bit_eq(&x.reference)));
    }
}

#[test]
fn reference_of_another_size_is_resized() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), &["a"], &[], (8, 8));
    write_image(&dir.path().join("ref/a.png"), &img(12, 4, 9)).unwrap();
    let ds = load_dataset(dir.path(), RefMode::Paired).unwrap();
    assert_eq!(ds[0].reference.shape(), ds[0].hr.shape());
}

#[test]
fn bundled_fixture_matches_its_generator() {
    let ds = load_dataset(&fixture_dir(), RefMode::Paired).unwrap();
    let gen = fixture_samples();
    assert_eq!(ds.len(), 4);
    for (a, b) in ds.iter().zip(&gen) {
        assert_eq!(a.id, b.id);
        assert!(a.hr.bit_eq(&b.hr) && a.reference.bit_eq(&b.reference), "{}", a.id);
    }
}

#[test]
fn random_crop_stays_on_the_lr_grid() {
    let s = Sample { id: "x".into(), hr: img(20, 24, 1), reference: img(20, 24, 2) };
    let mut rng = SeededRng::new(0);
    for _ in 0..20 {
        let c = random_crop(&s, 8, &mut rng).unwrap();
        let (y, x) = c.id.split_once('@').unwrap().1.split_once(',').unwrap();
        let (y, x): (usize, usize) = (y.parse().unwrap(), x.parse().unwrap());
        assert_eq!((y % 4, x % 4), (0, 0));
        assert!(c.hr.bit_eq(&crop(&s.hr, y, x, 8).unwrap()));
        assert!(c.reference.bit_eq(&crop(&s.reference, y, x, 8).unwrap()));
    }
    assert!(random_crop(&s, 6, &mut rng).is_err());
    assert!(random_crop(&s, 24, &mut rng).is_err());
}

// ---- augmentation ----

#[test]
fn identity_augmentation_changes_nothing() {
    let x = img(4, 6, 3);
    assert!(Augment::identity().apply(&x).unwrap().bit_eq(&x));
}

#[test]
fn quarter_turn_is_counter_clockwise() {
    let x = Tensor::<f32>::from_fn(&[1, 1, 2, 3], |i| i as f32);
    // [[0 1 2], [3 4 5]] -> [[2 5], [1 4], [0 3]]
    assert_eq!(rot90(&x).unwrap().data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
    assert_eq!(flip(&x, true).unwrap().data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    assert_eq!(flip(&x, false).unwrap().data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
}

#[test]
fn augment_keeps_shapes_and_draws_reference_separately() {
    let s = Sample { id: "s".into(), hr: img(8, 8, 1), reference: img(8, 8, 1) };
    let mut rng = SeededRng::new(5);
    let mut differed = false;
    for _ in 0..16 {
        let a = augment(&s, &mut rng).unwrap();
        assert_eq!(a.hr.shape(), s.hr.shape());
        differed |= !a.hr.bit_eq(&a.reference);
    }
    assert!(differed, "target and reference always received the same transform");
    let wide = Sample { id: "w".into(), hr: img(4, 8, 1), reference: img(4, 8, 2) };
    for _ in 0..16 {
        assert_eq!(augment(&wide, &mut rng).unwrap().hr.shape(), &[1, 3, 4, 8]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flips_and_turns_invert(h in 1usize..7, w in 1usize..7, seed in 0u64..1000) {
        let x = img(h, w, seed);
        let hh = flip(&flip(&x, false).unwrap(), false).unwrap();
        prop_assert!(hh.bit_eq(&x));
        let vv = flip(&flip(&x, true).unwrap(), true).unwrap();
        prop_assert!(vv.bit_eq(&x));
        let mut r = x.clone();
        for _ in 0..4 {
            r = rot90(&r).unwrap();
        }
        prop_assert!(r.bit_eq(&x));
    }

    #[test]
    fn augmentation_preserves_the_value_multiset(seed in 0u64..1000) {
        let x = img(6, 6, seed);
        let mut rng = SeededRng::new(seed);
        let a = Augment::draw(&mut rng, true).apply(&x).unwrap();
        let mut p: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let mut q: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        p.sort_unstable();
        q.sort_unstable();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn multistep_rate_never_increases(lr0 in 1e-5f64..1.0, max in 4u64..400) {
        let s = MultiStep { lr0, milestones: MultiStep::default_milestones(max), decay: 0.5 };
        s.validate().unwrap();
        let rates: Vec<f64> = (1..=max).map(|t| s.lr_at(t)).collect();
        prop_assert!(rates.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(rates[0], lr0);
    }
}

// ---- optimiser ----

fn one_param(v: &[f64]) -> crate::blocks::ParamStore<f64> {
    let mut s = crate::blocks::ParamStore::new();
    s.add("p", Tensor::from_f64(&[v.len()], v).unwrap(), false).unwrap();
    s
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut s = one_param(&[0.5, -2.0]);
    let mut adam = Adam::new(AdamConfig::default(), &s);
    let before = s.get(s.id("p").unwrap()).clone();
    adam.step(&mut s, &[Tensor::zeros(&[2])], 1e-3).unwrap();
    assert!(s.get(s.id("p").unwrap()).bit_eq(&before));
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut s = one_param(&[1.0]);
    let mut adam = Adam::new(AdamConfig::default(), &s);
    adam.step(&mut s, &[Tensor::from_f64(&[1], &[1.0]).unwrap()], 0.01).unwrap();
    let p = s.get(s.id("p").unwrap()).data()[0];
    assert!((p - (1.0 - 0.01)).abs() < 1e-9, "{p}");
}

#[test]
fn adam_matches_a_direct_recurrence() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
    let (mut p, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
    let mut s = one_param(&[0.25]);
    let mut adam = Adam::new(AdamConfig::default(), &s);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        adam.step(&mut s, &[Tensor::from_f64(&[1], &[g]).unwrap()], lr).unwrap();
    }
    let got = s.get(s.id("p").unwrap()).data()[0];
    assert!((got - p).abs() < 1e-12, "{got} vs {p}");
}

#[test]
fn non_finite_gradient_skips_the_step() {
    let mut s = one_param(&[1.0, 2.0]);
    let mut adam = Adam::new(AdamConfig::default(), &s);
    let out = adam.step(&mut s, &[Tensor::from_f64(&[2], &[0.1, f64::NAN]).unwrap()], 0.1).unwrap();
    assert_eq!(out, StepOutcome::Skipped);
    assert_eq!(adam.t, 0);
    assert_eq!(s.get(s.id("p").unwrap()).data(), &[1.0, 2.0]);
    assert!(adam.step(&mut s, &[Tensor::zeros(&[3])], 0.1).is_err());
}

#[test]
fn multistep_examples() {
    let s = MultiStep { lr0: 2e-4, milestones: vec![100], decay: 0.5 };
    assert_eq!(s.lr_at(99), 2e-4);
    assert_eq!(s.lr_at(101), 1e-4);
    assert_eq!(MultiStep::default_milestones(1000), vec![500, 750, 900]);
    assert!(MultiStep { lr0: 1.0, milestones: vec![5, 5], decay: 0.5 }.validate().is_err());
    assert!(MultiStep { lr0: 1.0, milestones: vec![], decay: 0.0 }.validate().is_err());
}

// ---- run configuration ----

#[test]
fn run_file_applies_preset_then_overrides() {
    let text = "# desk run\nbatch = 2\npreset = overfit\nheads = 1 # single head\nmilestones = 10, 20\ndata = imgs\n";
    let cfg = RunConfig::parse(text, Some(Path::new("/base"))).unwrap();
    assert_eq!(cfg.model.heads, 1);
    assert_eq!(cfg.model.head_dim, ModelConfig::overfit().head_dim);
    assert_eq!(cfg.train.batch, 2);
    assert_eq!(cfg.train.milestones, Some(vec![10, 20]));
    assert_eq!(cfg.train.data, Some(PathBuf::from("/base/imgs")));
    assert_eq!(RunConfig::parse(&cfg.to_text(), None).unwrap(), cfg);
}

#[test]
fn run_file_errors() {
    for bad in
        ["bogus = 1", "batch = 0", "batch = 1\nbatch = 2", "lr", "milestones = 5, 3", "metric = psnr", "preset = huge"]
    {
        assert!(matches!(RunConfig::parse(bad, None), Err(crate::Error::Config(_))), "{bad}");
    }
    assert!(matches!(RunConfig::load(Path::new("missing.cfg")), Err(crate::Error::Io { .. })));
}

#[test]
fn every_documented_key_round_trips() {
    let text = RunConfig::default().to_text();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    let expected: Vec<&str> = crate::model::MODEL_KEYS.iter().chain(TRAIN_KEYS.iter()).copied().collect();
    assert_eq!(keys, expected);
}

// ---- training ----

#[test]
fn zero_learning_rate_changes_no_parameter() {
    let mut cfg = quick_cfg(1);
    cfg.train.lr0 = 0.0;
    let mut tr: Trainer = Trainer::new(cfg, fixture_samples(), vec![]).unwrap();
    let before = tr.model.to_checkpoint(0, None, &[]);
    tr.run(None).unwrap();
    let after = tr.model.to_checkpoint(0, None, &[]);
    for ((n, a), (_, b)) in before.tensors.iter().zip(&after.tensors) {
        assert!(a.bit_eq(b), "{n} changed");
    }
}

fn assert_same_state(a: &Trainer, b: &Trainer) {
    let (ca, cb) = (a.checkpoint(), b.checkpoint());
    assert_eq!(ca.step, cb.step);
    assert_eq!(ca.rng, cb.rng);
    assert_eq!(ca.tensors.len(), cb.tensors.len());
    for ((n, x), (m, y)) in ca.tensors.iter().zip(&cb.tensors) {
        assert_eq!(n, m);
        assert!(x.bit_eq(y), "{n} differs");
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg(4);
    cfg.train.fixed_crops = 0;
    cfg.train.augment = true;
    cfg.train.batch = 2;
    cfg.train.checkpoint_interval = 2;
    cfg.train.weights = crate::losses::LossWeights { w_rec: 1.0, w_per: 0.01, w_adv: 0.01 };
    cfg.train.disc_width = 4;
    let mut full: Trainer = Trainer::new(cfg.clone(), fixture_samples(), vec![]).unwrap();
    full.run(Some(dir.path())).unwrap();
    let ckpt = Checkpoint::load(dir.path().join("checkpoint-000002.ckpt")).unwrap();
    let mut resumed: Trainer = Trainer::resume(cfg, fixture_samples(), vec![], &ckpt).unwrap();
    resumed.run(None).unwrap();
    assert_same_state(&full, &resumed);
    let full_losses = full.report.losses.render();
    let tail: String = full_losses.lines().skip(3).map(|l| format!("{l}\n")).collect();
    assert!(resumed.report.losses.render().ends_with(&tail));
}

#[test]
fn identical_seeds_write_identical_reports() {
    let mut outs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg(3);
        cfg.train.eval_interval = 2;
        let mut tr: Trainer = Trainer::new(cfg, fixture_samples(), fixture_samples()).unwrap();
        tr.run(Some(dir.path())).unwrap();
        let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
        outs.push((read("losses.csv"), read("gates.csv"), read("evals.csv"), read("checkpoint-000003.ckpt")));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(String::from_utf8(outs[0].2.clone()).unwrap().lines().count(), 4);
}

#[test]
fn diverging_loss_aborts_with_checkpoint_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg(20);
    cfg.train.lr0 = 1e30;
    let mut tr: Trainer = Trainer::new(cfg, fixture_samples(), vec![]).unwrap();
    let err = tr.run(Some(dir.path())).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert!(err.to_string().contains("checkpoint-000000.ckpt"), "{err}");
}

#[test]
fn gates_stay_inside_the_unit_interval_while_training() {
    let mut tr: Trainer = Trainer::new(quick_cfg(100), fixture_samples(), vec![]).unwrap();
    let start = tr.model.gate_readings();
    tr.run(None).unwrap();
    let sigmas: Vec<f64> = tr.report.gates.column("sigma").unwrap().iter().map(|s| s.parse().unwrap()).collect();
    assert!(!sigmas.is_empty() && sigmas.iter().all(|&s| s > 0.0 && s < 1.0));
    let moved = start
        .iter()
        .zip(tr.model.gate_readings())
        .flat_map(|(a, b)| a.sigma.iter().zip(b.sigma).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    assert!(moved > 1e-3, "largest gate movement {moved}");
}

#[test]
fn empty_training_set_and_bad_crop_are_rejected() {
    assert!(Trainer::<f32>::new(quick_cfg(1), vec![], vec![]).is_err());
    let mut cfg = quick_cfg(1);
    cfg.train.crop = 24;
    assert!(Trainer::<f32>::new(cfg, fixture_samples(), vec![]).is_err());
}

// ---- evaluation ----

#[test]
fn zero_weight_model_scores_exactly_like_bicubic() {
    let m = zero_model(&ModelConfig::overfit());
    let table = evaluate(&m, &fixture_samples(), crate::losses::MetricConvention::EightBit, 1).unwrap();
    assert_eq!(table.rows.len(), 4);
    for r in &table.rows {
        assert_eq!(r.model.psnr, r.bicubic.psnr, "{}", r.id);
        assert_eq!(r.model.ssim, r.bicubic.ssim, "{}", r.id);
    }
    let (mean, _) = table.mean();
    let direct = table.rows.iter().map(|r| r.model.psnr).sum::<f64>() / 4.0;
    assert!((mean.psnr - direct).abs() < 1e-9);
    assert_eq!(table.to_csv().len(), 4);
}

#[test]
fn threaded_evaluation_gives_identical_rows() {
    let m: HiTSRModel = HiTSRModel::build(&ModelConfig::overfit(), 1).unwrap();
    let conv = crate::losses::MetricConvention::Float;
    let a = evaluate(&m, &fixture_samples(), conv, 1).unwrap();
    let b = evaluate(&m, &fixture_samples(), conv, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reflect_pad_mirrors_without_repeating_the_edge() {
    let x = Tensor::<f32>::from_fn(&[1, 1, 1, 3], |i| i as f32);
    assert_eq!(reflect_pad(&x, 1, 7).unwrap().data(), &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
    let y = img(5, 6, 2);
    assert!(crop_top_left(&reflect_pad(&y, 9, 8).unwrap(), 5, 6).unwrap().bit_eq(&y));
}

#[test]
fn off_grid_inputs_are_padded_and_cropped_back() {
    let m: HiTSRModel = HiTSRModel::build(&ModelConfig::overfit(), 2).unwrap();
    let s = Sample { id: "odd".into(), hr: img(24, 40, 4), reference: img(24, 40, 5) };
    let lr = s.lr().unwrap();
    assert_eq!(lr.shape(), &[1, 3, 6, 10]);
    let sr = super_resolve(&m, &lr, &s.reference).unwrap();
    assert_eq!(sr.shape(), s.hr.shape());
    assert!(sr.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

// ---- robustness ----

#[test]
fn robustness_report_covers_all_levels_and_matches_plain_eval() {
    let m: HiTSRModel = HiTSRModel::build(&ModelConfig::overfit(), 3).unwrap();
    let samples = fixture_samples();
    let conv = crate::losses::MetricConvention::EightBit;
    let csv = robustness_run(&m, &samples, conv, 1).unwrap();
    assert_eq!(csv.len(), 8);
    let plain = fmt_num(evaluate(&m, &samples, conv, 1).unwrap().mean().0.psnr);
    for row in csv.rows() {
        if row[1] == "none" {
            assert_eq!(row[3], plain);
        }
    }
    let pairs: Vec<(String, String)> = csv.rows().iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    for kind in ["scale", "rotation"] {
        for level in ["none", "small", "medium", "large"] {
            assert!(pairs.contains(&(kind.into(), level.into())));
        }
    }
}

#[test]
fn quarter_turn_of_symmetric_reference_leaves_psnr_unchanged() {
    let m: HiTSRModel = HiTSRModel::build(&ModelConfig::overfit(), 4).unwrap();
    let r = symmetric_image(32);
    let turned = rotate(&r, 90.0).unwrap();
    let s = Sample { id: "sym".into(), hr: img(32, 32, 6), reference: r };
    let t = Sample { reference: turned, ..s.clone() };
    let conv = crate::losses::MetricConvention::EightBit;
    let a = score_sample(&m, &s, conv).unwrap().model.psnr;
    let b = score_sample(&m, &t, conv).unwrap().model.psnr;
    assert!((a - b).abs() < 0.1, "{a} vs {b}");
}

#[test]
fn rotation_and_scaling_edge_cases() {
    let x = img(6, 6, 7);
    assert!(rotate(&x, 0.0).unwrap().bit_eq(&x));
    assert!(rotate(&rotate(&x, 90.0).unwrap(), -90.0).unwrap().bit_eq(&x));
    let q = rotate(&x, 90.0).unwrap();
    assert!(q.bit_eq(&rot90(&x).unwrap()) || q.bit_eq(&rot90(&rot90(&rot90(&x).unwrap()).unwrap()).unwrap()));
    // corners of a 45 degree turn fall outside the source
    let r = rotate(&Tensor::<f32>::ones(&[1, 1, 8, 8]), 45.0).unwrap();
    assert_eq!(r.data()[0], 0.0);
    assert!(scale_into_canvas(&x, 1.0).unwrap().bit_eq(&x));
    let s = scale_into_canvas(&Tensor::<f32>::full(&[1, 1, 8, 8], 0.5), 0.25).unwrap();
    assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    assert!(scale_into_canvas(&x, 1.5).is_err());
}

// ---- audit and reports ----

#[test]
fn attention_rows_sum_to_one() {
    let m: HiTSRModel = HiTSRModel::build(&ModelConfig::overfit(), 5).unwrap();
    let audit = audit_attention(&m, &fixture_samples()[0]).unwrap();
    let cfg = ModelConfig::overfit();
    assert_eq!(audit.gates.len(), cfg.num_blocks() * cfg.heads);
    assert_eq!(audit.row_sums.len(), cfg.num_blocks() * cfg.depth);
    assert!(audit.max_row_error() < 1e-5, "{}", audit.max_row_error());
}

#[test]
fn csv_fields_are_quoted_when_needed() {
    let mut c = Csv::new(&["a", "b"]);
    c.push(vec!["x,y".into(), "say \"hi\"".into()]).unwrap();
    assert_eq!(c.render(), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
    assert!(c.push(vec!["one".into()]).is_err());
}
