//! End-to-end acceptance run. Criteria 1 and 6 to 9 go through the `hitsr`
//! binary; 2 to 5 run in-process. Everything is done twice with one worker
//! thread and the same seed, and criterion 10 compares the two sets of
//! reports byte for byte.
//!
//! Prints one `criterion N ...: PASS|FAIL` line per criterion.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hitsr_core::attention::{gated_double_attention, window_partition, window_reverse, AttentionConfig, Gate, Heads};
use hitsr_core::losses::{psnr, ssim, SSIM_K1, SSIM_K2};
use hitsr_core::model::{HiTSRModel, ModelConfig};
use hitsr_core::{SeededRng, Tape, Tensor};

const SEED: u64 = 7;
const ABLATION_STEPS: u64 = 100;
const TARGET_PARAMS: f64 = 13.72e6;
const PARAM_GAP_CAUSE: &str = "layer widths that the architecture does not pin down (per-head refinement convs, \
    MLP ratio 4, squeeze-excite reduction, feature-extractor and reference-net channels) are set here, so the count \
    cannot match the target exactly";

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny4")
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---- CLI plumbing ----

fn hitsr(dir: &Path, args: &[&str]) -> (i32, String, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_hitsr"))
        .args(["--device-threads", "1", "--seed", &SEED.to_string()])
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn hitsr");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text, start.elapsed())
}

/// Header plus rows; the files read here hold no quoted fields.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    (header, lines.collect())
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("column {name} missing"))
}

fn f(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

struct PipelineRun {
    root: PathBuf,
    verdicts: BTreeMap<u32, Verdict>,
}

fn pipeline(root: &Path) -> PipelineRun {
    let run_file = root.join("run.cfg");
    std::fs::write(&run_file, format!("preset = overfit\ndata = {}\n", fixture().display())).unwrap();
    let cfg = run_file.to_str().unwrap();
    let data = fixture();
    let data = data.to_str().unwrap();
    let mut verdicts = BTreeMap::new();

    // 1: gradient suite
    let (code, text, took) = hitsr(root, &["--precision", "f64", "--out-dir", "grad", "gradcheck", "--samples", "20"]);
    let (h, rows) = read_csv(&root.join("grad/gradcheck.csv"));
    let worst = |pred: &dyn Fn(&str) -> bool| {
        rows.iter().filter(|r| pred(&r[0])).map(|r| f(&r[col(&h, "max_rel_error")])).fold(0.0, f64::max)
    };
    let ops = worst(&|n| !n.starts_with("end_to_end"));
    let e2e = worst(&|n| n.starts_with("end_to_end"));
    let e2e_count: usize =
        rows.iter().filter(|r| r[0].starts_with("end_to_end")).map(|r| r[1].parse().unwrap_or(0)).sum();
    eprintln!("gradcheck took {:.1} s", took.as_secs_f64());
    let ok =
        code == 0 && rows.len() > 30 && ops < 1e-6 && e2e < 1e-5 && e2e_count == 20 && took < Duration::from_secs(300);
    if !ok {
        eprintln!("{text}");
    }
    verdicts.insert(
        1,
        verdict(
            ok,
            format!("{} ops max rel {ops:.3e}; end-to-end {e2e_count} params max rel {e2e:.3e}", rows.len() - 1),
        ),
    );

    // 7: overfit
    let (code, text, took) = hitsr(root, &["--config", cfg, "--out-dir", "train", "train"]);
    eprintln!("overfit training took {:.1} s", took.as_secs_f64());
    let (h, rows) = read_csv(&root.join("train/losses.csv"));
    let l = col(&h, "loss");
    let (first, last) = (f(&rows[0][l]), f(&rows[rows.len() - 1][l]));
    let (h, pool) = read_csv(&root.join("train/pool_summary.csv"));
    let (sr, bic) = (f(&pool[0][col(&h, "psnr")]), f(&pool[0][col(&h, "bicubic_psnr")]));
    let ok =
        code == 0 && rows.len() == 500 && last <= 0.2 * first && sr >= bic + 1.0 && took < Duration::from_secs(600);
    if !ok {
        eprintln!("{text}");
    }
    verdicts.insert(
        7,
        verdict(
            ok,
            format!("loss {first:.6} -> {last:.6} ({:.1}%); psnr {sr:.4} vs bicubic {bic:.4}", 100.0 * last / first),
        ),
    );
    let ckpt = root.join("train/checkpoint-000500.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    // 6: bicubic identity
    let (code, text, _) =
        hitsr(root, &["--config", cfg, "--out-dir", "zero", "eval", "--zero-weights", "--data", data]);
    let (h, rows) = read_csv(&root.join("zero/eval.csv"));
    let exact = rows.iter().all(|r| {
        r[col(&h, "psnr")] == r[col(&h, "bicubic_psnr")]
            && f(&r[col(&h, "psnr")]) == f(&r[col(&h, "bicubic_psnr")])
            && r[col(&h, "ssim")] == r[col(&h, "bicubic_ssim")]
    });
    if code != 0 {
        eprintln!("{text}");
    }
    verdicts.insert(
        6,
        verdict(
            code == 0 && rows.len() == 4 && exact,
            format!("{} images, model psnr == bicubic psnr: {exact}", rows.len()),
        ),
    );

    // 9: robustness
    let (c1, t1, _) =
        hitsr(root, &["--config", cfg, "--out-dir", "eval", "eval", "--checkpoint", ckpt, "--data", data]);
    let (c2, t2, _) =
        hitsr(root, &["--config", cfg, "--out-dir", "robust", "robustness", "--checkpoint", ckpt, "--data", data]);
    let (h, rows) = read_csv(&root.join("robust/robustness.csv"));
    let (hs, summary) = read_csv(&root.join("eval/eval_summary.csv"));
    let plain = summary.first().map(|r| r[col(&hs, "psnr")].clone()).unwrap_or_default();
    let none: Vec<&Vec<String>> = rows.iter().filter(|r| r[col(&h, "level")] == "none").collect();
    let transforms: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let identity = none.len() == 2 && none.iter().all(|r| r[col(&h, "psnr")] == plain);
    if c1 != 0 || c2 != 0 {
        eprintln!("{t1}{t2}");
    }
    verdicts.insert(
        9,
        verdict(
            c1 == 0 && c2 == 0 && rows.len() == 8 && transforms.len() == 2 && identity,
            format!("{} rows; identity level psnr {plain} equals plain evaluation: {identity}", rows.len()),
        ),
    );

    // attention audit, part of the compared reports
    let (code, text, _) =
        hitsr(root, &["--config", cfg, "--out-dir", "attn", "export-attn", "--checkpoint", ckpt, "--data", data]);
    if code != 0 {
        eprintln!("{text}");
    }

    // 8: ablation
    let steps = ABLATION_STEPS.to_string();
    let (code, text, took) =
        hitsr(root, &["--config", cfg, "--out-dir", "ablate", "ablate", "--steps", &steps, "--seeds", "3"]);
    eprintln!("ablation took {:.1} s", took.as_secs_f64());
    let (h, rows) = read_csv(&root.join("ablate/ablation.csv"));
    let seeds = h.iter().filter(|c| c.starts_with("loss_seed")).count();
    let flagged: Vec<&str> = rows.iter().filter(|r| r[col(&h, "flag")] == "inversion").map(|r| r[0].as_str()).collect();
    let consistent = rows.iter().all(|r| {
        let d = f(&r[col(&h, "delta_vs_full")]);
        if r[col(&h, "flag")] == "inversion" {
            d <= 0.0
        } else {
            d >= 0.0
        }
    });
    if code != 0 {
        eprintln!("{text}");
    }
    verdicts.insert(
        8,
        verdict(
            code == 0 && rows.len() == 7 && seeds == 3 && consistent,
            format!(
                "{} variants x {seeds} seeds at {ABLATION_STEPS} steps; inversions flagged: {flagged:?}",
                rows.len() - 1
            ),
        ),
    );

    PipelineRun { root: root.to_path_buf(), verdicts }
}

// ---- in-process criteria ----

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut SeededRng::new(seed))
}

/// Softmax attention with a sigmoid blend between two query sets, written
/// out with plain loops.
fn straight_line(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    qr: &[f64],
    rpe: &[f64],
    lambda: f64,
    (nh, t, d): (usize, usize, usize),
) -> Vec<f64> {
    let at = |x: &[f64], h: usize, i: usize, c: usize| x[(h * t + i) * d + c];
    let mut out = vec![0.0; nh * t * d];
    for h in 0..nh {
        let probs = |src: &[f64], i: usize| {
            let logits: Vec<f64> = (0..t)
                .map(|j| {
                    (0..d).map(|c| at(src, h, i, c) * at(k, h, j, c)).sum::<f64>() / (d as f64).sqrt()
                        + rpe[(h * t + i) * t + j]
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            logits.iter().map(|l| (l - m).exp() / z).collect::<Vec<_>>()
        };
        let g = 1.0 / (1.0 + (-lambda).exp());
        for i in 0..t {
            let (s, c) = (probs(q, i), probs(qr, i));
            for j in 0..t {
                let a = (1.0 - g) * s[j] + g * c[j];
                for e in 0..d {
                    out[(h * t + i) * d + e] += a * at(v, h, j, e);
                }
            }
        }
    }
    out
}

fn criterion_gating() -> Verdict {
    let cfg = AttentionConfig::new(2, 3, 2).unwrap();
    let tape = Tape::<f64>::no_grad();
    let mut worst_lin = 0.0f64;
    for seed in 0..20u64 {
        let heads = Heads {
            q: tape.constant(randn(&[3, 2, 4, 3], 4 * seed)),
            k: tape.constant(randn(&[3, 2, 4, 3], 4 * seed + 1)),
            v: tape.constant(randn(&[3, 2, 4, 3], 4 * seed + 2)),
            q_ref: Some(tape.constant(randn(&[3, 2, 4, 3], 4 * seed + 3))),
        };
        let run = |gate: Gate, lambda: Option<f64>| {
            let lam = lambda.map(|l| tape.constant(Tensor::full(&[2], l)));
            gated_double_attention(&heads, &cfg, gate, lam.as_ref(), None).unwrap().value().to_f64_vec()
        };
        let (a, b) = (run(Gate::SelfOnly, None), run(Gate::CrossOnly, None));
        for s in [0.25, 0.5, 0.75] {
            let fixed = run(Gate::Fixed(s), None);
            let learned = run(Gate::Learned, Some((s / (1.0 - s)).ln()));
            for i in 0..a.len() {
                let line = (1.0 - s) * a[i] + s * b[i];
                worst_lin = worst_lin.max((fixed[i] - line).abs()).max((learned[i] - line).abs());
            }
        }
    }
    let cfg = AttentionConfig::new(2, 2, 2).unwrap();
    let (q, k, v, qr, rpe) = (
        randn(&[1, 2, 4, 2], 90),
        randn(&[1, 2, 4, 2], 91),
        randn(&[1, 2, 4, 2], 92),
        randn(&[1, 2, 4, 2], 93),
        randn(&[2, 4, 4], 94),
    );
    let heads = Heads {
        q: tape.constant(q.clone()),
        k: tape.constant(k.clone()),
        v: tape.constant(v.clone()),
        q_ref: Some(tape.constant(qr.clone())),
    };
    let lam = tape.constant(Tensor::ones(&[2]));
    let got = gated_double_attention(&heads, &cfg, Gate::Learned, Some(&lam), Some(&tape.constant(rpe.clone())))
        .unwrap()
        .value()
        .to_f64_vec();
    let want = straight_line(
        &q.to_f64_vec(),
        &k.to_f64_vec(),
        &v.to_f64_vec(),
        &qr.to_f64_vec(),
        &rpe.to_f64_vec(),
        1.0,
        (2, 4, 2),
    );
    let oracle = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(
        worst_lin < 1e-5 && oracle < 1e-6,
        format!("max deviation from the line {worst_lin:.3e}; lambda=1 vs oracle {oracle:.3e}"),
    )
}

fn criterion_structure() -> Verdict {
    let m = HiTSRModel::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let audit = m.shape_audit((40, 40)).unwrap();
    let ladder: Vec<String> = audit.iter().map(|(s, d)| format!("{s}:{}", d[2])).collect();
    let want = [
        "embed:40",
        "block0:40",
        "up0:80",
        "block1:80",
        "down0:40",
        "block2:40",
        "up1:80",
        "block3:80",
        "down1:40",
        "block4:40",
        "up2:80",
        "block5:80",
        "output:160",
    ];
    let no_last_down =
        !audit.iter().any(|(s, _)| s == "down2") && !m.params.ids().any(|id| m.params.name(id).starts_with("down2"));
    let n = m.param_count();
    let dev = (n as f64 - TARGET_PARAMS) / TARGET_PARAMS;
    verdict(
        m.blocks().len() == 6 && ladder == want && no_last_down && dev.abs() <= 0.25,
        format!(
            "{} blocks; ladder {}; final downsampler absent: {no_last_down}; params {n} ({:+.2}%)",
            m.blocks().len(),
            ladder.join(" "),
            100.0 * dev
        ),
    )
}

fn criterion_round_trips() -> Verdict {
    let tape = Tape::<f32>::no_grad();
    let mut rng = SeededRng::new(SEED);
    let (mut windows, mut shuffles) = (0, 0);
    for i in 0..1000u64 {
        let b = 1 + (i % 2) as usize;
        let (hw, ww, d) = (1 + (i % 3) as usize, 1 + (i / 3 % 3) as usize, 1 + (i / 9 % 4) as usize);
        let x = tape.constant(Tensor::<f32>::randn(&[b, 4 * hw, 4 * ww, d], 1.0, &mut rng));
        let ok = [false, true].iter().all(|&shifted| {
            let mut set = window_partition(&x, 4, shifted).unwrap();
            window_reverse(&mut set).unwrap().value().bit_eq(x.value())
        });
        windows += ok as usize;
        let r = 1 + (i % 3) as usize;
        let y = tape.constant(Tensor::<f32>::randn(&[b, d * r * r, 2 * hw, 2 * ww], 1.0, &mut rng));
        let there = y.pixel_shuffle(r).unwrap();
        let back = there.pixel_unshuffle(r).unwrap();
        let again = tape.constant(there.value().clone()).pixel_unshuffle(r).unwrap().pixel_shuffle(r).unwrap();
        shuffles += (back.value().bit_eq(y.value()) && again.value().bit_eq(there.value())) as usize;
    }
    verdict(
        windows == 1000 && shuffles == 1000,
        format!("window partition/reverse {windows}/1000; pixel shuffle/unshuffle {shuffles}/1000"),
    )
}

/// Mean SSIM with a Gaussian window evaluated directly in 2-D, truncated
/// at the border and renormalised.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut n, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for v in y.saturating_sub(5)..(y + 6).min(h) {
                for u in x.saturating_sub(5)..(x + 6).min(w) {
                    let dy = v as f64 - y as f64;
                    let dx = u as f64 - x as f64;
                    let g = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
                    let (p, q) = (a[v * w + u], b[v * w + u]);
                    n += g;
                    ma += g * p;
                    mb += g * q;
                    aa += g * p * p;
                    bb += g * q * q;
                    ab += g * p * q;
                }
            }
            let (ma, mb, aa, bb, ab) = (ma / n, mb / n, aa / n, bb / n, ab / n);
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (h * w) as f64
}

fn criterion_metrics() -> Verdict {
    let mut worst_psnr = 0.0f64;
    let mut worst_ssim = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(100 + seed);
        let a = Tensor::<f64>::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
        let (da, db) = (a.to_f64_vec(), b.to_f64_vec());
        let mse = da.iter().zip(&db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 64.0;
        worst_psnr = worst_psnr.max((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs());
        worst_ssim = worst_ssim.max((ssim(&a, &b, 1.0).unwrap() - ssim_oracle(&da, &db, 8, 8, 1.0)).abs());
    }
    let a = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 0.0, 0.5, &mut SeededRng::new(5));
    let shifted = a.map(|v| v + 10.0 / 255.0);
    let p = psnr(&a, &shifted, 1.0).unwrap();
    verdict(
        worst_psnr < 1e-8 && worst_ssim < 1e-8 && (p - 28.1308).abs() < 1e-3,
        format!("psnr vs oracle {worst_psnr:.3e}; ssim vs oracle {worst_ssim:.3e}; constant 10/255 offset {p:.6} dB"),
    )
}

fn in_process() -> BTreeMap<u32, Verdict> {
    BTreeMap::from([
        (2, criterion_gating()),
        (3, criterion_structure()),
        (4, criterion_round_trips()),
        (5, criterion_metrics()),
    ])
}

// ---- determinism ----

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn summary(v: &BTreeMap<u32, Verdict>) -> String {
    let mut s = String::new();
    for (k, v) in v {
        writeln!(s, "{k}:{}:{}", v.pass, v.detail).unwrap();
    }
    s
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();

    let mut a = pipeline(&dir_a);
    a.verdicts.extend(in_process());
    let mut b = pipeline(&dir_b);
    b.verdicts.extend(in_process());

    // The run file names the data path, which is the same for both runs.
    let (fa, fb) = (files(&a.root), files(&b.root));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let same_verdicts = summary(&a.verdicts) == summary(&b.verdicts);
    a.verdicts.insert(
        10,
        verdict(
            differing.is_empty() && same_verdicts && fa.len() > 10,
            format!(
                "{} report files compared, differing: {differing:?}; in-process reports identical: {same_verdicts}",
                fa.len()
            ),
        ),
    );

    let names = [
        "",
        "gradient suite",
        "gating linearity",
        "structural audit",
        "exact round trips",
        "metric oracles",
        "bicubic identity",
        "overfit",
        "ablation harness",
        "robustness sweep",
        "determinism",
    ];
    let mut failed = Vec::new();
    let mut table = String::new();
    for (k, v) in &a.verdicts {
        let status = if v.pass { "PASS" } else { "FAIL" };
        writeln!(table, "criterion {k:>2} {:<18}: {status} ({})", names[*k as usize], v.detail).unwrap();
        if *k == 3 {
            writeln!(table, "             deviation cause: {PARAM_GAP_CAUSE}").unwrap();
        }
        if !v.pass {
            failed.push(*k);
        }
    }
    // Straight to the handle: the test harness only captures the print macros,
    // so the table shows up in plain `cargo test` output too.
    std::io::stderr().write_all(table.as_bytes()).unwrap();
    assert_eq!(a.verdicts.len(), 10);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
