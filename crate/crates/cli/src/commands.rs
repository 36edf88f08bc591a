use std::path::{Path, PathBuf};
use std::time::Instant;

use hitsr_core::losses::MetricConvention;
use hitsr_core::model::{Checkpoint, HiTSRModel, ModelConfig};
use hitsr_core::pipeline::{
    ablation_sweep, audit_attention, evaluate, load_dataset, robustness_run, Csv, RefMode, RunConfig, Sample, Trainer,
};
use hitsr_core::tensor::{primitive_suite, GradCheckReport};
use hitsr_core::{Error, Result, Scalar, SeededRng, Tensor};
use log::{info, warn};

use crate::{ensure_dir, Cli, Command, Global, ModelSource, Precision};

/// Step size and pass threshold of the per-op checks.
fn op_tolerance(p: Precision) -> (f64, f64) {
    match p {
        Precision::F64 => (1e-5, 1e-6),
        Precision::F32 => (1e-2, 5e-2),
    }
}

// The end-to-end check always runs in f64: in f32 the central differences
// through the whole network drown in rounding noise.
const E2E_EPS: f64 = 1e-4;
const E2E_TOL: f64 = 1e-5;

pub fn run(cli: &Cli) -> Result<u8> {
    match cli.global.precision {
        Precision::F32 => dispatch::<f32>(cli),
        Precision::F64 => dispatch::<f64>(cli),
    }
}

fn dispatch<E: Scalar>(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Train { resume, data } => train::<E>(g, resume.as_deref(), data.as_deref()),
        Command::Eval { source } => eval::<E>(g, source),
        Command::Robustness { source } => robustness::<E>(g, source),
        Command::Gradcheck { samples } => gradcheck::<E>(g, *samples),
        Command::InspectCheckpoint { path } => inspect(path),
        Command::ExportAttn { source } => export_attn::<E>(g, source),
        Command::Ablate { steps, seeds, data } => ablate(g, *steps, *seeds, data.as_deref()),
    }
    .map(|()| 0)
    .or_else(|e| match e {
        Failed(code) => Ok(code),
        Lib(e) => Err(e),
    })
}

/// A command either fails with a library error or finishes with a
/// non-zero verdict of its own (a gradient check over tolerance).
enum Outcome {
    Failed(u8),
    Lib(Error),
}
use Outcome::{Failed, Lib};

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        Lib(e)
    }
}

type Run = std::result::Result<(), Outcome>;

fn config(g: &Global, fallback: RunConfig) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => fallback,
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, csv: &Csv) -> Result<PathBuf> {
    let path = dir.join(name);
    csv.write(&path)?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn dataset(root: Option<&Path>, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let root = root
        .or(cfg.train.eval_data.as_deref())
        .or(cfg.train.data.as_deref())
        .ok_or_else(|| Error::Config("no data: pass --data or set eval_data / data in the run file".into()))?;
    let mode = if cfg.train.random_ref { RefMode::Random(cfg.train.seed) } else { RefMode::Paired };
    load_dataset(root, mode)
}

fn load_model<E: Scalar>(g: &Global, src: &ModelSource, cfg: &RunConfig) -> Result<HiTSRModel<E>> {
    if let Some(path) = &src.checkpoint {
        // Without a run file the checkpoint's own architecture is used.
        let expected = g.config.is_some().then_some(&cfg.model);
        let (model, _) = HiTSRModel::from_checkpoint(&Checkpoint::load(path)?, expected)?;
        return Ok(model);
    }
    let mut model = HiTSRModel::build(&cfg.model, cfg.train.seed)?;
    if src.zero_weights {
        model.params.fill_trainable(|_, shape| Some(Tensor::zeros(shape)));
    } else {
        warn!("no checkpoint given: using freshly initialised weights (seed {})", cfg.train.seed);
    }
    Ok(model)
}

fn evaluation_setup<E: Scalar>(g: &Global, src: &ModelSource) -> Result<(RunConfig, HiTSRModel<E>, Vec<Sample>)> {
    let cfg = config(g, RunConfig::default())?;
    let model = load_model::<E>(g, src, &cfg)?;
    let samples = dataset(src.data.as_deref(), &cfg)?;
    Ok((cfg, model, samples))
}

fn train<E: Scalar>(g: &Global, resume: Option<&Path>, data: Option<&Path>) -> Run {
    let mut cfg = config(g, RunConfig::default())?;
    if let Some(d) = data {
        cfg.train.data = Some(d.to_path_buf());
    }
    let root = cfg
        .train
        .data
        .clone()
        .ok_or_else(|| Error::Config("no training data: pass --data or set data in the run file".into()))?;
    let mode = if cfg.train.random_ref { RefMode::Random(cfg.train.seed) } else { RefMode::Paired };
    let train_set = load_dataset(&root, mode)?;
    let eval_set = match &cfg.train.eval_data {
        Some(p) => load_dataset(p, RefMode::Paired)?,
        None => Vec::new(),
    };
    ensure_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("config.txt"), &cfg.to_text())?;
    let mut trainer: Trainer<E> = match resume {
        Some(path) => Trainer::resume(cfg, train_set, eval_set, &Checkpoint::load(path)?)?,
        None => Trainer::new(cfg, train_set, eval_set)?,
    };
    trainer.threads = g.device_threads;
    info!("training {} parameters from step {}", trainer.model.param_count(), trainer.step);
    trainer.run(Some(&g.out_dir))?;
    // Scores on the training crops themselves: the overfitting check.
    let pool = trainer.pool_scores()?;
    write(&g.out_dir, "pool_eval.csv", &pool.to_csv())?;
    write(&g.out_dir, "pool_summary.csv", &pool.summary_csv())?;
    let last = trainer.report.losses.rows().last().cloned().unwrap_or_default();
    println!("steps: {}", trainer.step);
    if let Some(l) = last.get(2) {
        println!("final loss: {l}");
    }
    if let Some(p) = trainer.last_checkpoint() {
        println!("checkpoint: {}", p.display());
    }
    let (m, b) = pool.mean();
    println!("training-crop psnr {:.4} dB (bicubic {:.4} dB)", m.psnr, b.psnr);
    println!("wall clock: {:.1} s", trainer.report.wall_clock_secs);
    Ok(())
}

fn metric(cfg: &RunConfig) -> MetricConvention {
    cfg.train.metric
}

fn eval<E: Scalar>(g: &Global, src: &ModelSource) -> Run {
    let (cfg, model, samples) = evaluation_setup::<E>(g, src)?;
    let table = evaluate(&model, &samples, metric(&cfg), g.device_threads)?;
    ensure_dir(&g.out_dir)?;
    write(&g.out_dir, "eval.csv", &table.to_csv())?;
    write(&g.out_dir, "eval_summary.csv", &table.summary_csv())?;
    print!("{}", table.to_csv().render());
    let (m, b) = table.mean();
    println!("mean psnr {:.4} dB (bicubic {:.4} dB), ssim {:.4} (bicubic {:.4})", m.psnr, b.psnr, m.ssim, b.ssim);
    Ok(())
}

fn robustness<E: Scalar>(g: &Global, src: &ModelSource) -> Run {
    let (cfg, model, samples) = evaluation_setup::<E>(g, src)?;
    let csv = robustness_run(&model, &samples, metric(&cfg), g.device_threads)?;
    ensure_dir(&g.out_dir)?;
    write(&g.out_dir, "robustness.csv", &csv)?;
    print!("{}", csv.render());
    Ok(())
}

fn export_attn<E: Scalar>(g: &Global, src: &ModelSource) -> Run {
    let (_, model, samples) = evaluation_setup::<E>(g, src)?;
    let mut rows = Csv::new(&["sample", "block", "layer", "windows", "min_row_sum", "max_row_sum"]);
    let mut gates = None;
    let mut worst = 0.0f64;
    for s in &samples {
        let audit = audit_attention(&model, s)?;
        worst = worst.max(audit.max_row_error());
        for r in audit.row_sums.rows() {
            rows.push(std::iter::once(s.id.clone()).chain(r.iter().cloned()).collect())?;
        }
        gates.get_or_insert(audit.gates);
    }
    let gates = gates.unwrap_or_else(|| Csv::new(&["block", "head", "sigma"]));
    ensure_dir(&g.out_dir)?;
    write(&g.out_dir, "gates.csv", &gates)?;
    write(&g.out_dir, "attention_rows.csv", &rows)?;
    print!("{}", gates.render());
    println!("max |row sum - 1|: {worst:.3e}");
    Ok(())
}

fn report_line(name: &str, r: &GradCheckReport, tol: f64) -> String {
    let verdict = if r.passed(tol) { "ok" } else { "FAIL" };
    let note = r.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default();
    format!(
        "{name:<28} checked {:>4}  max rel {:.3e}  max abs {:.3e}  {verdict}{note}",
        r.checked, r.max_rel_error, r.max_abs_error
    )
}

fn gradcheck<E: Scalar>(g: &Global, samples: usize) -> Run {
    let seed = g.seed.unwrap_or(0);
    let (op_eps, op_tol) = op_tolerance(g.precision);
    let start = Instant::now();
    let mut csv = Csv::new(&["check", "checked", "max_rel_error", "max_abs_error", "tolerance", "passed"]);
    let mut all_passed = true;
    let mut record = |name: &str, r: &GradCheckReport, t: f64| -> Result<()> {
        println!("{}", report_line(name, r, t));
        all_passed &= r.passed(t);
        csv.push(vec![
            name.to_string(),
            r.checked.to_string(),
            format!("{:.6e}", r.max_rel_error),
            format!("{:.6e}", r.max_abs_error),
            format!("{t:e}"),
            r.passed(t).to_string(),
        ])
    };
    for check in primitive_suite::<E>(seed, op_eps)? {
        record(check.op, &check.report, op_tol)?;
    }
    let mut model = HiTSRModel::<f64>::build(&ModelConfig::tiny(), seed)?;
    model.redraw_unit_gain(seed.wrapping_add(1));
    let mut rng = SeededRng::fork(seed, 1);
    let lr = Tensor::<f64>::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let r = Tensor::<f64>::rand_uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let e2e = model.grad_check(&lr, Some(&r), samples, seed.wrapping_add(2), E2E_EPS)?;
    record("end_to_end_tiny_f64", &e2e, E2E_TOL)?;
    ensure_dir(&g.out_dir)?;
    write(&g.out_dir, "gradcheck.csv", &csv)?;
    println!("gradcheck {} in {:.1} s", if all_passed { "passed" } else { "FAILED" }, start.elapsed().as_secs_f64());
    if all_passed {
        Ok(())
    } else {
        Err(Failed(2))
    }
}

fn inspect(path: &Path) -> Run {
    let ckpt = Checkpoint::load(path)?;
    let (model, extra) = HiTSRModel::<f32>::from_checkpoint(&ckpt, None)?;
    println!("file: {}", path.display());
    println!("step: {}", ckpt.step);
    match &ckpt.rng {
        Some(r) => println!("rng: {} seed {} stream {} counter {}", r.algorithm, r.seed, r.stream, r.counter),
        None => println!("rng: none"),
    }
    println!("parameters: {} trainable elements", model.param_count());
    println!("extra tensors: {}", extra.len());
    println!("config:");
    for line in ckpt.config.lines() {
        println!("  {line}");
    }
    println!("tensors: {}", ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        println!("  {name} {:?}", t.shape());
    }
    Ok(())
}

fn ablate(g: &Global, steps: Option<u64>, seeds: u64, data: Option<&Path>) -> Run {
    let mut cfg = config(g, RunConfig::overfit())?;
    if let Some(s) = steps {
        cfg.train.max_steps = s;
        cfg.train.validate()?;
    }
    let samples = match data {
        Some(root) => load_dataset(root, RefMode::Paired)?,
        None => dataset(None, &cfg)?,
    };
    let base = cfg.train.seed;
    let seeds: Vec<u64> = (0..seeds).map(|k| base + k).collect();
    let report = ablation_sweep(&cfg, &samples, &seeds)?;
    let csv = report.to_csv();
    ensure_dir(&g.out_dir)?;
    write(&g.out_dir, "ablation.csv", &csv)?;
    print!("{}", csv.render());
    let inv = report.inversions();
    if inv.is_empty() {
        println!("no inversions: the full model has the lowest mean loss");
    } else {
        println!("inversions (variant beats full model): {}", inv.join(", "));
    }
    Ok(())
}
