//! Central-difference gradient verification.

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over the checked elements.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(input, element)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    /// Set when a function evaluation produced a non-finite value; the
    /// error fields are then meaningless.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_error < tol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks every element of every input.
pub fn grad_check<E, F>(f: F, inputs: &[Tensor<E>], eps: f64) -> Result<GradCheckReport>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    grad_check_subset(f, inputs, eps, &all_positions(inputs))
}

/// Checks only the listed `(input, element)` positions.
pub fn grad_check_subset<E, F>(
    f: F,
    inputs: &[Tensor<E>],
    eps: f64,
    positions: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    check_eps(eps)?;
    let analytic = match analytic_grads(&f, inputs)? {
        Ok(a) => a,
        Err(report) => return Ok(report),
    };
    let eval = |perturbed: &[Tensor<E>]| eval_at(&f, perturbed);
    compare(&analytic, inputs, eps, positions, eval)
}

/// Like [`grad_check_subset`] for networks with ReLUs. The activation
/// pattern of the unperturbed input is captured and imposed on every
/// perturbed evaluation, so finite differences never straddle a kink. The
/// pinned function equals the original in value and gradient at the base
/// point.
pub fn grad_check_subset_pinned<E, F>(
    f: F,
    inputs: &[Tensor<E>],
    eps: f64,
    positions: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    check_eps(eps)?;
    let analytic = match analytic_grads(&f, inputs)? {
        Ok(a) => a,
        Err(report) => return Ok(report),
    };
    let masks = {
        let tape = Tape::no_grad();
        tape.record_relu_masks();
        let vars: Vec<Var<'_, E>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?;
        tape.take_relu_masks()
    };
    let pinned = |tape: &Tape<E>| tape.replay_relu_masks(masks.clone());
    let mut report = empty_report();
    let mut work = inputs.to_vec();
    for &(i, j) in positions {
        let Some(numeric) = central(&f, &mut work, inputs, (i, j), eps, &pinned)? else {
            report.failure = Some(format!("non-finite value when perturbing input {i} element {j}"));
            return Ok(report);
        };
        record(&mut report, analytic[i][j], numeric, (i, j));
    }
    Ok(report)
}

fn central<E, F>(
    f: &F,
    work: &mut [Tensor<E>],
    inputs: &[Tensor<E>],
    (i, j): (usize, usize),
    step: f64,
    prepare: &dyn Fn(&Tape<E>),
) -> Result<Option<f64>>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    let orig = inputs[i].data()[j];
    let (hi, lo) = (E::of(orig.f64() + step), E::of(orig.f64() - step));
    let eval = |w: &[Tensor<E>]| {
        let tape = Tape::no_grad();
        tape.set_check_finite(false);
        prepare(&tape);
        let vars: Vec<Var<'_, E>> = w.iter().map(|t| tape.constant(t.clone())).collect();
        let v = f(&tape, &vars)?.value().item().f64();
        Ok::<_, Error>(v.is_finite().then_some(v))
    };
    work[i].data_mut()[j] = hi;
    let plus = eval(work)?;
    work[i].data_mut()[j] = lo;
    let minus = eval(work)?;
    work[i].data_mut()[j] = orig;
    Ok(plus.zip(minus).map(|(p, m)| (p - m) / (hi.f64() - lo.f64())))
}

fn record(report: &mut GradCheckReport, a: f64, numeric: f64, at: (usize, usize)) {
    let rel = relative_error(a, numeric);
    report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
    if report.worst.is_none() || rel > report.max_rel_error {
        report.max_rel_error = rel;
        report.worst = Some(at);
    }
    report.checked += 1;
}

/// A differentiable program that can be instantiated at either precision.
pub trait Program {
    fn eval<'t, E: Scalar>(&self, tape: &'t Tape<E>, x: &[Var<'t, E>]) -> Result<Var<'t, E>>;
}

/// Checks 32-bit tape gradients against central differences taken in 64-bit
/// on the same program, so the reference is not swamped by f32 rounding of
/// the loss.
pub fn grad_check_mixed<P: Program>(p: &P, inputs: &[Tensor<f32>], eps: f64) -> Result<GradCheckReport> {
    check_eps(eps)?;
    let f32_fn = higher_ranked(|t: &Tape<f32>, v| p.eval(t, v));
    let analytic = match analytic_grads(&f32_fn, inputs)? {
        Ok(a) => a,
        Err(report) => return Ok(report),
    };
    let wide: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let f64_fn = higher_ranked(|t: &Tape<f64>, v| p.eval(t, v));
    let eval = |perturbed: &[Tensor<f64>]| eval_at(&f64_fn, perturbed);
    compare(&analytic, &wide, eps, &all_positions(inputs), eval)
}

fn higher_ranked<E: Scalar, F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    f
}

fn all_positions<E: Scalar>(inputs: &[Tensor<E>]) -> Vec<(usize, usize)> {
    inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-6, 1e-2]")));
    }
    Ok(())
}

fn empty_report() -> GradCheckReport {
    GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: None, failure: None }
}

/// Tape gradients widened to f64, or a failure report for non-finite values.
fn analytic_grads<E, F>(f: &F, inputs: &[Tensor<E>]) -> Result<Result<Vec<Vec<f64>>, GradCheckReport>>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, E>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = match f(&tape, &vars) {
        Ok(l) => l,
        Err(e) if e.is_numeric() => {
            let mut report = empty_report();
            report.failure = Some(e.to_string());
            return Ok(Err(report));
        }
        Err(e) => return Err(e),
    };
    if loss.numel() != 1 {
        return Err(Error::Contract(format!("grad_check needs a scalar function, got shape {:?}", loss.shape())));
    }
    let grads = tape.backward(&loss)?;
    Ok(Ok(vars.iter().map(|v| grads.get_or_zeros(v).to_f64_vec()).collect()))
}

fn eval_at<E, F>(f: &F, inputs: &[Tensor<E>]) -> Result<Option<f64>>
where
    E: Scalar,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    let tape = Tape::no_grad();
    tape.set_check_finite(false);
    let vars: Vec<Var<'_, E>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let v = f(&tape, &vars)?.value().item().f64();
    Ok(v.is_finite().then_some(v))
}

fn compare<N: Scalar>(
    analytic: &[Vec<f64>],
    inputs: &[Tensor<N>],
    eps: f64,
    positions: &[(usize, usize)],
    eval: impl Fn(&[Tensor<N>]) -> Result<Option<f64>>,
) -> Result<GradCheckReport> {
    let mut report = empty_report();
    let mut work = inputs.to_vec();
    for &(i, j) in positions {
        let orig = inputs[i].data()[j];
        let (hi, lo) = (N::of(orig.f64() + eps), N::of(orig.f64() - eps));
        work[i].data_mut()[j] = hi;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = lo;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            report.failure = Some(format!("non-finite value when perturbing input {i} element {j}"));
            return Ok(report);
        };
        // the realised step differs from 2*eps once rounded to N
        let numeric = (plus - minus) / (hi.f64() - lo.f64());
        record(&mut report, analytic[i][j], numeric, (i, j));
    }
    Ok(report)
}

/// Result of checking one registered primitive.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

type SuiteFn<E> = for<'t> fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>;

/// Random values with `|v| >= 0.1` so kinked ops stay away from their kink.
fn away_from_zero<E: Scalar>(shape: &[usize], rng: &mut super::SeededRng) -> Tensor<E> {
    use rand::Rng;
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        E::of(if rng.random::<bool>() { m } else { -m })
    })
}

/// Weighted sum `sum(y * w)` with a fixed pseudo-random `w`, which gives every
/// output element a distinct, non-zero upstream gradient.
fn probe<'t, E: Scalar>(y: Var<'t, E>) -> Result<Var<'t, E>> {
    let w = Tensor::from_fn(y.shape(), |i| E::of(((i * 7919 % 101) as f64 / 50.0) - 1.0 + 0.013));
    let w = y.tape().constant(w);
    y.mul(&w)?.sum()
}

/// Gradient checks of every differentiable primitive on small random inputs.
pub fn primitive_suite<E: Scalar>(seed: u64, eps: f64) -> Result<Vec<OpCheck>> {
    use super::Unary;
    let mut rng = super::SeededRng::new(seed);
    let mut checks: Vec<OpCheck> = Vec::new();
    fn check<E: Scalar>(
        checks: &mut Vec<OpCheck>,
        eps: f64,
        op: &'static str,
        f: SuiteFn<E>,
        shapes: &[&[usize]],
        rng: &mut super::SeededRng,
    ) -> Result<()> {
        let inputs: Vec<Tensor<E>> = shapes.iter().map(|s| away_from_zero(s, rng)).collect();
        let report = grad_check(f, &inputs, eps)?;
        checks.push(OpCheck { op, report });
        Ok(())
    }
    macro_rules! run {
        ($op:expr, $f:expr, $shapes:expr, $rng:expr $(,)?) => {
            check::<E>(&mut checks, eps, $op, $f, $shapes, $rng)
        };
    }

    run!("add", |_, x| probe(x[0].add(&x[1])?), &[&[2, 5], &[2, 5]], &mut rng)?;
    run!("sub", |_, x| probe(x[0].sub(&x[1])?), &[&[2, 5], &[2, 5]], &mut rng)?;
    run!("mul", |_, x| probe(x[0].mul(&x[1])?), &[&[2, 5], &[2, 5]], &mut rng)?;
    run!("add_bcast", |_, x| probe(x[0].add_bcast(&x[1])?), &[&[2, 3, 4], &[3, 1]], &mut rng)?;
    run!("mul_bcast", |_, x| probe(x[0].mul_bcast(&x[1])?), &[&[2, 3, 4], &[2, 3, 1]], &mut rng)?;
    for (op, kind) in [
        ("sigmoid", Unary::Sigmoid),
        ("gelu", Unary::Gelu),
        ("relu", Unary::Relu),
        ("leaky_relu", Unary::LeakyRelu(0.2)),
        ("scale", Unary::Scale(-1.7)),
        ("add_scalar", Unary::AddScalar(0.3)),
        ("neg", Unary::Neg),
        ("abs", Unary::Abs),
        ("square", Unary::Square),
    ] {
        let inputs = vec![away_from_zero::<E>(&[3, 7], &mut rng)];
        let report = grad_check(move |_, x| probe(x[0].unary(kind)?), &inputs, eps)?;
        checks.push(OpCheck { op, report });
    }
    run!("matmul", |_, x| probe(x[0].matmul(&x[1])?), &[&[2, 3, 4], &[2, 4, 5]], &mut rng)?;
    run!("matmul_shared", |_, x| probe(x[0].matmul(&x[1])?), &[&[2, 3, 4], &[4, 5]], &mut rng)?;
    run!("matmul_t", |_, x| probe(x[0].matmul_t(&x[1])?), &[&[2, 3, 4], &[2, 5, 4]], &mut rng)?;
    run!(
        "conv2d",
        |_, x| probe(x[0].conv2d(&x[1], Some(&x[2]), 1, 1)?),
        &[&[2, 2, 4, 4], &[3, 2, 3, 3], &[3]],
        &mut rng,
    )?;
    run!("conv2d_stride2", |_, x| probe(x[0].conv2d(&x[1], None, 2, 1)?), &[&[1, 2, 5, 5], &[2, 2, 3, 3]], &mut rng,)?;
    run!(
        "conv2d_input_adjoint",
        |_, x| probe(x[0].conv2d_input_adjoint(&x[1], (5, 5), 2, 1)?),
        &[&[1, 2, 3, 3], &[2, 3, 3, 3]],
        &mut rng,
    )?;
    run!("zero_pad", |_, x| probe(x[0].zero_pad((0, 1, 2, 1))?), &[&[2, 3, 3]], &mut rng)?;
    run!("softmax", |_, x| probe(x[0].softmax(1)?), &[&[3, 4, 2]], &mut rng)?;
    run!("global_avg_pool", |_, x| probe(x[0].global_avg_pool()?), &[&[2, 3, 2, 3]], &mut rng)?;
    run!("layer_norm", |_, x| probe(x[0].layer_norm(&x[1], &x[2])?), &[&[3, 6], &[6], &[6]], &mut rng)?;
    run!("norm", |_, x| probe(x[0].norm_trailing(2)?), &[&[2, 3, 4]], &mut rng)?;
    run!("sum_trailing", |_, x| probe(x[0].sum_trailing(1)?), &[&[3, 5]], &mut rng)?;
    run!("mean", |_, x| x[0].square()?.mean(), &[&[4, 5]], &mut rng)?;
    run!("reshape", |_, x| probe(x[0].reshape(&[6, 4])?), &[&[2, 3, 4]], &mut rng)?;
    run!("permute", |_, x| probe(x[0].permute(&[2, 0, 1])?), &[&[2, 3, 4]], &mut rng)?;
    run!("concat", |_, x| probe(Var::concat(&[&x[0], &x[1]], 1)?), &[&[2, 3, 2], &[2, 1, 2]], &mut rng)?;
    run!("narrow", |_, x| probe(x[0].narrow(1, 1, 2)?), &[&[2, 4, 3]], &mut rng)?;
    run!("pixel_shuffle", |_, x| probe(x[0].pixel_shuffle(2)?), &[&[1, 8, 2, 3]], &mut rng)?;
    run!("pixel_unshuffle", |_, x| probe(x[0].pixel_unshuffle(2)?), &[&[1, 2, 4, 2]], &mut rng)?;
    run!(
        "gather",
        |_, x| {
            let idx = std::sync::Arc::new(vec![0, 3, 3, 1, 5, 2, 0, 4]);
            probe(x[0].gather(idx, &[2, 4])?)
        },
        &[&[6]],
        &mut rng,
    )?;
    Ok(checks)
}
