use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Pointwise nonlinearities and affine maps with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    /// Tanh approximation:
    /// `gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    Relu,
    LeakyRelu(f64),
    Scale(f64),
    AddScalar(f64),
    Neg,
    Abs,
    Square,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Gelu => "gelu",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Neg => "neg",
            Unary::Abs => "abs",
            Unary::Square => "square",
        }
    }

    pub fn apply<E: Scalar>(self, x: E) -> E {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Gelu => {
                let c = E::of(GELU_C);
                let a = E::of(GELU_A);
                let half = E::of(0.5);
                half * x * (E::one() + (c * (x + a * x * x * x)).tanh())
            }
            Unary::Relu => {
                if x > E::zero() {
                    x
                } else {
                    E::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x > E::zero() {
                    x
                } else {
                    E::of(s) * x
                }
            }
            Unary::Scale(s) => E::of(s) * x,
            Unary::AddScalar(s) => x + E::of(s),
            Unary::Neg => -x,
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
        }
    }

    /// Derivative at `x`. Kinks take the right-hand value except `abs`,
    /// which uses the subgradient 0.
    pub fn derivative<E: Scalar>(self, x: E) -> E {
        match self {
            Unary::Sigmoid => {
                let s = sigmoid(x);
                s * (E::one() - s)
            }
            Unary::Gelu => {
                let c = E::of(GELU_C);
                let a = E::of(GELU_A);
                let half = E::of(0.5);
                let t = (c * (x + a * x * x * x)).tanh();
                half * (E::one() + t) + half * x * (E::one() - t * t) * c * (E::one() + E::of(3.0) * a * x * x)
            }
            Unary::Relu => {
                if x > E::zero() {
                    E::one()
                } else {
                    E::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x > E::zero() {
                    E::one()
                } else {
                    E::of(s)
                }
            }
            Unary::Scale(s) => E::of(s),
            Unary::AddScalar(_) => E::one(),
            Unary::Neg => -E::one(),
            Unary::Abs => {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            }
            Unary::Square => E::of(2.0) * x,
        }
    }
}

#[inline]
pub(crate) fn sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// How a broadcast operand is indexed from the output's flat index.
pub(crate) enum BroadcastIndex {
    Same,
    /// Operand matches the trailing extents: `i % n`.
    Modulo(usize),
    /// Operand matches the leading extents, trailing ones are 1: `i / inner`.
    Divide(usize),
    General(Vec<usize>),
}

impl BroadcastIndex {
    pub(crate) fn plan(op: &'static str, out: &[usize], operand: &[usize]) -> Result<Self> {
        if operand.len() > out.len() {
            return Err(Error::shape(op, format!("cannot broadcast {operand:?} into {out:?}")));
        }
        let offset = out.len() - operand.len();
        let mut aligned = vec![1; out.len()];
        aligned[offset..].copy_from_slice(operand);
        for (&o, &d) in out.iter().zip(&aligned) {
            if d != o && d != 1 {
                return Err(Error::shape(op, format!("cannot broadcast {operand:?} into {out:?}")));
            }
        }
        if aligned == out {
            return Ok(BroadcastIndex::Same);
        }
        let n: usize = operand.iter().product();
        // leading ones then an exact suffix
        if let Some(first) = aligned.iter().position(|&d| d != 1) {
            if aligned[..first].iter().all(|&d| d == 1) && aligned[first..] == out[first..] {
                return Ok(BroadcastIndex::Modulo(n));
            }
            if let Some(last) = aligned.iter().rposition(|&d| d != 1) {
                if aligned[..=last] == out[..=last] && aligned[last + 1..].iter().all(|&d| d == 1) {
                    let inner: usize = out[last + 1..].iter().product();
                    return Ok(BroadcastIndex::Divide(inner));
                }
            }
        } else {
            return Ok(BroadcastIndex::Modulo(1));
        }
        let mut strides = vec![0usize; out.len()];
        let mut acc = 1;
        for ax in (0..out.len()).rev() {
            if aligned[ax] != 1 {
                strides[ax] = acc;
            }
            acc *= aligned[ax];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; out.len()];
        let mut cur = 0usize;
        for _ in 0..total {
            map.push(cur);
            for ax in (0..out.len()).rev() {
                idx[ax] += 1;
                cur += strides[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                cur -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(BroadcastIndex::General(map))
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Same => i,
            BroadcastIndex::Modulo(n) => i % n,
            BroadcastIndex::Divide(inner) => i / inner,
            BroadcastIndex::General(map) => map[i],
        }
    }
}

fn same_shape<E: Scalar>(op: &'static str, a: &Var<'_, E>, b: &Var<'_, E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'t, E: Scalar> Var<'t, E> {
    pub fn add(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("add", self, rhs)?;
        let out = self.value.zip_map(&rhs.value, |a, b| a + b)?;
        self.tape.push("add", out, &[self, rhs], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("sub", self, rhs)?;
        let out = self.value.zip_map(&rhs.value, |a, b| a - b)?;
        self.tape.push("sub", out, &[self, rhs], |g, needs| vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))])
    }

    pub fn mul(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("mul", self, rhs)?;
        let out = self.value.zip_map(&rhs.value, |a, b| a * b)?;
        let (a, b) = (self.value.clone(), rhs.value.clone());
        self.tape.push("mul", out, &[self, rhs], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b).expect("shape")),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a).expect("shape")),
            ]
        })
    }

    /// `self + rhs` where `rhs` broadcasts into `self` (right-aligned,
    /// extents equal or 1).
    pub fn add_bcast(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        let plan = BroadcastIndex::plan("add_bcast", self.shape(), rhs.shape())?;
        let r = rhs.value.data();
        let out: Vec<E> = self.value.data().iter().enumerate().map(|(i, &x)| x + r[plan.at(i)]).collect();
        let out = Tensor::from_parts(self.shape().to_vec(), out);
        let rshape = rhs.shape().to_vec();
        self.tape.push("add_bcast", out, &[self, rhs], move |g, needs| {
            let db = needs[1].then(|| {
                let mut acc = vec![E::zero(); rshape.iter().product()];
                for (i, &gv) in g.data().iter().enumerate() {
                    acc[plan.at(i)] += gv;
                }
                Tensor::from_parts(rshape.clone(), acc)
            });
            vec![Some(g.clone()), db]
        })
    }

    /// `self * rhs` where `rhs` broadcasts into `self`.
    pub fn mul_bcast(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        let plan = BroadcastIndex::plan("mul_bcast", self.shape(), rhs.shape())?;
        let r = rhs.value.data();
        let out: Vec<E> = self.value.data().iter().enumerate().map(|(i, &x)| x * r[plan.at(i)]).collect();
        let out = Tensor::from_parts(self.shape().to_vec(), out);
        let rshape = rhs.shape().to_vec();
        let (x, s) = (self.value.clone(), rhs.value.clone());
        self.tape.push("mul_bcast", out, &[self, rhs], move |g, needs| {
            let sd = s.data();
            let dx = needs[0].then(|| {
                let d = g.data().iter().enumerate().map(|(i, &gv)| gv * sd[plan.at(i)]).collect();
                Tensor::from_parts(x.shape().to_vec(), d)
            });
            let ds = needs[1].then(|| {
                let mut acc = vec![E::zero(); rshape.iter().product()];
                for (i, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                    acc[plan.at(i)] += gv * xv;
                }
                Tensor::from_parts(rshape.clone(), acc)
            });
            vec![dx, ds]
        })
    }

    pub fn unary(&self, kind: Unary) -> Result<Var<'t, E>> {
        let out = self.value.map(|v| kind.apply(v));
        let x = self.value.clone();
        self.tape.push(kind.name(), out, &[self], move |g, _| {
            let d = g.data().iter().zip(x.data()).map(|(&gv, &xv)| gv * kind.derivative(xv)).collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), d))]
        })
    }

    pub fn sigmoid(&self) -> Result<Var<'t, E>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn gelu(&self) -> Result<Var<'t, E>> {
        self.unary(Unary::Gelu)
    }

    pub fn relu(&self) -> Result<Var<'t, E>> {
        let Some(mask) = self.tape.relu_mask(&self.value)? else {
            return self.unary(Unary::Relu);
        };
        let gate = |v: E, on: bool| if on { v } else { E::zero() };
        let out = Tensor::from_parts(
            self.shape().to_vec(),
            self.value.data().iter().zip(&mask).map(|(&v, &m)| gate(v, m)).collect(),
        );
        self.tape.push("relu", out, &[self], move |g, _| {
            let d = g.data().iter().zip(&mask).map(|(&v, &m)| gate(v, m)).collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'t, E>> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t, E>> {
        self.unary(Unary::Scale(s))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t, E>> {
        self.unary(Unary::AddScalar(s))
    }

    pub fn neg(&self) -> Result<Var<'t, E>> {
        self.unary(Unary::Neg)
    }

    pub fn abs(&self) -> Result<Var<'t, E>> {
        self.unary(Unary::Abs)
    }

    pub fn square(&self) -> Result<Var<'t, E>> {
        self.unary(Unary::Square)
    }
}
