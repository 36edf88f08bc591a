use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

const LAYER_NORM_EPS: f64 = 1e-5;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, E: Scalar> Var<'t, E> {
    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Result<Var<'t, E>> {
        let out = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.push("sum", out, &[self], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(&self) -> Result<Var<'t, E>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Per-channel spatial mean `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn global_avg_pool(&self) -> Result<Var<'t, E>> {
        let s = self.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("{s:?} is not [B, C, H, W]")));
        }
        let plane = s[2] * s[3];
        let inv = E::of(1.0 / plane as f64);
        let out: Vec<E> = self.value.data().chunks(plane).map(|c| c.iter().copied().sum::<E>() * inv).collect();
        let out = Tensor::from_parts(vec![s[0], s[1], 1, 1], out);
        self.tape.push("global_avg_pool", out, &[self], move |g, _| {
            let d = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, plane)).collect();
            vec![Some(Tensor::from_parts(s.clone(), d))]
        })
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, E>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value.data();
        let mut y = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut m = E::neg_infinity();
                for j in 0..n {
                    m = m.max(x[at(j)]);
                }
                let mut z = E::zero();
                for j in 0..n {
                    let e = (x[at(j)] - m).exp();
                    y[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    y[at(j)] /= z;
                }
            }
        }
        let y = Tensor::from_parts(shape.clone(), y);
        let saved = y.clone();
        self.tape.push("softmax", y, &[self], move |g, _| {
            let (gd, yd) = (g.data(), saved.data());
            let mut dx = vec![E::zero(); gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let dot: E = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), dx))]
        })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<'t, E>, beta: &Var<'t, E>) -> Result<Var<'t, E>> {
        let shape = self.shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("affine {:?}/{:?} for width {d}", gamma.shape(), beta.shape()),
            ));
        }
        let rows = self.numel() / d;
        let (x, gm, bt) = (self.value.data(), gamma.value.data(), beta.value.data());
        let mut xhat = vec![E::zero(); x.len()];
        let mut rstd = vec![E::zero(); rows];
        let mut out = vec![E::zero(); x.len()];
        let inv_d = E::of(1.0 / d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<E>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_d;
            let rs = E::one() / (var + E::of(LAYER_NORM_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gm[j] + bt[j];
            }
        }
        let out = Tensor::from_parts(shape.clone(), out);
        let gamma_v = gamma.value.clone();
        self.tape.push("layer_norm", out, &[self, gamma, beta], move |g, needs| {
            let (gd, gm) = (g.data(), gamma_v.data());
            let dx = needs[0].then(|| {
                let mut dx = vec![E::zero(); gd.len()];
                for r in 0..rows {
                    let mut m1 = E::zero();
                    let mut m2 = E::zero();
                    for j in 0..d {
                        let dh = gd[r * d + j] * gm[j];
                        m1 += dh;
                        m2 += dh * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for j in 0..d {
                        let dh = gd[r * d + j] * gm[j];
                        dx[r * d + j] = rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            let mut dgamma = vec![E::zero(); d];
            let mut dbeta = vec![E::zero(); d];
            if needs[1] || needs[2] {
                for r in 0..rows {
                    for j in 0..d {
                        dgamma[j] += gd[r * d + j] * xhat[r * d + j];
                        dbeta[j] += gd[r * d + j];
                    }
                }
            }
            vec![
                dx,
                needs[1].then(|| Tensor::from_parts(vec![d], dgamma)),
                needs[2].then(|| Tensor::from_parts(vec![d], dbeta)),
            ]
        })
    }

    /// Euclidean norm over the trailing `n_trailing` axes, keeping the
    /// leading ones. The gradient at a zero norm is taken as zero.
    pub fn norm_trailing(&self, n_trailing: usize) -> Result<Var<'t, E>> {
        let shape = self.shape().to_vec();
        if n_trailing == 0 || n_trailing > shape.len() {
            return Err(Error::shape("norm_trailing", format!("{n_trailing} trailing axes of {shape:?}")));
        }
        let lead = shape[..shape.len() - n_trailing].to_vec();
        let inner: usize = shape[shape.len() - n_trailing..].iter().product();
        let norms: Vec<E> =
            self.value.data().chunks(inner).map(|c| c.iter().map(|&v| v * v).sum::<E>().sqrt()).collect();
        let out = Tensor::from_parts(lead, norms.clone());
        let x = self.value.clone();
        self.tape.push("norm", out, &[self], move |g, _| {
            let mut dx = vec![E::zero(); x.numel()];
            for (r, (chunk, &nrm)) in x.data().chunks(inner).zip(&norms).enumerate() {
                if nrm > E::zero() {
                    let s = g.data()[r] / nrm;
                    for (d, &v) in dx[r * inner..(r + 1) * inner].iter_mut().zip(chunk) {
                        *d = s * v;
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), dx))]
        })
    }

    /// Sum over the trailing `n_trailing` axes, keeping the leading ones.
    pub fn sum_trailing(&self, n_trailing: usize) -> Result<Var<'t, E>> {
        let shape = self.shape().to_vec();
        if n_trailing == 0 || n_trailing > shape.len() {
            return Err(Error::shape("sum_trailing", format!("{n_trailing} trailing axes of {shape:?}")));
        }
        let lead = shape[..shape.len() - n_trailing].to_vec();
        let inner: usize = shape[shape.len() - n_trailing..].iter().product();
        let sums = self.value.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
        let out = Tensor::from_parts(lead, sums);
        self.tape.push("sum_trailing", out, &[self], move |g, _| {
            let d = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, inner)).collect();
            vec![Some(Tensor::from_parts(shape.clone(), d))]
        })
    }
}
