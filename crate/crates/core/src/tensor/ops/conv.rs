//! 2-D cross-correlation via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub(crate) fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::shape("conv2d", format!("input {x:?} vs kernel {w:?}")));
        }
        Self::with_input(x[0], x[1], x[2], x[3], w, stride, pad)
    }

    pub(crate) fn with_input(
        batch: usize,
        cin: usize,
        h: usize,
        wd: usize,
        w: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        let (kh, kw) = (w[2], w[3]);
        let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
        if kh > hp || kw > wp {
            return Err(Error::Config(format!("conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output extent is not exact: input {h}x{wd}, kernel {kh}x{kw}, stride {stride}, padding {pad}"
            )));
        }
        Ok(ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout: w[0],
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.p()
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.ho, self.wo]
    }

    fn im2col<E: Scalar>(&self, x: &[E], cols: &mut [E]) {
        let (p, s, pad) = (self.p(), self.stride as isize, self.pad as isize);
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ki as isize - pad;
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = E::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - pad;
                            *d = if ix < 0 || ix >= self.w as isize { E::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im<E: Scalar>(&self, cols: &[E], dx: &mut [E]) {
        let (p, s, pad) = (self.p(), self.stride as isize, self.pad as isize);
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ki as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * s + kj as isize - pad;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// y = W * x, no bias.
    pub(crate) fn forward<E: Scalar>(&self, x: &[E], w: &[E]) -> Vec<E> {
        let (k, p) = (self.k(), self.p());
        let mut out = vec![E::zero(); self.batch * self.out_len()];
        let mut cols = if self.pointwise() { Vec::new() } else { vec![E::zero(); k * p] };
        let wm = MatRef::rm(w, self.cout, k);
        for b in 0..self.batch {
            let xb = &x[b * self.in_len()..(b + 1) * self.in_len()];
            let dst = &mut out[b * self.out_len()..(b + 1) * self.out_len()];
            if self.pointwise() {
                gemm(wm, MatRef::rm(xb, k, p), dst, false);
            } else {
                self.im2col(xb, &mut cols);
                gemm(wm, MatRef::rm(&cols, k, p), dst, false);
            }
        }
        out
    }

    /// dx = W^T * dy scattered back to the input grid.
    pub(crate) fn grad_input<E: Scalar>(&self, dy: &[E], w: &[E]) -> Vec<E> {
        let (k, p) = (self.k(), self.p());
        let mut dx = vec![E::zero(); self.batch * self.in_len()];
        let wt = MatRef::rm(w, self.cout, k).t();
        let mut cols = vec![E::zero(); k * p];
        for b in 0..self.batch {
            let dyb = MatRef::rm(&dy[b * self.out_len()..(b + 1) * self.out_len()], self.cout, p);
            let dst = &mut dx[b * self.in_len()..(b + 1) * self.in_len()];
            if self.pointwise() {
                gemm(wt, dyb, dst, false);
            } else {
                gemm(wt, dyb, &mut cols, false);
                self.col2im(&cols, dst);
            }
        }
        dx
    }

    /// dW = sum_b dy_b * cols_b^T
    pub(crate) fn grad_weight<E: Scalar>(&self, x: &[E], dy: &[E]) -> Vec<E> {
        let (k, p) = (self.k(), self.p());
        let mut dw = vec![E::zero(); self.cout * k];
        let mut cols = if self.pointwise() { Vec::new() } else { vec![E::zero(); k * p] };
        for b in 0..self.batch {
            let xb = &x[b * self.in_len()..(b + 1) * self.in_len()];
            let dyb = MatRef::rm(&dy[b * self.out_len()..(b + 1) * self.out_len()], self.cout, p);
            if self.pointwise() {
                gemm(dyb, MatRef::rm(xb, k, p).t(), &mut dw, b > 0);
            } else {
                self.im2col(xb, &mut cols);
                gemm(dyb, MatRef::rm(&cols, k, p).t(), &mut dw, b > 0);
            }
        }
        dw
    }
}

fn add_channel_bias<E: Scalar>(out: &mut [E], bias: &[E], plane: usize) {
    for (chunk, i) in out.chunks_mut(plane).zip((0..bias.len()).cycle()) {
        let b = bias[i];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

impl<'t, E: Scalar> Var<'t, E> {
    /// Cross-correlation of `[B, C_in, H, W]` with `[C_out, C_in, kh, kw]`.
    ///
    /// The output extent `(H + 2p - kh) / stride + 1` must be exact.
    pub fn conv2d(
        &self,
        weight: &Var<'t, E>,
        bias: Option<&Var<'t, E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>> {
        let geom = ConvGeom::new(self.shape(), weight.shape(), stride, padding)?;
        if let Some(b) = bias {
            if b.shape() != [geom.cout] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {} output channels", b.shape(), geom.cout)));
            }
        }
        let mut out = geom.forward(self.value.data(), weight.value.data());
        if let Some(b) = bias {
            add_channel_bias(&mut out, b.value.data(), geom.ho * geom.wo);
        }
        let out = Tensor::from_parts(geom.out_shape(), out);
        let (x, w) = (self.value.clone(), weight.value.clone());
        let backward = move |g: &Tensor<E>, needs: &[bool]| {
            let dy = g.data();
            let mut grads = vec![
                needs[0].then(|| Tensor::from_parts(x.shape().to_vec(), geom.grad_input(dy, w.data()))),
                needs[1].then(|| Tensor::from_parts(w.shape().to_vec(), geom.grad_weight(x.data(), dy))),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let plane = geom.ho * geom.wo;
                    let mut db = vec![E::zero(); geom.cout];
                    for (i, chunk) in dy.chunks(plane).enumerate() {
                        db[i % geom.cout] += chunk.iter().copied().sum();
                    }
                    Tensor::from_parts(vec![geom.cout], db)
                }));
            }
            grads
        };
        match bias {
            Some(b) => self.tape.push("conv2d", out, &[self, weight, b], backward),
            None => self.tape.push("conv2d", out, &[self, weight], backward),
        }
    }

    /// Adjoint of [`conv2d`](Self::conv2d) with respect to its input: maps an
    /// output-space gradient `[B, C_out, Ho, Wo]` back to `[B, C_in, H, W]`.
    ///
    /// Differentiable in both the incoming gradient and the kernel, which is
    /// what gradient penalties on a convolutional critic need.
    pub fn conv2d_input_adjoint(
        &self,
        weight: &Var<'t, E>,
        input_hw: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>> {
        let dy_shape = self.shape();
        let ws = weight.shape();
        if dy_shape.len() != 4 || ws.len() != 4 || dy_shape[1] != ws[0] {
            return Err(Error::shape("conv2d_input_adjoint", format!("gradient {dy_shape:?} vs kernel {ws:?}")));
        }
        let geom = ConvGeom::with_input(dy_shape[0], ws[1], input_hw.0, input_hw.1, ws, stride, padding)?;
        if geom.ho != dy_shape[2] || geom.wo != dy_shape[3] {
            return Err(Error::shape(
                "conv2d_input_adjoint",
                format!("gradient {dy_shape:?} does not match input {input_hw:?}"),
            ));
        }
        let out = geom.grad_input(self.value.data(), weight.value.data());
        let out = Tensor::from_parts(vec![geom.batch, geom.cin, geom.h, geom.w], out);
        let (dy, w) = (self.value.clone(), weight.value.clone());
        self.tape.push("conv2d_input_adjoint", out, &[self, weight], move |g, needs| {
            vec![
                needs[0].then(|| Tensor::from_parts(dy.shape().to_vec(), geom.forward(g.data(), w.data()))),
                needs[1].then(|| Tensor::from_parts(w.shape().to_vec(), geom.grad_weight(g.data(), dy.data()))),
            ]
        })
    }
}
