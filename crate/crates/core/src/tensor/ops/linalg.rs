use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{Scalar, Tensor, Var};

/// Operand layout of a (batched) product `a · op(b)`.
struct Plan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    trans_b: bool,
    out_shape: Vec<usize>,
}

fn plan(op: &'static str, a: &[usize], b: &[usize], trans_b: bool) -> Result<Plan> {
    let mismatch = || Error::shape(op, format!("{a:?} x {b:?}{}", if trans_b { "^T" } else { "" }));
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b { (b[b.len() - 1], b[b.len() - 2]) } else { (b[b.len() - 2], b[b.len() - 1]) };
    if bk != k {
        return Err(mismatch());
    }
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let shared_rhs = b_batch.is_empty();
    if !shared_rhs && a_batch != b_batch {
        return Err(mismatch());
    }
    let mut out_shape = a_batch.to_vec();
    out_shape.extend([m, n]);
    Ok(Plan { batch: a_batch.iter().product(), m, k, n, shared_rhs, trans_b, out_shape })
}

impl Plan {
    fn rhs<'a, E>(&self, b: &'a [E], i: usize) -> MatRef<'a, E> {
        let off = if self.shared_rhs { 0 } else { i * self.k * self.n };
        let data = &b[off..off + self.k * self.n];
        if self.trans_b {
            MatRef::rm(data, self.n, self.k).t()
        } else {
            MatRef::rm(data, self.k, self.n)
        }
    }

    fn forward<E: Scalar>(&self, a: &[E], b: &[E]) -> Vec<E> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![E::zero(); self.batch * m * n];
        if self.shared_rhs {
            // one tall product: [batch*m, k] x [k, n]
            gemm(MatRef::rm(a, self.batch * m, k), self.rhs(b, 0), &mut out, false);
        } else {
            for i in 0..self.batch {
                gemm(
                    MatRef::rm(&a[i * m * k..(i + 1) * m * k], m, k),
                    self.rhs(b, i),
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        out
    }

    /// dA = G · op(B)^T
    fn grad_a<E: Scalar>(&self, g: &[E], b: &[E]) -> Vec<E> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut da = vec![E::zero(); self.batch * m * k];
        if self.shared_rhs {
            gemm(MatRef::rm(g, self.batch * m, n), self.rhs(b, 0).t(), &mut da, false);
        } else {
            for i in 0..self.batch {
                gemm(
                    MatRef::rm(&g[i * m * n..(i + 1) * m * n], m, n),
                    self.rhs(b, i).t(),
                    &mut da[i * m * k..(i + 1) * m * k],
                    false,
                );
            }
        }
        da
    }

    /// dB = A^T · G  (or G^T · A for the transposed operand), summed over a
    /// shared right-hand side.
    fn grad_b<E: Scalar>(&self, g: &[E], a: &[E]) -> Vec<E> {
        let (m, k, n) = (self.m, self.k, self.n);
        let nb = if self.shared_rhs { 1 } else { self.batch };
        let mut db = vec![E::zero(); nb * k * n];
        let (rows, blocks) = if self.shared_rhs { (self.batch * m, 1) } else { (m, self.batch) };
        for i in 0..blocks {
            let ga = MatRef::rm(&g[i * rows * n..(i + 1) * rows * n], rows, n);
            let aa = MatRef::rm(&a[i * rows * k..(i + 1) * rows * k], rows, k);
            let dst = &mut db[i * k * n..(i + 1) * k * n];
            if self.trans_b {
                // B is [n, k]
                gemm(ga.t(), aa, dst, false);
            } else {
                gemm(aa.t(), ga, dst, false);
            }
        }
        db
    }
}

impl<'t, E: Scalar> Var<'t, E> {
    /// Batched matrix product `[.., m, k] x [.., k, n]`. The right operand may
    /// also be a plain `[k, n]` matrix shared across the batch.
    pub fn matmul(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.product("matmul", rhs, false)
    }

    /// `self · rhs^T` with `rhs` laid out as `[.., n, k]`.
    pub fn matmul_t(&self, rhs: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.product("matmul_t", rhs, true)
    }

    fn product(&self, op: &'static str, rhs: &Var<'t, E>, trans_b: bool) -> Result<Var<'t, E>> {
        let p = plan(op, self.shape(), rhs.shape(), trans_b)?;
        let out = p.forward(self.value.data(), rhs.value.data());
        let out = Tensor::from_parts(p.out_shape.clone(), out);
        let (a, b) = (self.value.clone(), rhs.value.clone());
        self.tape.push(op, out, &[self, rhs], move |g, needs| {
            vec![
                needs[0].then(|| Tensor::from_parts(a.shape().to_vec(), p.grad_a(g.data(), b.data()))),
                needs[1].then(|| Tensor::from_parts(b.shape().to_vec(), p.grad_b(g.data(), a.data()))),
            ]
        })
    }
}
