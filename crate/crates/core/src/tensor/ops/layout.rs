use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::value::numel_of;
use crate::tensor::{Scalar, Tensor, Var};

/// Flat source index of every output element of `permute(shape, axes)`.
pub(crate) fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for ax in (0..rank.saturating_sub(1)).rev() {
        in_strides[ax] = in_strides[ax + 1] * shape[ax + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel_of(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Index map of the sub-pixel rearrangement `[B, C r^2, H, W] -> [B, C, rH, rW]`.
/// Output `(b, c, r*i + dy, r*j + dx)` reads input channel `c r^2 + dy r + dx`
/// at `(i, j)`.
pub(crate) fn pixel_shuffle_index(shape: &[usize], r: usize) -> Vec<usize> {
    let (b, cr2, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cr2 / (r * r);
    let mut map = Vec::with_capacity(b * cr2 * h * w);
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..h * r {
                let (i, dy) = (oy / r, oy % r);
                for ox in 0..w * r {
                    let (j, dx) = (ox / r, ox % r);
                    let src_c = ci * r * r + dy * r + dx;
                    map.push(((bi * cr2 + src_c) * h + i) * w + j);
                }
            }
        }
    }
    map
}

pub(crate) fn invert_permutation(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; map.len()];
    for (dst, &src) in map.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

impl<'t, E: Scalar> Var<'t, E> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, E>> {
        let out = self.value.reshape(shape)?;
        let in_shape = self.shape().to_vec();
        self.tape.push("reshape", out, &[self], move |g, _| vec![Some(g.reshape(&in_shape).expect("reshape back"))])
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(
                "permute",
                format!("axes {axes:?} are not a permutation for shape {:?}", self.shape()),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let map = permute_index(self.shape(), axes);
        self.gather_op("permute", Arc::new(map), &out_shape)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Var<'t, E>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// `out[i] = self[index[i]]`; the backward pass scatter-adds. The index
    /// map may repeat sources (e.g. a gathered bias table).
    pub fn gather(&self, index: Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Var<'t, E>> {
        if numel_of(out_shape) != index.len() {
            return Err(Error::shape("gather", format!("{} indices for output shape {out_shape:?}", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= self.numel()) {
            return Err(Error::shape("gather", format!("index {bad} out of range for {:?}", self.shape())));
        }
        self.gather_op("gather", index, out_shape)
    }

    pub(crate) fn gather_op(
        &self,
        op: &'static str,
        index: Arc<Vec<usize>>,
        out_shape: &[usize],
    ) -> Result<Var<'t, E>> {
        let src = self.value.data();
        let out = Tensor::from_parts(out_shape.to_vec(), index.iter().map(|&i| src[i]).collect());
        let in_shape = self.shape().to_vec();
        self.tape.push(op, out, &[self], move |g, _| {
            let mut acc = vec![E::zero(); numel_of(&in_shape)];
            for (&i, &gv) in index.iter().zip(g.data()) {
                acc[i] += gv;
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), acc))]
        })
    }

    /// Gathers whole rows of the trailing axis: `out[r, :] = self[index[r], :]`.
    /// `index` must be a permutation-like map into the leading rows; repeats
    /// scatter-add on the way back.
    pub(crate) fn gather_rows(
        &self,
        op: &'static str,
        index: Arc<Vec<usize>>,
        out_shape: &[usize],
    ) -> Result<Var<'t, E>> {
        let row = *self.shape().last().unwrap_or(&1);
        let rows = self.numel() / row;
        if numel_of(out_shape) != index.len() * row || index.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                op,
                format!("row map of {} rows for {:?} -> {out_shape:?}", index.len(), self.shape()),
            ));
        }
        let src = self.value.data();
        let mut out = Vec::with_capacity(index.len() * row);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let in_shape = self.shape().to_vec();
        let out = Tensor::from_parts(out_shape.to_vec(), out);
        self.tape.push(op, out, &[self], move |g, _| {
            let gd = g.data();
            let mut acc = vec![E::zero(); rows * row];
            for (r, &i) in index.iter().enumerate() {
                for (a, &b) in acc[i * row..(i + 1) * row].iter_mut().zip(&gd[r * row..(r + 1) * row]) {
                    *a += b;
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), acc))]
        })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_w: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total_w);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_w / inner;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        let tape = first.tape;
        tape.push("concat", Tensor::from_parts(shape, out), parts, move |g, needs| {
            let gd = g.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(shapes.len());
            for ((s, &w), &need) in shapes.iter().zip(&widths).zip(needs) {
                grads.push(need.then(|| {
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let start = o * total_w + offset;
                        d.extend_from_slice(&gd[start..start + w]);
                    }
                    Tensor::from_parts(s.clone(), d)
                }));
                offset += w;
            }
            grads
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, E>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            index.extend(base..base + len * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather_op("narrow", Arc::new(index), &out_shape)
    }

    /// Zero padding of the two trailing axes: `(top, bottom, left, right)`.
    pub fn zero_pad(&self, pad: (usize, usize, usize, usize)) -> Result<Var<'t, E>> {
        let s = self.shape().to_vec();
        if s.len() < 2 {
            return Err(Error::shape("zero_pad", format!("rank {} input", s.len())));
        }
        let (top, bottom, left, right) = pad;
        let r = s.len();
        let (h, w) = (s[r - 2], s[r - 1]);
        let (ho, wo) = (h + top + bottom, w + left + right);
        let outer: usize = s[..r - 2].iter().product();
        let src = self.value.data();
        let mut out = vec![E::zero(); outer * ho * wo];
        for o in 0..outer {
            for y in 0..h {
                let dst = (o * ho + y + top) * wo + left;
                out[dst..dst + w].copy_from_slice(&src[(o * h + y) * w..(o * h + y + 1) * w]);
            }
        }
        let mut out_shape = s.clone();
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        self.tape.push("zero_pad", Tensor::from_parts(out_shape, out), &[self], move |g, _| {
            let gd = g.data();
            let mut d = Vec::with_capacity(outer * h * w);
            for o in 0..outer {
                for y in 0..h {
                    let start = (o * ho + y + top) * wo + left;
                    d.extend_from_slice(&gd[start..start + w]);
                }
            }
            vec![Some(Tensor::from_parts(s.clone(), d))]
        })
    }

    /// Sub-pixel rearrangement `[B, C r^2, H, W] -> [B, C, rH, rW]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'t, E>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
            return Err(Error::Config(format!(
                "pixel_shuffle: channel extent of {s:?} is not divisible by r^2 = {}",
                r * r
            )));
        }
        let map = pixel_shuffle_index(s, r);
        let out_shape = [s[0], s[1] / (r * r), s[2] * r, s[3] * r];
        self.gather_op("pixel_shuffle", Arc::new(map), &out_shape)
    }

    /// Exact inverse of [`pixel_shuffle`](Self::pixel_shuffle).
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<'t, E>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
            return Err(Error::Config(format!("pixel_unshuffle: spatial extents of {s:?} are not divisible by {r}")));
        }
        let packed = [s[0], s[1] * r * r, s[2] / r, s[3] / r];
        let map = invert_permutation(&pixel_shuffle_index(&packed, r));
        self.gather_op("pixel_unshuffle", Arc::new(map), &packed)
    }

    /// `[B, C, H, W] -> [B, H*W, C]`
    pub fn grid_to_tokens(&self) -> Result<Var<'t, E>> {
        let s = self.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape("grid_to_tokens", format!("{s:?} is not [B, C, H, W]")));
        }
        self.reshape(&[s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])
    }

    /// `[B, H*W, C] -> [B, C, H, W]`
    pub fn tokens_to_grid(&self, h: usize, w: usize) -> Result<Var<'t, E>> {
        let s = self.shape().to_vec();
        if s.len() != 3 || s[1] != h * w {
            return Err(Error::shape("tokens_to_grid", format!("{s:?} does not hold a {h}x{w} grid")));
        }
        self.permute(&[0, 2, 1])?.reshape(&[s[0], s[2], h, w])
    }
}
