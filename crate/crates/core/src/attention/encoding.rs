use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// 2-D sinusoidal position table `[H*W, D]`.
///
/// The first `D/2` channels encode the row, the rest the column. Within each
/// half, channel `2i` is `sin(p * w_i)` and `2i+1` is `cos(p * w_i)` with
/// `w_i = 10000^(-2i/(D/2))`.
pub fn spe<E: Scalar>(h: usize, w: usize, d: usize) -> Result<Tensor<E>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("sinusoidal encoding needs an even width, got {d}")));
    }
    let half = d / 2;
    let enc = |pos: usize, c: usize| {
        let i = c / 2;
        let freq = 10000f64.powf(-2.0 * i as f64 / half as f64);
        let a = pos as f64 * freq;
        if c.is_multiple_of(2) {
            a.sin()
        } else {
            a.cos()
        }
    };
    let mut data = Vec::with_capacity(h * w * d);
    for y in 0..h {
        for x in 0..w {
            data.extend((0..half).map(|c| E::of(enc(y, c))));
            data.extend((0..d - half).map(|c| E::of(enc(x, c))));
        }
    }
    Tensor::new(&[h * w, d], data)
}

/// Relative position bias for `k x k` windows.
///
/// A learnable table `[N_h, (2k-1)^2]` is gathered to `[N_h, k^2, k^2]`:
/// the bias between tokens `(y1, x1)` and `(y2, x2)` is the table row for
/// offset `(y1 - y2, x1 - x2)`.
#[derive(Clone, Debug)]
pub struct RelPosBias {
    window: usize,
    index: Arc<Vec<usize>>,
}

impl RelPosBias {
    pub fn new(window: usize) -> Self {
        let k = window;
        let side = 2 * k - 1;
        let mut index = Vec::with_capacity(k.pow(4));
        for p in 0..k * k {
            for q in 0..k * k {
                let dy = p / k + k - 1 - q / k;
                let dx = p % k + k - 1 - q % k;
                index.push(dy * side + dx);
            }
        }
        Self { window, index: Arc::new(index) }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn table_len(&self) -> usize {
        (2 * self.window - 1).pow(2)
    }

    /// Table row used for the token pair `(p, q)`.
    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn gather<'t, E: Scalar>(&self, table: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = table.shape();
        if s.len() != 2 || s[1] != self.table_len() {
            return Err(Error::shape("rel_pos_bias", format!("table {s:?}, expected [N_h, {}]", self.table_len())));
        }
        let (heads, len, t) = (s[0], s[1], self.window * self.window);
        let mut full = Vec::with_capacity(heads * self.index.len());
        for h in 0..heads {
            full.extend(self.index.iter().map(|&i| h * len + i));
        }
        table.gather(Arc::new(full), &[heads, t, t])
    }
}
