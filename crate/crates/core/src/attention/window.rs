use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Where the tokens of a [`WindowSet`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    /// Cyclic shift applied before partitioning; 0 for local windows.
    pub shift: usize,
}

impl WindowLayout {
    pub fn new(batch: usize, height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || !height.is_multiple_of(window) || !width.is_multiple_of(window) {
            return Err(Error::Config(format!("window partition: H={height}, W={width} not divisible by k={window}")));
        }
        if shift >= window {
            return Err(Error::Config(format!("window shift {shift} >= k={window}")));
        }
        Ok(Self { batch, height, width, window, shift })
    }

    pub fn shifted(&self) -> bool {
        self.shift != 0
    }

    pub fn windows_per_image(&self) -> usize {
        (self.height / self.window) * (self.width / self.window)
    }

    pub fn num_windows(&self) -> usize {
        self.batch * self.windows_per_image()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// For each window-major token row, the `[B, H, W]` row it reads.
    fn source_rows(&self) -> Vec<usize> {
        let (h, w, k, s) = (self.height, self.width, self.window, self.shift);
        let mut rows = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            for wy in 0..h / k {
                for wx in 0..w / k {
                    for i in 0..k {
                        let y = (wy * k + i + s) % h;
                        for j in 0..k {
                            let x = (wx * k + j + s) % w;
                            rows.push((b * h + y) * w + x);
                        }
                    }
                }
            }
        }
        rows
    }
}

/// Window-major tokens `[num_windows * B, k*k, D]` plus their layout.
///
/// Reversing consumes the tokens, so a set can be reversed only once.
pub struct WindowSet<'t, E: Scalar> {
    tokens: Option<Var<'t, E>>,
    layout: WindowLayout,
}

impl<'t, E: Scalar> WindowSet<'t, E> {
    pub fn layout(&self) -> WindowLayout {
        self.layout
    }

    pub fn tokens(&self) -> Result<&Var<'t, E>> {
        self.tokens.as_ref().ok_or_else(|| Error::Contract("window set was already reversed".into()))
    }

    /// Same layout with new per-window tokens, e.g. attention outputs. The
    /// channel extent may change.
    pub fn with_tokens(&self, tokens: Var<'t, E>) -> Result<WindowSet<'t, E>> {
        let s = tokens.shape();
        if s.len() != 3 || s[0] != self.layout.num_windows() || s[1] != self.layout.tokens_per_window() {
            return Err(Error::shape(
                "window_set",
                format!(
                    "tokens {s:?} do not fit {} windows of {} tokens",
                    self.layout.num_windows(),
                    self.layout.tokens_per_window()
                ),
            ));
        }
        Ok(WindowSet { tokens: Some(tokens), layout: self.layout })
    }
}

/// Splits `[B, H, W, D]` into non-overlapping `k x k` windows. Shifted
/// windows roll the map by `(-k/2, -k/2)` first.
pub fn window_partition<'t, E: Scalar>(x: &Var<'t, E>, k: usize, shifted: bool) -> Result<WindowSet<'t, E>> {
    window_partition_shifted_by(x, k, if shifted { k / 2 } else { 0 })
}

pub fn window_partition_shifted_by<'t, E: Scalar>(x: &Var<'t, E>, k: usize, shift: usize) -> Result<WindowSet<'t, E>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("window_partition", format!("expected [B, H, W, D], got {s:?}")));
    }
    let layout = WindowLayout::new(s[0], s[1], s[2], k, shift)?;
    let out_shape = [layout.num_windows(), k * k, s[3]];
    let tokens = x.gather_rows("window_partition", Arc::new(layout.source_rows()), &out_shape)?;
    Ok(WindowSet { tokens: Some(tokens), layout })
}

/// Inverse of [`window_partition`], undoing the shift. Returns `[B, H, W, D]`.
pub fn window_reverse<'t, E: Scalar>(set: &mut WindowSet<'t, E>) -> Result<Var<'t, E>> {
    let tokens = set.tokens.take().ok_or_else(|| Error::Contract("window set was already reversed".into()))?;
    let l = set.layout;
    let d = *tokens.shape().last().unwrap_or(&1);
    let src = l.source_rows();
    let mut inverse = vec![0; src.len()];
    for (dst, &from) in src.iter().enumerate() {
        inverse[from] = dst;
    }
    tokens.gather_rows("window_reverse", Arc::new(inverse), &[l.batch, l.height, l.width, d])
}
