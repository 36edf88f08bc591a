use crate::error::{Error, Result};

/// Geometry of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub window_size: usize,
    pub shift: usize,
}

impl AttentionConfig {
    /// Shift defaults to half a window.
    pub fn new(num_heads: usize, head_dim: usize, window_size: usize) -> Result<Self> {
        let cfg = Self { embed_dim: num_heads * head_dim, num_heads, head_dim, window_size, shift: window_size / 2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 || self.window_size == 0 {
            return Err(Error::Config(format!("attention extents must be positive: {self:?}")));
        }
        if self.embed_dim != self.num_heads * self.head_dim {
            return Err(Error::Config(format!(
                "embed_dim {} != num_heads {} * head_dim {}",
                self.embed_dim, self.num_heads, self.head_dim
            )));
        }
        if self.shift >= self.window_size {
            return Err(Error::Config(format!(
                "shift {} must be below the window size {}",
                self.shift, self.window_size
            )));
        }
        Ok(())
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window_size * self.window_size
    }

    /// `1 / sqrt(head_dim)`
    pub fn logit_scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let k = self.window_size;
        if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
            return Err(Error::Config(format!("feature map {h}x{w} is not divisible by window size k={k}")));
        }
        Ok(())
    }
}
