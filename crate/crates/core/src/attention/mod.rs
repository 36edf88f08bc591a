//! Windowed multi-head attention with a learned gate between self-attention
//! on the low-resolution stream and cross-attention driven by reference
//! queries.

mod config;
mod encoding;
mod gated;
mod window;

pub use config::AttentionConfig;
pub use encoding::{spe, RelPosBias};
pub use gated::{
    attention_maps, concat_heads, gated_double_attention, merge_heads, qkv_project, split_heads, Affine, AttentionMaps,
    Gate, Heads,
};
pub use window::{window_partition, window_partition_shifted_by, window_reverse, WindowLayout, WindowSet};
