//! The U-shaped restoration network: blocks, model, presets and counting.

pub mod config;
pub mod count;
pub mod model;
pub mod params;

pub use config::{ModelConfig, SCALES};
pub use count::{conv_params, count_params_flops, CountItem, CountReport};
pub use model::{block_forward, ffn_forward, irblock_forward, model_forward, ModelOutput, Recorder};
pub use params::{param_specs, softmax_invariant_coords, Bound, Init, ModelState, ParamSpec, ParamStore};
