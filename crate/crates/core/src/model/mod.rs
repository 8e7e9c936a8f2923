//! The scaled-skip residual ReLU network and its plain (non-residual)
//! counterpart.
//!
//! ```text
//! x_1     = σ(W_1ᵀ x)
//! x_l     = x_{l−1} + θ·σ(W_lᵀ x_{l−1})     2 ≤ l ≤ L
//! x_{L+1} = σ(W_{L+1}ᵀ x_L)
//! f_W(x)  = vᵀ x_{L+1},   v = (1,…,1,−1,…,−1)
//! ```

mod checkpoint;
mod forward;
mod interlayer;
mod params;
mod tangent;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT,
};
pub use forward::{check_on_sphere, forward, forward_batch, ActivationTrace, BatchTrace, SPHERE_TOL};
pub use interlayer::{all_output_sensitivities, interlayer_norms_batch, output_sensitivity, output_via_split, InterlayerOp};
pub use params::{default_theta, output_signs, Arch, NetworkParams, NetworkShape};
pub use tangent::directional_derivative;
