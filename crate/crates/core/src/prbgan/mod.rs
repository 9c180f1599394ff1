//! Adversarial objectives and training steps for deterministic and
//! MC-dropout GANs.
//!
//! Every objective is minimized: discriminator and generator losses are the
//! negated log-likelihood objectives of the ascent formulation. The KL term
//! of the variational objective is the optimizer's weight decay.

mod config;
mod losses;
mod model;
mod sliced;
mod step;

pub use config::{GanConfig, Variant};
pub use losses::{
    disc_forward, disc_loss_ls, disc_loss_ns, disc_loss_v1, disc_loss_v1_sample, gen_loss_ls, gen_loss_ns, gen_loss_v1, gen_loss_v2, score,
    variance_reward, weighted_logit, DiscOutput,
};
pub use model::{mlp_var_list, DiscParams, DiscVars, GanModel, Networks};
pub use sliced::{normalize_projections, random_projections, sliced_w_distance, sliced_w_graph, SlicedW};
pub use step::{
    disc_gradients, disc_step, gen_gradients, gen_step, generate, prb_sliced_w_distance, sample_generator, stream, StepReport, StepRng,
    STREAM_DATA, STREAM_DISC_MASKS, STREAM_EVAL, STREAM_EVAL_MASKS, STREAM_GEN_MASKS, STREAM_INIT, STREAM_LATENT, STREAM_PROJECTIONS,
};
