//! Noise schedules, Gaussian and multinomial diffusion, and training losses.

mod gaussian;
mod losses;
mod multinomial;
mod schedule;

pub use gaussian::{gaussian_forward, gaussian_reverse_mean, gaussian_reverse_step};
pub use losses::{
    categorical_loss, combine_losses, loss_multinomial, loss_simple, loss_total, masked_mse, CategoricalBatch,
};
pub use multinomial::{
    argmax, categorical_kl, multinomial_forward_sample, multinomial_marginal, multinomial_posterior,
    multinomial_posterior_into, multinomial_reverse_step, sample_categorical, KL_FLOOR,
};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleKind, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
