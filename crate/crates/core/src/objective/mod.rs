//! Prototypical objective: prototypes, kernel distances, softmax
//! probabilities, the cross-entropy and separation losses, and their
//! gradients.

mod episode;
mod kernel;
mod loss;

pub use episode::{
    central_difference, episode_distances, episode_gradients, episode_loss, episode_predictions,
    finite_diff_gradients, max_relative_error, Gradients, GRADIENT_CHECK_FLOOR,
};
pub(crate) use episode::accuracy_counts;
pub use kernel::{project_cholesky, DistanceKernel};
pub(crate) use kernel::KernelDoc;
pub use loss::{
    class_probabilities, compute_prototypes, prototypical_loss, prototypical_loss_from_distances, separation_penalty,
    LossConfig,
};
