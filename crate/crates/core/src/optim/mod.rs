//! Loss, optimizer and the finite-difference gradient checker.

mod adam;
mod gradcheck;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, gradient_check_at, relative_error, FD_STEP};
pub use loss::{cross_entropy, LossValue, PROB_FLOOR};
