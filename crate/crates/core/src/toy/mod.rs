//! Synthetic tasks small enough to train in seconds on a CPU.

mod gaussian;
mod moving_square;

pub use gaussian::{sample_gaussian_toy, train_gaussian_toy, GaussianToyConfig, GaussianVelocity};
pub use moving_square::{
    loss_drop, moving_square_clip, sample_moving_square, train_moving_square, MovingSquareConfig,
};
