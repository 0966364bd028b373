//! Dense matrices, the symmetric eigensolver and the seeded RNG.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, sym_eigen_with_budget, SymEigen, DEFAULT_MAX_SWEEPS};
pub use matrix::Matrix;
pub use rng::Rng;
