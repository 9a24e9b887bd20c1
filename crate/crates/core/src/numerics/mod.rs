//! Dense linear algebra, seeded random numbers and symmetric eigensolvers.

pub mod eigen;
pub mod gradcheck;
pub mod matrix;
pub mod prng;

pub use eigen::{covariance, pca, pca_spectrum, symmetric_eigen, Pca, SymmetricEigen};
pub use matrix::{dist2, dot, norm2, Matrix};
pub use prng::{gaussian, Prng};
