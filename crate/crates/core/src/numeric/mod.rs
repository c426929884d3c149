//! Numeric primitives shared by every other module.

mod kmeans;
mod matrix;
mod rng;

pub use kmeans::{kmeans, kmeans_best_of, KMeansResult};
pub use matrix::{cosine_matrix, dot, kl_divergence, logsumexp, logsumexp_rows, softmax_rows, DenseMatrix};
pub(crate) use matrix::softmax_in_place;
pub use rng::Rng;
