//! K-means clustering of probability distributions through kernel mean
//! embeddings, with a 2-Wasserstein baseline.
//!
//! Distributions are uniform mixtures (exact Gram matrices) or samples
//! (estimated ones). See the `book/` directory for a guided tour.

pub mod distributions;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gram;
pub mod io;
pub mod kernels;
pub mod kmeans;
pub mod pearson;
pub mod quadrature;
pub mod sar;
pub mod seeds;
pub mod simgen;
pub mod validity;
pub mod wasserstein;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/distributions.md")]
    struct Distributions;
    #[doc = include_str!("../../../book/src/kernels.md")]
    struct Kernels;
    #[doc = include_str!("../../../book/src/gram.md")]
    struct Gram;
    #[doc = include_str!("../../../book/src/wasserstein.md")]
    struct Wasserstein;
    #[doc = include_str!("../../../book/src/kmeans.md")]
    struct Kmeans;
    #[doc = include_str!("../../../book/src/validity.md")]
    struct Validity;
    #[doc = include_str!("../../../book/src/generators.md")]
    struct Generators;
    #[doc = include_str!("../../../book/src/sar.md")]
    struct Sar;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/formats.md")]
    struct Formats;
}
