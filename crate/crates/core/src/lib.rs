//! Matching transformations between dynamical systems built from Koopman
//! eigenfunctions.
//!
//! Two systems `ẋ = F¹(x)` and `ẏ = F²(y)` that are orbit equivalent through a
//! homeomorphism `h` share Koopman eigenvalues, and their eigenfunctions are
//! related by `g¹ = g² ∘ h`. This crate turns that relation around: given
//! (or after computing) eigenfunctions of both systems, it reconstructs `h`.
//!
//! * [`dynsys`]: vector fields, the system catalog, adaptive integration and
//!   sampling of flow pairs.
//! * [`keig`]: closed-form eigenfunctions, 1D integrating-factor quadrature,
//!   method of characteristics and the PDE residual check.
//! * [`matching`]: `h = G²⁻¹ ∘ G¹` from eigenfunction stacks, conjugacy defect,
//!   push-forward fields and composition.
//! * [`edmd`]: dictionaries, generator projection, least-squares Koopman
//!   matrices, left eigendecomposition and spectrum pairing.
//! * [`edmdm`]: the matching reconstruction `h = B V₂⁻¹ D V₁ Ψ`.
//! * [`dictlearn`]: a shared neural dictionary trained on data from both
//!   systems, with the similarity-regularised K step.
//! * [`laplace`]: Laplace averages and level-set continuation.
//!
//! Batch loops run on rayon when the `parallel` feature is enabled (the
//! default); see [`par`].

pub mod catalog;
pub mod dictlearn;
pub mod domain;
pub mod dynsys;
pub mod edmd;
pub mod edmdm;
pub mod error;
pub mod io;
pub mod keig;
pub mod laplace;
pub mod linalg;
pub mod matching;
pub mod par;
pub mod poly;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// A point in ℝᵈ.
pub type Point = Vec<f64>;
