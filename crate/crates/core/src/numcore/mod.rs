//! Dense numerics, seeded randomness and reverse-mode differentiation.

mod matrix;
mod random;
mod tape;

pub use matrix::{gemm, Matrix, Trans};
pub use random::{derive_seed, Rng};
pub use tape::{Gradients, Tape, Var};

/// Draws one negative-binomial count (see [`Rng::gamma_poisson`]).
pub fn sample_gamma_poisson(mu: f64, phi: f64, rng: &mut Rng) -> crate::Result<u64> {
    rng.gamma_poisson(mu, phi)
}
