//! Reusable statistical building blocks and the built-in test models, from a
//! pure 2-d integrand up to a full nested latent Gaussian model on a small
//! district graph.

mod fig2;
mod gauss_conjugate;
mod mini_elgm;
pub mod registry;
pub mod stats;
pub mod structures;

pub use fig2::{skewnormal_integrand, Fig2Model};
pub use gauss_conjugate::GaussConjugateModel;
pub use mini_elgm::fixture as mini_elgm_fixture;
pub use mini_elgm::{MiniElgmConfig, MiniElgmModel};
