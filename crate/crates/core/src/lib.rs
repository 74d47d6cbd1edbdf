//! Desk-scale laboratory for distribution-matching training-data synthesis.
//!
//! Small conditional diffusion models are trained on synthetic
//! class-conditional mixtures, used to synthesize labeled training sets, and
//! the synthetic data is scored by downstream classifier accuracy, kernel
//! discrepancy against real data, generalization-bound experiments and
//! membership-inference attacks.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`nets`] | dense networks with explicit tapes, Adam/SGD, time embeddings, checkpoints |
//! | [`diffusion`] | noise schedule, forward marginal, denoising loss, guided ancestral sampling |
//! | [`matching`] | MMD estimators, batch MMD loss, combined objective, synthesis report |
//! | [`conditioning`] | class/visual/null conditions for classifier-free guidance |
//! | [`theory`] | finite-class generalization bound and Hoeffding Monte-Carlo |
//! | [`taskbench`] | target tasks, generator training, synthesis, experiment arms |
//! | [`privacy`] | LiRA membership inference against direct and synthetic training |
//! | [`cli`] | configuration, run records, CSV/SVG reports, command dispatch |

pub mod cli;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod matching;
pub mod nets;
pub mod privacy;
pub mod rng;
pub mod taskbench;
pub mod theory;

pub use error::{Error, Result};
