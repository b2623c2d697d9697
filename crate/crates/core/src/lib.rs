//! Black-box adversarial attack toolkit built around a distribution-learning
//! evolution-strategy attack.
//!
//! Instead of searching for a single adversarial point, the main attack
//! ([`nattack::run_nattack`]) learns a Gaussian `N(mu, sigma^2)` over a seed
//! space whose transformed, projected samples are likely adversarial for a
//! query-only classifier. The crate also ships:
//!
//! - [`baselines`]: the projected-sign NES attack and an ablation ladder
//!   between it and the distribution-learning formulation,
//! - [`models`]: a small MLP victim stack with trainer, weight persistence,
//!   and defense wrappers (quantized activations, stochastic activation
//!   pruning, randomized input noise),
//! - [`init`]: warm-start strategies for the search-distribution mean,
//!   including a ridge-regression initializer fit on earlier successes,
//! - [`harness`]: benchmark orchestration, success-vs-iteration curves,
//!   transfer matrices, and CSV/JSON/SVG export.
//!
//! Everything stochastic derives from explicit seeds (see [`seed`]) so runs
//! are reproducible bit-for-bit, including under parallel execution.

pub mod baselines;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod loss;
pub mod models;
pub mod nattack;
pub mod seed;
mod textfmt;

pub use geometry::{GridShape, Norm, NormBudget, SeedSpace, SeedVector, UnitBoxPoint};
pub use loss::ProbVector;
pub use models::BlackboxModel;
pub use nattack::{AttackConfig, AttackOutcome, DistParams};
