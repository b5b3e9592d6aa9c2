//! Replica Monte Carlo laboratory for disordered log-concave Gibbs measures.
//!
//! The crate samples conditionally independent replicas from Gibbs densities
//! `exp(H(σ))` on the box `[-1,1]^N`, where `H` is a concave random
//! Hamiltonian plus a ridge term `-ε‖σ‖²/2` and an optional dyadic Poisson
//! perturbation. On top of the samplers sit estimators for multioverlaps and
//! their thermal and quenched fluctuations, decoupling statistics, perturbation
//! energies and free-entropy variances. A deterministic quadrature oracle
//! computes the same quantities exactly wherever that is feasible (product
//! measures, or `N ≤ 3`), and the [`harness`] module runs seeded parameter
//! sweeps and turns them into CSV tables.
//!
//! Module map:
//!
//! * [`perturbation`]: dyadic index set, polynomials `P_I`, Poisson counts.
//! * [`models`]: concave Hamiltonians and the assembled total energy.
//! * [`sampler`]: coordinate slice and reflected Langevin samplers.
//! * [`oracle`]: Gauss–Legendre expectations and free entropies.
//! * [`estimators`]: every Monte Carlo statistic and the small inequality checks.
//! * [`harness`]: configuration, parallel sweeps, oracle gate and reports.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod par;
pub mod perturbation;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
