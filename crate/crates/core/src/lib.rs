//! ON-OFF private retrieval from a single server under Markov-correlated requests.
//!
//! A user fetches one of `N` freshly generated messages per time step. Its
//! requests follow a known Markov chain, and at each step the user toggles a
//! privacy flag. Requests made while the flag is ON must stay perfectly hidden
//! from the server for all later queries; requests made while it is OFF may be
//! revealed. The crate provides:
//!
//! - [`model`]: the request chain, privacy patterns and the per-context order
//!   statistics every bound and scheme is built from.
//! - [`scheme`]: the polynomial-time query-distribution builder and the closed
//!   form two-source policy.
//! - [`bounds`]: converse and achievability bounds on the download rate,
//!   including exact history enumeration.
//! - [`lp`]: a dense two-phase simplex solver and the query-design LPs used as
//!   an optimality oracle for small `N`.
//! - [`verify`]: exact privacy, decodability and cardinality audits.
//! - [`sim`]: a seeded user/server simulation with real bit payloads and a
//!   Bayes filter over the server's view.

pub mod bounds;
pub mod error;
pub mod lp;
pub mod model;
pub mod scheme;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use model::{order_stats, ConditionalLaw, MarkovModel, OrderStats, Privacy, PrivacyPattern};
pub use scheme::{Multiset, QueryDistribution, QuerySet};

/// Global tolerance for equality and feasibility tests on probabilities.
pub const EPS: f64 = 1e-9;
