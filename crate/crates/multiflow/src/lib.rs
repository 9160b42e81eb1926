//! Enumeration of real AC power flow solutions by hybrid continuation.
//!
//! The library traces the one-dimensional solution curves obtained by
//! relaxing one power flow equation at a time. Regular curve segments are
//! covered with large holomorphic-embedding macro steps accelerated by
//! Pade approximation; singular points (folds) are crossed by a classic
//! pseudo-arclength predictor-corrector routine, warm-started from the
//! Pade pole estimates. An outer loop restarts curve tracing from every
//! newly found solution until the solution set stabilizes.

pub mod case_model;
pub mod curve_design;
pub mod enumerator;
pub mod error;
pub mod hebc_tracer;
pub mod hem_core;
pub mod metrics;
pub mod pade;
pub mod pc_engine;
pub mod quadratic_form;

pub use case_model::{
    build_admittance, parse_case, regularize_lossless, AdmittanceMatrix, Branch, Bus, BusKind,
    Network,
};
pub use error::{Error, Result};
pub use quadratic_form::{assemble_equations, QuadraticSystem, StateVector};
