//! Linear, convex and entropic transfers between probability measures on
//! finite spaces: primal evaluation, Kantorovich operators, the algebra of
//! transfers, transport-entropy inequalities and weak KAM theory.

pub mod algebra;
pub mod catalog;
pub mod entropic;
pub mod error;
pub mod inequality;
pub mod io;
pub mod kam;
pub mod measure;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};
