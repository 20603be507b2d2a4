//! Bifurcation analysis of the three-parameter unfolding of the Lorenz
//! triple-zero normal form.

pub mod error;
pub mod export;
pub mod integrate;
pub mod connections;
pub mod continuation;
pub mod linalg;
pub mod local;
pub mod model;
pub mod roots;

pub use error::{Error, Result};
pub use model::{Params, ParamName, State};
