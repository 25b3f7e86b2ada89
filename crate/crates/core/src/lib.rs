//! Observer-based fault detection filter for a four-conductor transmission line.
//!
//! `model` and `design` and the observer in `engine` are generic over [`Real`];
//! the aliases below fix the scalar to `f64`.

pub mod design;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type StateSpaceModel = model::StateSpaceModel<f64>;
pub type FilterDesign = design::FilterDesign<f64>;
pub type Subspace = design::Subspace<f64>;
pub type Observer = engine::Observer<f64>;

pub type StateSpaceModelF32 = model::StateSpaceModel<f32>;
pub type FilterDesignF32 = design::FilterDesign<f32>;
pub type ObserverF32 = engine::Observer<f32>;

