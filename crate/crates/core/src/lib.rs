//! Kinematics and configuration-space engine for hierarchical cube-based origami metastructures.

pub mod actuation;
pub mod canonical;
pub mod error;
pub mod geom;
pub mod graph;
pub mod invdesign;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod moves;
pub mod path;
pub mod session;
pub mod shape;

pub use error::{Error, Result};
