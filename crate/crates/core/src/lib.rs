//! Rib and spine control structures for triangle meshes: extraction,
//! skinning, deformation, reduced dynamics and keyframe animation.

pub mod animation;
pub mod codec;
pub mod deform;
pub mod dynamics;
pub mod error;
pub mod frames;
pub mod geodesic;
pub mod math;
pub mod mesh;
pub mod ribs;
pub mod rig;
pub mod rig_store;
pub mod shapes;
pub mod skinning;
pub mod sparse;
pub mod spatial;
pub mod spine;

pub use error::{Error, Result};
