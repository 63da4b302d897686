pub mod camera;
pub mod complete;
pub mod datagen;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod warp;

pub use camera::{CameraIntrinsics, Pose};
pub use error::{Error, Result};
pub use image::{DepthImage, DisplacementField, PixelMask, RgbImage};
