//! Synthetic stand-ins for captured data: a humanoid with a pose library,
//! labeled box rooms, and interaction frames.

mod frames;
mod humanoid;
pub mod scene;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::interaction::InteractionError;

pub use frames::{
    contact_mask, frame_from_staged, generate_frames, stage, staged_frame, GeneratedFrames, StagedFrame,
    MASK_DISTANCE,
};
pub use humanoid::{
    generate_body, pose_library, pose_spec, BodyPart, BodyRegions, Humanoid, PoseSpec, Support, BODY_SUBDIVISIONS,
    JOINT_NAMES, POSE_NAMES,
};
pub use scene::{generate_scene, FurnitureItem, SceneBuilder, SceneSpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown pose `{0}`")]
    UnknownPose(String),
    #[error("staging failed: {0}")]
    Staging(String),
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
}
