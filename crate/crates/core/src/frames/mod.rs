//! Rigid transforms and the named frame registry.

mod transform;
mod tree;

pub use transform::{normalize_angle, Point2, Quaternion, Transform2D, Transform3D};
pub use tree::{
    FrameError, FrameTree, SharedFrameTree, CAMERA_ENV_FRAME, CAMERA_PURPLE_FRAME,
    CAMERA_YELLOW_FRAME, ROBOT_FRAME, ROOT_FRAME,
};
