//! SE(3) algebra, pinhole camera, and inverse-depth patch reprojection.

mod camera;
mod se3;

pub use camera::{
    relative_pose, reproject_patch, reproject_pixel, reproject_pixel_with_jacobian,
    reprojection_jacobian, Intrinsics, RelativeTransform, Matrix2x6, Patch, ReprojectionJacobian, MIN_DEPTH,
};
pub use se3::{se3_exp, se3_log, skew, Pose, Twist, LOG_ANGLE_LIMIT};
