//! Rule-based landmark prediction.
//!
//! A 3D face template gives every 2D landmark a plausible depth. Head turns
//! are rigid rotations of the lifted face followed by orthographic
//! projection; expressions are additive displacement fields. The predictor
//! chains both and records its reasoning in four stages.

mod expression;
mod pose;
mod predict;
mod rigid;
mod synth;
pub mod template;

pub use expression::{apply_expression, apply_expression_named};
pub use pose::{
    estimate_pose, euler_pitch_yaw, fit_pose, head_rotation, pose_deviation, rot_x, rot_y, rot_z,
    HeadPose, PoseFit,
};
pub use predict::{
    predict_landmarks, sanity_check, sanity_check_report, CoordinateEstimation, Decomposition,
    InitialState, KinematicChain, ReasoningTrace, RegionMotion, SanityReport,
    RIGID_RATIO_TOLERANCE,
};
pub use rigid::{
    apply_head_turn, apply_rigid_rotation, lift, rotate_about_pivot, LiftedFace,
    MAX_STEP_DEGREES, NECK_PIVOT_DEPTH,
};
pub use synth::{synthesize, FaceSynth, SynthConfig};
pub use template::{template_2d, CanonicalFace3D, ExpressionFields};
