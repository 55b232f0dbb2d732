//! Curves, lane relations, encodings, distances, and camera projection.

mod bezier;
mod boxes;
mod camera;
mod distance;
mod encoding;
mod relations;

pub use bezier::{bernstein, bernstein_matrix, fit_cubic, sample_curves, BezierLane, Point3};
pub use boxes::{box_giou, box_iou};
pub use camera::CameraModel;
pub use distance::{chamfer_distance, chamfer_var, discrete_frechet, hausdorff};
pub use encoding::{encode_var, sinusoidal_encode, SinusoidalConfig};
pub use relations::{angle_difference, endpoint_min_distance, pairwise_relations, stack_control_points};
