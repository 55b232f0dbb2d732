//! Bipartite matching, losses, and the optimization loop.

mod losses;
mod matching;
mod objective;
mod trainer;

pub use losses::{
    bezier_chamfer_loss, focal_loss, focal_match_cost, focal_value, giou_loss, infonce_topology_loss, l1_loss,
    FocalConfig, Reduction,
};
pub use matching::{hungarian_match, MatchResult};
pub use objective::{
    lane_cost_matrix, match_layers, route_adjacency, te_cost_matrix, total_loss, LayerMatch, LossBreakdown,
    LossConfig, LossWeights, SceneTarget,
};
pub use trainer::{
    effective_loss, evaluate_model, predict_samples, prepare_samples, scene_gradients, train, Sample, StepRecord,
    TrainConfig, TrainHistory,
};
