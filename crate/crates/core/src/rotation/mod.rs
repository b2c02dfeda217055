//! Fusible rotations: the rotation set, the incoherence objectives with their
//! analytic gradients, and Cayley-SGD training.

mod cayley;
mod objective;
mod set;
mod train;

pub use cayley::{cayley_sgd_step, CayleyState};
pub use objective::{
    objective_gradient, objective_value, pair_values, select_top_k, ObjectiveKind, ObjectiveSpec,
    RotationGrads,
};
pub use set::{input_rotation, rotated_hessian, rotated_weight, LayerRecord, Role, RotationSet};
pub use train::{learn_rotations, TrainConfig, TrainOutcome};
