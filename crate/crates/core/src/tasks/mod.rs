//! Synthetic task generators and training-free recall experiments.

mod mqar;
mod recall;

pub use mqar::{gen_copy, gen_mqar, parse_line, CopyInstance, InstanceLine, MqarInstance, TokenLayout};
pub use recall::{
    capacity_curve, long_context_curve, orthonormal_keys, recall_episode, recall_experiment, CurveCell,
    KeyGeometry, RecallProblem, RecallResult, SweepOptions,
};
