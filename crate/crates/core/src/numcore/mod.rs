//! Dense-network engine: exact reverse-mode gradients, Adam, LR schedules.

mod net;
mod optim;
mod schedule;

pub use net::{Activation, DenseNet, DenseNetDoc, Layer, Mode, NetGrads, Tape, DEFAULT_LEAKY_SLOPE};
pub use optim::{AdamConfig, OptimState};
pub use schedule::LrSchedule;
