//! Conditional invertible network: a conditioning net plus a chain of
//! permuted affine coupling blocks, trained by maximum likelihood on the
//! latent and sampled to invert observations.

mod block;
mod invert;
mod model;
mod train;

pub use block::CouplingBlock;
pub use invert::{
    cinn_invert, postprocess, write_candidates_csv, DesignCandidate, FnForward, ForwardModel, InverseQuery,
};
pub use model::{permutation_from_seed, BlockDoc, CinnArch, CinnGrads, CinnModel, CinnModelDoc, CinnNorm};
pub use train::{cinn_loss, cinn_train, loss_and_grad, train_model, CinnConfig, DataSource, TrainConfig, TrainedCinn, TrainingCurve};
