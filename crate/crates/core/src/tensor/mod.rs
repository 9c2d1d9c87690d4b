//! Dense column-vector/matrix kernels, the named parameter store and the
//! finite-difference gradient oracle.

mod checkpoint;
mod gradcheck;
mod mat;
mod store;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader, TensorHeader, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck};
pub use mat::{concat, hadamard, log_softmax, sigmoid, softmax, Mat};
pub use store::{uniform_init, Gradients, ParamId, ParamStore, Params, INIT_RANGE};
