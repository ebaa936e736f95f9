//! Dense networks, Adam, Polyak averaging, gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod net;
mod optim;

pub use checkpoint::{load_checkpoint, load_sections, save_checkpoint, Checkpoint, Metadata};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use net::{param_count, Activation, DenseNet, ForwardCache, Gradients};
pub use optim::{polyak_update, AdamState};
