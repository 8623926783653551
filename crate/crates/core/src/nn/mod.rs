//! Minimal feed-forward inference engine and its file formats.

mod dataset;
mod forward;
mod io;
mod model;

pub use dataset::{Dataset, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use forward::{argmax, evaluate_accuracy, forward, forward_batch, EvalSet};
pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use model::{EdgeLayer, InputShape, LayerKind, LayerMeta, NetworkModel};
