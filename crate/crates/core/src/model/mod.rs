//! Feature extractor, linear classifier, bias attractor, and the EMA shadow
//! used for evaluation.

mod checkpoint;
mod layers;
mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use layers::{Dense, Mlp, MlpCache, Params};
pub use state::{
    init_model, normalize_attractor_input, AttractorNorm, ModelDims, ModelGrads, ModelState, TrainForward,
    DEFAULT_ATTRACTOR_HIDDEN,
};
