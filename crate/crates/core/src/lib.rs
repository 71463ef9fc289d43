pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod selfcheck;
pub mod ssl;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::{Config, TrainConfig};
pub use data::{EventRecord, PostNode, Vocabulary};
pub use error::{Error, Result};
pub use params::{Binding, ParamId, ParamStore};
pub use model::{Mode, Model, ModelConfig};
pub use tensor::Tensor;
pub use train::Checkpoint;
