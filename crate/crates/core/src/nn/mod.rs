//! Minimal reverse-mode autodiff over dense `f64` tensors, the layer set
//! for the two networks, optimizers and the learning-rate schedule.

mod conv;
mod nets;
mod optim;
mod params;
mod tape;
mod tensor;

pub use nets::{
    mask_values, stage1_input, Stage1Config, Stage1Net, Stage1Vars, Stage2Config, Stage2Net, Stage2Variant,
    STAGE1_INPUT_CHANNELS,
};
pub use optim::{clip_global_norm, LrSchedule, Optimizer, OptimizerKind};
pub use params::{Checkpoint, CheckpointHeader, Init, ParamStore, TensorEntry, CHECKPOINT_FORMAT};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
