pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod expansion;
mod kernels;
pub mod optim;
pub mod report;
pub mod run;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use autograd::{Gradients, Graph, Mode, ParamId, Parameter, RunningStats, Var};
pub use error::{Error, Result};
pub use model::{ArchitectureDescriptor, ModelConfig, SecnnModel};
pub use tensor::Tensor;
