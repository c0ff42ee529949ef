//! Dense tensors with reverse-mode automatic differentiation, recurrent
//! cells, the Adam optimizer and a finite-difference gradient checker.

pub mod gradcheck;
mod optim;
mod params;
pub mod recurrent;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{adam_step, AdamState};
pub use params::{Gradients, ParamId, ParamStore};
pub use recurrent::{bilstm_encode, gru_sequence, gru_sequence_masked, BiLstmIds};
pub use tape::{softmax, BackwardFault, GateIds, GruIds, LstmIds, Tape, Var};
pub use tensor::Tensor;
