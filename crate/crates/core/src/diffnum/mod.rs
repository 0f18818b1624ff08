//! Differentiation and first-order optimization.

pub mod adam;
pub mod fd;
pub mod param;
pub mod tape;

pub use adam::{adam_step, adam_step_in_place, AdamState};
pub use fd::{grad_fd, FD_STEP};
pub use param::{ParamVector, Segment};
pub use tape::{grad, log_sum_exp, Tape, Var};
