//! Command-line driver and persistence for the dictionary-learning toolkit:
//! experiment configs, the binary tensor container, dataset layout, and the
//! simulate/train/sweep/gradcheck/eval commands (exposed as library
//! functions so tests can drive them in-process).

pub mod commands;
pub mod config;
pub mod dataset;
pub mod tensor_file;

pub use commands::{cmd_eval, cmd_gradcheck, cmd_simulate, cmd_sweep, cmd_train, Arch, InitSpec};
