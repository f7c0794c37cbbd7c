pub mod eval;
pub mod gradcheck;
pub mod simulate;
pub mod sweep;
pub mod train;

pub use eval::cmd_eval;
pub use gradcheck::{cmd_gradcheck, parse_shapes, DEFAULT_SHAPES};
pub use simulate::cmd_simulate;
pub use sweep::cmd_sweep;
pub use train::{cmd_train, Arch, InitSpec};
