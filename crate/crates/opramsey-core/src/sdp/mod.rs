pub mod solver;
pub mod types;
pub use types::*;
pub use solver::{solve_sdp, solve_sdp_with};
