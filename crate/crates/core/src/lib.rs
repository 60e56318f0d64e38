//! Query-aware frame selection for long videos.
//!
//! Given a video and a text query, pick a small set of frames that are
//! relevant but still spread out, and pack them at a few resolutions so
//! the total visual-token cost stays within a fixed budget.

pub mod cqr;
pub mod embed;
pub mod eval;
pub mod model;
pub mod mra;
pub mod pipeline;
pub mod qfs;
mod util;
pub mod video;

pub use util::{sha256_file, sha256_hex};
