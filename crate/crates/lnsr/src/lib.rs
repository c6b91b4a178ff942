//! File formats, configuration, reports and command implementations on top
//! of [`lnsr_core`].

pub mod bench;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
pub use lnsr_core;
