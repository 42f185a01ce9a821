pub mod augment;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod models;
pub mod peft;
pub mod trainkit;

pub use error::{Error, Result};
