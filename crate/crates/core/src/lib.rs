pub mod ai;
pub mod audit;
pub mod blob;
pub mod clock;
pub mod directory;
mod error;
pub mod gateway;
pub mod identity;
pub mod ids;
pub mod load;
pub mod pipeline;
pub mod platform;
pub mod records;
pub mod schema;
pub mod time;

pub use error::{Error, ErrorKind, FieldError, Result};
