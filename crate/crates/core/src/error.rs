use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("network build error at layer {layer}: {reason}")]
    Build { layer: usize, reason: String },
    #[error("cache does not belong to this layer: {0}")]
    Cache(String),
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::Error::Argument(alloc::format!($($arg)*)) };
}
pub(crate) use arg_err;
pub(crate) use shape_err;
