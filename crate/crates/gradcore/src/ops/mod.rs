pub(crate) mod conv;
mod elementwise;
pub(crate) mod norm;
