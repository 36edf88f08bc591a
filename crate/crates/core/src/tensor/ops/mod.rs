mod conv;
mod elementwise;
mod layout;
mod linalg;
mod reduce;

pub use elementwise::Unary;
