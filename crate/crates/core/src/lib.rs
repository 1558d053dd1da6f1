pub mod linalg;
pub mod model;
pub mod sweep;
pub mod photo;
pub mod esr;
pub mod fit;
pub mod cli;
