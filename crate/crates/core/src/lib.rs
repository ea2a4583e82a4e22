pub mod error;
pub mod linalg;
pub mod penalty;
pub mod operators;
pub mod flow;
pub mod stopping;
pub mod experiments;
pub mod cli;
