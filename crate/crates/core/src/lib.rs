pub mod cli;
pub mod experiment;
pub mod scm;
pub mod scorer;
pub mod service;
pub mod stats;
pub mod templates;
