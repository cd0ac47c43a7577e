pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod engine;
pub mod idx;
pub mod report;
pub mod svg;
