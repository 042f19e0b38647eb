//! Configuration, caching and stage execution behind the `coexpr` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod svg;
