//! Random metric spaces built as fixed points of recursive gluing: structural
//! trees, branch laws, a lazily realized coupling trie, and the statistics used
//! to check convergence, moments and fractal dimensions.

pub mod rng;
pub mod samplers;
pub mod tree;
pub mod models;
pub mod engine;
pub mod analysis;
pub mod config;
pub mod cli;
