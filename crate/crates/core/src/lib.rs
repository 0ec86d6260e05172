pub mod audit;
pub mod condition;
pub mod config;
pub mod consolidation;
pub mod dialogue;
pub mod engine;
pub mod evolution;
pub mod extraction;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod merge;
pub mod review;
pub mod rulebook;
pub mod service;
pub mod simulate;
