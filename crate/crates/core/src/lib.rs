pub mod agent;
pub mod analyzer;
pub mod commands;
pub mod config;
pub mod iat;
pub mod model;
pub mod parser;
pub mod sandbox;
pub mod summarizer;
pub mod task;
pub mod templates;
