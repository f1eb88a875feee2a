pub mod agents;
pub mod bench;
pub mod cli;
pub mod config;
pub mod corrector;
pub mod db;
pub mod domain;
pub mod fixtures;
pub mod fsm;
pub mod hints;
pub mod kb;
pub mod llm;
pub mod membuf;
pub mod pipeline;
pub mod prompt;
pub mod sqltext;
