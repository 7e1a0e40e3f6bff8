//! Stagewise re-weighting of a compositional training loss, driven by a
//! chat-model agent that reads expert feedback on a frozen test panel.

pub mod agent;
pub mod data;
pub mod experts;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod orchestrator;
pub mod process;
pub mod prompt;
pub mod seed;
pub mod harness;
