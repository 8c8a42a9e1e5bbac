//! Cooperative multi-agent code generation: a planner splits a request into
//! subtasks, a coder implements each one, a debugger repairs failing code in
//! a sandbox, and a reviewer audits the result. All model traffic goes
//! through a gateway that can call a live endpoint, record to a cassette, or
//! replay one deterministically.

pub mod coder;
pub mod config;
pub mod debugger;
pub mod gateway;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod planner;
pub mod prompt;
pub mod reviewer;
pub mod sandbox;
pub mod transcript;
pub mod workspace;
