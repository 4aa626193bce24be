//! Core of the SAGE smart-home agent: LLM gateway, device hub, agent loop,
//! tools, personalization and monitoring.

pub mod agent;
pub mod api;
pub mod embedding;
pub mod events;
pub mod fixtures;
pub mod hub;
pub mod llm;
pub mod monitoring;
pub mod personalization;
pub mod sage;
pub mod tools;
