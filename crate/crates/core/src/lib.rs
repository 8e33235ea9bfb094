//! Black-box detection of incorrect chat-model answers.
//!
//! A base question is asked, the model's explanations are elicited, each
//! explanation is challenged with Why/How/Really questions (plain and
//! mutated), and cosine consistency between the resulting texts feeds a
//! linear detector.

pub mod challenger;
pub mod config;
pub mod decider;
pub mod embedder;
pub mod enquirer;
pub mod gateway;
pub mod par;
pub mod pipeline;
pub mod record;
pub mod store;
