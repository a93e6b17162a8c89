//! Speaker-conditioned dialogue engine that clones a target speaker from
//! chat history.
//!
//! The pipeline runs corpus ingestion ([`corpus`]) into either
//! retrieval of past responses ([`retrieval`], backed by [`embedding`] and
//! [`index`]) or model-input encoding ([`context`]) and sampled decoding
//! ([`generation`]). [`evaluation`] scores both routes.

pub mod context;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod index;
pub mod retrieval;
pub mod text;
