//! Prompt-in-image evaluation toolkit.
//!
//! * [`conditioner`] renders baseline / control / prompt-in-image / hybrid inputs.
//! * [`corpus`] loads POPE and COCO caption tasks and the CHAIR lexicon.
//! * [`client`] runs resumable evaluation campaigns against a chat-completions endpoint.
//! * [`metrics`] scores POPE answers and CHAIR caption hallucination.
//! * [`tensor_io`] reads and writes `.piid` tensor dumps.
//! * [`diagnostics`] computes attention bias, layer similarity and modality gap.
//! * [`report`] aggregates scores into comparison tables and renders CSV, markdown and SVG.

pub mod conditioner;
pub mod corpus;
pub mod client;
pub mod metrics;
pub mod tensor_io;
pub mod diagnostics;
pub mod report;
