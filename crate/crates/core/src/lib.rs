//! Watermark mimicry lab: keyed watermarking of a toy n-gram language model,
//! detectors, and a conversation harness measuring whether an unwatermarked
//! party picks up its interlocutor's watermark.

pub mod cli;
pub mod detect;
pub mod prf;
pub mod report;
pub mod simulate;
pub mod textmodel;
pub mod toylm;
pub mod wmgen;
