//! File formats, the external-process separator, the listening-test HTTP
//! service and the `mdxkit` command line, on top of `mdxkit-core`.

pub mod cli;
pub mod external;
pub mod jsonl;
pub mod manifest;
pub mod provenance;
pub mod service;
pub mod wav;

pub use mdxkit_core as core;
