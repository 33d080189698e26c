//! Core algorithms for simulating corrupted music-demixing datasets, scoring
//! separations with the global SDR metric, robust-training baselines and
//! pairwise TrueSkill rating of listening-test outcomes.
//!
//! The crate is `no_std` and only needs an allocator. File formats, process
//! invocation, the HTTP listening-test service and the command line live in
//! the `mdxkit` companion crate.
//!
//! ```
//! use mdxkit_core::audio::AudioBuffer;
//! use mdxkit_core::evaluator::sdr_source;
//!
//! let target = AudioBuffer::from_fn(441, |_, n| (n as f64 * 0.05).sin());
//! let estimate = target.scaled(0.5);
//! let sdr = sdr_source(&target, &estimate).unwrap();
//! assert!((sdr - 6.0206).abs() < 1e-4);
//! ```

#![no_std]
#![warn(missing_debug_implementations)]
// float math comes from `num_traits::Float` (libm); test builds link std,
// whose inherent methods shadow the trait.

extern crate alloc;

pub mod audio;
pub mod corruptor;
pub mod dataset;
pub mod evaluator;
pub mod rating;
pub mod rng;
pub mod robust;
pub mod separation;

pub use audio::{AudioBuffer, SAMPLE_RATE};
pub use dataset::{SourceClass, Stems};
