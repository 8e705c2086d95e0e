//! Learned keypoints and descriptors for fast time-series alignment.
//!
//! Signals are warped by 1D CPAB diffeomorphisms ([`cpab`]) to build
//! self-supervised training pairs ([`synthalign`]). A small wavelet-convolution
//! network ([`tensornet`], [`timepoint`]) learns to detect keypoints and emit
//! unit-norm descriptors, and [`align`] runs DTW/SoftDTW on the sparse
//! descriptor sequences instead of the raw signals. [`bench`] and [`data`]
//! hold the experiment drivers and file formats used by the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod bench;
pub mod container;
pub mod cpab;
pub mod data;
mod interp;
mod error;
pub mod par;
pub mod synthalign;
pub mod tensornet;
pub mod timepoint;

pub use error::{Error, Result};

/// A finite real-valued sequence on a uniform grid over `[0, 1]`.
pub type Signal = Vec<f64>;
