//! A desk-scale laboratory for graph pooling ablations.
//!
//! The library trains small graph neural networks whose pooling step is
//! swappable: greedy edge-matching on the graph or its complement, learned
//! soft assignments, frozen random assignments, and memory-based pooling
//! with kernel, distance, or random addressing. Everything runs on a hand
//! rolled dense-matrix tape, deterministically from a seed, so that the
//! interesting question — how much the pooling choice matters — can be
//! answered with paired runs instead of folklore.

pub mod analysis;
pub mod autodiff;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod mat;
pub mod models;
pub mod train;

pub use error::{Error, Result};

// Compile every code block in the guide as a doctest, so the book and
// the library cannot drift apart.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors-and-tape.md")]
    mod tensors_and_tape {}
    #[doc = include_str!("../../../book/src/graphs-and-coarsening.md")]
    mod graphs_and_coarsening {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
