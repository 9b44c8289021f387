//! Parabolic uniform rectifiability toolkit.
//!
//! Works on sampled closed sets in R^n x R with the parabolic distance
//! d_p((X,t),(Y,s)) = |X - Y| + |t - s|^{1/2}: dyadic cube systems, beta
//! numbers, corona decompositions into coherent regimes, the Whitney-type
//! Lip(1,1/2) graph attached to each regime, and half-order time
//! regularity diagnostics for such graphs.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod beta;
pub mod cli;
pub mod corona;
pub mod dyadic;
pub mod error;
pub mod index;
pub mod io;
pub mod measure;
pub mod metric;
pub mod plane;
pub mod regularity;
pub mod surface;
pub mod surfaces;
pub mod verify;
pub mod whitney;

pub use error::{Error, Result};
pub use metric::StPoint;
pub use surface::Surface;
