//! sortnet — a micro deep-learning framework built around second-order
//! response fusion: two-branch and residual blocks whose outputs combine a
//! linear term with an elementwise product term, trained with reverse-mode
//! autodiff and audited against finite differences.
//!
//! Layout:
//! - [`tensor`], [`tape`], [`linalg`], [`norm`], [`param`]: the autodiff core.
//! - [`fusion`]: the fusion operators, their specs, and the nonlinearity surfaces.
//! - [`netbuild`]: declarative architectures and the chain→two-branch transform.
//! - [`network`]: compiled runtime networks.
//! - [`data`], [`train`]: datasets and the SGD loop.
//! - [`gradcheck`], [`bench`], [`experiment`]: audits, overhead benchmark, CLI orchestration.

pub mod bench;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod gradcheck;
pub mod linalg;
pub mod netbuild;
pub mod network;
pub mod norm;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
