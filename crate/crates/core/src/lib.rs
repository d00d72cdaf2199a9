pub mod admm;
pub mod data;
pub mod error;
pub mod experiment;
mod gemm;
pub mod nn;
pub mod rng;
pub mod svd;
pub mod tensor;
pub mod train;
pub mod tt;

pub use error::{Error, Result};
pub use svd::{svd, SvdResult};
pub use tensor::{frobenius_norm, DenseTensor};
pub use tt::{project, tt_svd, RankSpec, TensorizationMap, TtTensor};
