//! Rank-2 dense and coordinate-list sparse matrices with the handful of
//! kernels the GCN needs.

mod dense;
mod sparse;

pub use dense::{gemm, relu, row_softmax, DenseMatrix};
pub(crate) use dense::softmax_in_place;
pub use sparse::{spmm, SparseMatrix};
