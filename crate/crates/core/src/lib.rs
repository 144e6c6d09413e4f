//! Symmetric-group representations and moment operators of SU(d)-symmetric
//! random circuits, assembled block by block over charge sectors.

pub mod error;
pub mod krylov;
pub mod linalg;
pub mod moments;
pub mod oracle;
pub mod snpart;
pub mod spectra;
pub mod yor;

pub use error::{Error, Result};
pub use linalg::{LinearOperator, SparseMatrix, TensorShape};
pub use moments::{
    all_to_all_hamiltonian, brickwork_step, bulk_hamiltonian, geometry_hamiltonian, step_channel,
    twirl_swap_k, twirl_yjm_k2, BlockKind, BlockOptions, Ensemble, Geometry, GeometryKind,
    IrrepCache, MomentBlock, SectorTuple, TwirlExpansion, YjmConvention,
};
pub use snpart::{
    branch_restrict, contents, count_sectors, dim_irrep, multiplicity, partitions,
    standard_tableaux, ContentVector, Partition, StandardTableau,
};
pub use spectra::{
    singular_gap, spectral_gap, unit_eigenspace_dim, BoundKind, BoundReport, RowStatus,
    ScanOptions, ScanRow, SolverMode, SpectralOptions, SpectralReport, WindowConvention,
};
pub use yor::{
    build_irrep, central_sum_eigenvalue, representation_defects, transposition_matrix, yjm_matrix,
    IrrepAction, RepresentationDefects,
};
