//! Data-driven finite sections of the Koopman operator on reproducing kernel
//! Hilbert spaces of analytic functions.
//!
//! The pipeline is:
//!
//! 1. [`basis`] enumerates graded multi-indices and evaluates weighted monomials.
//! 2. [`kernel`] builds Gram matrices for Taylor-type kernels (Szegő, exponential)
//!    and applies their inverse under an [`kernel::InversionPolicy`].
//! 3. [`projection`] estimates RKHS inner products and Taylor coefficients from samples.
//! 4. [`edmd`] assembles the Koopman matrix `K = Xᵀ G⁻¹ Y` and the comparison baselines.
//! 5. [`spectral`] reads the lattice spectrum off the diagonal degree blocks and runs the
//!    block-triangular recursion for principal eigenfunctions.
//! 6. [`dynamics`] integrates the benchmark vector fields to produce snapshot data.

pub mod basis;
pub mod dynamics;
pub mod edmd;
mod error;
pub mod kernel;
pub(crate) mod linalg;
pub mod projection;
pub mod spectral;

pub use basis::{enumerate_multiindices, DegreeBlock, FunctionBasis, MonomialBasis, MultiIndex};
pub use dynamics::{
    default_substeps, exact_koopman_matrix_oracle, generate_snapshots, rk4_flow, PolynomialMap,
    SamplingPlan, System,
};
pub use edmd::{
    fit_analytic_edmd, fit_analytic_edmd_nonortho, fit_dmd, fit_edmd, fit_kernel_edmd,
    triangularity_residual, KoopmanMatrix, Method, SnapshotSet, TriangularityResidual,
};
pub use error::{Error, Result, SampleRole};
pub use kernel::{GramMatrix, InversionPolicy, KernelFamily, KernelSpec};
pub use projection::{
    rkhs_inner_product, taylor_project, taylor_project_nonortho, SampledFunction,
    TaylorCoefficients,
};
pub use spectral::{
    block_eigenvalues, evaluate_eigenfunction, lattice_match, principal_eigenfunctions,
    LatticeEigenvalue, LatticeReport, PrincipalEigenfunction,
};

pub use nalgebra::{Complex, DMatrix, DVector};
