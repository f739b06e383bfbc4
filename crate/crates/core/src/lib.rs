//! Dyson terms and their control gradients from block upper-triangular
//! (Van Loan) matrix exponentials, plus the pieces needed to run pulse
//! searches on them: transfer maps, objectives, a conjugate-gradient
//! driver, 1/f noise fits, a symbolic term engine and quadrature oracles.

pub mod blockgen;
pub mod error;
pub mod matcore;
pub mod noisemodel;
pub mod objective;
pub mod optimize;
pub mod oracle;
pub mod propagate;
pub mod symterms;
pub mod transfer;

pub use blockgen::{
    build_expsum, build_f1, build_poly, direct_sum, BlockEntry, DysonOperator, DysonSpec, GeneratorFamily,
    ScalarWeight, VanLoanLayout,
};
pub use error::{Error, Result};
pub use matcore::{c, expm, fidelity, hs_norm, kron, mat_mul, BlockMatrix, ComplexMatrix};
pub use num_complex::Complex64;
pub use propagate::{
    propagate, propagate_adjoint, propagate_with_gradients, ControlSequence, GradientMethod, PropagationResult,
};
pub use noisemodel::{fit_expsum, ExpSumFit};
pub use objective::{BlockRef, EnsembleMember, ObjectiveSpec, ObjectiveTerm, TermKind};
pub use optimize::{maximize, multi_start, MultiStartResult, SearchConfig, SearchResult, Termination};
pub use transfer::{TransferKind, TransferMap};
