//! Convergence certificates for csode models: activation assumptions,
//! sector bounds, assembly and eigenvalue verification of the matrix
//! inequalities, Lyapunov functions and empirical contraction of the error
//! dynamics.
//!
//! Shape conventions: a subnet has `A_j: n x k_j` and `W_j: k_j x n`. Where a
//! condition mixes an `n x n` term with a `k_j x k_j` term, the latter enters
//! as `W_j^T (.) W_j`; products `W_j^T W_j` between subnet-sized blocks are
//! taken as the Gram matrix `G_j = W_j W_j^T`.

mod assumptions;
mod lmi;
mod lyapunov;
mod search;

pub use assumptions::{
    check_assumption1, check_assumption1_fn, check_assumption2, check_assumption2_fn, classify_activation,
    classify_fn, default_grid, gaussian_pairs, sample_check_assumption3, sector_bounds_for, tanh_sector_bounds,
    ActivationClass, ActivationClassification, Assumption3Report, Monotonicity, SectorBounds, SignCheck,
};
pub use lmi::{
    assemble_lmis, check_condition, first_family, second_family, verify_certificate, verify_conditions,
    CertificateCandidate, CertificateMatrices, Condition, ConditionKind, ConditionReport, PairBlock, Verdict,
    VerificationReport, STRICT_MARGIN,
};
pub use lyapunov::{
    empirical_contraction, lyapunov_tilde_value, lyapunov_value, Contraction, ContractionReport,
};
pub use search::{search_certificate, SEARCH_MAX_DIM};
