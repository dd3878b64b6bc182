//! Dirichlet sine-basis discretization of a box domain.

pub mod domain;
pub mod field;
pub mod hamiltonian;
pub mod ops;

pub use domain::{kinetic_symbol, laplacian_spectrum, semiclassical_constant, Domain, DomainSpec, Sample};
pub use field::ModeField;
pub use hamiltonian::{eigendecompose, hamiltonian_matrix, potential_matrix, Eigensystem, Hamiltonian};
pub use ops::{
    apply_kinetic, apply_neg_laplacian, hminus1_norm, kinetic_form, poisson_solve, sobolev_hs_norm,
    sobolev_inhomogeneous_norm,
};
