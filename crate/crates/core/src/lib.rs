//! One-level additive Schwarz preconditioning with impedance subdomain
//! solves for P1 discretizations of the absorptive Helmholtz equation.

pub mod assemble;
pub mod grid;
pub mod sparsela;
pub mod krylov;
pub mod operator;
pub mod schwarz;
pub mod diag;
pub mod runner;
