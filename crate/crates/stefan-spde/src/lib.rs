//! Spectral Galerkin simulator and verification harness for the stochastic
//! Stefan problem with a mushy region and transport noise.

pub mod basis;
pub mod config;
pub mod enthalpy;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod sde;
pub mod smooth;
pub mod trig;
pub mod verification;
