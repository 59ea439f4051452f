//! Independent numerical oracles for the test suites: adaptive quadrature
//! of the conjugate integrals and brute-force enumeration over HMM state
//! paths. Everything here is derived from first principles on plain
//! slices so the implementations under test share no code path with their
//! checks.

pub mod enumerate;
pub mod quad;
