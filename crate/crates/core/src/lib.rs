//! Discrete coupled Ricci iteration on periodic tori.

pub mod grid;
pub mod functionals;
pub mod iteration;
pub mod monge_ampere;
pub mod oracle;
