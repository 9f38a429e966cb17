//! Indirect optimal-control solver built on the contact-geometric form of
//! the maximum principle.
//!
//! Costates live in projective space and are handled through an atlas of
//! one normal and `n` abnormal charts ([`projcost`]); extremals are
//! integral curves of a contact Hamiltonian flow ([`contact`]); problems are
//! described by [`ocp`] and solved by shooting ([`shoot`]).

pub mod bench;
pub mod cli;
pub mod contact;
pub mod error;
pub mod export;
pub mod ocp;
pub mod projcost;
pub mod prop;
pub mod registry;
pub mod shoot;
pub mod suites;

pub use error::{Error, Result};
