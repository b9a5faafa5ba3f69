//! Admission checks for software updates on component-based embedded
//! systems.
//!
//! Components carry textual contracts ([`dsl`]) describing services, threads,
//! timing requirements and call-order requirements. A proposed update is
//! negotiated ([`negotiate`]) by enumerating candidate configurations from a
//! constraint store ([`store`]) and checking each against the dependency,
//! control-flow ([`cf`]) and timing ([`timing`]) viewpoints. Failed checks
//! feed constraints back into the store.

pub mod dsl;
pub mod model;
pub mod deps;
pub mod store;
pub mod taskgraph;
pub mod cf;
pub mod timing;
pub mod sim;
pub mod negotiate;
pub mod cli;
