//! Partial identification with set-valued control functions.

pub mod containment;
pub mod data;
pub mod dgp;
pub mod identify;
pub mod inference;
pub mod model;
pub mod num;
pub mod oracle;
pub mod rset;
pub mod school;
