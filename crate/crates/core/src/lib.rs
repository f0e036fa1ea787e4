//! Freight routing and pricing on congested networks with value-of-time
//! classes and stochastic demand.

pub mod assignment;
pub mod cli;
pub mod netmodel;
pub mod nlp;
pub mod oracle;
pub mod schemes;
