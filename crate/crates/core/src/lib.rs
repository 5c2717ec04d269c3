//! Simulation and verification toolkit for market-weight diffusions on the
//! unit simplex, functionally generated trading strategies and relative
//! arbitrage.

pub mod arbitrage;
pub mod config;
pub mod experiment;
pub mod genfn;
pub mod ingest;
pub mod linalg;
pub mod models;
pub mod quadvar;
pub mod rng;
pub mod simplex;
pub mod strategies;
pub mod zoo;
