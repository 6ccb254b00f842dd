//! Desk-scale federated sequential recommendation simulator.
//!
//! A server trains a GRU next-item model by FedAvg over simulated clients.
//! Benign clients optimize a recommendation loss plus contrastive and
//! temporal-consistency regularizers; malicious clients mount promotion or
//! camouflage poisoning campaigns; the server may run a popularity-aware
//! embedding defense after each aggregation. Everything is seeded and
//! single-threaded so that a run is reproducible byte for byte.

pub mod attacks;
pub mod checkpoint;
pub mod client;
pub mod config;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod runner;
pub mod server;
