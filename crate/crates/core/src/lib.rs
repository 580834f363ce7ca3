//! Simulation toolkit for hierarchical banked shared-memory many-core clusters,
//! built around the lower-PHY receive kernels of a 5G uplink (PUSCH) chain.
//!
//! The crate is organised in five layers:
//!
//! * [`numerics`] — golden complex-float kernels (radix-4 FFT, matrix-matrix
//!   multiply, Cholesky/MMSE solvers, channel and noise estimation) plus the
//!   slow reference oracles used to validate them.
//! * [`cluster`] — the memory-system model: topology presets, word-address to
//!   bank mapping, access latencies and per-cycle bank/port arbitration.
//! * [`engine`] — a deterministic cycle-stepped interpreter for per-core
//!   micro-op programs, with stall accounting and fork-join sleep/wake-up.
//! * [`layouts`] — data-placement and work-schedule generators that avoid bank
//!   conflicts for the three parallel kernels, a conflict verifier, and the
//!   lowering from plans to micro-op programs.
//! * [`pipeline`] — the end-to-end uplink chain: stimulus generation, golden
//!   execution, simulated execution per stage, and complexity accounting.
//!
//! Everything is seeded and deterministic: the same configuration produces the
//! same reports, bit for bit, on every run.

pub mod cluster;
pub mod engine;
pub mod layouts;
pub mod numerics;
pub mod pipeline;
pub mod report;
