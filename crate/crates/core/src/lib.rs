// SPDX-License-Identifier: Apache-2.0
//! Functional and cycle-level models of variable density-bound-block (VDBB)
//! sparse systolic tensor arrays.
//!
//! The crate is organised bottom-up:
//!
//! * [`dbb`] encodes, validates and prunes INT8 matrices under the
//!   density-bound-block constraint and owns the on-disk `.dbb` format.
//! * [`tensor`] holds the dense reference kernels (GEMM, direct convolution,
//!   software IM2COL) every simulator is checked against.
//! * [`sim`] is the cycle-level simulator for SA, STA, STA-DBB and STA-VDBB
//!   arrays.
//! * [`im2col_unit`] models the hardware IM2COL bandwidth magnifier.
//! * [`cost`] turns array configurations into power, area and efficiency
//!   figures from a calibrated component table.
//! * [`workload`] loads CNN layer lists and lowers them to GEMM shapes.
//! * [`dse`] enumerates iso-throughput design spaces and extracts pareto
//!   frontiers.

pub mod cost;
pub mod dbb;
pub mod dse;
mod error;
pub use error::BlockCoord;
pub mod im2col_unit;
pub mod sim;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
