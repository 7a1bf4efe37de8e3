#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod aggregate;
pub mod diagnostics;
pub mod doubledid;
pub mod error;
pub mod inference;
pub mod moments;
pub mod panel;
pub mod regression;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use panel::{CellIndex, Cohort, CohortMap, ControlType, Panel, PanelBuilder, Role};
