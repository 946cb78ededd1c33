//! Learning analytics for MOOC interaction logs.

pub mod anonymizer;
pub mod cli;
pub mod clustering;
pub mod cohort;
pub mod event;
pub mod indicators;
pub mod logparse;
pub mod motivation;
pub mod reports;
pub mod service;
pub mod stats;
pub mod store;
pub mod synthkit;
pub mod table;
