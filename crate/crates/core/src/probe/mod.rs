//! Two-dimensional strict g-convexity probe, the C1 check on the dual side,
//! and the harness tying them to the measured hypotheses.

pub mod c1;
pub mod strict;
pub mod suite;

pub use c1::{c1_check, C1Report, C1Verdict, C1Witness};
pub use strict::{implied_h_lower, strict_convexity_probe, ProbeOptions, ProbeReport, ProbeVerdict};
pub use suite::{standard_fixtures, theorem_consistency_suite, SuiteFixture, SuiteRow, SuiteSettings, SuiteSummary};
