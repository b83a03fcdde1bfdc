//! Command-line front end for the FBST toolkit: CSV ingestion, run
//! configurations, JSON reports and SVG surprise plots.

pub mod ingest;
pub mod plot;
pub mod report;
pub mod run;
