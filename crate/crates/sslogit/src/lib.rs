//! Panel I/O, run configuration and the cell-by-cell estimation driver
//! behind the `sslogit` binary.

pub mod config;
pub mod driver;
pub mod io;
pub mod report;
