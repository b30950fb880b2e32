//! File formats, grid export, benchmark driver and command-line front end
//! for `sstqr-core`.

pub mod bench;
pub mod cli;
pub mod error;
pub mod export;
pub mod io;
pub mod persist;
