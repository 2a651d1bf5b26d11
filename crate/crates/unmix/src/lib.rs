//! File formats, experiment grids and the `unmix` command line, layered over
//! [`unmix_core`].
//!
//! Every command is a thin shell: the numbers come from `unmix_core`, and the
//! functions here only read, format and write them.

pub mod algorithms;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod matrix_io;
