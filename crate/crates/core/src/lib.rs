pub mod error;
pub mod hilbert;
pub mod micro;
pub mod noise;
pub mod coarse;
pub mod gksl;
pub mod harness;
pub mod config;
pub mod output;
