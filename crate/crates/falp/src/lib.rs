//! Beam alignment for planar phased arrays with 1-bit or few-bit phase
//! shifters: perfect-array sounding, masked-beamspace recovery, zero filling,
//! and the simulation harness around them.

pub mod channel;
pub mod error;
pub mod grid;
pub mod perfect_arrays;
pub mod recovery;
pub mod sounding;
pub mod analysis;
pub mod beamform;
pub mod experiment;
