//! Quantum-superposition image encoding and a two-compartment spiking
//! network trained by dendritic prediction.

pub mod baseline;
pub mod config;
pub mod corrupt;
pub mod dataio;
pub mod encoder;
pub mod experiment;
pub mod neuro;
pub mod qcircuit;
pub mod rng;
pub mod trainer;
