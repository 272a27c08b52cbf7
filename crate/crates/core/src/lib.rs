//! Pseudo-spectral simulation of stochastic curve shortening flow on the torus
//! driven by transport-type pure-jump Lévy noise in Marcus form.

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod integrator;
pub mod levy;
pub mod oracle;
pub mod spectral;
