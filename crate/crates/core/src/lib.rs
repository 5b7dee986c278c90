//! Homogenized flow and reactive transport through thin porous membranes.

pub mod cell_diffusion;
pub mod cell_flow;
pub mod geometry;
pub mod io;
pub mod kinetics;
pub mod macro_flow;
pub mod macro_transport;
pub mod pipeline;
pub mod solver;
