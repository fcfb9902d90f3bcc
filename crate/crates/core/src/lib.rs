//! Lax-Wendroff flux reconstruction for the 2-D compressible Euler
//! equations on curvilinear quadrilateral meshes, with subcell-based blending
//! shock capturing, admissibility preservation, mortar-based adaptive mesh
//! refinement and error-based time stepping.

pub mod amr;
pub mod basis;
pub mod driver;
pub mod equations;
pub mod lwfr;
pub mod mesh;
pub mod shockcapture;
pub mod solver;
pub mod timestep;
