mod charges;
pub mod ffld;
mod generators;
mod grid;
mod quadrature;
mod vector;

pub use charges::{Charge, ChargeSet};
pub use generators::{gen_circle_map_current, gen_divfree, gen_vortex, gen_vortex_scaled};
pub use grid::{dist, euclid, sup_norm, GridSpec, WeightedMeasure};
pub use quadrature::{boundary_flux, face_fluxes, face_sum, gauss_legendre, FaceQuadrature, LatticeCube};
pub use vector::{lp_distance, lp_norm, Callback, PointField, VectorField};

pub(crate) use charges::byte_offset;
