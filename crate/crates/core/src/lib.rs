//! Voxel-grid pipeline for fast electric-field estimation.
//!
//! A finite-difference oracle computes reference field magnitudes on
//! labelled head volumes; a random forest (and a multilinear baseline) learn
//! to predict them per voxel from five cheap features: conductivity,
//! permittivity, distance to the nearest electrode, distance to CSF and
//! distance to the segment joining the electrode centers.

pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod linmodel;
pub mod oracle;
pub mod phantom;
pub mod pipeline;
pub mod seed;
pub mod tissue;
pub mod volume;
pub mod vvol;

pub use error::{Error, Result};
pub use geometry::{Axis, ElectrodeLayout};
pub use phantom::PhantomSpec;
pub use tissue::TissueTable;
pub use volume::{GridMeta, LabelVolume, ScalarField, Tissue, Unit};
