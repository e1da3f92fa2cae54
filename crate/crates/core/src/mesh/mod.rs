//! Coarse triangulations and their hierarchical refinement.

pub mod coarse;
pub mod hier;

pub use coarse::{BoundaryKind, BoundaryMarker, CoarseEdge, CoarseMesh};
pub use hier::{DofCounts, EdgeClass, EdgeLabel, ElementLabel, HierMesh, SubdomainGeometry};
