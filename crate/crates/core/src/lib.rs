//! Numerical laboratory for linear cocycles over hyperbolic toral automorphisms.

pub mod base;
pub mod cocycle;
pub mod conjugacy;
pub mod error;
pub mod field;
pub mod holonomy;
pub mod operator;
pub mod regression;
pub mod su;
pub mod trig;
pub mod zoo;

pub use base::{HyperbolicToralMap, LegType, RateData, SuLeg, SuPath, TorusPoint};
pub use cocycle::{CocycleGenerator, GeneratorKind};
pub use conjugacy::{ConjugacyField, Provenance};
pub use error::{LabError, Result};
pub use field::{GridField, MatrixField};
pub use holonomy::{HolonomyOptions, HolonomyResult};
pub use operator::{op_distance, Mat, Operator};
pub use trig::{TrigPolynomial, TrigTerm};
pub use su::PathWeight;
pub use zoo::{Splitting2D, TriangularPair};
