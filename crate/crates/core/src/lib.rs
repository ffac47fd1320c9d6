//! Local metrisability of three-dimensional projective structures.

pub mod expr;
pub mod fixtures;
pub mod jet;
pub mod pencil;
pub mod projective;
pub mod solver;
pub mod tensor;
