pub mod error;
pub mod expr;
pub mod linalg;
pub mod quadrature;
pub mod report;
pub mod scalar;
pub mod model;
pub mod lagrangian;
pub mod helmholtz;
pub mod matching;
pub mod control;
pub mod sim;
