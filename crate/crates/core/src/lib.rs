pub mod data;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod hyperopt;
pub mod lear;
pub mod neural;
pub mod synthetic;
pub mod transform;
