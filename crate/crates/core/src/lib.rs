pub mod assemble;
pub mod baseline;
pub mod eval;
pub mod fixtures;
pub mod ingest;
pub mod learner;
pub mod mapping;
pub mod model;
pub mod perturb;
