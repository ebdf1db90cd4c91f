pub mod expr;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod numfmt;
pub mod assumptions;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod quad;
pub mod density;
pub mod boundary;
pub mod classifier;
pub mod foodchain;
pub mod verify;
