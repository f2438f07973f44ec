pub mod eps;
pub mod forest;
pub mod lp;
pub mod model;
pub mod phantom;
pub mod two_phase;
