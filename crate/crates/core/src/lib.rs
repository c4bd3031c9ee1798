pub mod topology;
pub mod data;
pub mod gmm;
pub mod vomp;
pub mod eval;
