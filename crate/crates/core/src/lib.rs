pub mod attack;
pub mod cli;
pub mod geom;
pub mod loss;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
