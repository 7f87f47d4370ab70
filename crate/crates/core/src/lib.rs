pub mod annotations;
pub mod cam;
pub mod cli;
pub mod imaging;
pub mod interpret;
pub mod manifest;
pub mod rng;
pub mod toylab;
