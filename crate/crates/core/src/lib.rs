pub mod codec;
pub mod encoding;
pub mod geometry;
pub mod grid;
pub mod optim;
pub mod nets;
pub mod field;
pub mod sampling;
pub mod train;
pub mod spatial;
pub mod mesh;
pub mod eval;
pub mod io;
pub mod synthetic;
pub mod pipeline;
