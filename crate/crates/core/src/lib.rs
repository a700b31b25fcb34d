pub mod checkpoint;
pub mod cluster;
pub mod data;
pub mod encoder;
pub mod head;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod sentiment;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod verify;
