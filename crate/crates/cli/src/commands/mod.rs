pub mod bench;
pub mod count;
pub mod sample;
pub mod train;
pub mod verify;
