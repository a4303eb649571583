pub mod analysis;
pub mod config;
pub mod csv_io;
pub mod edge;
pub mod encoding;
pub mod hub;
pub mod report;
pub mod sensor;
pub mod sim;
pub mod store;
