pub mod bench;
pub mod config;
pub mod coord;
pub mod framed;
pub mod fsremap;
pub mod netservice;
pub mod supervisor;
