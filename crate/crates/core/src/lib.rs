pub mod cli;
pub mod config;
pub mod frame;
pub mod network;
pub mod sim;
pub mod switch;
pub mod tc;
pub mod trace;
pub mod traffic;
