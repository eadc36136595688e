//! GPS/IMU position fusion with a finite-automaton motion model selector.
//!
//! The pipeline parses GGA fixes, dead-reckons IMU batches between them,
//! and runs a six-state ECEF Kalman filter whose transition model is picked
//! each cycle from the size of the last innovation.

pub mod config;
pub mod dfa;
pub mod filter;
pub mod geodesy;
pub mod imu;
pub mod nmea;
pub mod pipeline;
pub mod sim;
pub mod replay;
pub mod game;
